import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnstoch.bn_core import BayesianNetwork, Cpt, Structure, Variable, forward_sample, joint_probability
from bnstoch.dataset import Dataset
from bnstoch.diagnostics import (
    arc_marginals,
    best_so_far,
    credible_interval,
    diversity,
    first_below,
    log_loss,
    psrf,
    psrf_curve,
)
from bnstoch.engines import Trace
from bnstoch.errors import DegenerateChains, DigestsAbsent, EmptyHoldout, EmptyPopulation, TooFewSamples
from bnstoch.moves import build_snapshot

from conftest import all_dags, random_net


def full_joint_log_loss(net, data):
    """Oracle: p(x_i | rest) by summing the full joint table over x_i."""
    table = {a: joint_probability(net, a) for a in itertools.product(*(range(r) for r in net.arities))}
    total = 0.0
    for row in data.cells.tolist():
        for x in range(net.n):
            num = table[tuple(row)]
            den = sum(table[tuple(row[:x] + [k] + row[x + 1:])] for k in range(net.arities[x]))
            total += -math.log(num / den)
    return total / data.case_count


class TestPsrf:
    def test_hand_example(self):
        assert psrf([[1, 3], [2, 4]], burn_in=0.0) == pytest.approx(math.sqrt(0.75), abs=1e-12)

    def test_identical_chains(self):
        chain = np.random.default_rng(0).normal(size=100)
        assert psrf([chain, chain], burn_in=0.0) == pytest.approx(math.sqrt(99 / 100), abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateChains):
            psrf(np.ones((3, 10)))

    def test_separated_chains_large(self):
        rng = np.random.default_rng(1)
        x = np.vstack([rng.normal(0, 1, 200), rng.normal(10, 1, 200)])
        assert psrf(x) > 3

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(0.01, 100), st.booleans())
    def test_affine_invariance(self, seed, shift, scale, flip):
        x = np.random.default_rng(seed).normal(size=(4, 40))
        slope = -scale if flip else scale
        assert psrf(x * slope + shift) == pytest.approx(psrf(x), rel=1e-9)

    def test_curve_and_threshold(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 100))
        lengths, values = psrf_curve(x, every=25)
        assert lengths == [25, 50, 75, 100]
        assert values[-1] == pytest.approx(psrf(x))
        hit = first_below(lengths, values, 1.2)
        assert hit is not None and values[lengths.index(hit)] <= 1.2
        assert first_below([10, 20], np.array([np.nan, 1.5]), 1.2) is None


class TestLogLoss:
    def test_deterministic_net(self):
        variables = [Variable.indexed("A", 2), Variable.indexed("B", 2)]
        net = BayesianNetwork(variables, Structure([[], [0]]),
                              [Cpt(0, [[0.0, 1.0]]), Cpt(1, [[1.0, 0.0], [0.0, 1.0]])])
        data = Dataset(variables, np.ones((5, 2), int))
        assert log_loss(net, data).log_loss == 0.0

    def test_coin(self):
        variables = [Variable.indexed("A", 2)]
        net = BayesianNetwork(variables, Structure.empty(1), [Cpt(0, [[0.5, 0.5]])])
        data = Dataset(variables, np.array([[0], [1], [1]]))
        assert log_loss(net, data).log_loss == pytest.approx(math.log(2), abs=1e-15)

    def test_empty_holdout(self):
        variables = [Variable.indexed("A", 2)]
        net = BayesianNetwork(variables, Structure.empty(1), [Cpt(0, [[0.5, 0.5]])])
        with pytest.raises(EmptyHoldout):
            log_loss(net, Dataset(variables, np.zeros((0, 1), int)))

    def test_impossible_counted_not_clamped(self):
        variables = [Variable.indexed("A", 2), Variable.indexed("B", 2)]
        net = BayesianNetwork(variables, Structure([[], [0]]),
                              [Cpt(0, [[0.5, 0.5]]), Cpt(1, [[1.0, 0.0], [0.5, 0.5]])])
        data = Dataset(variables, np.array([[0, 1], [1, 1]]))
        report = log_loss(net, data)
        assert report.impossible_evidence >= 1
        assert math.isfinite(report.log_loss)

    def test_two_variable_chain(self):
        variables = [Variable.indexed("A", 2), Variable.indexed("B", 3)]
        net = BayesianNetwork(variables, Structure([[], [0]]),
                              [Cpt(0, [[0.3, 0.7]]), Cpt(1, [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])])
        data = forward_sample(net, np.random.default_rng(0), 40)
        assert log_loss(net, data).log_loss == pytest.approx(full_joint_log_loss(net, data), abs=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_full_joint_oracle(self, seed):
        rng = np.random.default_rng(seed)
        net = random_net(rng, n=int(rng.integers(2, 6)), arity_max=3)
        data = forward_sample(net, rng, 30)
        report = log_loss(net, data)
        assert report.impossible_evidence == 0
        assert report.log_loss == pytest.approx(full_joint_log_loss(net, data), abs=1e-9)
        assert report.log_loss >= 0


class TestCurves:
    def test_best_so_far_example(self):
        assert best_so_far([3, 1, 5]).tolist() == [3, 3, 5]

    def test_best_so_far_constant(self):
        assert best_so_far([2, 2, 2]).tolist() == [2, 2, 2]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
    def test_best_so_far_naive(self, xs):
        naive = [max(xs[: t + 1]) for t in range(len(xs))]
        out = best_so_far(xs)
        assert out.tolist() == naive and out[-1] == max(xs)

    def test_best_so_far_from_trace(self):
        trace = Trace(2)
        trace.scores = [np.array([1.0, 4.0]), np.array([2.0, 3.0])]
        assert best_so_far(trace).tolist() == [4.0, 4.0]

    def test_diversity_examples(self):
        same = [["a"] * 5]
        distinct = [list("abcde")]
        assert diversity(same).tolist() == [1] and diversity(distinct).tolist() == [5]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.lists(st.sampled_from(list("abcdef")), min_size=1, max_size=12), min_size=1, max_size=5))
    def test_diversity_pairwise_oracle(self, rows):
        for row, got in zip(rows, diversity(rows)):
            pairwise = sum(1 for i, x in enumerate(row) if all(x != row[j] for j in range(i)))
            assert got == pairwise and 1 <= got <= len(row)

    def test_digests_absent(self):
        with pytest.raises(DigestsAbsent):
            diversity(Trace(3, record_digests=False))


class TestArcMarginals:
    def test_single(self):
        m = arc_marginals([Structure([[], [0]])])
        assert set(np.unique(m)) == {0.0, 1.0}

    def test_three_of_four(self):
        with_arc, without = Structure([[], [0]]), Structure.empty(2)
        assert arc_marginals([with_arc] * 3 + [without])[0, 1] == 0.75

    def test_empty(self):
        with pytest.raises(EmptyPopulation):
            arc_marginals([])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_equals_snapshot(self, seed):
        rng = np.random.default_rng(seed)
        dags = all_dags(3)
        pop = [(dags[int(rng.integers(len(dags)))], np.zeros(0, int)) for _ in range(int(rng.integers(1, 25)))]
        assert np.array_equal(arc_marginals([s for s, _ in pop]), build_snapshot(pop).arc_freq)


class TestCredibleInterval:
    def test_constant(self):
        assert credible_interval([4.0] * 7) == (4.0, 4.0)

    def test_one_to_hundred(self):
        low, high = credible_interval(np.arange(1, 101))
        assert low == pytest.approx(3.475, abs=1e-12) and high == pytest.approx(97.525, abs=1e-12)

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            credible_interval([1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50), st.floats(0.01, 0.99))
    def test_within_range(self, xs, level):
        low, high = credible_interval(xs, level)
        assert min(xs) <= low <= high <= max(xs)
