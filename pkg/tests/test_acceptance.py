"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary,
then asserts, so a failing criterion shows up both ways.
"""

import itertools
import math
import time

import numpy as np
import pytest

from bnstoch.bn_core import Structure, count_parent_sets, forward_sample, is_acyclic
from bnstoch.cli import main
from bnstoch.dataset import Dataset, MissingMask, completed_view, count_family, inject_mcar, load_csv
from bnstoch.diagnostics import LOOSE_THRESHOLD, first_below, log_loss, psrf, psrf_curve
from bnstoch.engines import (
    EngineConfig,
    Problem,
    emcmc_step,
    init_population,
    mcmc_step,
    mh_accept,
    repetition_streams,
    run,
)
from bnstoch.moves import ADD, DELETE, REVERSE, FrequencyTracker, MoveConfig, _candidates, apply_structure_move
from bnstoch.netformat import read_network
from bnstoch.scoring import FamilyScoreCache, ScoreConfig, rescore_delta, structure_score

from conftest import ACCEPTANCE_LINES, enumerate_posterior, random_complete, random_net
from test_diagnostics import full_joint_log_loss
from test_scoring import naive_dirichlet, prequential_k2


def report(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


# -- 1: sampler correctness on an enumerable problem ---------------------------------------

POST_BURN_STEPS = 1_000_000
BURN_IN = 1_000


def sample_tiny(kind, adaptive, data, mask):
    chains = 4
    config = ScoreConfig(max_parents=2)
    ec = EngineConfig(engine_kind=kind, population_size=chains, adaptive=adaptive)
    problem = Problem(data, mask, config, MoveConfig(adaptive=adaptive), ec)
    states, exact = enumerate_posterior(data, mask, config)
    index = {(s, np.array(a, dtype=np.int16).tobytes()): k for k, (s, a) in enumerate(states)}
    engine_rng, streams = repetition_streams(12, 0, chains)
    pop = init_population(problem, streams)
    tracker = FrequencyTracker([(i.structure, i.assignment) for i in pop], mask, data.arities) if adaptive else None
    counts = np.zeros(len(states))

    def advance(p):
        if kind == "mcmc":
            return mcmc_step(p, problem, streams, tracker)
        return emcmc_step(p, problem, engine_rng, tracker)

    # plain/adaptive MCMC: every iteration advances all chains, so chains x iterations = steps;
    # EMCMC: one iteration is one step of the population-level chain
    iterations = POST_BURN_STEPS // chains if kind == "mcmc" else POST_BURN_STEPS
    start = time.perf_counter()
    for _ in range(BURN_IN):
        pop = advance(pop)
    for _ in range(iterations):
        pop = advance(pop)
        for ind in pop:
            counts[index[(ind.structure, ind.assignment.tobytes())]] += 1
    elapsed = time.perf_counter() - start
    tv = 0.5 * np.abs(counts / counts.sum() - exact).sum()
    return tv, elapsed, len(states)


@pytest.mark.slow
def test_criterion_1_sampler_oracle(tiny_problem):
    data, mask = tiny_problem
    results = {}
    for label, kind, adaptive in (("mcmc", "mcmc", False), ("mcmc-adaptive", "mcmc", True), ("emcmc", "emcmc", False)):
        results[label] = sample_tiny(kind, adaptive, data, mask)
    n_states = next(iter(results.values()))[2]
    ok = all(tv < 0.03 for tv, _, _ in results.values())
    detail = f"{n_states} states; " + ", ".join(
        f"{k} TV={tv:.4f} in {t:.0f}s" for k, (tv, t, _) in results.items())
    report(1, ok, detail)


# -- 2: score oracle ------------------------------------------------------------------------------


def test_criterion_2_score_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_k2 = worst_bdeu = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        data = random_complete(rng, n, int(rng.integers(0, 31)))
        view = completed_view(data, MissingMask.of(data), [])
        order = rng.permutation(n).tolist()
        sets = [[] for _ in range(n)]
        for i, v in enumerate(order):
            k = int(rng.integers(0, min(3, i) + 1))
            sets[v] = rng.choice(order[:i], size=k, replace=False).tolist() if k else []
        s = Structure(sets)
        k2 = structure_score(s, view, ScoreConfig()).log_score
        ess = float(rng.uniform(0.5, 10))
        bdeu = structure_score(s, view, ScoreConfig(prior_kind="bdeu", ess=ess)).log_score
        pre = naive = 0.0
        for v, ps in enumerate(s.parent_sets):
            rows = np.zeros(data.case_count, dtype=int)
            for p in ps:
                rows = rows * data.arities[p] + data.cells[:, p]
            pre += prequential_k2(data.cells[:, v].tolist(), rows.tolist(), data.arities[v])
            counts = count_family(view, v, ps).counts
            naive += naive_dirichlet(counts.tolist(), ess / counts.size)
        worst_k2 = max(worst_k2, abs(k2 - pre))
        worst_bdeu = max(worst_bdeu, abs(bdeu - naive))
    elapsed = time.perf_counter() - start
    ok = worst_k2 <= 1e-9 and worst_bdeu <= 1e-9 and elapsed < 10
    report(2, ok, f"200 instances; max |K2 - prequential| = {worst_k2:.2e}, "
                  f"max |BDeu - naive lgamma| = {worst_bdeu:.2e}, {elapsed:.1f}s")


# -- 3: incremental rescoring ---------------------------------------------------------------------------


def test_criterion_3_rescore_delta():
    start = time.perf_counter()
    rng = np.random.default_rng(33)
    data, mask = inject_mcar(random_complete(rng, 6, 200), 0.1, rng)
    arities = mask.cell_arities(data.arities)
    config = ScoreConfig(max_parents=3)
    cache = FamilyScoreCache()
    view = completed_view(data, mask, rng.integers(0, arities))
    state = structure_score(Structure.empty(6), view, config, cache)
    worst = 0.0
    for _ in range(1000):
        if rng.random() < 0.5:
            cands = _candidates(state.structure, config.max_parents)
            kinds = [k for k in (ADD, DELETE, REVERSE) if cands[k]]
            kind = kinds[int(rng.integers(len(kinds)))]
            arc = cands[kind][int(rng.integers(len(cands[kind])))]
            s = apply_structure_move(state.structure, kind, arc)
            fams = {arc[1]} if kind != REVERSE else set(arc)
            nxt = rescore_delta(state, s, view, config, cache, changed_families=fams)
        else:
            p = int(rng.integers(len(mask)))
            view = view.with_cell(p, int(rng.integers(arities[p])))
            nxt = rescore_delta(state, state.structure, view, config, cache, changed_cells=[p])
        full = structure_score(nxt.structure, view, config)
        worst = max(worst, abs(nxt.log_score - full.log_score))
        state = nxt if nxt.acyclic else structure_score(state.structure, view, config, cache)
    elapsed = time.perf_counter() - start
    report(3, worst <= 1e-9 and elapsed < 10, f"1000 moves; max deviation {worst:.2e}; {elapsed:.1f}s")


# -- 4-6: the seeded 1x3x3 benchmark ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("benchmark")
    assert main(["generate", "--out", str(out), "--seed", "0", "--train-cases", "1000",
                 "--test-cases", "1000", "--missing-rate", "0.1"]) == 0
    netfile = read_network(out / "network.txt")
    data = load_csv(out / "train.csv", netfile.variables)
    mask = MissingMask.of(data)
    score_config = ScoreConfig()
    start = time.perf_counter()
    runs = {}
    for label, kind, adaptive in (("ea", "ea", False), ("mcmc", "mcmc", False), ("mcmc-adaptive", "mcmc", True)):
        ec = EngineConfig(engine_kind=kind, adaptive=adaptive, iterations=500, repetitions=5, seed=0)
        runs[label] = run(ec, data, mask, score_config, MoveConfig(adaptive=adaptive))
    elapsed = time.perf_counter() - start
    return netfile, data, mask, score_config, runs, elapsed


def test_criterion_4_beats_generating_network(benchmark_runs):
    netfile, data, mask, score_config, runs, elapsed = benchmark_runs
    counts, margins = {}, {}
    for label in ("ea", "mcmc-adaptive"):
        wins, gaps = 0, []
        for res in runs[label]:
            view = completed_view(data, mask, res.best.assignment)
            truth = structure_score(netfile.structure, view, score_config).log_score
            gaps.append(res.best.score - truth)
            wins += res.best.score >= truth
        counts[label], margins[label] = wins, gaps
    ok = all(w >= 4 for w in counts.values()) and elapsed < 600
    detail = "; ".join(f"{k} {counts[k]}/5 reps >= generating (best - generating: "
                       + ", ".join(f"{g:+.2f}" for g in margins[k]) + ")" for k in counts)
    report(4, ok, f"{detail}; benchmark runs {elapsed:.0f}s")


def test_criterion_5_adaptive_converges_first(benchmark_runs):
    *_, runs, _ = benchmark_runs
    wins, cells = 0, []
    for plain, adaptive in zip(runs["mcmc"], runs["mcmc-adaptive"]):
        hits = []
        for res in (plain, adaptive):
            lengths, values = psrf_curve(res.trace.score_matrix()[1:].T, every=25)
            hits.append(first_below(lengths, values, LOOSE_THRESHOLD))
        p, a = hits
        won = a is not None and (p is None or a < p)
        wins += won
        final = [psrf(r.trace.score_matrix()[1:].T) for r in (plain, adaptive)]
        cells.append(f"rep{plain.repetition}: plain {p or 'never'} (R={final[0]:.2f}), "
                     f"adaptive {a or 'never'} (R={final[1]:.2f})")
    report(5, wins >= 4, f"adaptive strictly first in {wins}/5 groups; " + "; ".join(cells))


def test_criterion_6_diversity_contrast(benchmark_runs):
    *_, runs, _ = benchmark_runs
    results = {}
    for label in ("mcmc", "mcmc-adaptive"):
        ok_reps = 0
        pairs = []
        for ea, mc in zip(runs["ea"], runs[label]):
            e, m = ea.trace.unique_structures[-1], mc.trace.unique_structures[-1]
            ok_reps += m >= 2 * e
            pairs.append(f"{m}/{e}")
        results[label] = (ok_reps, pairs)
    ok = all(v[0] >= 4 for v in results.values())
    detail = "; ".join(f"{k} vs ea unique {', '.join(p)} -> {n}/5" for k, (n, p) in results.items())
    report(6, ok, detail)


# -- 7: log loss -----------------------------------------------------------------------------------------------


def test_criterion_7_log_loss_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(20):
        net = random_net(rng, n=int(rng.integers(2, 6)), arity_max=3)
        data = forward_sample(net, rng, 40)
        worst = max(worst, abs(log_loss(net, data).log_loss - full_joint_log_loss(net, data)))
    elapsed = time.perf_counter() - start
    report(7, worst <= 1e-9 and elapsed < 30, f"20 networks; max deviation {worst:.2e}; {elapsed:.1f}s")


# -- 8: CLI determinism --------------------------------------------------------------------------------------------


def test_criterion_8_cli_determinism(tmp_path):
    def snapshot(directory):
        return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}

    bench = tmp_path / "bench"
    commands = {
        "generate": ["generate", "--out", str(bench), "--seed", "5", "--train-cases", "300", "--test-cases", "200"],
        "run": ["run", "--train", str(bench / "train.csv"), "--network", str(bench / "network.txt"),
                "--out", str(tmp_path / "run"), "--iterations", "40", "--repetitions", "2"],
        "diagnose": ["diagnose", str(tmp_path / "run" / "chains_mcmc_rep0.csv"),
                     str(tmp_path / "run" / "chains_mcmc-adaptive_rep0.csv"), "--out", str(tmp_path / "diag")],
        "evaluate": ["evaluate", "--model", str(tmp_path / "run" / "population_ea_rep0_best.txt"),
                     "--train", str(bench / "train.csv"), "--test", str(bench / "test.csv"),
                     "--assignment", str(tmp_path / "run" / "population_ea_rep0_best_assignment.csv"),
                     "--out", str(tmp_path / "eval")],
    }
    outs = {"generate": bench, "run": tmp_path / "run", "diagnose": tmp_path / "diag", "evaluate": tmp_path / "eval"}
    verdicts = []
    for name, args in commands.items():
        codes = [main(args)]
        first = snapshot(outs[name])
        codes.append(main(args))
        same = codes == [0, 0] and snapshot(outs[name]) == first
        verdicts.append((name, same, len(first)))
    ok = all(v[1] for v in verdicts)
    report(8, ok, "; ".join(f"{n}: {'identical' if s else 'DIFFERENT'} ({k} files)" for n, s, k in verdicts))


# -- 9: unit formulas -------------------------------------------------------------------------------------------------


def test_criterion_9_unit_formulas():
    parents = count_parent_sets(41, 4)
    r_hat = psrf([[1, 3], [2, 4]], burn_in=0.0)
    rng = np.random.default_rng(9)
    rate = sum(mh_accept(0.0, -math.log(2), 0.0, 0.0, 1.0, rng) for _ in range(100_000)) / 100_000
    ok = parents == 102091 and abs(r_hat - math.sqrt(0.75)) <= 1e-12 and abs(rate - 0.5) <= 0.005
    report(9, ok, f"count_parent_sets(41,4)={parents}; psrf={r_hat:.12f}; mh accept rate={rate:.4f}")
