import itertools
import math

import numpy as np
import pytest

from bnstoch.benchmark import layered_network
from bnstoch.bn_core import BayesianNetwork, Cpt, Structure, Variable, is_acyclic
from bnstoch.dataset import CompletedView, Dataset, MissingMask


def all_dags(n: int, max_parents: int | None = None) -> list[Structure]:
    arcs = [(u, v) for u in range(n) for v in range(n) if u != v]
    out = []
    for bits in itertools.product((0, 1), repeat=len(arcs)):
        s = Structure.from_arcs(n, [a for a, b in zip(arcs, bits) if b])
        if max_parents is not None and any(len(ps) > max_parents for ps in s.parent_sets):
            continue
        if is_acyclic(s):
            out.append(s)
    return out


def random_net(rng, n=None, arity_max=3, max_parents=2) -> BayesianNetwork:
    """Random small network on an arbitrary random topological order."""
    n = n or int(rng.integers(2, 5))
    arities = [int(rng.integers(2, arity_max + 1)) for _ in range(n)]
    order = rng.permutation(n).tolist()
    sets = [[] for _ in range(n)]
    for i, v in enumerate(order):
        earlier = order[:i]
        if earlier:
            k = int(rng.integers(0, min(max_parents, len(earlier)) + 1))
            sets[v] = rng.choice(earlier, size=k, replace=False).tolist()
    s = Structure(sets)
    variables = [Variable.indexed(f"V{i}", arities[i]) for i in range(n)]
    cpts = []
    for v, ps in enumerate(s.parent_sets):
        q = math.prod(arities[p] for p in ps)
        cpts.append(Cpt(v, rng.dirichlet(np.ones(arities[v]), size=q)))
    return BayesianNetwork(variables, s, cpts)


def random_complete(rng, n, cases, arity_max=3) -> Dataset:
    arities = [int(rng.integers(2, arity_max + 1)) for _ in range(n)]
    variables = [Variable.indexed(f"V{i}", a) for i, a in enumerate(arities)]
    cells = np.column_stack([rng.integers(0, a, size=cases) for a in arities]) if cases else \
        np.zeros((0, n), dtype=int)
    return Dataset(variables, cells)


@pytest.fixture
def tiny_problem():
    """3 binary variables, 6 cases, 2 missing cells: 25 DAGs x 4 assignments."""
    variables = [Variable.indexed(f"X{i}", 2) for i in range(3)]
    cells = np.array([[0, 0, 1], [1, 1, 1], [0, -1, 0], [1, 1, 0], [0, 0, 0], [1, 0, -1]])
    data = Dataset(variables, cells)
    return data, MissingMask.of(data)


def enumerate_posterior(data, mask, config):
    """Exact normalised exp(score / T) over every (DAG, assignment) pair, by brute force."""
    from bnstoch.scoring import structure_score

    arities = mask.cell_arities(data.arities)
    states, logp = [], []
    for s in all_dags(data.n, config.max_parents):
        for a in itertools.product(*(range(r) for r in arities)):
            view = CompletedView(data, mask, np.array(a, dtype=np.int16))
            states.append((s, tuple(a)))
            logp.append(structure_score(s, view, config).log_score / config.temperature)
    logp = np.array(logp)
    p = np.exp(logp - logp.max())
    return states, p / p.sum()


@pytest.fixture(scope="session")
def benchmark_net():
    return layered_network([1, 3, 3], np.random.default_rng(7))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
