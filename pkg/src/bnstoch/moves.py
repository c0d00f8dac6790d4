"""Crossover, mutation and population-informed (adaptive) proposals.

Every mutation returns a :class:`ProposedMove` carrying the exact forward and
reverse log proposal probabilities, so the samplers can apply the Hastings
correction.  Adaptive proposals read a :class:`ProposalSnapshot`; forward and
reverse probabilities are always evaluated against the same snapshot.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .bn_core import Structure
from .dataset import VALUE_DTYPE, MissingMask
from .errors import EmptyPopulation, NoFeasibleMove, NoMissingCells, ShapeMismatch, ValidationError

ADD, DELETE, REVERSE = "add", "delete", "reverse"
STRUCTURE_KINDS = (ADD, DELETE, REVERSE)
DATA = "data"
INVERSE = {ADD: DELETE, DELETE: ADD, REVERSE: REVERSE}


@dataclass(frozen=True)
class MoveConfig:
    crossover_gene_prob: float = 0.5
    structure_move_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    adaptive: bool = False
    epsilon: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "structure_move_weights", tuple(float(w) for w in self.structure_move_weights))
        if not 0.0 <= self.crossover_gene_prob <= 1.0:
            raise ValidationError("crossover_gene_prob must lie in [0, 1]")
        w = self.structure_move_weights
        if len(w) != 3 or min(w) < 0 or sum(w) <= 0:
            raise ValidationError("structure_move_weights must be three nonnegative weights, not all zero")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")


@dataclass(frozen=True)
class ProposalSnapshot:
    arc_freq: np.ndarray  # (n, n), arc u -> v at [u, v]
    value_freq: np.ndarray  # (cells, max arity), zero beyond each cell's arity
    population_size: int


@dataclass
class ProposedMove:
    kind: str
    forward_log_prob: float
    reverse_log_prob: float
    structure: Structure | None = None
    assignment: np.ndarray | None = None
    arc: tuple[int, int] | None = None
    position: int | None = None
    value: int | None = None
    changed_families: frozenset[int] = field(default_factory=frozenset)
    changed_cells: frozenset[int] = field(default_factory=frozenset)


def crossover_uniform(parent_a, parent_b, gene_prob: float, rng: np.random.Generator):
    """Swap each gene between the parents independently with probability ``gene_prob``.

    Works on structures (gene = a whole parent set) and on missing-value
    arrays (gene = one cell).
    """
    if isinstance(parent_a, Structure) or isinstance(parent_b, Structure):
        if not (isinstance(parent_a, Structure) and isinstance(parent_b, Structure)) or parent_a.n != parent_b.n:
            raise ShapeMismatch("structures must have the same variable count")
        swap = rng.random(parent_a.n) < gene_prob
        a, b = parent_a.parent_sets, parent_b.parent_sets
        oa = tuple(b[i] if s else a[i] for i, s in enumerate(swap.tolist()))
        ob = tuple(a[i] if s else b[i] for i, s in enumerate(swap.tolist()))
        return Structure._trusted(oa), Structure._trusted(ob)
    a = np.asarray(parent_a)
    b = np.asarray(parent_b)
    if a.shape != b.shape:
        raise ShapeMismatch("chromosomes must have the same length")
    swap = rng.random(a.shape[0]) < gene_prob
    return np.where(swap, b, a), np.where(swap, a, b)


# -- snapshots ---------------------------------------------------------------


def _value_table(mask: MissingMask, arities) -> tuple[np.ndarray, int]:
    cell_ar = mask.cell_arities(arities)
    rmax = int(cell_ar.max()) if len(cell_ar) else 2
    valid = np.arange(rmax)[None, :] < cell_ar[:, None]
    return valid, rmax


def build_snapshot(population: Sequence[tuple[Structure, np.ndarray]], arities=None) -> ProposalSnapshot:
    """Arc and missing-value frequencies over ``population``.

    ``arities`` (per variable) is only needed to size value rows; without it
    each cell row spans the largest value seen plus one, at least two.
    """
    if not population:
        raise EmptyPopulation("cannot build a snapshot from an empty population")
    size = len(population)
    n = population[0][0].n
    arc_counts = np.zeros((n, n), dtype=np.int64)
    for structure, _ in population:
        if structure.n != n:
            raise ShapeMismatch("population structures differ in size")
        for v, ps in enumerate(structure.parent_sets):
            arc_counts[list(ps), v] += 1
    values = np.array([np.asarray(a, dtype=np.int64) for _, a in population])
    cells = values.shape[1] if values.ndim == 2 else 0
    if arities is not None:
        rmax = max(arities)
    else:
        rmax = max(2, int(values.max()) + 1) if values.size else 2
    value_counts = np.zeros((cells, rmax), dtype=np.int64)
    for row in values:
        value_counts[np.arange(cells), row] += 1
    return ProposalSnapshot(arc_counts / size, value_counts / size, size)


class FrequencyTracker:
    """Running arc and value counts over a population of chains.

    ``snapshot_without(i)`` gives the frequencies of every member except
    ``i``; with counts kept current after every accepted move, each chain's
    proposal depends only on the other chains' present states.
    """

    def __init__(self, members: Sequence[tuple[Structure, np.ndarray]], mask: MissingMask, arities):
        self.n = members[0][0].n
        self.size = len(members)
        self.valid, self.rmax = _value_table(mask, arities)
        self.cells = len(mask)
        self.arc_counts = np.zeros((self.n, self.n), dtype=np.int64)
        self.value_counts = np.zeros((self.cells, self.rmax), dtype=np.int64)
        self._rows = np.arange(self.cells)
        self.members = list(members)
        for s, a in self.members:
            self._apply(s, a, +1)

    def _apply(self, structure: Structure, assignment, sign: int) -> None:
        for v, ps in enumerate(structure.parent_sets):
            for u in ps:
                self.arc_counts[u, v] += sign
        if self.cells:
            self.value_counts[self._rows, assignment] += sign

    def replace(self, i: int, structure: Structure, assignment) -> None:
        old_s, old_a = self.members[i]
        if old_s is not structure:
            for v, ps in enumerate(old_s.parent_sets):
                for u in ps:
                    self.arc_counts[u, v] -= 1
            for v, ps in enumerate(structure.parent_sets):
                for u in ps:
                    self.arc_counts[u, v] += 1
        if self.cells and old_a is not assignment:
            diff = np.nonzero(old_a != assignment)[0]
            if diff.size:
                np.subtract.at(self.value_counts, (diff, old_a[diff]), 1)
                np.add.at(self.value_counts, (diff, assignment[diff]), 1)
        self.members[i] = (structure, assignment)

    def snapshot_without(self, i: int) -> ProposalSnapshot:
        others = self.size - 1
        s, a = self.members[i]
        if others == 0:
            arc = np.zeros((self.n, self.n))
            val = self.valid / self.valid.sum(axis=1, keepdims=True)
            return ProposalSnapshot(arc, val, 0)
        arc = self.arc_counts.copy()
        for v, ps in enumerate(s.parent_sets):
            for u in ps:
                arc[u, v] -= 1
        val = self.value_counts.copy()
        if self.cells:
            val[self._rows, a] -= 1
        return ProposalSnapshot(arc / others, val / others, others)

    def snapshot(self) -> ProposalSnapshot:
        return ProposalSnapshot(self.arc_counts / self.size, self.value_counts / self.size, self.size)


# -- missing-value mutation ----------------------------------------------------


def _weighted_index(weights, rng: np.random.Generator) -> int:
    cum = np.cumsum(weights)
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(i, len(cum) - 1)


def _value_weights(snapshot, position, arity, epsilon):
    if snapshot is None:
        return None
    return snapshot.value_freq[position, :arity] + epsilon


def mutate_missing(assignment, mask: MissingMask, arities, snapshot: ProposalSnapshot | None,
                   epsilon: float, rng: np.random.Generator) -> ProposedMove:
    """Re-draw one uniformly chosen missing cell to a different value."""
    cells = len(mask)
    if cells == 0:
        raise NoMissingCells("dataset has no missing cells")
    position = int(rng.integers(cells))
    arity = arities[int(mask.variables[position])]
    current = int(assignment[position])
    weights = _value_weights(snapshot, position, arity, epsilon)
    if weights is None:
        k = int(rng.integers(arity - 1))
        value = k + (k >= current)
        lp = -math.log(arity - 1)
        fwd = rev = lp
    else:
        w = weights.copy()
        w[current] = 0.0
        total = w.sum()
        value = _weighted_index(w, rng)
        fwd = math.log(w[value] / total)
        back = weights.copy()
        back[value] = 0.0
        rev = math.log(back[current] / back.sum())
    cell_lp = -math.log(cells)
    new = np.array(assignment, dtype=VALUE_DTYPE, copy=True)
    new[position] = value
    return ProposedMove(
        DATA, fwd + cell_lp, rev + cell_lp, assignment=new, position=position, value=value,
        changed_cells=frozenset((position,)),
    )


# -- structure mutation ----------------------------------------------------------


def _candidates(structure: Structure, max_parents: int):
    sets = structure.parent_sets
    n = len(sets)
    adds, deletes, reverses = [], [], []
    for v, ps in enumerate(sets):
        room = len(ps) < max_parents
        for u in range(n):
            if u == v:
                continue
            if u in ps:
                deletes.append((u, v))
                if len(sets[u]) < max_parents and v not in sets[u]:
                    reverses.append((u, v))
            elif room:
                adds.append((u, v))
    return {ADD: adds, DELETE: deletes, REVERSE: reverses}


def _arc_weights(kind, arcs, snapshot, epsilon):
    if snapshot is None:
        return None
    f = snapshot.arc_freq
    if kind == ADD:
        return [f[u, v] + epsilon for u, v in arcs]
    if kind == DELETE:
        return [1.0 - f[u, v] + epsilon for u, v in arcs]
    return [f[v, u] + epsilon for u, v in arcs]


def _type_probs(cands, weights):
    total = sum(w for k, w in zip(STRUCTURE_KINDS, weights) if cands[k])
    if total <= 0:
        return None
    return {k: (w / total if cands[k] else 0.0) for k, w in zip(STRUCTURE_KINDS, weights)}


def move_log_prob(structure: Structure, kind: str, arc: tuple[int, int], max_parents: int,
                  snapshot: ProposalSnapshot | None, weights, epsilon: float) -> float:
    """log S(x, x') of proposing ``kind`` on ``arc`` from ``structure``; -inf if impossible."""
    cands = _candidates(structure, max_parents)
    probs = _type_probs(cands, weights)
    if probs is None or not probs[kind] or arc not in cands[kind]:
        return -math.inf
    arcs = cands[kind]
    w = _arc_weights(kind, arcs, snapshot, epsilon)
    if w is None:
        p_arc = 1.0 / len(arcs)
    else:
        p_arc = w[arcs.index(arc)] / math.fsum(w)
    return math.log(probs[kind]) + math.log(p_arc)


def apply_structure_move(structure: Structure, kind: str, arc: tuple[int, int]) -> Structure:
    u, v = arc
    sets = list(structure.parent_sets)
    if kind == ADD:
        sets[v] = tuple(sorted(sets[v] + (u,)))
    elif kind == DELETE:
        sets[v] = tuple(p for p in sets[v] if p != u)
    else:
        sets[v] = tuple(p for p in sets[v] if p != u)
        sets[u] = tuple(sorted(sets[u] + (v,)))
    return Structure._trusted(tuple(sets))


def mutate_structure(structure: Structure, max_parents: int, snapshot: ProposalSnapshot | None,
                     weights, epsilon: float, rng: np.random.Generator) -> ProposedMove:
    """Add, delete or reverse one arc.  Cyclic results are returned as-is."""
    cands = _candidates(structure, max_parents)
    probs = _type_probs(cands, weights)
    if probs is None:
        raise NoFeasibleMove("no add/delete/reverse move is feasible")
    kinds = [k for k in STRUCTURE_KINDS if probs[k] > 0]
    kind = kinds[_weighted_index([probs[k] for k in kinds], rng)] if len(kinds) > 1 else kinds[0]
    arcs = cands[kind]
    w = _arc_weights(kind, arcs, snapshot, epsilon)
    if w is None:
        i = int(rng.integers(len(arcs)))
        p_arc = 1.0 / len(arcs)
    else:
        w = np.asarray(w)
        total = w.sum()
        i = _weighted_index(w, rng)
        p_arc = w[i] / total
    arc = arcs[i]
    new = apply_structure_move(structure, kind, arc)
    u, v = arc
    back_arc = (v, u) if kind == REVERSE else arc
    fwd = math.log(probs[kind]) + math.log(p_arc)
    rev = move_log_prob(new, INVERSE[kind], back_arc, max_parents, snapshot, weights, epsilon)
    changed = frozenset((u, v)) if kind == REVERSE else frozenset((v,))
    return ProposedMove(kind, fwd, rev, structure=new, arc=arc, changed_families=changed)
