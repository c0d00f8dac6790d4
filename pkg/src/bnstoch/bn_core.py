"""Discrete Bayesian networks: variables, parent-set structures, CPTs, sampling
and exact inference by enumeration.

Variables and values are dense integer indices everywhere inside the package;
labels only matter at file boundaries.  Parent configurations are indexed in
mixed radix with the lowest-index parent most significant.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import CyclicStructure, ValidationError, ZeroEvidenceProbability


@dataclass(frozen=True)
class Variable:
    name: str
    arity: int
    value_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "value_labels", tuple(self.value_labels))
        if self.arity < 2:
            raise ValidationError(f"variable {self.name!r}: arity must be >= 2")
        if len(self.value_labels) != self.arity:
            raise ValidationError(f"variable {self.name!r}: {len(self.value_labels)} labels for arity {self.arity}")
        if len(set(self.value_labels)) != self.arity:
            raise ValidationError(f"variable {self.name!r}: duplicate value labels")

    @classmethod
    def indexed(cls, name: str, arity: int) -> Variable:
        return cls(name, arity, tuple(f"s{k}" for k in range(arity)))


class Structure:
    """Adjacency-list genotype: one sorted parent tuple per variable.

    Cycles are representable on purpose; use :func:`is_acyclic` to check.
    """

    __slots__ = ("parent_sets", "_hash")

    def __init__(self, parent_sets: Iterable[Iterable[int]]):
        sets = tuple(tuple(sorted(set(int(p) for p in ps))) for ps in parent_sets)
        n = len(sets)
        for v, ps in enumerate(sets):
            for p in ps:
                if p == v:
                    raise ValidationError(f"variable {v} lists itself as a parent")
                if not 0 <= p < n:
                    raise ValidationError(f"parent index {p} out of range for {n} variables")
        self.parent_sets = sets
        self._hash = hash(sets)

    @classmethod
    def _trusted(cls, parent_sets: tuple[tuple[int, ...], ...]) -> Structure:
        # hot path for move operators that already keep parent tuples canonical
        obj = cls.__new__(cls)
        obj.parent_sets = parent_sets
        obj._hash = hash(parent_sets)
        return obj

    @classmethod
    def empty(cls, n: int) -> Structure:
        return cls._trusted(((),) * n)

    @classmethod
    def from_arcs(cls, n: int, arcs: Iterable[tuple[int, int]]) -> Structure:
        sets: list[set[int]] = [set() for _ in range(n)]
        for u, v in arcs:
            sets[v].add(u)
        return cls(sets)

    @property
    def n(self) -> int:
        return len(self.parent_sets)

    def has_arc(self, u: int, v: int) -> bool:
        return u in self.parent_sets[v]

    def arcs(self) -> list[tuple[int, int]]:
        return [(u, v) for v, ps in enumerate(self.parent_sets) for u in ps]

    def arc_count(self) -> int:
        return sum(len(ps) for ps in self.parent_sets)

    def children(self, u: int) -> list[int]:
        return [v for v, ps in enumerate(self.parent_sets) if u in ps]

    def with_parents(self, v: int, parents: Iterable[int]) -> Structure:
        sets = list(self.parent_sets)
        sets[v] = tuple(sorted(parents))
        return Structure._trusted(tuple(sets))

    def adjacency(self) -> np.ndarray:
        """n x n 0/1 matrix with ``adj[u, v] = 1`` for an arc u -> v."""
        adj = np.zeros((self.n, self.n), dtype=np.int64)
        for v, ps in enumerate(self.parent_sets):
            adj[list(ps), v] = 1
        return adj

    def digest(self) -> str:
        """Canonical, collision-free text form of the parent sets."""
        return "|".join(",".join(map(str, ps)) for ps in self.parent_sets)

    def __eq__(self, other):
        if not isinstance(other, Structure):
            return NotImplemented
        return self.parent_sets == other.parent_sets

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Structure({list(map(list, self.parent_sets))})"


def is_acyclic(structure: Structure) -> bool:
    sets = structure.parent_sets
    n = len(sets)
    indeg = [len(ps) for ps in sets]
    children: list[list[int]] = [[] for _ in range(n)]
    for v, ps in enumerate(sets):
        for p in ps:
            children[p].append(v)
    stack = [v for v in range(n) if indeg[v] == 0]
    seen = 0
    while stack:
        u = stack.pop()
        seen += 1
        for c in children[u]:
            indeg[c] -= 1
            if indeg[c] == 0:
                stack.append(c)
    return seen == n


def topological_order(structure: Structure) -> list[int]:
    """Kahn's algorithm, always releasing the smallest ready index first."""
    sets = structure.parent_sets
    n = len(sets)
    indeg = [len(ps) for ps in sets]
    children: list[list[int]] = [[] for _ in range(n)]
    for v, ps in enumerate(sets):
        for p in ps:
            children[p].append(v)
    ready = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for c in children[u]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != n:
        raise CyclicStructure("structure contains a directed cycle")
    return order


def parent_strides(parents: Sequence[int], arities: Sequence[int]) -> list[int]:
    """Mixed-radix strides for a sorted parent tuple (first parent most significant)."""
    strides = [0] * len(parents)
    step = 1
    for i in range(len(parents) - 1, -1, -1):
        strides[i] = step
        step *= arities[parents[i]]
    return strides


def parent_config_count(parents: Sequence[int], arities: Sequence[int]) -> int:
    return math.prod(arities[p] for p in parents)


@dataclass(frozen=True)
class Cpt:
    variable: int
    probabilities: np.ndarray  # (q_i, r_i)

    def __post_init__(self):
        probs = np.array(self.probabilities, dtype=float)
        if probs.ndim != 2:
            raise ValidationError(f"CPT of variable {self.variable} must be 2-D")
        if np.any(probs < 0):
            raise ValidationError(f"CPT of variable {self.variable} has negative entries")
        if not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValidationError(f"CPT rows of variable {self.variable} do not sum to 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probabilities", probs)

    @property
    def parent_config_count(self) -> int:
        return self.probabilities.shape[0]

    @property
    def arity(self) -> int:
        return self.probabilities.shape[1]


class BayesianNetwork:
    """An acyclic structure plus one CPT per variable."""

    def __init__(self, variables: Sequence[Variable], structure: Structure, cpts: Sequence[Cpt]):
        self.variables = tuple(variables)
        self.structure = structure
        self.cpts = tuple(cpts)
        n = len(self.variables)
        if structure.n != n or len(self.cpts) != n:
            raise ValidationError("variables, structure and CPTs disagree on the variable count")
        if len({v.name for v in self.variables}) != n:
            raise ValidationError("variable names must be unique")
        self.order = topological_order(structure)
        arities = self.arities
        for v, cpt in enumerate(self.cpts):
            if cpt.variable != v:
                raise ValidationError(f"CPT {v} is attached to variable {cpt.variable}")
            q = parent_config_count(structure.parent_sets[v], arities)
            if cpt.probabilities.shape != (q, arities[v]):
                raise ValidationError(
                    f"CPT of {self.variables[v].name!r} has shape {cpt.probabilities.shape}, expected {(q, arities[v])}"
                )
        self._strides = [parent_strides(ps, arities) for ps in structure.parent_sets]

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(v.arity for v in self.variables)

    def row_index(self, v: int, assignment: Sequence[int]) -> int:
        return sum(assignment[p] * s for p, s in zip(self.structure.parent_sets[v], self._strides[v]))

    def row_indices(self, v: int, values: np.ndarray) -> np.ndarray:
        """Vectorised row_index over a (cases, n) value matrix."""
        idx = np.zeros(values.shape[0], dtype=np.int64)
        for p, s in zip(self.structure.parent_sets[v], self._strides[v]):
            idx += values[:, p].astype(np.int64) * s
        return idx

    def __repr__(self):
        return f"BayesianNetwork({[v.name for v in self.variables]}, {self.structure!r})"


def forward_sample(net: BayesianNetwork, rng: np.random.Generator, case_count: int):
    """Ancestral sampling of ``case_count`` complete cases."""
    from .dataset import Dataset

    if case_count < 0:
        raise ValidationError("case_count must be >= 0")
    values = np.zeros((case_count, net.n), dtype=np.int16)
    for v in net.order:
        cum = np.cumsum(net.cpts[v].probabilities, axis=1)
        rows = net.row_indices(v, values)
        u = rng.random(case_count)
        drawn = (cum[rows] <= u[:, None]).sum(axis=1)
        values[:, v] = np.minimum(drawn, net.variables[v].arity - 1)
    return Dataset(net.variables, values)


def joint_probability(net: BayesianNetwork, assignment: Sequence[int]) -> float:
    if len(assignment) != net.n:
        raise ValidationError("assignment must cover every variable")
    p = 1.0
    for v in range(net.n):
        p *= net.cpts[v].probabilities[net.row_index(v, assignment), assignment[v]]
        if p == 0.0:
            return 0.0
    return float(p)


def conditional_query(net: BayesianNetwork, target: int, evidence: Mapping[int, int]) -> np.ndarray:
    """Exact P(target | evidence) by summing the joint over every completion."""
    if target in evidence:
        raise ValidationError("target variable is part of the evidence")
    hidden = [v for v in range(net.n) if v != target and v not in evidence]
    arities = net.arities
    scores = np.zeros(arities[target])
    full = [0] * net.n
    for v, k in evidence.items():
        full[v] = k
    for k in range(arities[target]):
        full[target] = k
        total = 0.0
        for combo in itertools.product(*(range(arities[h]) for h in hidden)):
            for h, val in zip(hidden, combo):
                full[h] = val
            total += joint_probability(net, full)
        scores[k] = total
    z = scores.sum()
    if z <= 0.0:
        raise ZeroEvidenceProbability(f"evidence {dict(evidence)} has probability zero")
    return scores / z


def count_parent_sets(n: int, m: int) -> int:
    """Number of parent sets of size <= m drawn from n - 1 candidates, empty set included."""
    if not 0 <= m < n:
        raise ValidationError("need 0 <= m < n")
    return 1 + sum(math.comb(n - 1, i) for i in range(1, m + 1))
