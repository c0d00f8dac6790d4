"""Bayesian Dirichlet (K2 / BDeu) scoring of structures on completed data."""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .bn_core import BayesianNetwork, Cpt, Structure, is_acyclic, parent_config_count
from .dataset import SufficientStats, count_family
from .errors import CyclicStructure, ParentLimitExceeded, ValidationError

K2 = "k2"
BDEU = "bdeu"


@dataclass(frozen=True)
class ScoreConfig:
    prior_kind: str = K2
    ess: float = 1.0
    max_parents: int = 3
    illegal_penalty: float = -1e12
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "prior_kind", self.prior_kind.lower())
        if self.prior_kind not in (K2, BDEU):
            raise ValidationError(f"unknown prior {self.prior_kind!r}; use 'k2' or 'bdeu'")
        if not self.ess > 0:
            raise ValidationError("ess must be positive")
        if self.max_parents < 0:
            raise ValidationError("max_parents must be >= 0")
        if not self.temperature > 0:
            raise ValidationError("temperature must be positive")

    def hyperparameters(self, arity: int, q: int) -> tuple[float, float]:
        """(alpha_ijk, alpha_ij) for a family with ``q`` parent configurations."""
        if self.prior_kind == K2:
            return 1.0, float(arity)
        a = self.ess / (arity * q)
        return a, a * arity

    def score_floor(self, case_count: int, arities) -> float:
        """A lower bound on every attainable log score.

        Each case's sequential predictive probability is at least
        alpha_ijk / (alpha_ij + N), so the log marginal likelihood of a family
        is at least -N * ln((alpha_ij + N) / alpha_ijk); the worst family
        uses the largest admissible parent configuration count.
        """
        total = 0.0
        big = sorted(arities, reverse=True)
        for r in arities:
            q = math.prod(big[: self.max_parents]) if self.max_parents else 1
            a_ijk, a_ij = self.hyperparameters(r, q)
            total += case_count * math.log((a_ij + case_count) / a_ijk)
        return -total

    def validate_penalty(self, case_count: int, arities) -> None:
        floor = self.score_floor(case_count, arities)
        if not self.illegal_penalty < floor - abs(floor) - 1.0:
            raise ValidationError(
                f"illegal_penalty {self.illegal_penalty} is not safely below the attainable score floor {floor:.1f}"
            )


def family_score(stats: SufficientStats, arity: int, q: int, config: ScoreConfig) -> float:
    counts = stats.counts
    if counts.shape != (q, arity):
        raise ValidationError(f"counts have shape {counts.shape}, expected {(q, arity)}")
    a_ijk, a_ij = config.hyperparameters(arity, q)
    n_ij = counts.sum(axis=1)
    total = q * gammaln(a_ij) - gammaln(a_ij + n_ij).sum()
    total += gammaln(a_ijk + counts).sum() - counts.size * gammaln(a_ijk)
    return float(total)


class FamilyScoreCache:
    """Family scores keyed by (variable, parents, digests of the touched columns).

    One cache must only ever be used with a single ScoreConfig.
    """

    def __init__(self, max_entries: int = 500_000):
        self.max_entries = max_entries
        self._store: dict = {}
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._store)

    def clear(self):
        self._store.clear()

    def family(self, view, v: int, parents: tuple[int, ...], config: ScoreConfig) -> float:
        key = (v, parents, view.digest(v), *[view.digest(p) for p in parents])
        hit = self._store.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        self.misses += 1
        value = _fresh_family(view, v, parents, config)
        if len(self._store) >= self.max_entries:
            self._store.clear()
        self._store[key] = value
        return value


def _fresh_family(view, v: int, parents: tuple[int, ...], config: ScoreConfig) -> float:
    arities = view.arities
    stats = count_family(view, v, parents)
    return family_score(stats, arities[v], parent_config_count(parents, arities), config)


def _family(view, v, parents, config, cache):
    if cache is None:
        return _fresh_family(view, v, parents, config)
    return cache.family(view, v, parents, config)


@dataclass(frozen=True)
class ScoredState:
    structure: Structure
    assignment: np.ndarray
    log_score: float
    per_family: tuple[float, ...]
    acyclic: bool


def _illegal(structure, view, config) -> ScoredState:
    n = structure.n
    share = config.illegal_penalty / n if n else 0.0
    return ScoredState(structure, view.assignment, config.illegal_penalty, (share,) * n, False)


def _check_parent_limit(structure: Structure, config: ScoreConfig) -> None:
    for v, ps in enumerate(structure.parent_sets):
        if len(ps) > config.max_parents:
            raise ParentLimitExceeded(f"variable {v} has {len(ps)} parents, limit {config.max_parents}")


def structure_score(structure: Structure, view, config: ScoreConfig, cache: FamilyScoreCache | None = None) -> ScoredState:
    """Log marginal likelihood (uniform structure prior) or the illegal penalty if cyclic."""
    _check_parent_limit(structure, config)
    if not is_acyclic(structure):
        return _illegal(structure, view, config)
    per_family = tuple(_family(view, v, ps, config, cache) for v, ps in enumerate(structure.parent_sets))
    return ScoredState(structure, view.assignment, math.fsum(per_family), per_family, True)


def rescore_delta(
    prev: ScoredState,
    structure: Structure,
    view,
    config: ScoreConfig,
    cache: FamilyScoreCache | None = None,
    changed_families: Iterable[int] = (),
    changed_cells: Iterable[int] = (),
) -> ScoredState:
    """Rescore only the families touched by a structure or missing-cell change.

    ``view`` is the post-change view and ``changed_cells`` are mask positions.
    """
    changed_families = set(changed_families)
    changed_vars = view.changed_variables(changed_cells) if changed_cells else set()
    if not changed_families and not changed_vars:
        return prev
    for v in changed_families:
        if len(structure.parent_sets[v]) > config.max_parents:
            raise ParentLimitExceeded(f"variable {v} exceeds the parent limit")
    if not prev.acyclic or changed_families:
        if not is_acyclic(structure):
            return _illegal(structure, view, config)
        if not prev.acyclic:
            return structure_score(structure, view, config, cache)
    todo = set(changed_families)
    if changed_vars:
        for v, ps in enumerate(structure.parent_sets):
            if v in changed_vars or not changed_vars.isdisjoint(ps):
                todo.add(v)
    per_family = list(prev.per_family)
    for v in todo:
        per_family[v] = _family(view, v, structure.parent_sets[v], config, cache)
    return ScoredState(structure, view.assignment, math.fsum(per_family), tuple(per_family), True)


def fit_parameters(structure: Structure, view, config: ScoreConfig) -> BayesianNetwork:
    """Posterior-mean CPTs (N_ijk + alpha_ijk) / (N_ij + alpha_ij)."""
    if not is_acyclic(structure):
        raise CyclicStructure("cannot fit parameters of a cyclic structure")
    arities = view.arities
    cpts = []
    for v, ps in enumerate(structure.parent_sets):
        counts = count_family(view, v, ps).counts.astype(float)
        a_ijk, a_ij = config.hyperparameters(arities[v], counts.shape[0])
        probs = (counts + a_ijk) / (counts.sum(axis=1, keepdims=True) + a_ij)
        cpts.append(Cpt(v, probs))
    return BayesianNetwork(view.variables, structure, cpts)
