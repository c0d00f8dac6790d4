"""Search loops over (structure, imputed missing values): an evolutionary
algorithm, a population of independent Metropolis-Hastings chains, and
evolutionary MCMC (MH mutation plus jointly accepted crossover).
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .bn_core import Structure, is_acyclic
from .dataset import VALUE_DTYPE, CompletedView, Dataset, MissingMask
from .errors import NoFeasibleMove, PopulationTooSmall, ValidationError
from .moves import (
    DATA,
    FrequencyTracker,
    MoveConfig,
    ProposalSnapshot,
    crossover_uniform,
    mutate_missing,
    mutate_structure,
)
from .scoring import FamilyScoreCache, ScoreConfig, ScoredState, rescore_delta, structure_score

log = logging.getLogger(__name__)

EA, MCMC, EMCMC = "ea", "mcmc", "emcmc"
ENGINE_KINDS = (EA, MCMC, EMCMC)
STRUCTURE, CROSSOVER = "structure", "crossover"
MOVE_KINDS = (STRUCTURE, DATA, CROSSOVER)


@dataclass(frozen=True)
class EngineConfig:
    engine_kind: str = EMCMC
    population_size: int = 20
    iterations: int = 500
    crossover_prob: float = 0.5
    mutation_prob: float = 0.2
    tournament_size: int = 2
    data_move_prob: float = 0.5
    adaptive: bool = False
    seed: int = 0
    repetitions: int = 5
    sweep: bool = False
    record_digests: bool = True

    def __post_init__(self):
        object.__setattr__(self, "engine_kind", self.engine_kind.lower())
        if self.engine_kind not in ENGINE_KINDS:
            raise ValidationError(f"unknown engine {self.engine_kind!r}")
        if self.population_size < 2:
            raise ValidationError("population_size must be >= 2")
        if self.iterations < 1 or self.repetitions < 1:
            raise ValidationError("iterations and repetitions must be >= 1")
        if self.tournament_size < 1:
            raise ValidationError("tournament_size must be >= 1")
        for name in ("crossover_prob", "mutation_prob", "data_move_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class Individual:
    structure: Structure
    view: CompletedView
    scored: ScoredState

    @property
    def assignment(self) -> np.ndarray:
        return self.view.assignment

    @property
    def score(self) -> float:
        return self.scored.log_score

    def genotype_key(self):
        return (self.structure, self.view.assignment.tobytes())


class Problem:
    """Everything a step needs besides the population and the random stream."""

    def __init__(self, data: Dataset, mask: MissingMask, score_config: ScoreConfig,
                 move_config: MoveConfig, engine_config: EngineConfig, cache: FamilyScoreCache | None = None):
        self.data = data
        self.mask = mask
        self.arities = data.arities
        self.cell_arities = mask.cell_arities(self.arities)
        self.score_config = score_config
        self.move_config = move_config
        self.engine_config = engine_config
        self.cache = FamilyScoreCache() if cache is None else cache
        self.adaptive = engine_config.adaptive or move_config.adaptive

    @property
    def n(self) -> int:
        return self.data.n

    def score(self, structure: Structure, view: CompletedView) -> ScoredState:
        return structure_score(structure, view, self.score_config, self.cache)

    def individual(self, structure: Structure, assignment) -> Individual:
        view = CompletedView(self.data, self.mask, assignment)
        return Individual(structure, view, self.score(structure, view))


@dataclass
class StepStats:
    attempts: Counter = field(default_factory=Counter)
    accepts: Counter = field(default_factory=Counter)

    def record(self, kind: str, accepted: bool) -> None:
        self.attempts[kind] += 1
        if accepted:
            self.accepts[kind] += 1

    def rate(self, kind: str) -> float:
        a = self.attempts[kind]
        return self.accepts[kind] / a if a else float("nan")


class Trace:
    """Per-iteration record of a run; row 0 is the initial population."""

    def __init__(self, population_size: int, record_digests: bool = True):
        self.population_size = population_size
        self.record_digests = record_digests
        self.scores: list[np.ndarray] = []
        self.best_so_far: list[float] = []
        self.unique_structures: list[int] = []
        self.stats: list[StepStats] = []
        self.digests: list[list[str]] | None = [] if record_digests else None

    def record(self, population: Sequence[Individual], stats: StepStats | None = None) -> None:
        scores = np.array([ind.score for ind in population])
        best = float(scores.max())
        if self.best_so_far:
            best = max(best, self.best_so_far[-1])
        self.scores.append(scores)
        self.best_so_far.append(best)
        self.unique_structures.append(len({ind.structure for ind in population}))
        self.stats.append(stats or StepStats())
        if self.digests is not None:
            self.digests.append([ind.structure.digest() for ind in population])

    def __len__(self) -> int:
        return len(self.scores)

    def score_matrix(self) -> np.ndarray:
        """(rows, population) array of log scores."""
        return np.vstack(self.scores)


def mh_accept(current_score: float, proposed_score: float, forward_log_prob: float,
              reverse_log_prob: float, temperature: float, rng: np.random.Generator,
              legal: bool = True) -> bool:
    """Metropolis-Hastings test on log scores; illegal (cyclic) proposals are rejected outright."""
    if not legal:
        return False
    log_ratio = (proposed_score - current_score) / temperature + reverse_log_prob - forward_log_prob
    if log_ratio >= 0.0:
        return True
    return rng.random() < math.exp(log_ratio)


# -- initialisation ------------------------------------------------------------------


def random_dag(n: int, max_parents: int, rng: np.random.Generator) -> Structure:
    """Arcs u -> v for u before v in a random order, each kept with prob min(1, m/(n-1))."""
    if n < 2 or max_parents == 0:
        return Structure.empty(n)
    perm = rng.permutation(n).tolist()
    p = min(1.0, max_parents / (n - 1))
    sets: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            u, v = perm[i], perm[j]
            if rng.random() < p and len(sets[v]) < max_parents:
                sets[v].append(u)
    return Structure(sets)


def init_individual(problem: Problem, rng: np.random.Generator) -> Individual:
    if rng.random() < 0.5:
        structure = Structure.empty(problem.n)
    else:
        structure = random_dag(problem.n, problem.score_config.max_parents, rng)
    assignment = rng.integers(0, problem.cell_arities).astype(VALUE_DTYPE) if len(problem.mask) else \
        np.zeros(0, dtype=VALUE_DTYPE)
    return problem.individual(structure, assignment)


def init_population(problem: Problem, rngs) -> list[Individual]:
    """``rngs`` is one generator (shared) or one generator per individual."""
    size = problem.engine_config.population_size
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs] * size
    return [init_individual(problem, rngs[i]) for i in range(size)]


# -- shared mutation rule ------------------------------------------------------------------


def _snapshot_for(proposals, i: int) -> ProposalSnapshot | None:
    if proposals is None:
        return None
    if isinstance(proposals, FrequencyTracker):
        return proposals.snapshot_without(i)
    return proposals


def propose_mutation(ind: Individual, problem: Problem, rng: np.random.Generator,
                     snapshot: ProposalSnapshot | None):
    """Draw one structure or data mutation; returns (kind, move) or (kind, None) if none is feasible."""
    ec, mc = problem.engine_config, problem.move_config
    if len(problem.mask) and rng.random() < ec.data_move_prob:
        move = mutate_missing(ind.assignment, problem.mask, problem.arities, snapshot, mc.epsilon, rng)
        return DATA, move
    try:
        move = mutate_structure(ind.structure, problem.score_config.max_parents, snapshot,
                                mc.structure_move_weights, mc.epsilon, rng)
    except NoFeasibleMove:
        return STRUCTURE, None
    return STRUCTURE, move


def _apply_move(ind: Individual, kind: str, move, problem: Problem) -> Individual:
    sc, cache = problem.score_config, problem.cache
    if kind == DATA:
        view = ind.view.with_cell(move.position, move.value)
        scored = rescore_delta(ind.scored, ind.structure, view, sc, cache, changed_cells=move.changed_cells)
        return Individual(ind.structure, view, scored)
    scored = rescore_delta(ind.scored, move.structure, ind.view, sc, cache, changed_families=move.changed_families)
    return Individual(move.structure, ind.view, scored)


def mh_mutate(ind: Individual, problem: Problem, rng: np.random.Generator,
              snapshot: ProposalSnapshot | None, stats: StepStats | None = None) -> Individual:
    """One Metropolis-Hastings mutation step of a single chain."""
    kind, move = propose_mutation(ind, problem, rng, snapshot)
    accepted = False
    new = ind
    if move is not None and (kind == DATA or is_acyclic(move.structure)):
        candidate = _apply_move(ind, kind, move, problem)
        if mh_accept(ind.score, candidate.score, move.forward_log_prob, move.reverse_log_prob,
                     problem.score_config.temperature, rng):
            new, accepted = candidate, True
    if stats is not None:
        stats.record(kind, accepted)
    return new


# -- engines ----------------------------------------------------------------------------------


def mcmc_step(population: list[Individual], problem: Problem, rngs: Sequence[np.random.Generator],
              proposals=None, stats: StepStats | None = None) -> list[Individual]:
    """Advance every chain by one MH step, each with its own random stream.

    ``proposals`` is None (baseline moves), a fixed ProposalSnapshot, or a
    FrequencyTracker giving each chain the frequencies of the other chains.
    """
    out = list(population)
    for i, ind in enumerate(population):
        new = mh_mutate(ind, problem, rngs[i], _snapshot_for(proposals, i), stats)
        if new is not ind and isinstance(proposals, FrequencyTracker):
            proposals.replace(i, new.structure, new.assignment)
        out[i] = new
    return out


def _cross(a: Individual, b: Individual, problem: Problem, rng: np.random.Generator):
    p = problem.move_config.crossover_gene_prob
    sa, sb = crossover_uniform(a.structure, b.structure, p, rng)
    if len(problem.mask):
        xa, xb = crossover_uniform(a.assignment, b.assignment, p, rng)
        va, vb = a.view.with_assignment(xa), b.view.with_assignment(xb)
    else:
        va, vb = a.view, b.view
    return (sa, va), (sb, vb)


def emcmc_step(population: list[Individual], problem: Problem, rng: np.random.Generator,
               proposals=None, stats: StepStats | None = None) -> list[Individual]:
    """One EMCMC iteration: a random pair either crosses over (joint MH test) or mutates."""
    size = len(population)
    if size < 2:
        raise PopulationTooSmall("EMCMC needs at least two individuals")
    ec = problem.engine_config
    if ec.sweep:
        perm = rng.permutation(size).tolist()
        pairs = [(perm[k], perm[k + 1]) for k in range(0, size - 1, 2)]
    else:
        i, j = rng.choice(size, 2, replace=False).tolist()
        pairs = [(i, j)]
    out = list(population)
    tracker = proposals if isinstance(proposals, FrequencyTracker) else None
    for i, j in pairs:
        a, b = out[i], out[j]
        if rng.random() < ec.crossover_prob:
            (sa, va), (sb, vb) = _cross(a, b, problem, rng)
            accepted = False
            if is_acyclic(sa) and is_acyclic(sb):
                oa = Individual(sa, va, problem.score(sa, va))
                ob = Individual(sb, vb, problem.score(sb, vb))
                # uniform crossover is its own inverse with equal probability both ways
                if mh_accept(a.score + b.score, oa.score + ob.score, 0.0, 0.0,
                             problem.score_config.temperature, rng):
                    out[i], out[j], accepted = oa, ob, True
                    if tracker is not None:
                        tracker.replace(i, oa.structure, oa.assignment)
                        tracker.replace(j, ob.structure, ob.assignment)
            if stats is not None:
                stats.record(CROSSOVER, accepted)
        else:
            for k in (i, j):
                new = mh_mutate(out[k], problem, rng, _snapshot_for(proposals, k), stats)
                if new is not out[k] and tracker is not None:
                    tracker.replace(k, new.structure, new.assignment)
                out[k] = new
    return out


def _tournament(population: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    picks = rng.integers(len(population), size=k).tolist()
    best = picks[0]
    for p in picks[1:]:
        if population[p].score > population[best].score:
            best = p
    return population[best]


def _mutate_unconditionally(ind: Individual, problem: Problem, rng: np.random.Generator,
                            snapshot: ProposalSnapshot | None, stats: StepStats | None) -> Individual:
    kind, move = propose_mutation(ind, problem, rng, snapshot)
    if stats is not None:
        stats.record(kind, move is not None)
    if move is None:
        return ind
    return _apply_move(ind, kind, move, problem)


def ea_step(population: list[Individual], problem: Problem, rng: np.random.Generator,
            snapshot: ProposalSnapshot | None = None, stats: StepStats | None = None) -> list[Individual]:
    """Tournament selection, uniform crossover, unconditional mutation, elitist truncation.

    Survivors are the best ``population_size`` distinct genotypes of
    parents plus offspring (parents win ties); duplicates only fill slots
    left over when there are too few distinct genotypes.
    """
    ec = problem.engine_config
    size = len(population)
    offspring: list[Individual] = []
    while len(offspring) < size:
        a = _tournament(population, ec.tournament_size, rng)
        b = _tournament(population, ec.tournament_size, rng)
        if rng.random() < ec.crossover_prob:
            (sa, va), (sb, vb) = _cross(a, b, problem, rng)
            children = [Individual(sa, va, problem.score(sa, va)), Individual(sb, vb, problem.score(sb, vb))]
            if stats is not None:
                stats.record(CROSSOVER, True)
        else:
            children = [a, b]
        for child in children:
            if rng.random() < ec.mutation_prob:
                child = _mutate_unconditionally(child, problem, rng, snapshot, stats)
            offspring.append(child)
    pool = list(population) + offspring[:size]
    order = sorted(range(len(pool)), key=lambda k: -pool[k].score)
    chosen, seen, spare = [], set(), []
    for k in order:
        key = pool[k].genotype_key()
        if key in seen:
            spare.append(k)
        else:
            seen.add(key)
            chosen.append(k)
    chosen = (chosen + spare)[:size]
    chosen.sort(key=lambda k: (-pool[k].score, k))
    return [pool[k] for k in chosen]


# -- driver ---------------------------------------------------------------------------------


def repetition_streams(seed: int, rep: int, population_size: int):
    """Engine stream plus one private stream per chain, all derived from (seed, rep)."""
    root = np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
    children = root.spawn(population_size + 1)
    return np.random.default_rng(children[0]), [np.random.default_rng(c) for c in children[1:]]


@dataclass
class RunResult:
    repetition: int
    population: list[Individual]
    trace: Trace
    best: Individual  # highest-scoring state seen during the run


def step(population, problem: Problem, engine_rng, chain_rngs, tracker=None, stats=None):
    kind = problem.engine_config.engine_kind
    if kind == MCMC:
        return mcmc_step(population, problem, chain_rngs, tracker, stats)
    if kind == EMCMC:
        return emcmc_step(population, problem, engine_rng, tracker, stats)
    snapshot = tracker.snapshot() if tracker is not None else None
    new = ea_step(population, problem, engine_rng, snapshot, stats)
    if tracker is not None:
        for i, ind in enumerate(new):
            tracker.replace(i, ind.structure, ind.assignment)
    return new


def run_repetition(problem: Problem, rep: int, callback=None) -> RunResult:
    ec = problem.engine_config
    engine_rng, chain_rngs = repetition_streams(ec.seed, rep, ec.population_size)
    population = init_population(problem, chain_rngs)
    tracker = None
    if problem.adaptive:
        tracker = FrequencyTracker([(i.structure, i.assignment) for i in population], problem.mask, problem.arities)
    trace = Trace(ec.population_size, ec.record_digests)
    trace.record(population)
    best = max(population, key=lambda ind: ind.score)
    for it in range(1, ec.iterations + 1):
        stats = StepStats()
        population = step(population, problem, engine_rng, chain_rngs, tracker, stats)
        trace.record(population, stats)
        top = max(population, key=lambda ind: ind.score)
        if top.score > best.score:
            best = top
        if callback is not None:
            callback(it, population)
    log.debug("%s rep %d: best %.3f", ec.engine_kind, rep, trace.best_so_far[-1])
    return RunResult(rep, population, trace, best)


def run(engine_config: EngineConfig, data: Dataset, mask: MissingMask, score_config: ScoreConfig,
        move_config: MoveConfig, callback=None) -> list[RunResult]:
    """Run every repetition; repetition r is seeded from (engine_config.seed, r)."""
    score_config.validate_penalty(data.case_count, data.arities)
    results = []
    for rep in range(engine_config.repetitions):
        problem = Problem(data, mask, score_config, move_config, engine_config)
        results.append(run_repetition(problem, rep, callback))
    return results
