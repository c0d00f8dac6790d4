"""Convergence and evaluation measures: Gelman-Rubin, holdout log loss,
best-so-far and diversity curves, arc marginals, credible intervals."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .bn_core import BayesianNetwork
from .dataset import Dataset
from .errors import (
    DegenerateChains,
    DigestsAbsent,
    EmptyHoldout,
    EmptyPopulation,
    TooFewSamples,
    ValidationError,
)

LOOSE_THRESHOLD = 1.2
STRICT_THRESHOLD = 1.1


def psrf(traces, burn_in: float = 0.5) -> float:
    """Potential scale reduction R-hat of M chains (rows) after dropping a burn-in fraction."""
    x = np.asarray(traces, dtype=float)
    if x.ndim != 2:
        raise ValidationError("traces must be a chains x iterations array")
    start = int(x.shape[1] * burn_in)
    x = x[:, start:]
    m, n = x.shape
    if m < 2 or n < 2:
        raise ValidationError(f"need >= 2 chains of >= 2 post burn-in iterations, got {m} x {n}")
    b = n * np.var(x.mean(axis=1), ddof=1)
    w = np.mean(np.var(x, axis=1, ddof=1))
    if w == 0.0:
        raise DegenerateChains("within-chain variance is zero (every chain is constant)")
    v_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(v_hat / w))


def psrf_curve(traces, every: int = 25, burn_in: float = 0.5):
    """R-hat over growing prefixes of length every, 2*every, ..., plus the full length.

    Returns (lengths, values) with NaN where the prefix is degenerate or too short.
    """
    x = np.asarray(traces, dtype=float)
    total = x.shape[1]
    lengths = list(range(every, total + 1, every))
    if not lengths or lengths[-1] != total:
        lengths.append(total)
    values = []
    for length in lengths:
        try:
            values.append(psrf(x[:, :length], burn_in))
        except (DegenerateChains, ValidationError):
            values.append(float("nan"))
    return lengths, np.array(values)


def first_below(lengths, values, threshold: float):
    """First prefix length whose R-hat is at or below ``threshold`` (None if never)."""
    for length, r in zip(lengths, values):
        if not np.isnan(r) and r <= threshold:
            return length
    return None


@dataclass
class EvalReport:
    bde_score: float
    log_loss: float
    per_variable: dict[str, float] = field(default_factory=dict)
    impossible_evidence: int = 0
    case_count: int = 0

    def to_text(self) -> str:
        lines = [
            f"bde_score = {self.bde_score!r}",
            f"log_loss = {self.log_loss!r}",
            f"holdout_cases = {self.case_count}",
            f"impossible_evidence = {self.impossible_evidence}",
        ]
        lines += [f"log_loss[{k}] = {v!r}" for k, v in self.per_variable.items()]
        return "\n".join(lines) + "\n"


def _case_conditionals(net: BayesianNetwork, values: np.ndarray):
    """For every case and variable X: P(X = k, rest observed) for every k, shape (n, cases, r_max)."""
    cases = values.shape[0]
    n = net.n
    rmax = max(net.arities)
    out = np.zeros((n, cases, rmax))
    children = [net.structure.children(v) for v in range(n)]
    for x in range(n):
        for k in range(net.arities[x]):
            alt = values.copy()
            alt[:, x] = k
            p = np.ones(cases)
            # factors not involving X cancel after normalisation but are kept
            # so the result is the plain joint
            for v in range(n):
                p *= net.cpts[v].probabilities[net.row_indices(v, alt), alt[:, v]]
            out[x, :, k] = p
    return out


def log_loss(net: BayesianNetwork, holdout: Dataset, bde_score: float = float("nan")) -> EvalReport:
    """Mean over cases of the summed -ln P(x | other variables of the case).

    Terms whose evidence has probability zero, or whose observed value gets
    probability zero, are excluded from the means and counted.
    """
    if holdout.case_count == 0:
        raise EmptyHoldout("holdout set has no cases")
    if holdout.has_missing():
        raise ValidationError("holdout set must be complete")
    if holdout.arities != net.arities:
        raise ValidationError("holdout variables do not match the network")
    values = holdout.cells.astype(np.int64)
    joint = _case_conditionals(net, values)
    rows = np.arange(holdout.case_count)
    per_variable = {}
    impossible = 0
    total = 0.0
    for x, var in enumerate(net.variables):
        z = joint[x].sum(axis=1)
        hit = joint[x][rows, values[:, x]]
        ok = (z > 0) & (hit > 0)
        impossible += int((~ok).sum())
        loss = -np.log(hit[ok] / z[ok])
        mean = float(loss.sum() / ok.sum()) if ok.any() else float("nan")
        per_variable[var.name] = mean
        total += mean
    return EvalReport(bde_score, total, per_variable, impossible, holdout.case_count)


def best_so_far(per_iteration) -> np.ndarray:
    """Running maximum; accepts a Trace or a sequence of per-iteration population maxima."""
    scores = getattr(per_iteration, "scores", None)
    if scores is not None:
        per_iteration = [float(np.max(s)) for s in scores]
    x = np.asarray(per_iteration, dtype=float)
    if x.size == 0:
        raise ValidationError("empty trace")
    return np.maximum.accumulate(x)


def diversity(trace) -> np.ndarray:
    """Number of distinct structure digests in each recorded population."""
    digests = getattr(trace, "digests", trace)
    if digests is None:
        raise DigestsAbsent("trace was recorded without structure digests")
    return np.array([len(set(row)) for row in digests], dtype=np.int64)


def arc_marginals(structures: Sequence) -> np.ndarray:
    """Fraction of structures containing each arc u -> v, at [u, v]."""
    structures = [getattr(s, "structure", s) for s in structures]
    if not structures:
        raise EmptyPopulation("no structures")
    n = structures[0].n
    counts = np.zeros((n, n), dtype=np.int64)
    for s in structures:
        for v, ps in enumerate(s.parent_sets):
            counts[list(ps), v] += 1
    return counts / len(structures)


def credible_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Central percentile interval with linear interpolation between order statistics."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise TooFewSamples("need at least two samples")
    tail = (1.0 - level) / 2.0 * 100.0
    low, high = np.percentile(x, [tail, 100.0 - tail], method="linear")
    return float(low), float(high)
