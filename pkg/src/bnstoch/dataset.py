"""Datasets with missing cells, MCAR masking, imputed views and family counts."""

from __future__ import annotations

import csv
import hashlib
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bn_core import Variable, parent_config_count, parent_strides
from .errors import (
    AlreadyIncomplete,
    EmptyFile,
    LengthMismatch,
    RaggedRow,
    UnknownLabel,
    ValidationError,
)

MISSING = -1
MISSING_TOKEN = "?"
VALUE_DTYPE = np.int16


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Dataset:
    """A cases x variables table of value indices, ``MISSING`` for unknown cells."""

    def __init__(self, variables: Sequence[Variable], cells: np.ndarray):
        self.variables = tuple(variables)
        cells = np.array(cells, dtype=VALUE_DTYPE).reshape(-1, len(self.variables))
        arities = np.array([v.arity for v in self.variables], dtype=np.int64)
        if cells.size and (np.any(cells < MISSING) or np.any(cells >= arities[None, :])):
            raise ValidationError("cell value out of range for its variable")
        self.cells = _frozen(cells)
        self._arities = tuple(v.arity for v in self.variables)
        self._complete = not bool(np.any(cells == MISSING))

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def case_count(self) -> int:
        return self.cells.shape[0]

    @property
    def arities(self) -> tuple[int, ...]:
        return self._arities

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def has_missing(self) -> bool:
        return not self._complete

    def column(self, v: int) -> np.ndarray:
        if not self._complete:
            raise ValidationError("dataset has missing cells; use a completed view")
        return self.cells[:, v]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.variables == other.variables and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        return f"Dataset({self.names}, cases={self.case_count})"


@dataclass(frozen=True)
class MissingMask:
    """Row-major coordinates of every missing cell."""

    cases: np.ndarray
    variables: np.ndarray

    @classmethod
    def of(cls, data: Dataset) -> MissingMask:
        cases, variables = np.nonzero(data.cells == MISSING)
        return cls(_frozen(cases.astype(np.int64)), _frozen(variables.astype(np.int64)))

    def __len__(self) -> int:
        return len(self.cases)

    def positions(self) -> list[tuple[int, int]]:
        return list(zip(self.cases.tolist(), self.variables.tolist()))

    def cell_arities(self, arities: Sequence[int]) -> np.ndarray:
        return np.asarray(arities, dtype=np.int64)[self.variables]

    def matches(self, data: Dataset) -> bool:
        other = MissingMask.of(data)
        return np.array_equal(self.cases, other.cases) and np.array_equal(self.variables, other.variables)


def validate_assignment(assignment, mask: MissingMask, arities: Sequence[int]) -> np.ndarray:
    values = np.asarray(assignment, dtype=VALUE_DTYPE)
    if values.shape != (len(mask),):
        raise LengthMismatch(f"assignment has {values.size} values for {len(mask)} missing cells")
    if values.size and (np.any(values < 0) or np.any(values >= mask.cell_arities(arities))):
        raise ValidationError("assignment value out of range for its variable")
    return values


def _digest(column: np.ndarray) -> bytes:
    return hashlib.blake2b(column.tobytes(), digest_size=16).digest()


class CompletedView:
    """Read-only complete-data view of ``data`` with ``assignment`` imputed.

    Values are stored column-wise; each column also carries a 128-bit digest
    used as the completed-data fingerprint by the score cache.
    """

    __slots__ = ("data", "mask", "assignment", "_columns", "_digests")

    def __init__(self, data: Dataset, mask: MissingMask, assignment, *, _columns=None, _digests=None):
        self.data = data
        self.mask = mask
        if _columns is None:
            if len(mask) != int(np.count_nonzero(data.cells == MISSING)):
                raise LengthMismatch("mask does not match the dataset's missing cells")
            self.assignment = _frozen(validate_assignment(assignment, mask, data.arities).copy())
            cols = data.cells.T.copy()
            if len(mask):
                if np.any(cols[mask.variables, mask.cases] != MISSING):
                    raise LengthMismatch("mask does not match the dataset's missing cells")
                cols[mask.variables, mask.cases] = self.assignment
            self._columns = _frozen(cols)
            self._digests = [None] * data.n
        else:
            self.assignment = assignment
            self._columns = _columns
            self._digests = _digests

    @property
    def variables(self):
        return self.data.variables

    @property
    def arities(self):
        return self.data.arities

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def case_count(self) -> int:
        return self.data.case_count

    def value(self, case: int, v: int) -> int:
        return int(self._columns[v, case])

    def column(self, v: int) -> np.ndarray:
        return self._columns[v]

    @property
    def matrix(self) -> np.ndarray:
        """(cases, n) array of completed values."""
        return self._columns.T

    def digest(self, v: int) -> bytes:
        d = self._digests[v]
        if d is None:
            d = self._digests[v] = _digest(self._columns[v])
        return d

    def with_cell(self, position: int, value: int) -> CompletedView:
        """New view with one missing cell re-imputed."""
        v = int(self.mask.variables[position])
        assignment = self.assignment.copy()
        assignment[position] = value
        cols = self._columns.copy()
        cols[v, self.mask.cases[position]] = value
        digests = list(self._digests)
        digests[v] = None
        return CompletedView(self.data, self.mask, _frozen(assignment), _columns=_frozen(cols), _digests=digests)

    def with_assignment(self, assignment) -> CompletedView:
        """New view for a whole new assignment; untouched columns keep their digests."""
        values = np.asarray(assignment, dtype=VALUE_DTYPE)
        if values.shape != self.assignment.shape:
            raise LengthMismatch("assignment length does not match the mask")
        changed = values != self.assignment
        if not changed.any():
            return self
        cols = self._columns.copy()
        cols[self.mask.variables, self.mask.cases] = values
        digests = list(self._digests)
        for v in np.unique(self.mask.variables[changed]).tolist():
            digests[v] = None
        return CompletedView(self.data, self.mask, _frozen(values.copy()), _columns=_frozen(cols), _digests=digests)

    def changed_variables(self, positions) -> set[int]:
        return {int(self.mask.variables[p]) for p in positions}


def completed_view(data: Dataset, mask: MissingMask, assignment) -> CompletedView:
    return CompletedView(data, mask, assignment)


def inject_mcar(data: Dataset, rate: float, rng: np.random.Generator) -> tuple[Dataset, MissingMask]:
    """Blank each cell independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValidationError("missingness rate must lie in [0, 1]")
    if data.has_missing():
        raise AlreadyIncomplete("dataset already has missing cells")
    hit = rng.random(data.cells.shape) < rate
    cells = data.cells.copy()
    cells[hit] = MISSING
    masked = Dataset(data.variables, cells)
    return masked, MissingMask.of(masked)


@dataclass(frozen=True)
class SufficientStats:
    counts: np.ndarray  # (q_i, r_i) table of N_ijk

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def case_count(self) -> int:
        return int(self.counts.sum())


def count_family(view, variable: int, parents: Sequence[int]) -> SufficientStats:
    """N_ijk for ``variable`` under ``parents`` over every case of a complete view."""
    parents = tuple(sorted(parents))
    if variable in parents:
        raise ValidationError("a variable cannot be its own parent")
    arities = view.arities
    r = arities[variable]
    q = parent_config_count(parents, arities)
    idx = view.column(variable).astype(np.int64)
    for p, s in zip(parents, parent_strides(parents, arities)):
        idx = idx + view.column(p).astype(np.int64) * (s * r)
    counts = np.bincount(idx, minlength=q * r).reshape(q, r)
    return SufficientStats(counts)


def load_csv(path, variables: Sequence[Variable] | None = None) -> Dataset:
    """Read a CSV with a header of variable names and ``?`` for missing cells.

    With ``variables`` the header must name them (any order) and labels are
    looked up; without, each column's labels are the sorted set observed.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyFile(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    body = [[c.strip() for c in r] for r in rows[1:]]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise RaggedRow(f"{path}: line {i} has {len(r)} fields, header has {len(header)}")

    if variables is None:
        ordered = []
        for j, name in enumerate(header):
            labels = sorted({r[j] for r in body} - {MISSING_TOKEN})
            k = 0
            while len(labels) < 2:
                pad = f"unobserved{k}"
                if pad not in labels:
                    labels.append(pad)
                k += 1
            ordered.append(Variable(name, len(labels), tuple(labels)))
    else:
        by_name = {v.name: v for v in variables}
        if sorted(header) != sorted(by_name):
            raise UnknownLabel(f"{path}: header {header} does not match the declared variables")
        ordered = [by_name[h] for h in header]

    lookups = [{lab: k for k, lab in enumerate(v.value_labels)} for v in ordered]
    cells = np.empty((len(body), len(header)), dtype=VALUE_DTYPE)
    for i, r in enumerate(body):
        for j, token in enumerate(r):
            if token == MISSING_TOKEN:
                cells[i, j] = MISSING
            else:
                try:
                    cells[i, j] = lookups[j][token]
                except KeyError:
                    raise UnknownLabel(f"{path}: unknown label {token!r} for {header[j]!r}") from None

    data = Dataset(ordered, cells)
    if variables is not None:
        # reorder columns to the declared variable order
        order = [header.index(v.name) for v in variables]
        data = Dataset(tuple(variables), cells[:, order])
    return data


def save_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(data.names)
        labels = [v.value_labels for v in data.variables]
        for row in data.cells.tolist():
            writer.writerow([MISSING_TOKEN if x == MISSING else labels[j][x] for j, x in enumerate(row)])


def save_assignment(path, data: Dataset, mask: MissingMask, assignment) -> None:
    """Write imputed values as ``case,variable,value`` rows (labels, not indices)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case", "variable", "value"])
        for (c, v), x in zip(mask.positions(), np.asarray(assignment).tolist()):
            var = data.variables[v]
            writer.writerow([c, var.name, var.value_labels[x]])


def load_assignment(path, data: Dataset, mask: MissingMask, individual: int | None = None) -> np.ndarray:
    """Read a ``case,variable,value`` file (optionally with an ``individual`` column)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    if not {"case", "variable", "value"} <= set(fields):
        raise ValidationError(f"{path}: expected columns case,variable,value")
    if "individual" in fields:
        wanted = str(individual or 0)
        rows = [r for r in rows if r["individual"] == wanted]
    index = {v.name: j for j, v in enumerate(data.variables)}
    lookup = {}
    for r in rows:
        try:
            v = index[r["variable"]]
            x = data.variables[v].value_labels.index(r["value"])
        except (KeyError, ValueError):
            raise UnknownLabel(f"{path}: bad variable/value {r['variable']!r}={r['value']!r}") from None
        lookup[(int(r["case"]), v)] = x
    positions = mask.positions()
    if set(lookup) != set(positions):
        raise LengthMismatch(f"{path}: assignment cells do not match the dataset's missing cells")
    return np.array([lookup[p] for p in positions], dtype=VALUE_DTYPE)
