"""Line-oriented network text format.

::

    network <name>
    variable <name> <arity> <label1>,<label2>,...
    parents <name> <pname1> <pname2> ...
    cpt <name> <row-index> <p1> ... <p_r>

A file without ``cpt`` lines describes a bare structure.  CPT rows enumerate
parent configurations in mixed radix, first-listed parent most significant.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bn_core import BayesianNetwork, Cpt, Structure, Variable, parent_config_count
from .errors import NetworkFormatError, ValidationError

ROW_SUM_TOLERANCE = 1e-6


@dataclass
class NetworkFile:
    name: str
    variables: tuple[Variable, ...]
    structure: Structure
    network: BayesianNetwork | None  # None for a bare structure


def parse_network(text: str) -> NetworkFile:
    name = "network"
    variables: list[Variable] = []
    index: dict[str, int] = {}
    listed_parents: dict[int, list[int]] = {}
    rows: dict[int, dict[int, list[float]]] = {}

    def lookup(token: str, lineno: int) -> int:
        if token not in index:
            raise NetworkFormatError(f"line {lineno}: unknown variable {token!r}")
        return index[token]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "network":
            if len(parts) != 2:
                raise NetworkFormatError(f"line {lineno}: expected 'network <name>'")
            name = parts[1]
        elif kind == "variable":
            if len(parts) != 4:
                raise NetworkFormatError(f"line {lineno}: expected 'variable <name> <arity> <labels>'")
            vname = parts[1]
            if vname in index:
                raise NetworkFormatError(f"line {lineno}: duplicate variable {vname!r}")
            try:
                arity = int(parts[2])
            except ValueError:
                raise NetworkFormatError(f"line {lineno}: bad arity {parts[2]!r}") from None
            labels = tuple(parts[3].split(","))
            if len(labels) != arity:
                raise NetworkFormatError(f"line {lineno}: arity {arity} but {len(labels)} labels")
            try:
                variables.append(Variable(vname, arity, labels))
            except ValidationError as exc:
                raise NetworkFormatError(f"line {lineno}: {exc}") from None
            index[vname] = len(variables) - 1
        elif kind == "parents":
            if len(parts) < 2:
                raise NetworkFormatError(f"line {lineno}: expected 'parents <name> ...'")
            child = lookup(parts[1], lineno)
            if child in listed_parents:
                raise NetworkFormatError(f"line {lineno}: parents of {parts[1]!r} given twice")
            plist = [lookup(p, lineno) for p in parts[2:]]
            if len(set(plist)) != len(plist) or child in plist:
                raise NetworkFormatError(f"line {lineno}: invalid parent list for {parts[1]!r}")
            listed_parents[child] = plist
        elif kind == "cpt":
            if len(parts) < 3:
                raise NetworkFormatError(f"line {lineno}: expected 'cpt <name> <row> <probs...>'")
            v = lookup(parts[1], lineno)
            try:
                row = int(parts[2])
                probs = [float(x) for x in parts[3:]]
            except ValueError:
                raise NetworkFormatError(f"line {lineno}: non-numeric CPT entry") from None
            if len(probs) != variables[v].arity:
                raise NetworkFormatError(f"line {lineno}: {len(probs)} probabilities for arity {variables[v].arity}")
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > ROW_SUM_TOLERANCE:
                raise NetworkFormatError(f"line {lineno}: CPT row does not sum to 1")
            if row in rows.setdefault(v, {}):
                raise NetworkFormatError(f"line {lineno}: duplicate CPT row {row}")
            rows[v][row] = probs
        else:
            raise NetworkFormatError(f"line {lineno}: unknown directive {kind!r}")

    if not variables:
        raise NetworkFormatError("no variables declared")
    n = len(variables)
    structure = Structure([listed_parents.get(v, []) for v in range(n)])
    if not rows:
        return NetworkFile(name, tuple(variables), structure, None)

    arities = [v.arity for v in variables]
    cpts = []
    for v in range(n):
        plist = listed_parents.get(v, [])
        q = parent_config_count(plist, arities)
        given = rows.get(v, {})
        if sorted(given) != list(range(q)):
            raise NetworkFormatError(f"variable {variables[v].name!r}: expected CPT rows 0..{q - 1}")
        table = np.array([given[j] for j in range(q)], dtype=float)
        table /= table.sum(axis=1, keepdims=True)
        # rows are listed in the file's parent order; re-index to sorted parent order
        if plist != sorted(plist):
            shape = [arities[p] for p in plist] + [arities[v]]
            perm = sorted(range(len(plist)), key=lambda i: plist[i])
            table = table.reshape(shape).transpose(perm + [len(plist)]).reshape(q, arities[v])
        cpts.append(Cpt(v, table))
    try:
        net = BayesianNetwork(variables, structure, cpts)
    except ValidationError as exc:
        raise NetworkFormatError(str(exc)) from None
    return NetworkFile(name, tuple(variables), structure, net)


def format_network(
    variables, structure: Structure, cpts=None, name: str = "network"
) -> str:
    lines = [f"network {name}"]
    for v in variables:
        lines.append(f"variable {v.name} {v.arity} {','.join(v.value_labels)}")
    for v, ps in enumerate(structure.parent_sets):
        if ps:
            lines.append(f"parents {variables[v].name} " + " ".join(variables[p].name for p in ps))
    if cpts is not None:
        for cpt in cpts:
            vname = variables[cpt.variable].name
            for j, row in enumerate(cpt.probabilities):
                lines.append(f"cpt {vname} {j} " + " ".join(repr(float(p)) for p in row))
    return "\n".join(lines) + "\n"


def write_network(path, net: BayesianNetwork, name: str = "network") -> None:
    Path(path).write_text(format_network(net.variables, net.structure, net.cpts, name), encoding="utf-8")


def read_network(path) -> NetworkFile:
    return parse_network(Path(path).read_text(encoding="utf-8"))
