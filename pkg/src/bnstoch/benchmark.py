"""Seeded layered benchmark networks (the default is a 1x3x3 layout)."""

from __future__ import annotations

import numpy as np

from .bn_core import BayesianNetwork, Cpt, Structure, Variable, parent_config_count
from .errors import ValidationError


def parse_layers(spec: str) -> list[int]:
    try:
        sizes = [int(tok) for tok in spec.lower().split("x")]
    except ValueError:
        raise ValidationError(f"bad layer spec {spec!r}; expected e.g. '1x3x3'") from None
    if not sizes or min(sizes) < 1:
        raise ValidationError(f"bad layer spec {spec!r}; layer sizes must be positive")
    return sizes


def layered_network(layers: list[int], rng: np.random.Generator, arity: int = 3,
                    max_parents: int = 3) -> BayesianNetwork:
    """Each non-first-layer variable draws k ~ U{1..min(|prev|, m)} parents from the
    previous layer; CPT rows come from a symmetric Dirichlet(1)."""
    names, layer_of = [], []
    for li, size in enumerate(layers):
        for j in range(size):
            names.append(f"L{li}_{j}")
            layer_of.append(li)
    n = len(names)
    starts = np.cumsum([0] + layers).tolist()
    parent_sets = []
    for v in range(n):
        li = layer_of[v]
        if li == 0 or max_parents == 0:
            parent_sets.append(())
            continue
        prev = list(range(starts[li - 1], starts[li]))
        k = int(rng.integers(1, min(len(prev), max_parents) + 1))
        parent_sets.append(tuple(sorted(rng.choice(prev, size=k, replace=False).tolist())))
    structure = Structure(parent_sets)
    variables = [Variable.indexed(name, arity) for name in names]
    arities = [arity] * n
    cpts = [Cpt(v, rng.dirichlet(np.ones(arity), size=parent_config_count(ps, arities)))
            for v, ps in enumerate(structure.parent_sets)]
    return BayesianNetwork(variables, structure, cpts)
