"""Random model/record factories shared by the tests."""

import numpy as np

from mixmad.data import ColumnSpec
from mixmad.rbm import MvRbm


def random_kinds(rng, n):
    kinds = []
    for j in range(n):
        kind = rng.choice(["binary", "gaussian", "nominal", "poisson"])
        card = int(rng.integers(2, 5)) if kind == "nominal" else None
        kinds.append(ColumnSpec(f"c{j}", str(kind), card))
    return tuple(kinds)


def random_model(rng, kinds, k, scale=1.0):
    width = sum(c.width for c in kinds)
    return MvRbm(
        kinds,
        rng.normal(0, scale, width),
        rng.normal(0, scale, k),
        rng.normal(0, scale, (width, k)),
    )


def random_record(rng, kinds):
    x = []
    for c in kinds:
        if c.kind == "binary":
            x.append(float(rng.integers(0, 2)))
        elif c.kind == "gaussian":
            x.append(float(rng.normal(0.5, 0.5)))
        elif c.kind == "nominal":
            x.append(float(rng.integers(0, c.cardinality)))
        else:
            x.append(float(rng.poisson(3)))
    return np.array(x)

