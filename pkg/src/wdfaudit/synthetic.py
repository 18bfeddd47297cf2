"""Small synthetic populations with known generating laws."""
from __future__ import annotations

import numpy as np

from .data import Dataset


def population(n: int, seed: int = 0, noise: float = 1.0, tilt: float = 0.3) -> Dataset:
    """Two features, binary sensitive attribute, labels from a noisy hyperplane.

    Most of the first coordinate is packed tightly around zero so a fitted
    boundary sits in a dense band; the second feature is shifted by group.
    """
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < 0.4).astype(np.int64)
    wide = rng.random(n) < 0.15
    x1 = np.where(wide, rng.normal(0.0, 2.0, n), rng.normal(0.0, 0.25, n))
    x2 = rng.normal(0.0, 1.0, n) + 0.8 * (a - 0.5)
    score = x1 + tilt * x2 + rng.normal(0.0, noise, n)
    y = (score > 0).astype(np.int64)
    return Dataset(np.column_stack([x1, x2]), a, y, ("x1", "x2"))


def separated_gaussians(n: int, margin: float = 0.5, seed: int = 0, shift: float = 1.5) -> Dataset:
    """Gaussians on either side of ``x1 = 0`` with no mass in ``|x1| < margin``.

    Sensitive value and label are drawn independently of the side, so both
    groups have mass on both sides of the boundary ``x1 = 0``.
    """
    rng = np.random.default_rng(seed)
    out = []
    total = 0
    while total < n:
        side = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        x1 = side * (shift + rng.normal(0.0, 1.0, n))
        keep = side * x1 >= margin
        out.append(np.column_stack([x1[keep], rng.normal(0.0, 1.0, int(keep.sum()))]))
        total += int(keep.sum())
    X = np.vstack(out)[:n]
    a = (rng.random(n) < 0.45).astype(np.int64)
    y = (rng.random(n) < 0.5).astype(np.int64)
    return Dataset(X, a, y, ("x1", "x2"))


def uniform_band(n: int, seed: int = 0) -> Dataset:
    """Uniform features on ``[-1, 1]^2``: constant density up to the boundary ``x1 = 0``."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, (n, 2))
    a = (rng.random(n) < 0.5).astype(np.int64)
    y = (rng.random(n) < 0.5).astype(np.int64)
    return Dataset(X, a, y, ("x1", "x2"))


GENERATORS = {"population": population, "separated": separated_gaussians, "uniform": uniform_band}
