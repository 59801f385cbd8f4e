"""Shared generators and oracles for the test suite."""

import numpy as np

from softalign.geometry import Transform, make_tps, transform_sampling_grid
from softalign.grids import FeatureGrid, l2_normalize


def random_normalized(rng, h, w, d):
    return l2_normalize(FeatureGrid(rng.normal(size=(h, w, d))))


def random_transform(rng, family, magnitude=1.0):
    """A random, comfortably nonsingular transform of the given family."""
    if family == "affine":
        ang = rng.uniform(-0.5, 0.5) * magnitude
        s = np.exp(rng.uniform(-0.2, 0.2) * magnitude)
        c, sn = s * np.cos(ang), s * np.sin(ang)
        tx, ty = rng.uniform(-0.3, 0.3, size=2) * magnitude
        return Transform.affine([c, -sn, tx, sn, c, ty])
    if family == "homography":
        base = random_transform(rng, "affine", magnitude).params
        proj = rng.uniform(-0.15, 0.15, size=2) * magnitude
        return Transform.homography(np.concatenate([base, proj]))
    if family == "tps":
        return make_tps(rng.uniform(-0.2, 0.2, size=(9, 2)) * magnitude)
    raise ValueError(family)


def knot_clearance(T, h, w):
    """Distance of every warped grid coordinate to the integer lattice."""
    uv = transform_sampling_grid(T, (h, w)).uv
    return np.abs(uv - np.round(uv)).min()


def clear_random_transform(rng, family, h, w, clearance=0.05, magnitude=1.0):
    """Rejection-sample a transform whose warp stays off sampling knots.

    Feasible only for small grids: every warped coordinate must clear the
    integer lattice, and the acceptance rate decays like 0.9^(2hw).
    """
    for _ in range(20000):
        T = random_transform(rng, family, magnitude)
        if knot_clearance(T, h, w) >= clearance:
            return T
    raise RuntimeError("could not find a knot-clear transform")
