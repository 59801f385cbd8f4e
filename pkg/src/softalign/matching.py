"""Dense normalized correlation between two feature grids.

For source cell (i, j) and target cell (k, l) the raw score is the
clamped inner product ``r_ijkl = max(0, <f_s[i,j], f_t[k,l]>)``; negative
correlations carry no match evidence and are cut at zero.  Scores are then
normalized over all source cells for each fixed target cell::

    s_ijkl = r_ijkl / sqrt(sum_ab r_abkl^2)

which penalizes a target cell that correlates with many source cells at
once.  Target columns whose norm falls below 1e-12 are left identically
zero instead of being divided (featureless or fully-negative columns).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from softalign.grids import FeatureGrid, Tensor4

#: columns with L2 norm below this are zeroed rather than normalized
COLUMN_NORM_EPS = 1e-12

#: tolerance for the unit-norm check on input descriptors
NORM_CHECK_TOL = 1e-3


@dataclass
class CorrelationTensor:
    """Normalized match scores, shape (h, w, h2, w2): source dims first."""

    data: np.ndarray

    def __post_init__(self) -> None:
        base = Tensor4(self.data)  # validates shape and finiteness
        self.data = base.data
        if (self.data < 0.0).any():
            raise ValueError("correlation scores must be nonnegative")

    @property
    def source_shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def target_shape(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]

    def column_norms(self) -> np.ndarray:
        """Per-target-cell L2 norm over source cells, shape (h2, w2)."""
        return np.sqrt(np.sum(self.data**2, axis=(0, 1)))


def _check_normalized(grid: FeatureGrid, which: str) -> None:
    if not grid.is_normalized(NORM_CHECK_TOL):
        raise ValueError(
            f"{which} grid is not L2-normalized (tolerance {NORM_CHECK_TOL:g}); "
            "run grids.l2_normalize first"
        )


def correlate(f_s: FeatureGrid, f_t: FeatureGrid) -> CorrelationTensor:
    """Normalized correlation volume of a source/target grid pair.

    Both grids must hold unit-norm (or empty) descriptors of the same
    dimension; grid heights/widths may differ.
    """
    if f_s.d != f_t.d:
        raise ValueError(f"descriptor dims differ: {f_s.d} vs {f_t.d}")
    _check_normalized(f_s, "source")
    _check_normalized(f_t, "target")

    raw = np.einsum("ijd,kld->ijkl", f_s.data, f_t.data)
    r = np.maximum(raw, 0.0)
    norms = np.sqrt(np.sum(r**2, axis=(0, 1)))
    scale = np.zeros_like(norms)
    live = norms >= COLUMN_NORM_EPS
    scale[live] = 1.0 / norms[live]
    return CorrelationTensor(r * scale[None, None, :, :])


def correlate_backward(
    f_s: FeatureGrid, f_t: FeatureGrid, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * correlate(f_s, f_t).data)``.

    Returns ``(grad_f_s, grad_f_t)`` with the grids' shapes.  The clamp
    gates gradients by ``raw > 0`` (a raw score at or below zero
    contributes nothing), and the normalization is differentiated by the
    quotient rule per target column; dead columns (norm < 1e-12) pass no
    gradient.
    """
    if f_s.d != f_t.d:
        raise ValueError(f"descriptor dims differ: {f_s.d} vs {f_t.d}")
    _check_normalized(f_s, "source")
    _check_normalized(f_t, "target")
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = f_s.data.shape[:2] + f_t.data.shape[:2]
    if upstream.shape != expected:
        raise ValueError(f"upstream shape {upstream.shape}, expected {expected}")

    raw = np.einsum("ijd,kld->ijkl", f_s.data, f_t.data)
    r = np.maximum(raw, 0.0)
    norms = np.sqrt(np.sum(r**2, axis=(0, 1)))
    live = norms >= COLUMN_NORM_EPS
    inv = np.zeros_like(norms)
    inv[live] = 1.0 / norms[live]

    # d/dr of sum(u * r * inv): direct term plus the norm's response.
    dot_ur = np.sum(upstream * r, axis=(0, 1))  # per column
    grad_r = upstream * inv[None, None, :, :] - r * (
        dot_ur * inv**3
    )[None, None, :, :]
    grad_raw = grad_r * (raw > 0.0)

    grad_f_s = np.einsum("ijkl,kld->ijd", grad_raw, f_t.data)
    grad_f_t = np.einsum("ijkl,ijd->kld", grad_raw, f_s.data)
    return grad_f_s, grad_f_t
