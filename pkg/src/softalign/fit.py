"""Transform estimation by maximizing the soft-inlier count.

Three routes:

* :func:`fit_direct` — gradient ascent on the differentiable count ``c``
  with adaptive-moment steps, backtracking, staged families
  (affine first, then TPS or homography), and seeded restarts.
* :func:`fit_ransac` — classical hypothesize-and-verify over candidate
  matches drawn from a correlation tensor, scored by the hard count.
* :func:`fit_line_demo` — the 2-D line-fitting analogue, either with
  classical 2-point sampling or with an exhaustive hypothesis grid over
  a soft score raster.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from softalign import geometry
from softalign.geometry import FAMILIES, Transform, apply, make_tps, tps_control_points
from softalign.grids import FeatureGrid, cells_to_normalized, normalized_to_cells
from softalign.matching import CorrelationTensor, correlate
from softalign.softinlier import (
    ScoreBreakdown,
    default_threshold,
    hard_inlier_count,
    identity_mask,
    soft_inlier_count,
    soft_inlier_grad,
    warp_mask,
)

ADAM_EPS = 1e-8
MAX_BACKTRACKS = 12
STALL_LIMIT = 10


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit_direct`.

    ``stages`` defaults to ``("affine",)`` for the affine family and to
    ``("affine", <family>)`` otherwise; ``threshold`` defaults to
    ``max(h, w) / 30`` at fit time.
    """

    family: str = "affine"
    stages: tuple[str, ...] | None = None
    iterations: int = 200
    step: float = 0.05
    stage2_step: float = 0.02
    betas: tuple[float, float] = (0.9, 0.999)
    restarts: int = 4
    seed: int = 0
    tol: float = 1e-5
    threshold: float | None = None
    control_grid: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step <= 0 or self.stage2_step <= 0:
            raise ValueError("step sizes must be > 0")
        b1, b2 = self.betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ValueError("decay rates must lie in (0, 1)")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.threshold is not None and self.threshold <= 0:
            raise ValueError("threshold must be > 0")
        if self.stages is not None:
            if not self.stages or any(s not in FAMILIES for s in self.stages):
                raise ValueError(f"stages must be drawn from {sorted(FAMILIES)}")
            if self.stages[-1] != self.family:
                raise ValueError("last stage must match the configured family")

    def resolved_stages(self) -> tuple[str, ...]:
        if self.stages is not None:
            return self.stages
        if self.family == "affine":
            return ("affine",)
        return ("affine", self.family)


@dataclass(frozen=True)
class AlignmentResult:
    """Outcome of a fit: the transform, its score, and how it was reached.

    ``trace`` holds the accepted score after every iteration (the hard
    best-so-far count for RANSAC); ``no_signal`` marks an all-zero
    correlation; ``inlier_count``/``inliers`` are RANSAC-only.
    """

    transform: Transform
    c: float
    trace: tuple[float, ...]
    restart_index: int
    breakdown: ScoreBreakdown
    no_signal: bool = False
    inlier_count: int | None = None
    inliers: tuple = field(default=())

    def to_dict(self) -> dict:
        out = {
            "transform": self.transform.to_dict(),
            "c": float(self.c),
            "trace": [float(v) for v in self.trace],
            "restart_index": int(self.restart_index),
            "no_signal": bool(self.no_signal),
            "breakdown": self.breakdown.to_dict(),
        }
        if self.inlier_count is not None:
            out["inlier_count"] = int(self.inlier_count)
            out["inliers"] = [
                {"src": list(map(int, src)), "tgt": list(map(int, tgt))}
                for src, tgt in self.inliers
            ]
        return out


# ---------------------------------------------------------------------------
# Direct maximization


def _build_transform(stage: str, params: np.ndarray, control_grid: int) -> Transform:
    if stage == "affine":
        return Transform.affine(params)
    if stage == "homography":
        return Transform.homography(params)
    return make_tps(params, control_grid=control_grid)


def _count(s: CorrelationTensor, m_id, stage, params, control_grid) -> float:
    """c at the given parameters, -inf when the transform is degenerate."""
    try:
        T = _build_transform(stage, params, control_grid)
    except ValueError:
        return -np.inf
    warped = warp_mask(m_id, T)
    return float(np.sum(s.data * warped.data))


def _count_and_grad(s, m_id, stage, params, control_grid):
    T = _build_transform(stage, params, control_grid)
    dc_dg, dc_ds = soft_inlier_grad(s, m_id, T)
    return float(np.sum(s.data * dc_ds)), dc_dg


def _ascend(s, m_id, stage, g0, steps, lr, betas, tol, control_grid):
    """Adaptive-moment ascent with backtracking; accepted steps never lower c."""
    g = np.asarray(g0, dtype=np.float64).copy()
    b1, b2 = betas
    m1 = np.zeros_like(g)
    m2 = np.zeros_like(g)
    c_cur, grad = _count_and_grad(s, m_id, stage, g, control_grid)
    trace = [c_cur]
    stall = 0
    for it in range(1, steps + 1):
        m1 = b1 * m1 + (1 - b1) * grad
        m2 = b2 * m2 + (1 - b2) * grad * grad
        direction = (m1 / (1 - b1**it)) / (np.sqrt(m2 / (1 - b2**it)) + ADAM_EPS)
        scale = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            g_try = g + lr * scale * direction
            if _count(s, m_id, stage, g_try, control_grid) >= c_cur:
                accepted = True
                break
            scale *= 0.5
        if accepted:
            g = g_try
            c_new, grad = _count_and_grad(s, m_id, stage, g, control_grid)
            improvement = c_new - c_cur
            c_cur = max(c_new, c_cur)
        else:
            improvement = 0.0
        trace.append(c_cur)
        stall = stall + 1 if improvement < tol else 0
        if stall >= STALL_LIMIT:
            break
    return g, c_cur, trace


def _embed_stage(stage: str, affine_params: np.ndarray, control_grid: int) -> np.ndarray:
    """Parameters for `stage` that reproduce the given affine map exactly."""
    if stage == "homography":
        return np.concatenate([affine_params, [0.0, 0.0]])
    if stage == "tps":
        pts = tps_control_points(control_grid)
        moved = apply(Transform.affine(affine_params), pts)
        return (moved - pts).ravel()
    return affine_params.copy()


def _restart_start(cfg: FitConfig, restart: int) -> np.ndarray:
    identity = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    if restart == 0:
        return identity
    rng = np.random.default_rng([cfg.seed, restart])
    ang = rng.uniform(-0.5, 0.5)
    scale = np.exp(rng.uniform(-0.2, 0.2))
    tx, ty = rng.uniform(-0.4, 0.4, size=2)
    ca, sa = scale * np.cos(ang), scale * np.sin(ang)
    return np.array([ca, -sa, tx, sa, ca, ty])


def fit_direct(f_s: FeatureGrid, f_t: FeatureGrid, cfg: FitConfig | None = None) -> AlignmentResult:
    """Estimate the target-to-source transform by gradient ascent on c.

    Correlates once, then per restart runs staged ascent (affine first;
    TPS/homography stages start from an exact embedding of the affine
    result).  Restart 0 starts at the identity; later restarts perturb it
    with a seeded random affinity.  Deterministic given the seed.  A
    correlation with no score anywhere returns the identity flagged
    ``no_signal`` instead of failing.
    """
    cfg = cfg or FitConfig()
    if (f_s.h, f_s.w) != (f_t.h, f_t.w):
        raise ValueError(
            f"grids must share dimensions, got {f_s.h}x{f_s.w} vs {f_t.h}x{f_t.w}"
        )
    s = correlate(f_s, f_t)
    t = cfg.threshold if cfg.threshold is not None else default_threshold(f_s.h, f_s.w)
    m_id = identity_mask(f_s.h, f_s.w, t)
    stages = cfg.resolved_stages()

    best = None  # (c, restart, params, stage, trace)
    for restart in range(cfg.restarts):
        g = _restart_start(cfg, restart)
        trace: list[float] = []
        stage = stages[0]
        for idx, stage in enumerate(stages):
            if idx > 0:
                g = _embed_stage(stage, g, cfg.control_grid)
            lr = cfg.step if idx == 0 else cfg.stage2_step
            g, c_end, tr = _ascend(
                s, m_id, stage, g, cfg.iterations, lr, cfg.betas, cfg.tol, cfg.control_grid
            )
            trace.extend(tr)
        if best is None or c_end > best[0]:
            best = (c_end, restart, g, stage, trace)

    c_best, restart_idx, g_best, stage_best, trace_best = best
    if c_best <= 0.0:
        T = Transform.identity(cfg.family)
        breakdown = soft_inlier_count(s, warp_mask(m_id, T))
        return AlignmentResult(
            transform=T,
            c=breakdown.c,
            trace=tuple(trace_best),
            restart_index=restart_idx,
            breakdown=breakdown,
            no_signal=True,
        )
    T = _build_transform(stage_best, g_best, cfg.control_grid)
    breakdown = soft_inlier_count(s, warp_mask(m_id, T))
    return AlignmentResult(
        transform=T,
        c=c_best,
        trace=tuple(trace_best),
        restart_index=restart_idx,
        breakdown=breakdown,
    )


# ---------------------------------------------------------------------------
# Classical RANSAC baseline

MINIMAL_SAMPLE = {"affine": 3, "homography": 4}


def candidate_matches(s: CorrelationTensor) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """One candidate per target cell: its argmax source cell.

    Cells whose best score is zero or falls below half the tensor-wide
    maximum are dropped as matchless.
    """
    h_s, w_s, h_t, w_t = s.data.shape
    global_max = float(s.data.max())
    out = []
    for k in range(h_t):
        for l in range(w_t):
            col = s.data[:, :, k, l]
            flat = int(np.argmax(col))
            score = float(col.flat[flat])
            if score <= 0.0 or score < 0.5 * global_max:
                continue
            i, j = np.unravel_index(flat, (h_s, w_s))
            out.append(((int(i), int(j)), (k, l)))
    return out


def _match_coords(matches, shape):
    h_s, w_s, h_t, w_t = shape
    src = np.array([m[0] for m in matches], dtype=np.float64)
    tgt = np.array([m[1] for m in matches], dtype=np.float64)
    sx, sy = cells_to_normalized(src[:, 0], src[:, 1], h_s, w_s)
    tx, ty = cells_to_normalized(tgt[:, 0], tgt[:, 1], h_t, w_t)
    return np.stack([sx, sy], axis=1), np.stack([tx, ty], axis=1)


def _affine_from_matches(src: np.ndarray, tgt: np.ndarray) -> Transform:
    n = len(src)
    design = np.column_stack([tgt[:, 0], tgt[:, 1], np.ones(n)])
    sol, *_ = np.linalg.lstsq(design, src, rcond=None)
    a11, a12, tx = sol[:, 0]
    a21, a22, ty = sol[:, 1]
    return Transform.affine(np.array([a11, a12, tx, a21, a22, ty]))


def _homography_from_matches(src: np.ndarray, tgt: np.ndarray) -> Transform:
    n = len(src)
    rows = np.zeros((2 * n, 9))
    x, y = tgt[:, 0], tgt[:, 1]
    u, v = src[:, 0], src[:, 1]
    rows[0::2, 0] = x
    rows[0::2, 1] = y
    rows[0::2, 2] = 1.0
    rows[0::2, 6] = -u * x
    rows[0::2, 7] = -u * y
    rows[0::2, 8] = -u
    rows[1::2, 3] = x
    rows[1::2, 4] = y
    rows[1::2, 5] = 1.0
    rows[1::2, 6] = -v * x
    rows[1::2, 7] = -v * y
    rows[1::2, 8] = -v
    _, _, vt = np.linalg.svd(rows)
    h = vt[-1]
    if abs(h[8]) < 1e-12:
        raise ValueError("degenerate homography sample")
    h = h / h[8]
    return Transform.homography(h[:8])


def _solve_transform(family: str, src: np.ndarray, tgt: np.ndarray) -> Transform:
    if family == "affine":
        return _affine_from_matches(src, tgt)
    return _homography_from_matches(src, tgt)


def fit_ransac(
    s: CorrelationTensor,
    family: str = "affine",
    t: float | None = None,
    iters: int = 500,
    seed: int = 0,
) -> AlignmentResult:
    """Hypothesize-and-verify estimation from correlation argmax matches.

    Samples minimal match subsets, fits a transform, scores it by the hard
    inlier count over all candidates, and finally refits on the best
    hypothesis' inliers (kept only if it scores at least as well).
    """
    if family not in MINIMAL_SAMPLE:
        raise ValueError(f"family must be one of {sorted(MINIMAL_SAMPLE)}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    h_s, w_s, h_t, w_t = s.data.shape
    if (h_s, w_s) != (h_t, w_t):
        raise ValueError("ransac scoring needs equal source/target grid shapes")
    if t is None:
        t = default_threshold(h_s, w_s)
    if t <= 0:
        raise ValueError("threshold must be > 0")

    matches = candidate_matches(s)
    k = MINIMAL_SAMPLE[family]
    if len(matches) < k:
        raise ValueError(
            f"insufficient matches: {len(matches)} candidates, need >= {k}"
        )
    src_all, tgt_all = _match_coords(matches, s.data.shape)

    rng = np.random.default_rng(seed)
    best_T = None
    best_count = -1
    best_inliers: list = []
    trace = []
    for _ in range(iters):
        pick = rng.choice(len(matches), size=k, replace=False)
        try:
            T = _solve_transform(family, src_all[pick], tgt_all[pick])
        except (ValueError, np.linalg.LinAlgError):
            trace.append(float(max(best_count, 0)))
            continue
        count, inliers = hard_inlier_count(matches, T, t, h_s, w_s)
        if count > best_count:
            best_T, best_count, best_inliers = T, count, inliers
        trace.append(float(best_count))
    if best_T is None:
        raise ValueError("insufficient matches: no non-degenerate sample found")

    # Least-squares refit on the winning hypothesis' inliers.
    if len(best_inliers) >= k:
        idx = [matches.index(m) for m in best_inliers]
        try:
            refit = _solve_transform(family, src_all[idx], tgt_all[idx])
            count, inliers = hard_inlier_count(matches, refit, t, h_s, w_s)
            if count >= best_count:
                best_T, best_count, best_inliers = refit, count, inliers
        except (ValueError, np.linalg.LinAlgError):
            pass

    m_id = identity_mask(h_s, w_s, t)
    breakdown = soft_inlier_count(s, warp_mask(m_id, best_T))
    return AlignmentResult(
        transform=best_T,
        c=breakdown.c,
        trace=tuple(trace),
        restart_index=0,
        breakdown=breakdown,
        inlier_count=int(best_count),
        inliers=tuple(best_inliers),
    )


# ---------------------------------------------------------------------------
# Line-fitting demonstration


@dataclass(frozen=True)
class LineFitResult:
    """A line in normal form x*cos(theta) + y*sin(theta) = rho."""

    theta: float
    rho: float
    count: float
    mode: str
    degenerate: bool = False

    def distances(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        proj = points[:, 0] * np.cos(self.theta) + points[:, 1] * np.sin(self.theta)
        return np.abs(proj - self.rho)

    def to_dict(self) -> dict:
        return {
            "theta": float(self.theta),
            "rho": float(self.rho),
            "count": float(self.count),
            "mode": self.mode,
            "degenerate": bool(self.degenerate),
        }


def _canonical_line(theta: float, rho: float) -> tuple[float, float]:
    theta = theta % np.pi
    return theta, rho


def _line_through(p: np.ndarray, q: np.ndarray) -> tuple[float, float]:
    d = q - p
    norm = np.hypot(d[0], d[1])
    if norm == 0.0:
        raise ValueError("coincident points")
    nx, ny = -d[1] / norm, d[0] / norm
    theta = np.arctan2(ny, nx)
    rho = nx * p[0] + ny * p[1]
    if theta < 0:
        theta += np.pi
        rho = -rho
    return _canonical_line(theta, rho)


def splat_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear rasterization of points onto an integer lattice.

    Returns ``(scores, xs, ys)``: a 2-D score array and the lattice
    coordinates of its columns and rows.  The lattice pads the point
    bounding box by one cell on every side, so all splat mass lands
    inside it.
    """
    points = np.asarray(points, dtype=np.float64)
    x0 = int(np.floor(points[:, 0].min())) - 1
    x1 = int(np.ceil(points[:, 0].max())) + 1
    y0 = int(np.floor(points[:, 1].min())) - 1
    y1 = int(np.ceil(points[:, 1].max())) + 1
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    scores = np.zeros((ys.size, xs.size))
    fx = np.floor(points[:, 0]).astype(int) - x0
    fy = np.floor(points[:, 1]).astype(int) - y0
    ax = points[:, 0] - np.floor(points[:, 0])
    ay = points[:, 1] - np.floor(points[:, 1])
    np.add.at(scores, (fy, fx), (1 - ay) * (1 - ax))
    np.add.at(scores, (fy, fx + 1), (1 - ay) * ax)
    np.add.at(scores, (fy + 1, fx), ay * (1 - ax))
    np.add.at(scores, (fy + 1, fx + 1), ay * ax)
    return scores, xs, ys


def line_hypothesis_grid(points: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive (theta, rho) grid: 1-degree angles over [0, pi), rho in
    0.25 steps aligned to zero and covering every point with slack t+1."""
    points = np.asarray(points, dtype=np.float64)
    thetas = np.arange(180, dtype=np.float64) * (np.pi / 180.0)
    rho_max = float(np.hypot(points[:, 0], points[:, 1]).max()) + t + 1.0
    n = int(np.ceil(rho_max / 0.25))
    rhos = np.arange(-n, n + 1, dtype=np.float64) * 0.25
    return thetas, rhos


def fit_line_demo(
    points,
    t: float = 0.5,
    mode: str = "ransac",
    iters: int = 500,
    seed: int = 0,
) -> LineFitResult:
    """Fit a line to 2-D points by maximizing an inlier count.

    ``ransac`` mode samples point pairs and counts points within distance
    ``t`` (strict).  ``soft-grid`` mode rasterizes the points to a score
    lattice and sweeps an exhaustive (angle, offset) hypothesis grid,
    scoring each line by the score mass inside its band.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    n = len(points)
    if n < 2:
        raise ValueError("need at least 2 points")
    if t <= 0:
        raise ValueError("threshold must be > 0")
    if mode not in ("ransac", "soft-grid"):
        raise ValueError(f"unknown mode {mode!r}")

    if np.all(points == points[0]):
        # Any line through the single location scores n; report the
        # vertical one and flag the degeneracy.
        theta, rho = _canonical_line(0.0, points[0, 0])
        return LineFitResult(theta, rho, float(n), mode, degenerate=True)

    if mode == "ransac":
        rng = np.random.default_rng(seed)
        best = None
        for _ in range(iters):
            a, b = rng.choice(n, size=2, replace=False)
            if np.all(points[a] == points[b]):
                continue
            theta, rho = _line_through(points[a], points[b])
            proj = points[:, 0] * np.cos(theta) + points[:, 1] * np.sin(theta)
            count = int(np.count_nonzero(np.abs(proj - rho) < t))
            if best is None or count > best[0]:
                best = (count, theta, rho)
        count, theta, rho = best
        return LineFitResult(theta, rho, float(count), mode)

    scores, xs, ys = splat_points(points)
    cell_x = np.broadcast_to(xs, scores.shape).ravel()
    cell_y = np.broadcast_to(ys[:, None], scores.shape).ravel()
    flat = scores.ravel()
    thetas, rhos = line_hypothesis_grid(points, t)
    best = None
    for theta in thetas:
        proj = cell_x * np.cos(theta) + cell_y * np.sin(theta)
        inside = np.abs(proj[:, None] - rhos[None, :]) < t
        counts = flat @ inside
        j = int(np.argmax(counts))
        if best is None or counts[j] > best[0]:
            best = (float(counts[j]), float(theta), float(rhos[j]))
    count, theta, rho = best
    return LineFitResult(theta, rho, count, mode)


def demo_points(
    seed: int,
    n_inliers: int = 20,
    n_outliers: int = 30,
    noise: float = 0.15,
    extent: float = 20.0,
) -> np.ndarray:
    """Seeded line-plus-clutter cloud for the line-fitting demo.

    ``n_inliers`` points sit along a random line through the middle of the
    ``[0, extent]^2`` region with perpendicular Gaussian noise of sigma
    ``noise``; ``n_outliers`` points are uniform over the region.  Rows
    are shuffled so membership is not position-coded.
    """
    if n_inliers < 2 or n_outliers < 0:
        raise ValueError("need >= 2 inliers and >= 0 outliers")
    if noise < 0 or extent <= 0:
        raise ValueError("noise must be >= 0 and extent > 0")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, np.pi)
    normal = np.array([np.cos(theta), np.sin(theta)])
    tangent = np.array([-np.sin(theta), np.cos(theta)])
    center = rng.uniform(0.3 * extent, 0.7 * extent, size=2)
    along = rng.uniform(-extent / 2.0, extent / 2.0, size=n_inliers)
    perp = rng.normal(0.0, noise, size=n_inliers)
    inl = center + along[:, None] * tangent + perp[:, None] * normal
    out = rng.uniform(0.0, extent, size=(n_outliers, 2))
    pts = np.vstack([inl, out])
    rng.shuffle(pts, axis=0)
    return pts
