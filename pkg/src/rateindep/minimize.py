"""Deterministic constrained minimization used by the incremental schemes.

The minimizers are stencil-based by contract: a coarse scan, exact
boundary and center candidates, and local refinement.  They always
evaluate the stay-put candidate, break near-ties toward the ball center,
and are bit-reproducible for fixed options.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import NumericError
from .model import NeighborhoodNorm

Array = np.ndarray
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MinimizeOptions:
    coarse_points_per_axis: int = 64
    refine_iterations: int = 200
    step_shrink: float = 0.5
    tolerance: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.coarse_points_per_axis < 3:
            raise ValueError("coarse_points_per_axis must be at least 3")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not (0.0 < self.step_shrink < 1.0):
            raise ValueError("step_shrink must lie in (0, 1)")


def _eval_batch(objective, X: Array) -> Array:
    """Evaluate the objective on a batch, falling back to a loop."""
    vals = None
    try:
        out = objective(X)
        arr = np.asarray(out, dtype=float)
        if arr.shape == (X.shape[0],):
            vals = arr
    except Exception:
        vals = None
    if vals is None:
        vals = np.array([float(objective(x)) for x in X])
    if not np.all(np.isfinite(vals)):
        bad = X[int(np.argmax(~np.isfinite(vals)))]
        raise NumericError("objective is not finite", point=np.array(bad, dtype=float))
    return vals


def _eval_one(objective, x: Array) -> float:
    v = float(objective(x))
    if not np.isfinite(v):
        raise NumericError("objective is not finite", point=np.array(x, dtype=float))
    return v


def _golden_1d(f: Callable[[float], float], lo: float, hi: float, xtol: float, max_iter: int = 90):
    """Golden-section search on [lo, hi]; returns the best interior point."""
    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _pick(candidates, center: Optional[Array], tol: float):
    """Lowest value wins; near-ties go to the point closest to center."""
    best_v = min(v for _, v in candidates)
    pool = [(x, v) for x, v in candidates if v <= best_v + tol]
    if center is not None and len(pool) > 1:
        pool.sort(key=lambda xv: (float(np.linalg.norm(np.asarray(xv[0]) - center)), xv[1]))
        return pool[0]
    pool.sort(key=lambda xv: xv[1])
    return pool[0]


def _zoom_1d(objective, x0: float, h: float, lo: float, hi: float,
             rounds: int = 4, pts: int = 25):
    """Batched bracket-shrinking refinement around a scan minimum.

    Each round evaluates an odd grid spanning one scan spacing around the
    incumbent (so the incumbent itself is re-evaluated) and recenters;
    four rounds shrink the bracket by about 12^4.
    """
    x = float(x0)
    v = None
    for _ in range(rounds):
        a = max(x - h, lo)
        b = min(x + h, hi)
        if not b > a:
            break
        xs = np.linspace(a, b, pts)
        vals = _eval_batch(objective, xs[:, None])
        k = int(np.argmin(vals))
        x, v = float(xs[k]), float(vals[k])
        h = (b - a) / (pts - 1)
    if v is None:
        v = _eval_one(objective, np.array([x]))
    return x, v


def _minimize_interval(objective, lo: float, hi: float, opts: MinimizeOptions,
                       tie_center: Optional[float], scan_points: int,
                       extra: Sequence[float] = ()):
    """Dense scan + zoom refinement on an interval, with exact endpoint candidates."""
    xs = np.linspace(lo, hi, scan_points)
    vals = _eval_batch(objective, xs[:, None])
    candidates = [(np.array([lo]), float(vals[0])), (np.array([hi]), float(vals[-1]))]
    for x in extra:
        if lo <= x <= hi:
            candidates.append((np.array([x]), _eval_one(objective, np.array([x]))))

    spacing = (hi - lo) / (scan_points - 1)
    order = np.argsort(vals, kind="stable")
    seeds = []
    for idx in order[:12]:
        xi = float(xs[idx])
        if any(abs(xi - s) <= 2.0 * spacing for s in seeds):
            continue
        seeds.append(xi)
        if len(seeds) >= 3:
            break
    for xi in seeds:
        xz, vz = _zoom_1d(objective, xi, spacing, lo, hi)
        candidates.append((np.array([xz]), vz))
    ctr = None if tie_center is None else np.array([tie_center])
    return _pick(candidates, ctr, opts.tolerance)


def _ball_exponent(norm: NeighborhoodNorm) -> float:
    return 2.0 if norm.kind == "l2" else float(norm.p)


def _project_ball(x: Array, center: Array, radius: float, norm: NeighborhoodNorm) -> Array:
    v = x - center
    n = float(norm.norm(v))
    if n > radius:
        return center + v * (radius / n) * (1.0 - 1e-15)
    return x


def _sobol_points(dim: int, count: int, seed: int) -> Array:
    m = max(2, int(np.ceil(np.log2(max(count, 4)))))
    eng = qmc.Sobol(d=dim, scramble=True, seed=seed)
    return eng.random_base2(m) * 2.0 - 1.0  # cube [-1, 1]^d


def _coordinate_refine(objective, x: Array, value: float, section, opts: MinimizeOptions,
                       kinks: Sequence[Array] = (), cycles: int = 40):
    """Cyclic exact-cross-section line searches.

    ``section(x, i)`` returns the feasible interval of coordinate i with
    the other coordinates held fixed.  ``kinks`` are states whose i-th
    coordinates are extra line-search candidates (kink locations of the
    objective, e.g. the previous state under an l1-type term).
    """
    x = x.copy()
    dim = x.size
    for _ in range(cycles):
        start_value = value
        for i in range(dim):
            lo, hi = section(x, i)
            if not hi > lo:
                continue

            def g(xi: float) -> float:
                y = x.copy()
                y[i] = xi
                return _eval_one(objective, y)

            xs = np.linspace(lo, hi, 17)
            vs = np.array([g(s) for s in xs])
            cand = [(float(xs[k]), float(vs[k])) for k in range(len(xs))]
            k0 = int(np.argmin(vs))
            a, b = xs[max(k0 - 1, 0)], xs[min(k0 + 1, len(xs) - 1)]
            if b > a:
                xtol = max(1e-13, 1e-12 * max(abs(a), abs(b), 1.0))
                cand.append(_golden_1d(g, a, b, xtol))
            for kx in kinks:
                ki = float(np.asarray(kx).reshape(-1)[i])
                if lo <= ki <= hi:
                    cand.append((ki, g(ki)))
            xi_best, v_best = min(cand, key=lambda cv: cv[1])
            if v_best < value - 1e-15:
                x[i] = xi_best
                value = v_best
        if start_value - value < max(1e-14, 1e-12 * abs(value)):
            break
    return x, value


def _compass_directions(dim: int) -> Array:
    dirs = [np.eye(dim), -np.eye(dim)]
    if dim >= 2:
        diag = []
        for i in range(dim):
            for j in range(i + 1, dim):
                for si in (1.0, -1.0):
                    for sj in (1.0, -1.0):
                        d = np.zeros(dim)
                        d[i], d[j] = si, sj
                        diag.append(d / np.sqrt(2.0))
        dirs.append(np.array(diag))
    return np.vstack(dirs)


def descend_projected(objective, start: Array, region, opts: Optional[MinimizeOptions] = None) -> Array:
    """Projected compass descent inside a ball or box.

    ``region`` is ('ball', center, radius, norm) or ('box', lower, upper).
    The objective never increases along the iterates; feasibility is kept
    by radial rescaling (ball) or clamping (box).  Terminates when the
    stencil step falls below opts.tolerance or the iteration cap is hit.
    """
    opts = opts or MinimizeOptions()
    x = np.asarray(start, dtype=float).copy()
    kind = region[0]
    if kind == "ball":
        _, center, radius, norm = region
        center = np.asarray(center, dtype=float)

        def project(y):
            return _project_ball(y, center, radius, norm)

        h0 = radius / 2.0
    elif kind == "box":
        _, lo, hi = region
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)

        def project(y):
            return np.minimum(np.maximum(y, lo), hi)

        h0 = float(np.max(hi - lo)) / 4.0
    else:
        raise ValueError(f"unknown region kind {kind!r}")

    x = project(x)
    fx = _eval_one(objective, x)
    dirs = _compass_directions(x.size)
    h = h0
    for _ in range(opts.refine_iterations):
        if h < opts.tolerance:
            break
        cands = project(x[None, :] + h * dirs)
        vals = _eval_batch(objective, cands)
        k = int(np.argmin(vals))
        if vals[k] < fx - 1e-15:
            x, fx = cands[k], float(vals[k])
            h = min(h * 2.0, h0)
        else:
            h *= opts.step_shrink
    return x


def minimize_in_ball(objective, center: Array, radius: float, norm: NeighborhoodNorm,
                     opts: Optional[MinimizeOptions] = None) -> Array:
    """Minimize over the closed norm-ball around ``center``.

    The returned point is feasible (after projection) and never worse
    than the center.  In one dimension the ball is an interval and a
    dense scan plus golden-section polish is used; near-ties go to the
    candidate closest to the center, so schemes stay put at exact ties.
    """
    opts = opts or MinimizeOptions()
    center = np.asarray(center, dtype=float).reshape(-1)
    if not radius > 0:
        raise ValueError("radius must be positive")
    dim = center.size

    if dim == 1:
        scan = max(opts.coarse_points_per_axis, 2001)
        x, _ = _minimize_interval(objective, float(center[0] - radius), float(center[0] + radius),
                                  opts, float(center[0]), scan, extra=(float(center[0]),))
        if abs(float(x[0]) - float(center[0])) <= opts.tolerance:
            return center.copy()
        return x

    fc = _eval_one(objective, center)
    candidates = [(center.copy(), fc)]

    per_axis = max(3, min(opts.coarse_points_per_axis, int(round(2 ** (16.0 / dim)))))
    axes = [np.linspace(center[i] - radius, center[i] + radius, per_axis) for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    inside = np.asarray(norm.norm(grid - center)) <= radius * (1.0 + 1e-12)
    grid = grid[inside]

    cube = _sobol_points(dim, 128 * dim, opts.seed)
    nrm = np.asarray(norm.norm(cube))
    keep = nrm <= 1.0
    interior = center + radius * cube[keep]
    nz = nrm > 1e-9
    boundary = center + radius * (cube[nz] / nrm[nz, None]) * (1.0 - 1e-15)
    axis_pts = np.vstack([center + radius * e * (1.0 - 1e-15) for e in np.vstack([np.eye(dim), -np.eye(dim)])])
    stencil = np.vstack([grid, interior, boundary, axis_pts])
    vals = _eval_batch(objective, stencil)
    for x, v in zip(axis_pts, vals[-len(axis_pts):]):
        candidates.append((x, float(v)))

    p = _ball_exponent(norm)

    def section(x, i):
        rest = np.abs(np.delete(x, i) - np.delete(center, i))
        slack = radius**p - float(np.sum(rest**p))
        s = 0.0 if slack <= 0 else slack ** (1.0 / p)
        return center[i] - s, center[i] + s

    order = np.argsort(vals, kind="stable")
    starts = []
    for idx in order:
        pt = stencil[idx]
        if all(float(norm.norm(pt - s)) > radius / per_axis for s in starts):
            starts.append(pt)
        if len(starts) >= 5:
            break
    for pt in starts:
        pt = _project_ball(pt, center, radius, norm)
        x1, v1 = _coordinate_refine(objective, pt, _eval_one(objective, pt), section, opts, kinks=(center,))
        x2 = descend_projected(objective, x1, ("ball", center, radius, norm), opts)
        candidates.append((x2, _eval_one(objective, x2)))
        candidates.append((x1, v1))

    x, _ = _pick(candidates, center, opts.tolerance)
    x = _project_ball(np.asarray(x, dtype=float), center, radius, norm)
    if float(norm.norm(x - center)) <= opts.tolerance:
        return center.copy()
    return x


def minimize_global(objective, domain, opts: Optional[MinimizeOptions] = None,
                    tie_center: Optional[Array] = None) -> Array:
    """Coarse grid over a box plus local refinement from the best cells.

    ``tie_center``, when given, breaks near-ties (the schemes pass the
    previous state so exact ties stay put).
    """
    opts = opts or MinimizeOptions()
    lo = np.asarray(domain[0], dtype=float).reshape(-1)
    hi = np.asarray(domain[1], dtype=float).reshape(-1)
    dim = lo.size

    if dim == 1:
        scan = max(opts.coarse_points_per_axis, 4001)
        extra = () if tie_center is None else (float(np.asarray(tie_center).reshape(-1)[0]),)
        tc = None if tie_center is None else float(np.asarray(tie_center).reshape(-1)[0])
        x, _ = _minimize_interval(objective, float(lo[0]), float(hi[0]), opts, tc, scan, extra=extra)
        return x

    per_axis = max(3, min(opts.coarse_points_per_axis, int(round(2 ** (16.0 / dim)))))
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    if tie_center is not None:
        grid = np.vstack([grid, np.asarray(tie_center, dtype=float).reshape(1, -1)])
    vals = _eval_batch(objective, grid)

    def section(x, i):
        return float(lo[i]), float(hi[i])

    cell = (hi - lo) / per_axis
    order = np.argsort(vals, kind="stable")
    starts = []
    for idx in order:
        pt = grid[idx]
        if all(np.any(np.abs(pt - s) > cell) for s in starts):
            starts.append(pt)
        if len(starts) >= 5:
            break
    candidates = []
    if tie_center is not None:
        tc = np.asarray(tie_center, dtype=float).reshape(-1)
        candidates.append((tc.copy(), _eval_one(objective, tc)))
    kinks = () if tie_center is None else (np.asarray(tie_center, dtype=float),)
    for pt in starts:
        x1, v1 = _coordinate_refine(objective, pt.copy(), _eval_one(objective, pt), section, opts, kinks=kinks)
        x2 = descend_projected(objective, x1, ("box", lo, hi), opts)
        candidates.append((x2, _eval_one(objective, x2)))
        candidates.append((x1, v1))
    tc = None if tie_center is None else np.asarray(tie_center, dtype=float).reshape(-1)
    x, _ = _pick(candidates, tc, opts.tolerance)
    x = np.minimum(np.maximum(np.asarray(x, dtype=float), lo), hi)
    if tc is not None and float(np.linalg.norm(x - tc)) <= opts.tolerance:
        return tc.copy()
    return x
