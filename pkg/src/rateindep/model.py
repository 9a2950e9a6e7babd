"""Energies, dissipation potentials, norms, and trajectory containers.

States are numpy arrays of shape (dim,).  All model callables accept a
single state or a batch of shape (n, dim) and broadcast over the batch;
the minimizers rely on this for vectorized scans.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ModelError

Array = np.ndarray


def _as_state(x) -> Array:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return x


@dataclass(frozen=True)
class EnergyModel:
    """A time-dependent energy E(t, x) with exact first derivatives.

    ``lam`` is a constant with |dt_energy| <= lam * energy on the
    verification grid; it feeds the exponential a-priori bounds.
    ``domain`` is the axis-aligned box (lower, upper) used for global
    searches and for the lam estimate.
    """

    dim: int
    energy: Callable[[float, Array], Array]
    dt_energy: Callable[[float, Array], Array]
    grad_energy: Callable[[float, Array], Array]
    lam: float
    horizon: float
    domain: tuple[Array, Array]
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ModelError("dim must be a positive integer")
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")
        lo, hi = self.domain
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise ModelError("domain bounds must have shape (dim,)")
        if not np.all(lo < hi):
            raise ModelError("domain box must have positive extent")
        object.__setattr__(self, "domain", (lo, hi))


@dataclass(frozen=True)
class DissipationSpec:
    """A convex, positively 1-homogeneous dissipation potential.

    ``psi`` maps a displacement (or batch) to its cost.  ``dual_gap(xi,
    norm)`` is min over z in the stable set of ||xi + z|| measured in the
    dual norm of the supplied neighborhood norm (l2 when norm is None);
    ``stable_contains`` tests membership of a covector in the stable set.
    """

    kind: str
    psi: Callable[[Array], Array]
    dual_gap: Callable[..., float]
    stable_contains: Callable[[Array], bool]
    weights: Optional[Array] = None
    rho: Optional[float] = None


@dataclass(frozen=True)
class NeighborhoodNorm:
    """The norm that shapes constraint balls, plus its dual norm."""

    kind: str
    norm: Callable[[Array], Array]
    dual_norm: Callable[[Array], Array]
    p: float = 2.0


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Node times and states produced by an incremental scheme.

    The associated interpolant is piecewise constant: x(t) = states[i-1]
    on [times[i-1], times[i]), so it is right-continuous at the nodes.
    The arc-length scheme produces non-uniform times that may repeat
    while time is frozen during a jump; evaluation at such a time yields
    the last state recorded there.
    """

    times: Array
    states: Array
    scheme_tag: str
    eps: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        if len(times) != len(states):
            raise ValueError("times and states must have equal length")
        if len(times) == 0:
            raise ValueError("trajectory must contain at least one node")
        dt = np.diff(times)
        if self.scheme_tag == "arc-length":
            if np.any(dt < -1e-12):
                raise ValueError("arc-length times must be non-decreasing")
        else:
            if np.any(dt <= 0):
                raise ValueError("times must be strictly increasing")
            if len(dt) > 1 and self.tau > 0 and np.any(np.abs(dt - self.tau) > 1e-9 * max(1.0, self.tau)):
                raise ValueError("uniform schemes require constant step tau")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def value_at(self, t) -> Array:
        """Evaluate the piecewise-constant interpolant at time(s) t.

        A tiny forward nudge absorbs 1-ulp mismatches between sample
        grids and node times built by different float expressions.
        """
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t + 1e-9, side="right") - 1
        idx = np.clip(idx, 0, len(self.times) - 1)
        return self.states[idx]


@dataclass(frozen=True)
class TransitionPath:
    """A piecewise-linear path between two states, with its quadrature cost."""

    knots: Array
    cost: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim == 1:
            knots = knots.reshape(-1, 1)
        if len(knots) < 2:
            raise ValueError("a path needs at least two knots")
        object.__setattr__(self, "knots", knots)


@dataclass(frozen=True)
class JumpRecord:
    """One jump: time, left limit, recorded value, right limit."""

    t: float
    left: Array
    at: Array
    right: Array
    transition_left: Optional[TransitionPath] = None
    transition_right: Optional[TransitionPath] = None


@dataclass(frozen=True)
class BVTrajectory:
    """Sampled values of a limit trajectory plus explicit jump records."""

    sample_times: Array
    values: Array
    jumps: tuple[JumpRecord, ...] = ()
    var_bound: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.sample_times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if len(times) != len(values):
            raise ValueError("sample_times and values must have equal length")
        if np.any(np.diff(times) < 0):
            raise ValueError("sample_times must be sorted")
        for j in self.jumps:
            k = np.searchsorted(times, j.t)
            near = abs(times[np.clip(k, 0, len(times) - 1)] - j.t) <= 1e-12
            near = near or (k > 0 and abs(times[k - 1] - j.t) <= 1e-12)
            if not near:
                raise ValueError("every jump time must appear in sample_times")
        object.__setattr__(self, "sample_times", times)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def value_at(self, t) -> Array:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.sample_times, t + 1e-9, side="right") - 1
        idx = np.clip(idx, 0, len(self.sample_times) - 1)
        return self.values[idx]


# ---------------------------------------------------------------------------
# dissipation potentials


def dual_gap_weighted_l1(xi, weights, dual_kind="l2") -> float:
    """Distance from a covector to the box stable set of a weighted-l1 psi.

    The stable set is the box prod [-c_i, c_i]; by its symmetry,
    min_z ||xi + z|| equals the componentwise-clamped residual measured in
    the requested dual norm.  ``dual_kind`` is 'l2', 'l1', 'linf', or a
    float exponent q >= 1.
    """
    xi = np.asarray(xi, dtype=float)
    c = np.asarray(weights, dtype=float)
    r = np.maximum(0.0, np.abs(xi) - c)
    if dual_kind == "l2":
        out = np.sqrt(np.sum(r * r, axis=-1))
    elif dual_kind == "l1":
        out = np.sum(r, axis=-1)
    elif dual_kind == "linf":
        out = np.max(r, axis=-1)
    else:
        q = float(dual_kind)
        if q < 1:
            raise ValueError("dual exponent must be >= 1")
        out = np.sum(r**q, axis=-1) ** (1.0 / q)
    return float(out) if np.ndim(out) == 0 else out


def _dual_exponent(norm: Optional[NeighborhoodNorm]) -> float | str:
    if norm is None or norm.kind == "l2":
        return "l2"
    p = norm.p
    if p == 1.0:
        return "linf"
    if np.isinf(p):
        return "l1"
    return p / (p - 1.0)


def make_weighted_l1(weights) -> DissipationSpec:
    """Psi(v) = sum_i c_i |v_i| with weights c_i > 0."""
    c = np.atleast_1d(np.asarray(weights, dtype=float))
    if np.any(c <= 0):
        raise ValueError("weights must be positive")

    def psi(v):
        v = np.asarray(v, dtype=float)
        return np.sum(c * np.abs(v), axis=-1)

    def dual_gap(xi, norm=None):
        return dual_gap_weighted_l1(xi, c, _dual_exponent(norm))

    def stable_contains(xi, tol=1e-9):
        return bool(np.all(np.abs(np.asarray(xi, dtype=float)) <= c + tol))

    return DissipationSpec("weighted-l1", psi, dual_gap, stable_contains, weights=c)


def make_scaled_l2(rho: float) -> DissipationSpec:
    """Psi(v) = rho * ||v||_2; the stable set is the l2 ball of radius rho."""
    rho = float(rho)
    if rho <= 0:
        raise ValueError("rho must be positive")

    def psi(v):
        v = np.asarray(v, dtype=float)
        return rho * np.sqrt(np.sum(v * v, axis=-1))

    def dual_gap(xi, norm=None):
        xi = np.asarray(xi, dtype=float)
        if norm is None or norm.kind == "l2":
            out = np.maximum(0.0, np.sqrt(np.sum(xi * xi, axis=-1)) - rho)
            return float(out) if np.ndim(out) == 0 else out
        # No closed form for the lq-distance from a point to an l2 ball:
        # project xi onto the ball and descend the q-distance numerically.
        q = _dual_exponent(norm)
        qv = 2.0 if q == "l2" else (1.0 if q == "linf" else q)

        def qdist(z):
            d = np.abs(xi - z)
            if q == "linf":
                return float(np.max(d))
            return float(np.sum(d**qv) ** (1.0 / qv))

        nx = np.sqrt(np.sum(xi * xi))
        if nx <= rho:
            return 0.0
        z = xi * (rho / nx)
        best = qdist(z)
        step = rho / 4.0
        dirs = np.vstack([np.eye(xi.size), -np.eye(xi.size)])
        for _ in range(200):
            improved = False
            for d in dirs:
                cand = z + step * d
                nz = np.sqrt(np.sum(cand * cand))
                if nz > rho:
                    cand = cand * (rho / nz)
                val = qdist(cand)
                if val < best - 1e-15:
                    z, best = cand, val
                    improved = True
            if not improved:
                step *= 0.5
                if step < 1e-12 * rho:
                    break
        return best

    def stable_contains(xi, tol=1e-9):
        xi = np.asarray(xi, dtype=float)
        return bool(np.sqrt(np.sum(xi * xi)) <= rho + tol)

    return DissipationSpec("scaled-l2", psi, dual_gap, stable_contains, rho=rho)


def make_generic_psi(psi: Callable[[Array], Array], dim: int, directions: int = 256, seed: int = 0) -> DissipationSpec:
    """Wrap an arbitrary 1-homogeneous convex psi.

    The stable set is only known through psi, so dual_gap is approximate:
    membership is tested on sampled directions and the gap is minimized by
    projected subgradient descent with projection by radial scaling onto
    the sampled support constraint.  Exactness is documented as "within
    the direction sample"; the built-in kinds have exact closed forms.
    """
    rng = np.random.default_rng(seed)
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        raw = rng.standard_normal((directions, dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        dirs = np.vstack([raw, np.eye(dim), -np.eye(dim)])
    psi_dirs = np.asarray(psi(dirs), dtype=float)
    if np.any(psi_dirs <= 0):
        raise ValueError("psi must be positive on nonzero directions")

    def _scale_into(z):
        s = np.max(dirs @ z / psi_dirs)
        if s > 1.0:
            z = z / s
        return z

    def stable_contains(xi, tol=1e-9):
        xi = np.asarray(xi, dtype=float)
        return bool(np.max(dirs @ xi - psi_dirs) <= tol)

    def dual_gap(xi, norm=None):
        xi = np.asarray(xi, dtype=float)
        if stable_contains(-xi, tol=0.0):
            return 0.0
        z = _scale_into(-xi.copy())
        best = np.linalg.norm(xi + z)
        step = max(1.0, best)
        for _ in range(300):
            g = xi + z
            n = np.linalg.norm(g)
            if n < 1e-14:
                return 0.0
            cand = _scale_into(z - step * g / n)
            val = np.linalg.norm(xi + cand)
            if val < best - 1e-14:
                z, best = cand, val
            else:
                step *= 0.6
                if step < 1e-10:
                    break
        return float(best)

    return DissipationSpec("generic", psi, dual_gap, stable_contains)


# ---------------------------------------------------------------------------
# neighborhood norms


def make_l2_norm() -> NeighborhoodNorm:
    def norm(v):
        v = np.asarray(v, dtype=float)
        return np.sqrt(np.sum(v * v, axis=-1))

    return NeighborhoodNorm("l2", norm, norm, p=2.0)


def make_lp_norm(p: float) -> NeighborhoodNorm:
    """The lp norm for p in (1, inf); its ball has a C1 boundary."""
    p = float(p)
    if not (1.0 < p < np.inf):
        raise ValueError("p must lie in (1, inf)")
    q = p / (p - 1.0)

    def norm(v):
        v = np.asarray(v, dtype=float)
        return np.sum(np.abs(v) ** p, axis=-1) ** (1.0 / p)

    def dual(w):
        w = np.asarray(w, dtype=float)
        return np.sum(np.abs(w) ** q, axis=-1) ** (1.0 / q)

    return NeighborhoodNorm("lp", norm, dual, p=p)


# ---------------------------------------------------------------------------
# the model catalog


def estimate_lambda(model: EnergyModel, grid_per_axis: int = 256) -> float:
    """Grid estimate of the energy-control constant, inflated by 1.1.

    Scans a (time x domain) grid for max |dt_energy| / energy.  Raises
    ModelError when a nonpositive energy sample is found: the exponential
    bounds are meaningless for such a model.
    """
    if grid_per_axis < 8:
        raise ValueError("grid_per_axis must be at least 8")
    lo, hi = model.domain
    # keep the product grid at a sane size in higher dimensions
    per_axis = grid_per_axis if model.dim == 1 else min(grid_per_axis, int(2 ** (18 / model.dim)))
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(model.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=-1)
    times = np.linspace(0.0, model.horizon, min(grid_per_axis, 128))
    worst = 0.0
    for t in times:
        e = np.asarray(model.energy(float(t), X), dtype=float)
        if np.any(e <= 0.0):
            bad = X[np.argmin(e)]
            raise ModelError(f"nonpositive energy at t={t}, x={bad}")
        de = np.abs(np.asarray(model.dt_energy(float(t), X), dtype=float))
        worst = max(worst, float(np.max(de / e)))
    return 1.1 * worst


def make_example2(lambda_grid: int = 256) -> EnergyModel:
    """The built-in 1-d double-well benchmark with a moving tilt.

    E(t, x) = x^2 - x^4 + 0.3 x^6 + t (1 - x^2) - x + 6 on [-3, 3] with
    horizon 2; the derivatives are exact polynomials.
    """

    def energy(t, x):
        x = np.asarray(x, dtype=float)[..., 0]
        x2 = x * x
        return x2 - x2 * x2 + 0.3 * x2 * x2 * x2 + t * (1.0 - x2) - x + 6.0

    def dt_energy(t, x):
        x = np.asarray(x, dtype=float)[..., 0]
        return 1.0 - x * x

    def grad_energy(t, x):
        x = np.asarray(x, dtype=float)
        u = x[..., 0]
        g = 2.0 * u - 4.0 * u**3 + 1.8 * u**5 - 2.0 * t * u - 1.0
        return g[..., None] if x.ndim > 1 else np.array([g])

    dom = (np.array([-3.0]), np.array([3.0]))
    m = EnergyModel(1, energy, dt_energy, grad_energy, 0.0, 2.0, dom, name="example2")
    return replace(m, lam=estimate_lambda(m, lambda_grid))


def example2_reference(t):
    """The upper branch y(t) = sqrt(10 + sqrt(10 + 90 t)) / 3 of the benchmark.

    It is the larger positive root of grad E(t, .) = -1, i.e. the
    critical point of E(t, .) + |.| tracked by the solutions after their
    jumps.
    """
    t = np.asarray(t, dtype=float)
    return np.sqrt(10.0 + np.sqrt(10.0 + 90.0 * t)) / 3.0


def make_poly1d(static_coeffs, drive_coeffs, horizon=2.0, box=(-3.0, 3.0), name="poly1d", lambda_grid=64) -> EnergyModel:
    """A 1-d model E(t, x) = P(x) + t * Q(x) from coefficient lists.

    Coefficients are in increasing-degree order.  P and Q must keep the
    energy positive on [0, horizon] x box; estimate_lambda enforces this.
    """
    P = np.asarray(static_coeffs, dtype=float)
    Q = np.asarray(drive_coeffs, dtype=float)
    dP = np.polynomial.polynomial.polyder(P) if len(P) > 1 else np.zeros(1)
    dQ = np.polynomial.polynomial.polyder(Q) if len(Q) > 1 else np.zeros(1)
    pv = np.polynomial.polynomial.polyval

    def energy(t, x):
        u = np.asarray(x, dtype=float)[..., 0]
        return pv(u, P) + t * pv(u, Q)

    def dt_energy(t, x):
        u = np.asarray(x, dtype=float)[..., 0]
        return pv(u, Q) + 0.0 * u

    def grad_energy(t, x):
        x = np.asarray(x, dtype=float)
        u = x[..., 0]
        g = pv(u, dP) + t * pv(u, dQ)
        return g[..., None] if x.ndim > 1 else np.array([g])

    dom = (np.array([float(box[0])]), np.array([float(box[1])]))
    m = EnergyModel(1, energy, dt_energy, grad_energy, 0.0, float(horizon), dom, name=name)
    return replace(m, lam=estimate_lambda(m, lambda_grid))


def make_double_well_2d(lambda_grid=64) -> EnergyModel:
    """A 2-d double well with a shear coupling and a linear-in-time tilt."""

    def energy(t, x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        return (a * a - 1.0) ** 2 + 0.7 * (b - 0.4 * a) ** 2 + t * (0.6 - 0.5 * a) + 3.0

    def dt_energy(t, x):
        x = np.asarray(x, dtype=float)
        return 0.6 - 0.5 * x[..., 0]

    def grad_energy(t, x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        ga = 4.0 * a * (a * a - 1.0) - 0.56 * (b - 0.4 * a) - 0.5 * t
        gb = 1.4 * (b - 0.4 * a)
        return np.stack([ga, gb], axis=-1)

    dom = (np.array([-2.0, -2.0]), np.array([2.0, 2.0]))
    m = EnergyModel(2, energy, dt_energy, grad_energy, 0.0, 2.0, dom, name="double-well-2d")
    return replace(m, lam=estimate_lambda(m, lambda_grid))


def make_random_double_well(dim: int, seed: int, horizon: float = 1.0) -> EnergyModel:
    """A randomized separable double well with nearest-neighbor coupling.

    Used by the property-test suite; every draw keeps the energy bounded
    away from zero so the exponential bounds apply.
    """
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 1.5, size=dim)
    b = rng.uniform(0.7, 1.3, size=dim)
    g = rng.uniform(-0.5, 0.5, size=dim)
    kappa = rng.uniform(0.2, 0.8, size=max(dim - 1, 1))
    offset = 2.0 + 2.0 * dim * float(np.max(np.abs(g))) * horizon

    def energy(t, x):
        x = np.asarray(x, dtype=float)
        wells = np.sum(a * (x * x - b * b) ** 2, axis=-1)
        coup = 0.0
        if dim > 1:
            d = x[..., :-1] - x[..., 1:]
            coup = 0.5 * np.sum(kappa * d * d, axis=-1)
        return wells + coup + t * np.sum(g * x, axis=-1) + offset

    def dt_energy(t, x):
        x = np.asarray(x, dtype=float)
        return np.sum(g * x, axis=-1)

    def grad_energy(t, x):
        x = np.asarray(x, dtype=float)
        grad = 4.0 * a * x * (x * x - b * b) + t * g
        if dim > 1:
            d = x[..., :-1] - x[..., 1:]
            grad = grad.copy()
            grad[..., :-1] += kappa * d
            grad[..., 1:] -= kappa * d
        return grad

    dom = (np.full(dim, -2.0), np.full(dim, 2.0))
    m = EnergyModel(dim, energy, dt_energy, grad_energy, 0.0, float(horizon), dom, name=f"random-double-well-{dim}d-{seed}")
    return replace(m, lam=estimate_lambda(m, 32))


CATALOG = {
    "example2": make_example2,
    "double-well-2d": make_double_well_2d,
}


def get_model(name: str, **kwargs) -> EnergyModel:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ModelError(f"unknown catalog model {name!r}; known: {sorted(CATALOG)}") from None
    return factory(**kwargs)
