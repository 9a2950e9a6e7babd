"""Numerical certificates: stability residuals, energy bounds, balance laws.

Every check returns a signed residual rather than a bare boolean, so a
failure carries its magnitude and (where meaningful) a witness point or
direction that attains it.  Sign convention: residual <= 0 means the
property holds; positive residuals measure the violation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .dissipation import diss_new as _interval_diss_new
from .dissipation import diss_psi as _diss_psi
from .minimize import MinimizeOptions, descend_projected, minimize_global, minimize_in_ball
from .model import (BVTrajectory, DiscreteTrajectory, DissipationSpec,
                    EnergyModel, NeighborhoodNorm)

Array = np.ndarray

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class StabilityReport:
    kind: str
    t: float
    residual: float
    witness: Array | None = None


@dataclass(frozen=True)
class JumpCheck:
    """Decomposition and upper-bound facts about one localized jump."""

    t: float
    drop: float
    delta_left: float
    delta_right: float
    decomposition_residual: float
    upper_left_ok: bool
    upper_right_ok: bool


@dataclass(frozen=True)
class BalanceReport:
    s: float
    t: float
    lhs: float
    work: float
    diss_psi: float
    diss_new: float | None
    residual_upper: float
    residual_lower: float | None
    balanced: bool
    jump_checks: tuple[JumpCheck, ...] = ()


@dataclass(frozen=True)
class DiscreteBoundsReport:
    ok: bool
    max_violation: float
    worst_index: int


@dataclass(frozen=True)
class KKTReport:
    max_residual: float
    residuals: Array
    step_indices: Array


def _work_integral(model: EnergyModel, times: Array, states: Array, s: float, t: float) -> float:
    """Integral of dt_energy along the piecewise-constant interpolant.

    The state is constant between nodes, so fixed-order Gauss quadrature
    per (clipped) panel integrates the time dependence; for energies
    linear in t this is exact.
    """
    total = 0.0
    bounds = np.concatenate([times, [max(t, times[-1])]])
    for k in range(len(bounds) - 1):
        a = max(float(bounds[k]), s)
        b = min(float(bounds[k + 1]), t)
        if b <= a:
            continue
        x = states[min(k, len(states) - 1)]
        r = 0.5 * (a + b) + 0.5 * (b - a) * _GL_NODES
        total += 0.5 * (b - a) * sum(
            w * float(model.dt_energy(float(rr), x)) for rr, w in zip(r, _GL_WEIGHTS))
    return total


def _sphere_directions(dim: int, count: int) -> Array:
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    if dim == 1:
        return axes
    n = max(count - 2 * dim, 0)
    if n == 0:
        return axes
    raw = qmc.Halton(d=dim, scramble=False).random(n + 1)[1:]
    pts = 2.0 * raw - 1.0
    lens = np.linalg.norm(pts, axis=1)
    pts = pts[lens > 1e-9] / lens[lens > 1e-9, None]
    return np.vstack([axes, pts])


def check_weak_local_stability(model: EnergyModel, dissipation: DissipationSpec,
                               t: float, x, directions: int | None = None) -> StabilityReport:
    """Membership of the negative gradient in the stable set at (t, x).

    Samples unit directions v and maximizes <-grad, v> - psi(v); for the
    built-in dissipation kinds the exact residual (componentwise for the
    weighted-l1 kind, radial for the scaled-l2 kind) replaces the sampled
    value, with the attaining direction as witness.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    dim = x.shape[0]
    if directions is None:
        directions = max(2 * dim, 64)
    if directions < 2 * dim:
        raise ValueError("need at least two directions per coordinate")
    xi = np.asarray(model.grad_energy(t, x), dtype=float).reshape(-1)
    if dissipation.kind == "weighted-l1" and dissipation.weights is not None:
        gaps = np.abs(xi) - np.asarray(dissipation.weights, dtype=float)
        i = int(np.argmax(gaps))
        witness = np.zeros(dim)
        witness[i] = -np.sign(xi[i]) if xi[i] != 0 else 1.0
        return StabilityReport("weak-local", float(t), float(gaps[i]), witness)
    if dissipation.kind == "scaled-l2" and dissipation.rho is not None:
        nrm = float(np.linalg.norm(xi))
        witness = -xi / nrm if nrm > 0 else np.eye(dim)[0]
        return StabilityReport("weak-local", float(t), nrm - float(dissipation.rho), witness)
    dirs = _sphere_directions(dim, directions)
    vals = dirs @ (-xi) - np.asarray(dissipation.psi(dirs), dtype=float)
    k = int(np.argmax(vals))
    return StabilityReport("weak-local", float(t), float(vals[k]), dirs[k])


def check_eps_stability(model: EnergyModel, dissipation: DissipationSpec, norm: NeighborhoodNorm,
                        t: float, x, eps: float, samples: int | None = None,
                        opts: MinimizeOptions | None = None) -> StabilityReport:
    """Best competitor within the eps-ball; residual > 0 means x is beatable.

    residual = E(t,x) - min over the ball of [E(t,z) + psi(z - x)], found
    by the ball minimizer plus a quasi-random stencil with a descent
    polish, so a stable state reports exactly zero (the stay-put
    candidate is always evaluated).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    dim = x.shape[0]
    if samples is None:
        samples = max(100 * dim, 200)
    if samples < 100 * dim:
        raise ValueError("need at least 100 samples per coordinate")
    opts = opts if opts is not None else MinimizeOptions()

    def objective(z):
        return model.energy(t, z) + dissipation.psi(z - x)

    zstar = minimize_in_ball(objective, x, eps, norm, opts)
    best_val = float(objective(zstar))
    best_z = zstar
    if dim > 1:
        m = int(np.ceil(np.log2(max(samples, 4))))
        raw = qmc.Sobol(d=dim, scramble=True, seed=opts.seed).random_base2(m)
        pts = x[None, :] + eps * (2.0 * raw - 1.0)
        lens = np.asarray(norm.norm(pts - x[None, :]), dtype=float)
        keep = lens <= eps * (1.0 - 1e-12)
        pts = pts[keep]
        lo, hi = model.domain
        pts = np.clip(pts, lo[None, :], hi[None, :])
        if len(pts):
            vals = np.asarray([float(objective(p)) for p in pts])
            j = int(np.argmin(vals))
            cand = descend_projected(objective, pts[j], ("ball", x, eps, norm), opts)
            cval = float(objective(cand))
            if cval < best_val:
                best_val, best_z = cval, cand
    residual = float(model.energy(t, x)) - best_val
    return StabilityReport("eps-local", float(t), residual, best_z)


def check_global_stability(model: EnergyModel, dissipation: DissipationSpec,
                           t: float, x, opts: MinimizeOptions | None = None) -> StabilityReport:
    """Best competitor anywhere in the domain box, psi-penalized from x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    opts = opts if opts is not None else MinimizeOptions()

    def objective(z):
        return model.energy(t, z) + dissipation.psi(z - x)

    zstar = minimize_global(objective, model.domain, opts, tie_center=x)
    residual = float(model.energy(t, x)) - float(objective(zstar))
    return StabilityReport("global", float(t), residual, zstar)


def check_discrete_bounds(model: EnergyModel, traj: DiscreteTrajectory) -> DiscreteBoundsReport:
    """Exponential energy bounds along the run, from the rate estimate lam."""
    e0 = float(model.energy(0.0, traj.states[0]))
    lam = model.lam
    worst = -np.inf
    worst_i = 0
    for n, (t, x) in enumerate(zip(traj.times, traj.states)):
        v1 = float(model.energy(float(t), x)) - e0 * np.exp(lam * float(t))
        v2 = float(model.energy(0.0, x)) - e0 * np.exp(2.0 * lam * float(t))
        v = max(v1, v2)
        if v > worst:
            worst, worst_i = v, n
    scale = max(1.0, abs(e0) * np.exp(2.0 * lam * float(traj.times[-1])))
    return DiscreteBoundsReport(ok=bool(worst <= 1e-9 * scale),
                                max_violation=float(worst), worst_index=int(worst_i))


def check_integral_bound(model: EnergyModel, dissipation: DissipationSpec,
                         traj: DiscreteTrajectory, s: float, t: float,
                         tolerance: float = 1e-7) -> BalanceReport:
    """One-sided energy inequality on [s, t] for a discrete run.

    residual_upper = E(t,x(t)) - E(s,x(s)) - work + diss_psi must be <= 0
    up to quadrature noise; the work integral is exact per constancy
    interval, so the bound reflects per-step minimality alone.
    """
    if s > t:
        raise ValueError("need s <= t")
    us = traj.value_at(s)
    ut = traj.value_at(t)
    lhs = float(model.energy(t, ut)) - float(model.energy(s, us))
    work = _work_integral(model, traj.times, traj.states, float(s), float(t))
    dpsi = _diss_psi(dissipation, traj, s, t)
    residual_upper = lhs - work + dpsi
    return BalanceReport(s=float(s), t=float(t), lhs=lhs, work=work, diss_psi=dpsi,
                         diss_new=None, residual_upper=float(residual_upper),
                         residual_lower=None, balanced=bool(residual_upper <= tolerance))


def check_kkt_identity(model: EnergyModel, dissipation: DissipationSpec,
                       norm: NeighborhoodNorm, traj: DiscreteTrajectory) -> KKTReport:
    """First-order identity at every moving step of a ball-constrained run.

    |<-grad E, dx> - psi(dx) - dual_gap(grad E) * norm(dx)| vanishes at
    exact minimizers whether the step lands inside the ball (gap 0) or on
    its boundary (Lagrange multiplier = gap).  Stationary steps are
    skipped.  Arc-length runs minimize at the previous node's time, so the
    gradient is taken there.
    """
    if traj.scheme_tag not in ("eps-neighborhood", "arc-length"):
        raise ValueError("the KKT identity applies to ball-constrained runs")
    at_prev_time = traj.scheme_tag == "arc-length"
    residuals = []
    indices = []
    for i in range(1, len(traj.times)):
        d = traj.states[i] - traj.states[i - 1]
        ln = float(norm.norm(d))
        if ln <= 1e-13:
            continue
        t_min = float(traj.times[i - 1] if at_prev_time else traj.times[i])
        xi = np.asarray(model.grad_energy(t_min, traj.states[i]), dtype=float).reshape(-1)
        gap = float(dissipation.dual_gap(xi, norm))
        r = abs(float((-xi) @ d) - float(dissipation.psi(d)) - gap * ln)
        residuals.append(r)
        indices.append(i)
    res = np.asarray(residuals, dtype=float)
    return KKTReport(max_residual=float(res.max()) if len(res) else 0.0,
                     residuals=res, step_indices=np.asarray(indices, dtype=int))


def check_new_balance(model: EnergyModel, dissipation: DissipationSpec, norm: NeighborhoodNorm,
                      traj: BVTrajectory, s: float, t: float, tolerance: float = 1e-3,
                      knots: int = 16) -> BalanceReport:
    """Two-sided energy balance with jump costs on [s, t].

    residual_upper uses diss_psi (classical direction, <= 0 for limits of
    the schemes); residual_lower uses diss_new and must vanish for a
    trajectory satisfying the augmented balance; balanced reports
    |residual_lower| <= tolerance.  Each localized jump also gets its
    drop decomposition and one-sided upper bounds checked.
    """
    if s > t:
        raise ValueError("need s <= t")
    us = traj.value_at(s)
    ut = traj.value_at(t)
    lhs = float(model.energy(t, ut)) - float(model.energy(s, us))
    work = _work_integral(model, traj.sample_times, traj.values, float(s), float(t))
    inter = _interval_diss_new(model, dissipation, norm, traj, s, t, knots=knots)
    residual_upper = lhs - work + inter.diss_psi
    residual_lower = lhs - work + inter.diss_new
    by_time = {round(jc.t, 12): jc for jc in inter.jump_costs}
    checks = []
    for j in traj.jumps:
        jc = by_time.get(round(j.t, 12))
        if jc is None:
            continue
        e_left = float(model.energy(j.t, j.left))
        e_at = float(model.energy(j.t, j.at))
        e_right = float(model.energy(j.t, j.right))
        drop = e_right - e_left
        checks.append(JumpCheck(
            t=float(j.t), drop=drop, delta_left=jc.delta_left, delta_right=jc.delta_right,
            decomposition_residual=float(drop + jc.delta_left + jc.delta_right),
            upper_left_ok=bool(jc.delta_left <= e_left - e_at + tolerance),
            upper_right_ok=bool(jc.delta_right <= e_at - e_right + tolerance)))
    return BalanceReport(s=float(s), t=float(t), lhs=lhs, work=work,
                         diss_psi=inter.diss_psi, diss_new=inter.diss_new,
                         residual_upper=float(residual_upper),
                         residual_lower=float(residual_lower),
                         balanced=bool(abs(residual_lower) <= tolerance),
                         jump_checks=tuple(checks))
