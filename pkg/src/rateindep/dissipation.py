"""Variation functionals and the augmented jump transition cost.

The jump cost between two states at a frozen time is the infimum over
connecting paths of the dissipation rate plus a stress-excess term: the
distance (in the dual norm) from the energy gradient to the stable set,
weighted by the path speed.  In one dimension a monotone path is always
optimal (both parts of the integrand are densities against |dy|), so the
cost reduces to an ordinary integral that is evaluated by kink-splitting
adaptive quadrature; in higher dimensions a piecewise-linear path with a
fixed knot budget is optimized by coordinate descent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.optimize import brentq

from .errors import NumericError
from .model import (BVTrajectory, DiscreteTrajectory, DissipationSpec,
                    EnergyModel, NeighborhoodNorm, TransitionPath)

Array = np.ndarray


@dataclass(frozen=True)
class JumpCost:
    """Per-jump breakdown used inside IntervalDissipation."""

    t: float
    delta_left: float
    delta_right: float
    psi_left: float
    psi_right: float


@dataclass(frozen=True)
class IntervalDissipation:
    s: float
    t: float
    diss_psi: float
    diss_new: float
    jump_costs: tuple[JumpCost, ...] = ()


def _nodes(traj):
    if isinstance(traj, DiscreteTrajectory):
        return traj.times, traj.states
    if isinstance(traj, BVTrajectory):
        return traj.sample_times, traj.values
    raise TypeError("expected a DiscreteTrajectory or BVTrajectory")


def diss_psi(dissipation: DissipationSpec, traj, s: float, t: float) -> float:
    """Total psi-variation of the piecewise-constant interpolant on [s, t].

    Sums psi over the increments at nodes inside (s, t]; the first counted
    increment is measured from the state at s, which for a piecewise
    constant interpolant is the state at the last node <= s.  This equals
    the supremum over partitions on this function class.
    """
    if s > t:
        raise ValueError("need s <= t")
    times, values = _nodes(traj)
    ks = int(np.searchsorted(times, s + 1e-9, side="right"))
    kt = int(np.searchsorted(times, t + 1e-9, side="right"))
    ks = max(ks, 1)
    if kt <= ks:
        return 0.0
    inc = values[ks:kt] - values[ks - 1:kt - 1]
    return float(np.sum(dissipation.psi(inc)))


def _gap_many(dissipation: DissipationSpec, norm, G: Array) -> Array:
    try:
        out = np.asarray(dissipation.dual_gap(G, norm), dtype=float)
        if out.shape == (len(G),):
            return out
    except Exception:
        pass
    return np.array([float(dissipation.dual_gap(g, norm)) for g in G])


def transition_cost(model: EnergyModel, dissipation: DissipationSpec, norm: NeighborhoodNorm,
                    t: float, path: TransitionPath, subintervals: int = 64) -> float:
    """Composite-trapezoid cost of a piecewise-linear path at frozen time t.

    Each segment contributes psi(increment) plus the segment length times
    the trapezoid average of the dual gap of the energy gradient along it.
    """
    if subintervals < 1:
        raise ValueError("subintervals must be positive")
    knots = path.knots
    lo, hi = model.domain
    if np.any(knots < lo - 1e-9) or np.any(knots > hi + 1e-9):
        raise ValueError("path knots leave the model domain box")
    total = 0.0
    svals = np.linspace(0.0, 1.0, subintervals + 1)
    for j in range(len(knots) - 1):
        d = knots[j + 1] - knots[j]
        ln = float(norm.norm(d))
        total += float(dissipation.psi(d))
        if ln <= 0.0:
            continue
        pts = knots[j][None, :] + svals[:, None] * d[None, :]
        gaps = _gap_many(dissipation, norm, np.asarray(model.grad_energy(t, pts), dtype=float))
        total += ln * float(np.trapezoid(gaps, dx=1.0 / subintervals))
    if not np.isfinite(total):
        raise NumericError("transition cost is not finite", point=knots)
    return total


def straight_path(a, b, interior_knots: int = 16) -> TransitionPath:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    frac = np.linspace(0.0, 1.0, interior_knots + 2)
    return TransitionPath(a[None, :] + frac[:, None] * (b - a)[None, :], 0.0)


def _gap_threshold_1d(dissipation: DissipationSpec):
    if dissipation.kind == "weighted-l1":
        return float(dissipation.weights[0])
    if dissipation.kind == "scaled-l2":
        return float(dissipation.rho)
    return None


def _gap_integral_1d(model, dissipation, norm, t, lo, hi) -> float:
    """Integral of the dual gap of the gradient over [lo, hi] in 1-d.

    The integrand is |g(y)| - c clipped at zero for the built-in kinds,
    so its kinks are the roots of g = +-c; the interval is split there and
    each smooth piece is handled by adaptive quadrature.
    """
    if hi <= lo:
        return 0.0

    def gap_scalar(y: float) -> float:
        return float(dissipation.dual_gap(np.asarray(model.grad_energy(t, np.array([y])), dtype=float).reshape(-1), norm))

    cuts = [lo, hi]
    thr = _gap_threshold_1d(dissipation)
    if thr is not None:
        ys = np.linspace(lo, hi, 4097)
        g = np.asarray(model.grad_energy(t, ys[:, None]), dtype=float).reshape(-1)

        def g_scalar(y: float) -> float:
            return float(np.asarray(model.grad_energy(t, np.array([y])), dtype=float).reshape(-1)[0])

        for sign in (1.0, -1.0):
            h = g - sign * thr
            idx = np.nonzero(np.diff(np.sign(h)) != 0)[0]
            for i in idx:
                a, b = float(ys[i]), float(ys[i + 1])
                try:
                    cuts.append(brentq(lambda y: g_scalar(y) - sign * thr, a, b, xtol=1e-14, rtol=1e-15))
                except ValueError:
                    pass
    cuts = sorted(set(cuts))
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 1e-15:
            continue
        val, _ = integrate.quad(gap_scalar, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)
        total += val
    return total


def optimize_transition(model, dissipation, norm, t, a, b, knots: int = 16,
                        subintervals: int = 64, sweeps: int = 30):
    """Minimize the path cost over piecewise-linear paths by coordinate descent.

    ``knots`` counts interior knots; the path starts as the straight
    segment, each interior knot coordinate is line-searched against the
    local two-segment cost, and the knots are re-spaced to near-constant
    speed after every sweep.  Deterministic; returns (cost, path).
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    lo, hi = model.domain
    path = straight_path(a, b, knots)
    pts = path.knots.copy()
    dim = pts.shape[1]

    def seg_cost(p0, p1) -> float:
        d = p1 - p0
        ln = float(norm.norm(d))
        c = float(dissipation.psi(d))
        if ln > 0.0:
            svals = np.linspace(0.0, 1.0, subintervals + 1)
            seg = p0[None, :] + svals[:, None] * d[None, :]
            gaps = _gap_many(dissipation, norm, np.asarray(model.grad_energy(t, seg), dtype=float))
            c += ln * float(np.trapezoid(gaps, dx=1.0 / subintervals))
        return c

    def total_cost(P) -> float:
        return sum(seg_cost(P[j], P[j + 1]) for j in range(len(P) - 1))

    cost = total_cost(pts)
    span0 = max(float(norm.norm(b - a)) / (knots + 1), 1e-6)
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    for sweep in range(sweeps):
        before = cost
        span = span0 * (0.5 ** min(sweep, 20))
        for j in range(1, knots + 1):
            for c_i in range(dim):
                base = pts[j, c_i]
                lo_i = max(base - span, lo[c_i])
                hi_i = min(base + span, hi[c_i])
                if hi_i <= lo_i:
                    continue

                def local(v: float) -> float:
                    pts[j, c_i] = v
                    return seg_cost(pts[j - 1], pts[j]) + seg_cost(pts[j], pts[j + 1])

                cur = local(base)
                x0, x1 = lo_i, hi_i
                c1 = x1 - golden * (x1 - x0)
                c2 = x0 + golden * (x1 - x0)
                f1, f2 = local(c1), local(c2)
                for _ in range(40):
                    if x1 - x0 < 1e-10 * max(1.0, abs(base)):
                        break
                    if f1 <= f2:
                        x1, c2, f2 = c2, c1, f1
                        c1 = x1 - golden * (x1 - x0)
                        f1 = local(c1)
                    else:
                        x0, c1, f1 = c1, c2, f2
                        c2 = x0 + golden * (x1 - x0)
                        f2 = local(c2)
                vbest, xbest = min((f1, c1), (f2, c2), (cur, base))
                pts[j, c_i] = xbest
                cost += vbest - cur
        # re-space knots to near-constant speed along the current polyline
        seglen = np.asarray(norm.norm(np.diff(pts, axis=0)), dtype=float)
        L = float(np.sum(seglen))
        if L > 0.0:
            cum = np.concatenate([[0.0], np.cumsum(seglen)])
            targets = np.linspace(0.0, L, knots + 2)
            newpts = pts.copy()
            for k, s_t in enumerate(targets[1:-1], start=1):
                seg = min(int(np.searchsorted(cum, s_t, side="right")) - 1, len(seglen) - 1)
                frac = 0.0 if seglen[seg] == 0 else (s_t - cum[seg]) / seglen[seg]
                newpts[k] = pts[seg] + frac * (pts[seg + 1] - pts[seg])
            new_cost = total_cost(newpts)
            if new_cost <= cost + 1e-12:
                pts, cost = newpts, new_cost
        if before - cost < 1e-12 * (1.0 + abs(cost)):
            break
    cost = total_cost(pts)
    if not np.isfinite(cost):
        raise NumericError("transition optimizer diverged", point=pts)
    return cost, TransitionPath(pts, cost)


def delta_new(model: EnergyModel, dissipation: DissipationSpec, norm: NeighborhoodNorm,
              t: float, a, b, knots: int = 16, subintervals: int = 64):
    """Jump transition cost between states a and b at frozen time t.

    Returns (cost, path).  In one dimension the optimal path is monotone,
    so the cost is psi(b - a) plus the exact gap integral between the
    endpoints; otherwise the knot-budget path optimizer is run.
    """
    if knots < 2:
        raise ValueError("knots must be at least 2")
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("endpoint dimensions differ")
    if np.array_equal(a, b):
        return 0.0, TransitionPath(np.vstack([a, b]), 0.0)
    if model.dim == 1:
        lo, hi = (float(a[0]), float(b[0])) if a[0] <= b[0] else (float(b[0]), float(a[0]))
        cost = float(dissipation.psi(b - a)) + _gap_integral_1d(model, dissipation, norm, t, lo, hi)
        path = straight_path(a, b, knots)
        return cost, TransitionPath(path.knots, cost)
    return optimize_transition(model, dissipation, norm, t, a, b, knots, subintervals)


def diss_new(model: EnergyModel, dissipation: DissipationSpec, norm: NeighborhoodNorm,
             traj: BVTrajectory, s: float, t: float, knots: int = 16) -> IntervalDissipation:
    """Augmented dissipation on [s, t]: psi-variation with jump costs swapped in.

    Interior jumps contribute both transition parts; a jump sitting at s
    contributes only its right part, at t only its left part.
    """
    if s > t:
        raise ValueError("need s <= t")
    base = diss_psi(dissipation, traj, s, t)
    extra = 0.0
    costs = []
    for j in traj.jumps:
        if j.t < s - 1e-12 or j.t > t + 1e-12:
            continue
        at_s = abs(j.t - s) <= 1e-12
        at_t = abs(j.t - t) <= 1e-12
        if at_s and at_t:
            continue
        dl = j.transition_left.cost if j.transition_left is not None else delta_new(model, dissipation, norm, j.t, j.left, j.at, knots)[0]
        dr = j.transition_right.cost if j.transition_right is not None else delta_new(model, dissipation, norm, j.t, j.at, j.right, knots)[0]
        psil = float(dissipation.psi(j.at - j.left))
        psir = float(dissipation.psi(j.right - j.at))
        if at_s:
            extra += dr - psir
        elif at_t:
            extra += dl - psil
        else:
            extra += (dl + dr) - (psil + psir)
        costs.append(JumpCost(j.t, dl, dr, psil, psir))
    return IntervalDissipation(float(s), float(t), base, base + extra, tuple(costs))
