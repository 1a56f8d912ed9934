"""Hopf-Lax transform with exponent p and everything built on it: distance
progressed, interpolating and time-reversed potentials, characteristic speeds,
propagated potentials, and the second/third-order temporal diagnostics.

On a finite point set the infimum in the transform is an exact minimum, so
the distance-progressed bracket [D-, D+] is computed from the full argmin set
(every point within a relative 1e-12 of the minimum) rather than from
minimizing sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .mms_core import MetricMeasureSpace
from .transport import DynamicalPlan, PotentialField, evaluation_points

ARGMIN_RTOL = 1e-12
CCONCAVE_TOL = 1e-9


@dataclass(frozen=True)
class HopfLaxEvaluation:
    """Q_t f over all points with the argmin distance bracket."""

    t: float
    p: float
    value: np.ndarray      # (n,)
    D_plus: np.ndarray     # (n,) max distance over the argmin set
    D_minus: np.ndarray    # (n,) min distance over the argmin set
    argmin_mask: Optional[np.ndarray] = None   # (n, n) bool, only if requested


def hopf_lax(space: MetricMeasureSpace, f, t: float, p: float,
             store_argmins: bool = False, Dp: Optional[np.ndarray] = None) -> HopfLaxEvaluation:
    """Q_t f(x) = min_y d(x,y)^p / (p t^(p-1)) + f(y) with D+/- per point.

    ``Dp`` may carry a precomputed D**p to amortize the power over a family
    of evaluations.
    """
    if t <= 0:
        raise ValueError("hopf_lax needs t > 0; use hopf_lax_negative for t < 0")
    f = np.asarray(f, dtype=float)
    if not np.isfinite(f).any():
        raise ValueError("f must be finite somewhere")
    if Dp is None:
        Dp = space.D ** p
    M = Dp * (1.0 / (p * t ** (p - 1.0)))
    M += f[None, :]
    vals = M.min(axis=1)
    tol = ARGMIN_RTOL * (1.0 + np.abs(vals))
    mask = M <= (vals + tol)[:, None]
    Dm = np.where(mask, space.D, np.inf).min(axis=1)
    Dx = (space.D * mask).max(axis=1)   # valid: distances are >= 0
    return HopfLaxEvaluation(
        t=t, p=p, value=vals, D_plus=Dx, D_minus=Dm,
        argmin_mask=mask if store_argmins else None,
    )


def hopf_lax_at(space: MetricMeasureSpace, f, t: float, p: float, idx: int) -> float:
    """Q_t f at a single point (O(n))."""
    row = space.D[idx] ** p / (p * t ** (p - 1.0)) + f
    return float(row.min())


def hopf_lax_negative(space: MetricMeasureSpace, f, t: float, p: float) -> HopfLaxEvaluation:
    """Negative-time transform Q_t f = -Q_{-t}(-f) for t < 0."""
    if t >= 0:
        raise ValueError("hopf_lax_negative needs t < 0")
    ev = hopf_lax(space, -np.asarray(f, dtype=float), -t, p)
    return HopfLaxEvaluation(t=t, p=p, value=-ev.value, D_plus=ev.D_plus,
                             D_minus=ev.D_minus, argmin_mask=ev.argmin_mask)


def semigroup_residual(space: MetricMeasureSpace, f, s: float, t: float, p: float) -> float:
    """max |Q_{s+t} f - Q_s (Q_t f)|; grid-resolution sized on dense samples of
    a length space, not asserted otherwise."""
    lhs = hopf_lax(space, f, s + t, p).value
    rhs = hopf_lax(space, hopf_lax(space, f, t, p).value, s, p).value
    return float(np.abs(lhs - rhs).max())


def evolution_gap(space: MetricMeasureSpace, f, s: float, p: float) -> float:
    """min over x of f - Q_{-s}(Q_s f); nonnegative up to rounding."""
    fwd = hopf_lax(space, f, s, p).value
    back = hopf_lax_negative(space, fwd, -s, p).value
    return float((np.asarray(f, dtype=float) - back).min())


def hoelder_residual(d_xy: float, d_xz: float, d_zy: float, t: float, p: float) -> float:
    """Slack of d(x,y)^p <= d(x,z)^p / t^(p-1) + d(z,y)^p / (1-t)^(p-1)."""
    return d_xz ** p / t ** (p - 1.0) + d_zy ** p / (1.0 - t) ** (p - 1.0) - d_xy ** p


def time_derivative_check(space: MetricMeasureSpace, f, idx: int, t: float, p: float,
                          h: Optional[float] = None) -> Dict[str, float]:
    """One-sided finite differences of t -> Q_t f(x) against the distance
    progressed law -(p-1) D(+/-)^p / (p t^p)."""
    if h is None:
        h = t / 16.0
    f = np.asarray(f, dtype=float)
    q0 = hopf_lax_at(space, f, t, p, idx)
    qm = hopf_lax_at(space, f, t - h, p, idx)
    qp = hopf_lax_at(space, f, t + h, p, idx)
    ev = hopf_lax(space, f, t, p)
    pred = lambda D: -(p - 1.0) * D ** p / (p * t ** p)
    return {
        "left": (q0 - qm) / h,
        "right": (qp - q0) / h,
        "predicted_left": pred(float(ev.D_minus[idx])),
        "predicted_right": pred(float(ev.D_plus[idx])),
    }


# ---------------------------------------------------------------------------
# interpolating potential families


@dataclass(frozen=True)
class PotentialFamily:
    """phi_t and its time-reversed companion on a grid, with the distance
    progressed brackets needed for speeds."""

    t_grid: np.ndarray     # (T,)
    p: float
    phi: np.ndarray        # (T, n) forward interpolating potential
    phibar: np.ndarray     # (T, n) time-reversed potential
    D_fwd_plus: np.ndarray   # (T, n) D+ of -phi at time t (nan at t = 0)
    D_fwd_minus: np.ndarray
    D_bwd_plus: np.ndarray   # (T, n) D+ of -phi_c at time 1-t (nan at t = 1)
    D_bwd_minus: np.ndarray

    def k_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[k] - t) > 1e-12:
            raise KeyError(f"time {t} not on the family grid")
        return k


def c_concavity_gap(space: MetricMeasureSpace, pot: PotentialField) -> float:
    from .transport import c_transform

    return float(np.abs(c_transform(space, pot.phi_c, pot.p) - pot.phi).max())


def interpolating_potentials(space: MetricMeasureSpace, pot: PotentialField,
                             t_grid, with_reversed: bool = True) -> PotentialFamily:
    """Families phi_t = -Q_t(-phi) and phibar_t = Q_{1-t}(-phi_c) over a grid.

    Requires a c-concave pair (double-transform fixed point); endpoints
    reproduce phi and -phi_c exactly.  ``with_reversed=False`` skips the
    time-reversed family (left as nan) when only the forward flow is needed.
    """
    gap = c_concavity_gap(space, pot)
    if gap > CCONCAVE_TOL:
        raise ValueError(f"potential is not c-concave: round-trip gap {gap:.3e}")
    t_grid = np.asarray(sorted(set(float(t) for t in t_grid)))
    n = space.n
    T = len(t_grid)
    p = pot.p
    phi = np.empty((T, n))
    phibar = np.empty((T, n))
    Dfp = np.full((T, n), np.nan)
    Dfm = np.full((T, n), np.nan)
    Dbp = np.full((T, n), np.nan)
    Dbm = np.full((T, n), np.nan)
    Dp = space.D ** p
    for k, t in enumerate(t_grid):
        if t == 0.0:
            phi[k] = pot.phi
            Dfp[k] = Dfm[k] = 0.0
        else:
            ev = hopf_lax(space, -pot.phi, t, p, Dp=Dp)
            phi[k] = -ev.value
            Dfp[k], Dfm[k] = ev.D_plus, ev.D_minus
        if not with_reversed:
            phibar[k] = np.nan
        elif t == 1.0:
            phibar[k] = -pot.phi_c
            Dbp[k] = Dbm[k] = 0.0
        else:
            ev = hopf_lax(space, -pot.phi_c, 1.0 - t, p, Dp=Dp)
            phibar[k] = ev.value
            Dbp[k], Dbm[k] = ev.D_plus, ev.D_minus
    return PotentialFamily(t_grid=t_grid, p=p, phi=phi, phibar=phibar,
                           D_fwd_plus=Dfp, D_fwd_minus=Dfm,
                           D_bwd_plus=Dbp, D_bwd_minus=Dbm)


@dataclass(frozen=True)
class SpeedProfile:
    """Characteristic speeds ell(+/-) and their reversed companions per (t, x)."""

    t_grid: np.ndarray
    p: float
    ell_plus: np.ndarray     # (T, n); nan where undefined (t = 0)
    ell_minus: np.ndarray
    ellbar_plus: np.ndarray  # nan at t = 1
    ellbar_minus: np.ndarray
    well_defined: np.ndarray  # (T, n) bool: ell+ == ell- within tolerance
    tol: float

    def ell(self) -> np.ndarray:
        """Common speed where well defined, nan elsewhere."""
        e = 0.5 * (self.ell_plus + self.ell_minus)
        return np.where(self.well_defined, e, np.nan)


def speeds(family: PotentialFamily, tol: float = 1e-8) -> SpeedProfile:
    """ell(+/-) = D(+/-) of -phi over t, ellbar from -phi_c over 1-t."""
    t = family.t_grid[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ep = np.where(t > 0, family.D_fwd_plus / t, np.nan)
        em = np.where(t > 0, family.D_fwd_minus / t, np.nan)
        ebp = np.where(t < 1, family.D_bwd_plus / (1.0 - t), np.nan)
        ebm = np.where(t < 1, family.D_bwd_minus / (1.0 - t), np.nan)
    ok = np.isfinite(ep) & np.isfinite(em) & (np.abs(ep - em) <= tol * (1.0 + np.abs(ep)))
    return SpeedProfile(t_grid=family.t_grid, p=family.p, ell_plus=ep, ell_minus=em,
                        ellbar_plus=ebp, ellbar_minus=ebm, well_defined=ok, tol=tol)


def energy_bound_margins(profile: SpeedProfile):
    """Finite-difference margins of the energy derivative bounds:
    d/dt (ell^p/p) >= -ell^p/t and d/dt (ellbar^p/p) <= ellbar^p/(1-t),
    evaluated between consecutive well-defined grid times per point."""
    t, p = profile.t_grid, profile.p
    ell = profile.ell()
    ebar = np.where(np.isfinite(profile.ellbar_plus) & np.isfinite(profile.ellbar_minus)
                    & (np.abs(profile.ellbar_plus - profile.ellbar_minus)
                       <= profile.tol * (1.0 + np.abs(profile.ellbar_plus))),
                    0.5 * (profile.ellbar_plus + profile.ellbar_minus), np.nan)
    lower, upper = [], []
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        mid = 0.5 * (t[k] + t[k + 1])
        d_fwd = (ell[k + 1] ** p - ell[k] ** p) / (p * dt)
        ref = 0.5 * (ell[k] ** p + ell[k + 1] ** p)
        lower.append(d_fwd + ref / mid)             # should be >= 0 (up to tol)
        d_bwd = (ebar[k + 1] ** p - ebar[k] ** p) / (p * dt)
        refb = 0.5 * (ebar[k] ** p + ebar[k + 1] ** p)
        upper.append(refb / (1.0 - mid) - d_bwd)    # should be >= 0
    return np.array(lower), np.array(upper)


@dataclass(frozen=True)
class PropagatedPotential:
    """Phi_s^t = phi_t + (t-s) ell_t^p / p on the grid, with the reversed
    version and finite-difference time derivatives."""

    s: float
    t_grid: np.ndarray
    p: float
    Phi: np.ndarray        # (T, n); nan where the speed is undefined
    Phibar: np.ndarray
    dPhi_dt: np.ndarray    # centered differences, nan at the ends

    def at(self, t: float, idx) -> float:
        k = int(np.argmin(np.abs(self.t_grid - t)))
        return self.Phi[k, idx]


def propagate_potential(family: PotentialFamily, profile: SpeedProfile,
                        s: float) -> PropagatedPotential:
    t = family.t_grid[:, None]
    p = family.p
    ell = profile.ell()
    ebar = np.where(
        np.isfinite(profile.ellbar_plus) & np.isfinite(profile.ellbar_minus)
        & (np.abs(profile.ellbar_plus - profile.ellbar_minus)
           <= profile.tol * (1.0 + np.abs(profile.ellbar_plus))),
        0.5 * (profile.ellbar_plus + profile.ellbar_minus), np.nan)
    Phi = family.phi + (t - s) * ell ** p / p
    Phibar = family.phibar + (t - s) * ebar ** p / p
    dPhi = np.full_like(Phi, np.nan)
    if len(family.t_grid) >= 3:
        dt_f = family.t_grid[2:] - family.t_grid[1:-1]
        dt_b = family.t_grid[1:-1] - family.t_grid[:-2]
        dPhi[1:-1] = (Phi[2:] - Phi[:-2]) / (dt_f + dt_b)[:, None]
    return PropagatedPotential(s=s, t_grid=family.t_grid, p=p, Phi=Phi,
                               Phibar=Phibar, dPhi_dt=dPhi)


def propagation_bound_margins(prop: PropagatedPotential, profile: SpeedProfile,
                              mask: Optional[np.ndarray] = None,
                              kink_tol: float = 1e-6):
    """Margins of the one-sided derivative bounds for Phi_s^t on points where
    the flow is transported: lower finite difference >= (s/t) ell_t^p for
    t >= s, upper <= (s/t) ell_t^p for t <= s.  ``mask`` is a (T, n) boolean
    selection (default: everywhere the speed is well defined).

    Windows containing a kink (left and right differences disagree beyond
    kink_tol, e.g. a speed shock at a neighboring time or the flow leaving
    the sampled domain) are skipped and counted; the bounds hold at
    differentiability points only.
    """
    t = prop.t_grid
    s, p = prop.s, prop.p
    ell = profile.ell()
    if mask is None:
        mask = profile.well_defined
    margins = []
    skipped = 0
    for k in range(1, len(t) - 1):
        sel = mask[k]
        if not sel.any():
            continue
        bound = (s / t[k]) * ell[k, sel] ** p
        fd_left = (prop.Phi[k, sel] - prop.Phi[k - 1, sel]) / (t[k] - t[k - 1])
        fd_right = (prop.Phi[k + 1, sel] - prop.Phi[k, sel]) / (t[k + 1] - t[k])
        lower_fd = np.minimum(fd_left, fd_right)
        upper_fd = np.maximum(fd_left, fd_right)
        m = lower_fd - bound if t[k] >= s else bound - upper_fd
        ok = np.isfinite(m) & (np.abs(fd_left - fd_right) <= kink_tol * (1.0 + np.abs(bound)))
        skipped += int((~ok).sum())
        margins.append(m[ok])
    out = np.concatenate(margins) if margins else np.array([])
    return out, skipped


# ---------------------------------------------------------------------------
# checks along dynamical plans


def affinity_residual(space: MetricMeasureSpace, nu: DynamicalPlan,
                      family: PotentialFamily, pot: PotentialField) -> float:
    """Residual of the characteristic affinity phi_t(g_t) = (1-t) l^p/p - phi_c(g_1)
    and of the two-time difference phi_s(g_s) - phi_r(g_r) = (r-s) l^p/p."""
    p = family.p
    lengths = nu.lengths
    idx_t = {t: evaluation_points(space, nu, float(t)) for t in family.t_grid}
    end_idx = idx_t[family.t_grid[-1]] if family.t_grid[-1] == 1.0 else evaluation_points(space, nu, 1.0)
    worst = 0.0
    vals = {}
    for k, t in enumerate(family.t_grid):
        ix = idx_t[t]
        v = family.phi[k, ix]
        vals[k] = v
        target = (1.0 - t) * lengths ** p / p - pot.phi_c[end_idx]
        worst = max(worst, float(np.abs(v - target).max()))
    for k1 in range(len(family.t_grid)):
        for k2 in range(k1 + 1, len(family.t_grid)):
            s_, r_ = family.t_grid[k1], family.t_grid[k2]
            diff = vals[k1] - vals[k2]
            worst = max(worst, float(np.abs(diff - (r_ - s_) * lengths ** p / p).max()))
    return worst


def transported_equality_gap(space: MetricMeasureSpace, nu: DynamicalPlan,
                             family: PotentialFamily) -> float:
    """max |phi_t - phibar_t| on transported points at interior grid times."""
    worst = 0.0
    for k, t in enumerate(family.t_grid):
        if not 0.0 < t < 1.0:
            continue
        ix = evaluation_points(space, nu, float(t))
        worst = max(worst, float(np.abs(family.phi[k, ix] - family.phibar[k, ix]).max()))
    return worst


def midpoint_certificate(space: MetricMeasureSpace, pot: PotentialField,
                         family: PotentialFamily, x: int, t: float) -> Dict[str, float]:
    """At a point where the forward and reverse transforms agree, exhibit the
    (y, z) pair realizing both infima and report how far x is from being the
    exact t-intermediate point between them."""
    p = pot.p
    row_f = space.D[x] ** p / (p * t ** (p - 1.0)) - pot.phi
    y = int(np.argmin(row_f))
    row_b = space.D[x] ** p / (p * (1.0 - t) ** (p - 1.0)) - pot.phi_c
    z = int(np.argmin(row_b))
    condition = abs(row_f[y] - (pot.phi_c[z] - space.D[x, z] ** p / (p * (1.0 - t) ** (p - 1.0))))
    d_yz = space.D[y, z]
    return {
        "condition_residual": float(condition),
        "defect_y": float(abs(d_yz - space.D[x, y] / t)),
        "defect_z": float(abs(d_yz - space.D[x, z] / (1.0 - t))),
        "y": y, "z": z,
    }


# ---------------------------------------------------------------------------
# second and third order diagnostics


@dataclass(frozen=True)
class SecondOrderDiagnostics:
    """Per sampled time: upper/lower second Peano derivatives of the potential
    along a characteristic and one-sided energy derivatives, reported as
    intervals."""

    t: np.ndarray
    q_plus: np.ndarray
    q_minus: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    z: np.ndarray          # common value where the intervals collapse, else nan


def second_order_diagnostics(space: MetricMeasureSpace, pot: PotentialField,
                             point_idx: np.ndarray, t_samples: np.ndarray,
                             h: float = 1e-3,
                             collapse_tol: float = 1e-6) -> SecondOrderDiagnostics:
    """Peano ladder estimates at x = gamma_t for each sampled t.

    q(+/-) are max/min of h(eps)/eps^2 over eps in {h, h/2, h/4, h/8} (both
    signs), with the exact first derivative (p-1) ell_t^p / p from the argmin
    bracket; r(+/-) are one-sided differences of the energy.
    """
    p = pot.p
    ladder = np.array([h, h / 2, h / 4, h / 8])
    qp, qm, rp, rm, zz = [], [], [], [], []
    for x, t in zip(point_idx, t_samples):
        x = int(x)
        ev = hopf_lax(space, -pot.phi, t, p)
        ell_t = 0.5 * (ev.D_plus[x] + ev.D_minus[x]) / t
        deriv = (p - 1.0) * ell_t ** p / p
        phi_t = -ev.value[x]
        ratios = []
        for eps in np.concatenate([ladder, -ladder]):
            phi_e = -hopf_lax_at(space, -pot.phi, t + eps, p, x)
            ratios.append(2.0 * (phi_e - phi_t - eps * deriv) / eps ** 2)
        ratios = np.array(ratios)
        qp.append(ratios.max())
        qm.append(ratios.min())
        # one-sided energy derivatives from the smallest ladder step
        eps = ladder[-1]
        evp = hopf_lax(space, -pot.phi, t + eps, p)
        evm = hopf_lax(space, -pot.phi, t - eps, p)
        e_p = (0.5 * (evp.D_plus[x] + evp.D_minus[x]) / (t + eps)) ** p
        e_m = (0.5 * (evm.D_plus[x] + evm.D_minus[x]) / (t - eps)) ** p
        e_0 = ell_t ** p
        r_right = (p - 1.0) * (e_p - e_0) / (p * eps)
        r_left = (p - 1.0) * (e_0 - e_m) / (p * eps)
        rp.append(max(r_left, r_right))
        rm.append(min(r_left, r_right))
        zz.append(0.5 * (qp[-1] + qm[-1])
                  if abs(qp[-1] - qm[-1]) <= collapse_tol * (1.0 + abs(qp[-1]))
                  else np.nan)
    return SecondOrderDiagnostics(t=np.asarray(t_samples), q_plus=np.array(qp),
                                  q_minus=np.array(qm), r_plus=np.array(rp),
                                  r_minus=np.array(rm), z=np.array(zz))


def third_order_check(t_samples, z, p: float, ell: float) -> Dict[str, float]:
    """Margins of the third-order bounds for z(t) = second time derivative of
    the potential along a characteristic:

    * geometric-mean form: (z(t)-z(s))/(t-s) >= sqrt((s/t)(1-t)/(1-s)) |z(s)||z(t)| / ((p-1) ell^p)
    * ODE form: z'(t) >= z(t)^2 / ((p-1) ell^p), z' by centered differences.
    """
    t = np.asarray(t_samples, dtype=float)
    z = np.asarray(z, dtype=float)
    c = (p - 1.0) * ell ** p
    geo = np.inf
    for i in range(len(t)):
        for j in range(i + 1, len(t)):
            s_, t_ = t[i], t[j]
            slope = (z[j] - z[i]) / (t_ - s_)
            rhs = math.sqrt((s_ / t_) * (1.0 - t_) / (1.0 - s_)) * abs(z[i]) * abs(z[j]) / c
            geo = min(geo, slope - rhs)
    ode = np.inf
    worst_abs = 0.0
    if len(t) >= 3:
        zp = (z[2:] - z[:-2]) / (t[2:] - t[:-2])
        m = zp - z[1:-1] ** 2 / c
        ode = float(m.min())
        worst_abs = float(np.abs(m).max())
    return {"geomean_margin": float(geo), "ode_margin": ode, "ode_margin_abs_max": worst_abs}
