"""Entropy functionals and curvature-dimension inequality checkers.

The 1-D density condition is tested in its sigma-comparison form (the
interpolation inequality for h^(1/(N-1)) with model-space weights), which is
the robust discretization of the distributional ODE; the log-convexity form
is kept as a cross-check for smooth profiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .distortion import sigma_array, tau_array
from .mms_core import MeasureOnSpace, MetricMeasureSpace
from .transport import DynamicalPlan, interpolate_density


@dataclass(frozen=True)
class EntropyValue:
    N: float
    value: float


@dataclass
class CDReport:
    """Outcome of one inequality check: margins, verdict, worst witness."""

    condition: str
    params: Dict
    margins: List            # list of (label, margin)
    tol: float
    witness: Optional[Dict] = None

    @property
    def min_margin(self) -> float:
        finite = [m for _, m in self.margins if np.isfinite(m)]
        if any(not np.isfinite(m) for _, m in self.margins):
            return -math.inf
        return min(finite) if finite else math.inf

    @property
    def verdict(self) -> str:
        if self.min_margin >= -self.tol:
            return "PASS"
        # a failing plan disproves the condition only when it is certified to
        # be the unique optimal plan; otherwise another plan might satisfy it
        if "plan_unique" in self.params and self.params["plan_unique"] is not True:
            return "plan-FAIL (inconclusive)"
        return "FAIL"

    def worst(self):
        return min(self.margins, key=lambda lm: lm[1])


def renyi_entropy(space: MetricMeasureSpace, mu: MeasureOnSpace, N: float) -> EntropyValue:
    """E_N(mu) = sum rho^(1 - 1/N) dm over the absolutely continuous part."""
    if N < 1.0:
        raise ValueError(f"need N >= 1, got {N}")
    pos = space.weights > 0
    rho = mu.weights[pos] / space.weights[pos]
    val = float((rho ** (1.0 - 1.0 / N) * space.weights[pos]).sum())
    return EntropyValue(N=N, value=val)


# ---------------------------------------------------------------------------
# one-dimensional densities


@dataclass(frozen=True)
class DensityProfile1D:
    """Sampled density on [0, L] with the curvature parameters it is tested at."""

    grid: np.ndarray
    h: np.ndarray
    K: float
    N: float

    def __post_init__(self):
        if (np.asarray(self.h) < 0).any():
            raise ValueError("density samples must be nonnegative")
        if len(self.grid) != len(self.h):
            raise ValueError("grid and samples must have equal length")


def density_profile(grid, h, K: float, N: float, normalize: bool = True) -> DensityProfile1D:
    grid = np.asarray(grid, dtype=float)
    h = np.asarray(h, dtype=float)
    if normalize:
        mass = np.trapezoid(h, grid)
        if mass <= 0:
            raise ValueError("cannot normalize a zero-mass profile")
        h = h / mass
    return DensityProfile1D(grid=grid, h=h, K=K, N=N)


def _triple_indices(m: int, per_gap: int = 48, per_pair: int = 8):
    """Deterministic sample of index triples i < k < j covering all scales."""
    triples = []
    gaps = sorted(set([2 ** e for e in range(1, int(math.log2(max(m - 1, 2))) + 1)] + [m - 1]))
    for g in gaps:
        if g < 2 or g > m - 1:
            continue
        starts = np.unique(np.linspace(0, m - 1 - g, min(per_gap, m - g), dtype=int))
        for i in starts:
            j = i + g
            ks = np.unique(np.linspace(i + 1, j - 1, min(per_pair, g - 1), dtype=int))
            for k in ks:
                triples.append((int(i), int(k), int(j)))
    return triples


def check_density_1d(profile: DensityProfile1D, tol: float = 1e-9) -> CDReport:
    """sigma-comparison form of the CD(K, N) density inequality on sampled triples.

    For N = 1 the condition degenerates to constancy (and K <= 0).
    """
    grid, h, K, N = profile.grid, profile.h, profile.K, profile.N
    params = {"K": K, "N": N, "bins": len(grid)}
    if N < 1.0:
        raise ValueError(f"need N >= 1, got {N}")
    if N == 1.0:
        scale = max(h.max(), 1e-300)
        margins = [("constancy", float(tol * scale - np.abs(h - h.mean()).max()))]
        if K > 0:
            margins.append(("K<=0", -math.inf))
        return CDReport("cd-density-1d", params, margins, tol * scale)
    g = h ** (1.0 / (N - 1.0))
    triples = _triple_indices(len(grid))
    i = np.array([t[0] for t in triples])
    k = np.array([t[1] for t in triples])
    j = np.array([t[2] for t in triples])
    theta = grid[j] - grid[i]
    s = (grid[k] - grid[i]) / theta
    s1, inf1 = sigma_array(K, N - 1.0, 1.0 - s, theta)
    s2, inf2 = sigma_array(K, N - 1.0, s, theta)
    rhs = np.where(inf1 | inf2, math.inf, s1 * g[i] + s2 * g[j])
    margins_arr = g[k] - rhs
    worst_pos = int(np.argmin(margins_arr))
    margins = [("sigma-form", float(margins_arr.min()))]
    witness = {"t0": float(grid[i[worst_pos]]), "t1": float(grid[j[worst_pos]]),
               "s": float(s[worst_pos]), "margin": float(margins_arr[worst_pos])}
    return CDReport("cd-density-1d", params, margins, tol, witness)


def check_kn_convexity(profile: DensityProfile1D, tol: float = 1e-6) -> CDReport:
    """(-log h)'' >= ((-log h)')^2 / (N-1) + K by interior finite differences."""
    grid, h, K, N = profile.grid, profile.h, profile.K, profile.N
    if (h <= 0).any():
        raise ValueError("log form needs h > 0 on the interior")
    g = -np.log(h)
    dp = grid[2:] - grid[1:-1]
    dm = grid[1:-1] - grid[:-2]
    gpp = 2.0 * ((g[2:] - g[1:-1]) / dp - (g[1:-1] - g[:-2]) / dm) / (dp + dm)
    gp = (g[2:] - g[:-2]) / (dp + dm)
    margins_arr = gpp - (gp ** 2 / (N - 1.0) + K)
    worst = int(np.argmin(margins_arr))
    witness = {"r": float(grid[1 + worst]), "margin": float(margins_arr[worst])}
    return CDReport("kn-convexity", {"K": K, "N": N}, [("log-form", float(margins_arr.min()))],
                    tol, witness)


# ---------------------------------------------------------------------------
# synthetic conditions on spaces


def check_cdp(space: MetricMeasureSpace, nu: DynamicalPlan,
              mu0: MeasureOnSpace, mu1: MeasureOnSpace,
              K: float, N: float, Nprime_list: Optional[Sequence[float]] = None,
              t_grid: Sequence[float] = (0.25, 0.5, 0.75),
              tol: float = 1e-9, plan_unique: Optional[bool] = None) -> CDReport:
    """Distorted entropy convexity along the plan's interpolation.

    margin(N', t) = E_N'(mu_t) - sum over plan atoms of the tau-weighted
    endpoint entropies; the definition quantifies over all N' >= N, checked
    on a finite ladder (default N, N+1, 2N, 10N).
    """
    if Nprime_list is None:
        Nprime_list = [N, N + 1.0, 2.0 * N, 10.0 * N]
    if any(Np < N for Np in Nprime_list):
        raise ValueError("N' ladder must sit above N")
    rho0 = mu0.density(space)[nu.rows]
    rho1 = mu1.density(space)[nu.cols]
    if (rho0 <= 0).any() or (rho1 <= 0).any():
        raise ValueError("marginal densities must be positive on the plan support")
    d = nu.lengths
    w = nu.weights
    margins = []
    witness = None
    for t in t_grid:
        mu_t = interpolate_density(space, nu, float(t))
        for Np in Nprime_list:
            lhs = renyi_entropy(space, mu_t, Np).value
            tau0, inf0 = tau_array(K, Np, 1.0 - float(t), d)
            tau1, inf1 = tau_array(K, Np, float(t), d)
            label = f"t={t:g},N'={Np:g}"
            if (inf0 & (w > 0)).any() or (inf1 & (w > 0)).any():
                margins.append((label, -math.inf))
                k = int(np.flatnonzero((inf0 | inf1) & (w > 0))[0])
                witness = {"t": float(t), "Nprime": float(Np), "atom": k,
                           "reason": "tau = +inf (pair beyond the K > 0 diameter bound)"}
                continue
            rhs = float((w * (tau0 * rho0 ** (-1.0 / Np) + tau1 * rho1 ** (-1.0 / Np))).sum())
            margins.append((label, lhs - rhs))
    report = CDReport("cd_p", {"K": K, "N": N, "p": nu.p, "Nprime": list(Nprime_list),
                               "plan_unique": plan_unique}, margins, tol)
    if witness is not None:
        report.witness = witness
    elif report.min_margin < -tol:
        lab, m = report.worst()
        report.witness = {"label": lab, "margin": m}
    return report


def local_density(space: MetricMeasureSpace, point_mass: np.ndarray,
                  centers: np.ndarray, window_factor: float = 2.5) -> np.ndarray:
    """Measure-ratio density estimate: mass within a window around each center
    divided by the reference mass of the same window."""
    est = np.empty(len(centers))
    for k, c in enumerate(centers):
        r = window_factor * space.local_spacing[c]
        ball = space.D[c] <= r
        mref = space.weights[ball].sum()
        est[k] = point_mass[ball].sum() / mref if mref > 0 else math.inf
    return est


def check_mcp(space: MetricMeasureSpace, A_idx, o_idx: int, K: float, N: float,
              t_grid: Sequence[float] = (0.25, 0.5),
              tol: float = 0.0, window_factor: float = 2.5) -> CDReport:
    """Measure contraction towards a point: the tau^N-weighted contraction of
    the normalized restriction to A must stay below 1/m(A) cell by cell."""
    A_idx = np.asarray(A_idx, dtype=int)
    mA = float(space.weights[A_idx].sum())
    if mA <= 0:
        raise ValueError("A must carry positive reference mass")
    d = space.D[A_idx, o_idx]
    if K > 0:
        bound = math.pi * math.sqrt(max(N - 1.0, 1e-300) / K)
        if d.max() > bound:
            raise ValueError(
                f"A reaches distance {d.max():.3g} from o, beyond the K>0 bound {bound:.3g}"
            )
    w0 = space.weights[A_idx] / mA
    margins = []
    witness = None
    for t in t_grid:
        tau_w, inf_mask = tau_array(K, N, 1.0 - float(t), d)
        if inf_mask.any():
            margins.append((f"t={t:g}", -math.inf))
            continue
        mass = w0 * tau_w ** N
        if space.coords is not None:
            pos = (1.0 - t) * space.coords[A_idx] + t * space.coords[o_idx]
            _, cells = space.kdtree().query(pos)
        else:
            cells = A_idx if t < 1.0 else np.full(len(A_idx), o_idx)
        binned = np.zeros(space.n)
        np.add.at(binned, cells, mass)
        centers = np.unique(cells)
        est = local_density(space, binned, centers, window_factor)
        m = 1.0 / mA - est
        kworst = int(np.argmin(m))
        margins.append((f"t={t:g}", float(m.min())))
        if witness is None or m.min() < witness["margin"]:
            witness = {"t": float(t), "cell": int(centers[kworst]), "margin": float(m.min())}
    return CDReport("mcp", {"K": K, "N": N, "mA": mA}, margins, tol, witness)


def check_density_ratio_bounds(t_grid, rho: np.ndarray, lengths: np.ndarray,
                               K: float, N: float, tol: float = 1e-9) -> CDReport:
    """Two-sided tau bounds for interpolant density ratios along geodesics:

        tau^(s/t)(d(g_0, g_t))^N  <=  rho_t / rho_s  <=  tau^((1-t)/(1-s))(d(g_s, g_1))^(-N)

    for 0 <= s <= t < 1.  ``rho`` has one row per geodesic over ``t_grid``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    lengths = np.asarray(lengths, dtype=float)
    margins = []
    witness = None
    for a in range(len(t_grid)):
        for b in range(a, len(t_grid)):
            s, t = t_grid[a], t_grid[b]
            if t >= 1.0:
                continue
            ratio = rho[:, b] / rho[:, a]
            lo_ratio = 1.0 if t == 0.0 else s / t
            lo, lo_inf = tau_array(K, N, lo_ratio, t * lengths)
            hi_ratio = (1.0 - t) / (1.0 - s)
            hi, hi_inf = tau_array(K, N, hi_ratio, (1.0 - s) * lengths)
            lower = np.where(lo_inf, math.inf, lo ** N)
            upper = np.where(hi_inf, 0.0, hi ** (-N))
            m_lo = ratio - lower
            m_hi = upper - ratio
            m = float(min(m_lo.min(), m_hi.min()))
            margins.append((f"s={s:g},t={t:g}", m))
            if witness is None or m < witness["margin"]:
                g = int(np.argmin(np.minimum(m_lo, m_hi)))
                witness = {"s": float(s), "t": float(t), "geodesic": g, "margin": m}
    return CDReport("density-ratio-bounds", {"K": K, "N": N}, margins, tol, witness)
