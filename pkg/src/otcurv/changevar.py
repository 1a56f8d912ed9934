"""Core verification engine: per-geodesic ledgers, comparison of the two
conditional disintegrations, the change-of-variables formula along
transport geodesics, extraction of the temporal log-speed derivative z, and
the concave-times-CD factorization of the inverse interpolant density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cdcheck import CDReport, check_density_1d, density_profile
from .distortion import tau_array
from .hopflax import PotentialFamily, SpeedProfile, propagate_potential, speeds
from .mms_core import MetricMeasureSpace
from .needle import (
    RayDecomposition,
    build_transport_structure,
    disintegrate,
    extract_rays,
    signed_distance,
)
from .transport import DynamicalPlan, evaluation_points, interpolate_density


@dataclass
class GeodesicLedgerEntry:
    """Everything needed to verify one transport geodesic."""

    index: int
    ell: float
    t_grid: np.ndarray
    point_idx: np.ndarray          # binned space point of gamma_t per grid time
    rho: np.ndarray                # interpolant density along the geodesic
    h: Dict[float, np.ndarray] = field(default_factory=dict)   # s -> h_s(t), h_s(s)=1
    a_level: Dict[float, float] = field(default_factory=dict)  # s -> potential level
    skipped_h: int = 0


@dataclass
class ZeroLengthEntry:
    index: int
    rho: np.ndarray
    constancy_residual: float


@dataclass
class GeodesicLedger:
    entries: List[GeodesicLedgerEntry]
    zero_entries: List[ZeroLengthEntry]
    excluded: List[Tuple[int, str]]
    excluded_mass: float
    t_grid: np.ndarray
    s_list: List[float]
    p: float
    profile: SpeedProfile
    family: PotentialFamily
    # (s -> list of (representative level, u field, ray decomposition))
    needle_cache: Dict[float, list] = field(default_factory=dict)

    def decomposition_for(self, s: float, a: float, tol: float = 1e-6) -> RayDecomposition:
        for a_rep, _u, deco in self.needle_cache.get(s, []):
            if abs(a_rep - a) <= tol * (1.0 + abs(a_rep)):
                return deco
        raise KeyError(f"no needle decomposition cached for s={s}, a={a}")


def _group_by_value(values: np.ndarray, tol: float) -> List[np.ndarray]:
    order = np.argsort(values)
    groups = []
    current = [order[0]]
    for k in order[1:]:
        if values[k] - values[current[-1]] <= tol:
            current.append(k)
        else:
            groups.append(np.array(current))
            current = [k]
    groups.append(np.array(current))
    return groups


def _ray_density_at(ray, point_idx: int) -> float:
    """Mass per unit arclength of the ray at one of its points."""
    k = np.flatnonzero(ray.indices == point_idx)
    if len(k) == 0:
        raise KeyError(point_idx)
    return float(ray.q * ray.h_points[int(k[0])])


def build_ledger(space: MetricMeasureSpace, nu: DynamicalPlan,
                 family: PotentialFamily, s_list: Sequence[float],
                 length_bounds: Tuple[float, float] = (1e-9, math.inf),
                 min_speed_fraction: float = 0.95,
                 needle_bins: int = 32,
                 level_tol: float = 1e-9) -> GeodesicLedger:
    """Assemble per-geodesic data, excluding geodesics that fail the
    regularity filters (length bounds, positive density, well-defined speeds
    on enough of the grid); zero-length geodesics go to their own list with a
    density-constancy check, and the excluded mass fraction is recorded."""
    t_grid = family.t_grid
    m = len(nu.geodesics)
    profile = speeds(family)
    idx = np.empty((len(t_grid), m), dtype=int)
    rho = np.empty((len(t_grid), m))
    for k, t in enumerate(t_grid):
        idx[k] = evaluation_points(space, nu, float(t))
        rho_field = interpolate_density(space, nu, float(t)).density(space)
        rho[k] = rho_field[idx[k]]

    lengths = nu.lengths
    interior = (t_grid > 0) & (t_grid < 1)
    entries, zero_entries, excluded = [], [], []
    excluded_mass = 0.0
    for g in range(m):
        if lengths[g] <= length_bounds[0]:
            res = float(np.abs(rho[:, g] - rho[0, g]).max() / max(rho[0, g], 1e-300))
            zero_entries.append(ZeroLengthEntry(index=g, rho=rho[:, g].copy(),
                                                constancy_residual=res))
            continue
        if lengths[g] > length_bounds[1]:
            excluded.append((g, "length"))
            excluded_mass += nu.weights[g]
            continue
        if (rho[:, g] <= 0).any():
            excluded.append((g, "density"))
            excluded_mass += nu.weights[g]
            continue
        ok = profile.well_defined[interior, idx[interior, g]]
        if ok.mean() < min_speed_fraction:
            excluded.append((g, "speed"))
            excluded_mass += nu.weights[g]
            continue
        entries.append(GeodesicLedgerEntry(
            index=g, ell=float(lengths[g]), t_grid=t_grid,
            point_idx=idx[:, g].copy(), rho=rho[:, g].copy(),
        ))

    if not entries and not zero_entries:
        raise ValueError("all geodesics were excluded by the regularity filters")

    ledger = GeodesicLedger(entries=entries, zero_entries=zero_entries,
                            excluded=excluded, excluded_mass=float(excluded_mass),
                            t_grid=t_grid, s_list=list(s_list), p=family.p,
                            profile=profile, family=family)

    for s in s_list:
        k_s = family.k_of(s)
        a_vals = np.array([family.phi[k_s, e.point_idx[k_s]] for e in entries])
        scale = 1.0 + np.abs(a_vals).max() if len(a_vals) else 1.0
        ledger.needle_cache[s] = []
        if not len(a_vals):
            continue
        for group in _group_by_value(a_vals, level_tol * scale):
            a_rep = float(np.mean(a_vals[group]))
            f = family.phi[k_s] - a_rep
            zero_tol = level_tol * scale + float(np.abs(a_vals[group] - a_rep).max())
            deco = None
            try:
                u = signed_distance(space, f, zero_tol, check=False).values
            except ValueError:
                for e_k in group:
                    entries[e_k].skipped_h += len(t_grid)
                continue
            # fields differing from a built one by a constant share its rays
            for a_prev, u_prev, deco_prev in ledger.needle_cache[s]:
                diff = u - u_prev
                if diff.max() - diff.min() <= 1e-9:
                    deco = deco_prev
                    break
            if deco is None:
                signed_distance(space, f, zero_tol, check=True)
                structure = build_transport_structure(space, u)
                deco = disintegrate(space, extract_rays(space, structure), n_bins=needle_bins)
            ledger.needle_cache[s].append((a_rep, u, deco))
            for e_k in group:
                entry = entries[e_k]
                entry.a_level[s] = a_rep
                ray = deco.ray_containing(int(entry.point_idx[k_s]))
                if ray is None:
                    entry.skipped_h += len(t_grid)
                    continue
                base = _ray_density_at(ray, int(entry.point_idx[k_s]))
                hvals = np.full(len(t_grid), np.nan)
                for k in range(len(t_grid)):
                    try:
                        hvals[k] = _ray_density_at(ray, int(entry.point_idx[k])) / base
                    except KeyError:
                        entry.skipped_h += 1
                entry.h[s] = hvals

    return ledger


def richardson_rate(t_grid: np.ndarray, values: np.ndarray, k: int,
                    agree_tol: float):
    """Derivative of values(t) at grid index k with a two-step agreement test.

    Tries the centered Richardson stencil first; when the two step sizes
    disagree (a kink inside the window, e.g. the flow leaving the sampled
    domain on one side), falls back to whichever one-sided pair is
    self-consistent.  Returns (rate, ok); ok=False means no stencil agreed.
    """
    T = len(t_grid)

    def pair(d1, d2, extrap):
        if not (np.isfinite(d1) and np.isfinite(d2)):
            return math.nan, False
        return float(extrap(d1, d2)), bool(abs(d1 - d2) <= agree_tol * (1.0 + abs(d1)))

    candidates = []
    if k - 2 >= 0 and k + 2 < T:
        d1 = (values[k + 1] - values[k - 1]) / (t_grid[k + 1] - t_grid[k - 1])
        d2 = (values[k + 2] - values[k - 2]) / (t_grid[k + 2] - t_grid[k - 2])
        candidates.append(pair(d1, d2, lambda a, b: (4.0 * a - b) / 3.0))
    elif k - 1 >= 0 and k + 1 < T:
        d1 = (values[k + 1] - values[k - 1]) / (t_grid[k + 1] - t_grid[k - 1])
        candidates.append((float(d1), True))
    if k - 2 >= 0:
        d1 = (values[k] - values[k - 1]) / (t_grid[k] - t_grid[k - 1])
        d2 = (values[k] - values[k - 2]) / (t_grid[k] - t_grid[k - 2])
        candidates.append(pair(d1, d2, lambda a, b: 2.0 * a - b))
    if k + 2 < T:
        d1 = (values[k + 1] - values[k]) / (t_grid[k + 1] - t_grid[k])
        d2 = (values[k + 2] - values[k]) / (t_grid[k + 2] - t_grid[k])
        candidates.append(pair(d1, d2, lambda a, b: 2.0 * a - b))
    for rate, ok in candidates:
        if ok:
            return rate, True
    return math.nan, False


def partition_compare(space: MetricMeasureSpace, ledger: GeodesicLedger,
                      s: float, a: float, t_list: Sequence[float],
                      shell_tol: float = 1e-9,
                      agree_tol: float = 1e-3) -> dict:
    """Compare the two conditional measures living on the time-t slice of the
    level-(a, s) geodesics: the time disintegration of the needle measure
    against the level-value disintegration of the time-t slice.  Their
    pointwise ratio must equal the time derivative of the propagated
    potential."""
    family = ledger.family
    deco = ledger.decomposition_for(s, a)
    group = [e for e in ledger.entries
             if s in e.a_level and abs(e.a_level[s] - a) <= 1e-6 * (1.0 + abs(a))]
    if not group:
        raise ValueError(f"no retained geodesics at level a={a}, s={s}")
    prop = propagate_potential(family, ledger.profile, s)
    all_entries = ledger.entries
    per_t = []
    ratio_all, dphi_all = [], []
    skipped = 0
    for t in t_list:
        k_t = family.k_of(t)
        # level-value widths over the whole time-t slice
        pts_slice = np.array([e.point_idx[k_t] for e in all_entries])
        v = prop.Phi[k_t, pts_slice]
        order = np.argsort(v)
        sv = v[order]
        splits = np.flatnonzero(np.diff(sv) > shell_tol * (1.0 + np.abs(sv[:-1])))
        shell_vals = [sv[0]] + [sv[k + 1] for k in splits]
        shell_of = np.zeros(len(sv), dtype=int)
        for pos, k in enumerate(splits):
            shell_of[k + 1:] = pos + 1
        shell_vals = np.array(shell_vals)
        if len(shell_vals) < 2:
            raise ValueError("need at least two potential shells to measure widths")
        mids = 0.5 * (shell_vals[1:] + shell_vals[:-1])
        lo = shell_vals[0] - 0.5 * (shell_vals[1] - shell_vals[0])
        hi = shell_vals[-1] + 0.5 * (shell_vals[-1] - shell_vals[-2])
        edges = np.concatenate([[lo], mids, [hi]])
        widths = np.diff(edges)
        width_of_point = {}
        for pos, pt in enumerate(pts_slice[order]):
            width_of_point[int(pt)] = widths[shell_of[pos]]

        res_t = []
        for e in group:
            x = int(e.point_idx[k_t])
            ray = deco.ray_containing(x)
            if ray is None:
                skipped += 1
                continue
            try:
                dens_arc = _ray_density_at(ray, x)
            except KeyError:
                skipped += 1
                continue
            l1 = dens_arc * e.ell
            lq = space.weights[x] / width_of_point[x]
            ratio = l1 / lq
            dphi, ok = richardson_rate(family.t_grid, prop.Phi[:, x], k_t, agree_tol)
            if not ok or math.isnan(dphi):
                skipped += 1
                continue
            ratio_all.append(ratio)
            dphi_all.append(dphi)
            res_t.append(abs(ratio - dphi) / max(abs(dphi), 1e-300))
        per_t.append((float(t), max(res_t) if res_t else math.nan, len(res_t)))
    finite = [r for _, r, _ in per_t if not math.isnan(r)]
    return {
        "s": s, "a": a, "per_t": per_t,
        "max_residual": max(finite) if finite else math.nan,
        "skipped": skipped,
        "ratios": np.array(ratio_all),
        "dphi": np.array(dphi_all),
    }


def change_of_variables_residual(space: MetricMeasureSpace, ledger: GeodesicLedger,
                                 s: float, t: float,
                                 agree_tol: float = 1e-3) -> dict:
    """Residual of rho_t/rho_s = (dPhi_s/dtau at t) / ell^p / h_s(t) per entry."""
    family = ledger.family
    p = ledger.p
    k_s = family.k_of(s)
    k_t = family.k_of(t)
    prop = propagate_potential(family, ledger.profile, s)
    residuals, skipped, used = [], 0, 0
    for e in ledger.entries:
        if s not in e.h or np.isnan(e.h[s][k_t]):
            skipped += 1
            continue
        x = int(e.point_idx[k_t])
        dphi, ok = richardson_rate(family.t_grid, prop.Phi[:, x], k_t, agree_tol)
        if not ok or math.isnan(dphi):
            skipped += 1
            continue
        lhs = e.rho[k_t] / e.rho[k_s]
        rhs = dphi / e.ell ** p / e.h[s][k_t]
        residuals.append(abs(lhs - rhs) / abs(lhs))
        used += 1
    return {
        "s": s, "t": t,
        "max_residual": max(residuals) if residuals else math.nan,
        "residuals": np.array(residuals),
        "n_used": used, "n_skipped": skipped,
        "skipped_fraction": skipped / max(used + skipped, 1),
    }


def extract_z(entry: GeodesicLedgerEntry, s_values: Optional[Sequence[float]] = None,
              tol: float = 1e-8) -> dict:
    """z(t) from the rearranged change-of-variables identity
    z_s(t) = ((rho(t)/rho(s)) h_s(t) - 1) / (t - s); the family {z_s} must agree
    across s, and the median over s is returned."""
    if s_values is None:
        s_values = sorted(entry.h.keys())
    if len(s_values) < 2:
        raise ValueError("need at least two s values for a consistency check")
    t = entry.t_grid
    interior = (t > 0) & (t < 1)
    z_rows = []
    for s in s_values:
        k_s = int(np.argmin(np.abs(t - s)))
        h = entry.h[s]
        with np.errstate(invalid="ignore", divide="ignore"):
            zs = ((entry.rho / entry.rho[k_s]) * h - 1.0) / (t - t[k_s])
        zs[k_s] = np.nan
        z_rows.append(zs)
    Z = np.vstack(z_rows)[:, interior]
    z = np.nanmedian(Z, axis=0)
    with np.errstate(invalid="ignore"):
        spread = np.nanmax(np.abs(Z - z[None, :]))
    if spread > 10.0 * tol:
        raise ValueError(
            f"z estimates disagree across s by {spread:.3e} (> 10 tol): bad ledger entry"
        )
    return {"t": t[interior], "z": z, "spread": float(spread)}


@dataclass
class LYFactorization:
    """Concave-times-CD split of 1/rho along one geodesic."""

    t: np.ndarray
    L: np.ndarray
    Y: np.ndarray
    K0: float
    concavity_margin: float     # min over interior of -(second difference)
    concavity_scale: float      # max |L|, for tolerance scaling
    product_residual: float     # max |L Y rho - 1|
    y_report: CDReport


def ly_factorize(entry: GeodesicLedgerEntry, z_t: np.ndarray, z: np.ndarray,
                 K: float, N: float, p: float, r0: float = 0.5) -> LYFactorization:
    """L(t) = exp(-int_{r0}^t z), Y = 1/(rho L); L must come out concave and Y
    a CD(K ell^2, N) density.  z here is the log-speed derivative from
    ``extract_z`` (the rearranged-identity normalization)."""
    t = np.asarray(z_t, dtype=float)
    z = np.asarray(z, dtype=float)
    mask = np.isin(entry.t_grid, t)
    rho = entry.rho[mask]
    # cumulative trapezoid of z, anchored at the grid point nearest r0
    integ = np.concatenate([[0.0], np.cumsum(0.5 * (z[1:] + z[:-1]) * np.diff(t))])
    k0 = int(np.argmin(np.abs(t - r0)))
    L = np.exp(-(integ - integ[k0]))
    if not np.isfinite(L).all() or (L <= 0).any():
        raise ValueError("longitudinal factor lost positivity: corrupted z")
    Y = 1.0 / (rho * L)
    d2 = L[2:] - 2.0 * L[1:-1] + L[:-2]
    margin = float(-(d2.max())) if len(d2) else 0.0
    prod = float(np.abs(L * Y * rho - 1.0).max())
    K0 = K * entry.ell ** 2
    y_rep = check_density_1d(density_profile(t, Y, K0, N), tol=1e-6)
    return LYFactorization(t=t, L=L, Y=Y, K0=K0, concavity_margin=margin,
                           concavity_scale=float(np.abs(L).max()),
                           product_residual=prod, y_report=y_rep)


def cd_chain_verify(entry: GeodesicLedgerEntry, K: float, N: float,
                    rho_end0: Optional[float] = None,
                    rho_end1: Optional[float] = None,
                    tol: float = 1e-9, endpoint_tol: float = 1e-6) -> CDReport:
    """Per-geodesic distorted concavity of rho^(-1/N) along the chain:

        rho(t_a)^(-1/N) >= tau^(a)(|t1-t0| ell) rho(t1)^(-1/N)
                           + tau^(1-a)(|t1-t0| ell) rho(t0)^(-1/N)

    over grid intermediates of (t0, t1); with endpoint densities supplied, the
    (0, 1) endpoint form is included, using the interior limit when it
    dominates the marginal density (upper semi-continuity), else the marginal.
    """
    t = entry.t_grid
    rho = entry.rho.copy()
    interior = np.flatnonzero((t > 0) & (t < 1))
    margins = []
    witness = None

    def chain_margins(ks, label_prefix=""):
        nonlocal witness
        k0, k1 = ks[0], ks[-1]
        theta = (t[k1] - t[k0]) * entry.ell
        for k in ks[1:-1]:
            alpha = (t[k] - t[k0]) / (t[k1] - t[k0])
            ta, ia = tau_array(K, N, alpha, theta)
            tb, ib = tau_array(K, N, 1.0 - alpha, theta)
            label = f"{label_prefix}alpha={alpha:.4g}"
            if ia or ib:
                margins.append((label, -math.inf))
                witness = {"alpha": float(alpha), "reason": "tau = +inf"}
                continue
            m = rho[k] ** (-1.0 / N) - (float(ta) * rho[k1] ** (-1.0 / N)
                                        + float(tb) * rho[k0] ** (-1.0 / N))
            margins.append((label, float(m)))
            if witness is None or (np.isfinite(m) and m < witness.get("margin", math.inf)):
                witness = {"alpha": float(alpha), "t0": float(t[k0]), "t1": float(t[k1]),
                           "margin": float(m)}

    chain_margins(interior)
    if rho_end0 is not None and rho_end1 is not None and t[0] == 0.0 and t[-1] == 1.0:
        lim0, lim1 = rho[interior[0]], rho[interior[-1]]
        r0 = lim0 if lim0 >= rho_end0 - endpoint_tol else rho_end0
        r1 = lim1 if lim1 >= rho_end1 - endpoint_tol else rho_end1
        rho[0], rho[-1] = r0, r1
        chain_margins(np.concatenate([[0], interior, [len(t) - 1]]), "end:")
    return CDReport("cd-chain", {"K": K, "N": N, "ell": entry.ell}, margins, tol, witness)
