"""Transport structure of a 1-Lipschitz function: ordering, transport set,
branch points, rays, and the disintegration of the reference measure into
one-dimensional conditional densities.

The transport ordering is built from step-local tight pairs (a pair is a step
when u drops by the full distance, up to tolerance, and the distance is within
a few grid spacings) and then transitively closed.  Testing tightness on
arbitrarily distant pairs does not survive discretization: on a grid, far
pairs in nearly-aligned directions are tight to within any fixed additive
tolerance, which would mark essentially every point as a branch point.  Local
steps recover the continuum ray structure; genuine branching (e.g. at a
radial center) still shows up and is routed to the remainder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Dict, List, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .mms_core import MetricMeasureSpace

LIPSCHITZ_TOL = 1e-9
STEP_CAP_FACTOR = 2.5


@dataclass(frozen=True)
class SignedDistanceField:
    """dist(x, {f = 0}) sgn(f), with the discretized zero set."""

    values: np.ndarray
    zero_tol: float
    zero_set: np.ndarray          # indices
    globally_lipschitz: bool      # checked on all pairs, not just sign regions


def signed_distance(space: MetricMeasureSpace, f, zero_tol: float,
                    check: bool = True) -> SignedDistanceField:
    f = np.asarray(f, dtype=float)
    zero = np.flatnonzero(np.abs(f) <= zero_tol)
    if len(zero) == 0:
        raise ValueError(f"zero set is empty at tolerance {zero_tol}")
    dist = space.D[:, zero].min(axis=1)
    vals = dist * np.sign(f)
    vals[zero] = 0.0
    globally = False
    if check:
        # 1-Lipschitz is automatic on each sign region; check it and flag
        # whether the field is 1-Lipschitz across the zero set as well
        gap = np.abs(vals[:, None] - vals[None, :]) - space.D
        globally = bool(gap.max() <= LIPSCHITZ_TOL)
        for region in (f >= -zero_tol, f <= zero_tol):
            sub = gap[np.ix_(region, region)]
            if sub.size and sub.max() > LIPSCHITZ_TOL:
                raise ValueError("signed distance is not 1-Lipschitz on a sign region")
    return SignedDistanceField(values=vals, zero_tol=zero_tol, zero_set=zero,
                               globally_lipschitz=globally)


@dataclass(frozen=True)
class TransportStructure:
    """Ordering Gamma (x above y), symmetrized relation R, transport set and
    branch points of a 1-Lipschitz u."""

    u: np.ndarray
    steps: np.ndarray        # (n, n) bool, immediate tight steps x -> y
    gamma: np.ndarray        # (n, n) bool, transitive closure of steps
    R: np.ndarray            # gamma | gamma.T
    in_transport: np.ndarray  # (n,) bool
    branch_fwd: np.ndarray    # A+ mask
    branch_bwd: np.ndarray    # A- mask
    eps_rel: float
    eps_abs: float
    step_cap: float

    @property
    def branch_mask(self) -> np.ndarray:
        return self.branch_fwd | self.branch_bwd

    def branch_mass(self, space: MetricMeasureSpace) -> float:
        return float(space.weights[self.branch_mask].sum())


def lipschitz_defect(space: MetricMeasureSpace, u) -> tuple:
    """Worst pair slack of |u(x)-u(y)| <= d(x,y) and its indices."""
    u = np.asarray(u, dtype=float)
    gap = np.abs(u[:, None] - u[None, :]) - space.D
    k = np.unravel_index(np.argmax(gap), gap.shape)
    return float(gap[k]), (int(k[0]), int(k[1]))


def build_transport_structure(space: MetricMeasureSpace, u,
                              eps_rel: float = 1e-6,
                              eps_abs: Optional[float] = None,
                              step_cap_factor: float = STEP_CAP_FACTOR) -> TransportStructure:
    """Compute ordering, transport set and branch points for u.

    A step x -> y requires u(x) - u(y) >= d(x,y)(1 - eps_rel) - eps_abs with
    0 < d(x,y) <= step_cap; the ordering is the transitive closure of steps.
    eps_abs defaults to half the minimum positive distance.
    """
    u = np.asarray(u, dtype=float)
    defect, pair = lipschitz_defect(space, u)
    if defect > LIPSCHITZ_TOL:
        raise ValueError(
            f"u is not 1-Lipschitz: slack {defect:.3e} at pair {pair}"
        )
    D = space.D
    n = space.n
    if eps_abs is None:
        pos = D[D > 0]
        eps_abs = 0.5 * float(pos.min()) if len(pos) else 0.0
    cap = step_cap_factor * np.maximum(space.local_spacing[:, None],
                                       space.local_spacing[None, :])
    du = u[:, None] - u[None, :]
    steps = (du > 0) & (D > 0) & (D <= cap) & (du >= D * (1.0 - eps_rel) - eps_abs)

    # antisymmetry guard: mutual steps signal a too-loose tolerance
    cyc = steps & steps.T
    if cyc.any():
        i, j = map(int, np.argwhere(cyc)[0])
        raise ValueError(f"cycle detected between points {i} and {j}: tolerance too loose")

    S = csr_matrix(steps.astype(np.int32))
    G = S.copy()
    while True:
        G2 = csr_matrix(((G + G @ G) > 0).astype(np.int32))
        if G2.nnz == G.nnz:
            break
        G = G2
    gamma = G.toarray().astype(bool)
    np.fill_diagonal(gamma, False)
    R = gamma | gamma.T
    in_transport = R.any(axis=1)

    # Branch classification is tested on immediate step neighbors: a point
    # forks when it has two unrelated covering children (or parents).  Testing
    # against the full closure instead would let a single genuine fork (e.g.
    # the discretized center of a radial foliation) poison every chain passing
    # through it, because closure children accumulate across the fork.
    branch_fwd = np.zeros(n, dtype=bool)
    branch_bwd = np.zeros(n, dtype=bool)
    for x in range(n):
        ch = np.flatnonzero(steps[x])
        if len(ch) >= 2:
            sub = R[np.ix_(ch, ch)]
            if not (sub | np.eye(len(ch), dtype=bool)).all():
                branch_fwd[x] = True
        pa = np.flatnonzero(steps[:, x])
        if len(pa) >= 2:
            sub = R[np.ix_(pa, pa)]
            if not (sub | np.eye(len(pa), dtype=bool)).all():
                branch_bwd[x] = True
    branch_fwd &= in_transport
    branch_bwd &= in_transport
    return TransportStructure(u=u, steps=steps, gamma=gamma, R=R,
                              in_transport=in_transport,
                              branch_fwd=branch_fwd, branch_bwd=branch_bwd,
                              eps_rel=eps_rel, eps_abs=eps_abs,
                              step_cap=float(step_cap_factor))


@dataclass
class Ray:
    """Maximal chain, ordered by decreasing u, with arclength coordinates."""

    indices: np.ndarray      # point indices, u-descending
    arclength: np.ndarray    # cumulative distance from the top point
    label: int               # point index closest to the ray's u-median
    max_step_defect: float
    q: float = 0.0                       # filled by disintegrate
    h_points: np.ndarray = None          # point-level density (mass/arclength)
    h_bins: np.ndarray = None            # fixed-bin histogram density
    bin_edges: np.ndarray = None

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def position_of(self, point_idx: int) -> float:
        k = np.flatnonzero(self.indices == point_idx)
        if len(k) == 0:
            raise KeyError(f"point {point_idx} is not on this ray")
        return float(self.arclength[int(k[0])])


@dataclass
class RayDecomposition:
    rays: List[Ray]
    remainder: np.ndarray        # transport points not on any ray
    structure: TransportStructure
    ray_of_point: Dict[int, int] = field(default_factory=dict)

    def ray_containing(self, point_idx: int) -> Optional[Ray]:
        k = self.ray_of_point.get(int(point_idx))
        return None if k is None else self.rays[k]


def extract_rays(space: MetricMeasureSpace, structure: TransportStructure) -> RayDecomposition:
    """Maximal chains of the ordering restricted to non-branch transport points."""
    keep = structure.in_transport & ~structure.branch_mask
    keep_idx = np.flatnonzero(keep)
    rays: List[Ray] = []
    remainder = list(np.flatnonzero(structure.in_transport & structure.branch_mask))
    if len(keep_idx):
        sub = structure.R[np.ix_(keep_idx, keep_idx)]
        ncomp, labels = connected_components(csr_matrix(sub), directed=False)
        for c in range(ncomp):
            members = keep_idx[labels == c]
            if len(members) < 2:
                remainder.extend(int(m) for m in members)
                continue
            u_vals = structure.u[members]
            order = np.lexsort((members, -u_vals))
            chain = members[order]
            d_steps = space.D[chain[:-1], chain[1:]]
            du_steps = structure.u[chain[:-1]] - structure.u[chain[1:]]
            defects = np.abs(du_steps - d_steps)
            tol = structure.eps_rel * d_steps + structure.eps_abs
            worst = float((defects - tol).max())
            if worst > 10.0 * structure.eps_abs + 1e-12:
                raise ValueError(
                    f"chain is not isometric: step defect exceeds tolerance by {worst:.3e}"
                )
            arc = np.concatenate([[0.0], np.cumsum(d_steps)])
            med = np.median(u_vals)
            label = int(chain[np.argmin(np.abs(structure.u[chain] - med))])
            rays.append(Ray(indices=chain, arclength=arc, label=label,
                            max_step_defect=float(defects.max())))
    rays.sort(key=lambda r: r.label)
    deco = RayDecomposition(rays=rays, remainder=np.array(sorted(set(remainder)), dtype=int),
                            structure=structure)
    for k, ray in enumerate(deco.rays):
        for i in ray.indices:
            deco.ray_of_point[int(i)] = k
    return deco


def disintegrate(space: MetricMeasureSpace, deco: RayDecomposition,
                 n_bins: int = 32) -> RayDecomposition:
    """Assign reference mass to rays; normalized conditional densities.

    Each ray gets its quotient weight q (total mass), a point-level density
    h_points = (w/q) / (local arclength share), and a mass-preserving
    histogram on n_bins equal arclength bins.  The histogram reconstruction
    is exact bookkeeping: sum_rays q * (bin mass fraction) recovers the
    reference weights bin by bin.
    """
    for ray in deco.rays:
        w = space.weights[ray.indices]
        q = float(w.sum())
        arc = ray.arclength
        L = max(ray.length, 1e-300)
        # Voronoi shares of the chain parameter; the end cells extend half a
        # spacing beyond the chain (their grid cells do too)
        mids = 0.5 * (arc[1:] + arc[:-1])
        edges_pt = np.concatenate([[arc[0] - 0.5 * (arc[1] - arc[0])], mids,
                                   [arc[-1] + 0.5 * (arc[-1] - arc[-2])]])
        share = np.maximum(np.diff(edges_pt), 1e-300)
        ray.q = q
        ray.h_points = (w / q) / share if q > 0 else np.zeros_like(w)
        edges = np.linspace(0.0, L, n_bins + 1)
        which = np.clip(np.searchsorted(edges, arc, side="right") - 1, 0, n_bins - 1)
        mass = np.zeros(n_bins)
        np.add.at(mass, which, w)
        width = L / n_bins
        ray.h_bins = (mass / q) / width if q > 0 else np.zeros(n_bins)
        ray.bin_edges = edges
    return deco


def reconstruction_residual(space: MetricMeasureSpace, deco: RayDecomposition) -> float:
    """Bookkeeping residual of the disintegration: mass assigned to rays plus
    remainder must reproduce the reference measure on the transport set."""
    acc = np.zeros(space.n)
    for ray in deco.rays:
        acc[ray.indices] += space.weights[ray.indices]
    acc[deco.remainder] += space.weights[deco.remainder]
    target = np.where(deco.structure.in_transport, space.weights, 0.0)
    return float(np.abs(acc - target).max())


def check_dp_monotone(space: MetricMeasureSpace, structure: TransportStructure,
                      delta: float, C_idx, p: float,
                      level_tol: Optional[float] = None,
                      max_pairs: int = 10, max_cycle: int = 5) -> dict:
    """d^p-cyclic monotonicity of (C x {u = delta}) intersected with the ordering.

    Enumerates all cyclic reorderings of subsets up to ``max_cycle`` of the
    sampled pairs; the margin is the worst slack of
    sum d(x_i, y_{sigma(i)})^p - sum d(x_i, y_i)^p.
    """
    u = structure.u
    if level_tol is None:
        level_tol = structure.eps_abs
    level = np.flatnonzero(np.abs(u - delta) <= level_tol)
    if len(level) == 0:
        raise ValueError(f"level set u = {delta} is empty at tolerance {level_tol}")
    C_idx = np.asarray(C_idx, dtype=int)
    pairs = []
    for x in C_idx:
        for y in level:
            if x == y or structure.gamma[x, y]:
                pairs.append((int(x), int(y)))
    if not pairs:
        return {"margin": 0.0, "n_pairs": 0, "worst_cycle": None, "verdict": "PASS"}
    if len(pairs) > max_pairs:
        sel = np.linspace(0, len(pairs) - 1, max_pairs).astype(int)
        pairs = [pairs[k] for k in sel]
    result = dp_cyclic_monotonicity(space.D, pairs, p, max_cycle=max_cycle)
    result["n_pairs"] = len(pairs)
    return result


def dp_cyclic_monotonicity(D: np.ndarray, pairs, p: float, max_cycle: int = 5,
                           tol: float = 1e-10) -> dict:
    """Worst cyclic-reordering slack of a pair set under cost d^p.

    margin = min over subsets up to max_cycle and cyclic orders of
    sum d(x_i, y_{next})^p - sum d(x_i, y_i)^p; negative beyond tol means the
    pair set is not d^p-cyclically monotone.
    """
    margin = np.inf
    worst = None
    for size in range(2, min(max_cycle, len(pairs)) + 1):
        for subset in combinations(range(len(pairs)), size):
            xs = [pairs[k][0] for k in subset]
            ys = [pairs[k][1] for k in subset]
            base = sum(D[x, y] ** p for x, y in zip(xs, ys))
            for perm in permutations(range(1, size)):
                order = [0] + list(perm)
                alt = sum(D[xs[order[k]], ys[order[(k + 1) % size]]] ** p
                          for k in range(size))
                if alt - base < margin:
                    margin = alt - base
                    worst = (tuple(xs), tuple(ys), order)
    verdict = "PASS" if margin >= -tol else "FAIL"
    return {"margin": float(margin), "worst_cycle": worst, "verdict": verdict}
