"""Discrete p-Wasserstein transport: exact plans, dual potentials, dynamical
plans and interpolant densities.

Plans are solved exactly: equal-mass instances with matching atom counts go
through the assignment solver with duals recovered by shortest paths on the
complementary-slackness graph (zero gap); everything else goes through the
HiGHS LP.  Entropic regularization is deliberately not offered: the curvature
checks downstream are sensitive to the support of the plan.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import bellman_ford

from .mms_core import (
    Geodesic,
    MeasureOnSpace,
    MetricMeasureSpace,
    geodesic_between,
    measure_on,
)

DUAL_GAP_TOL = 1e-8
MARGINAL_TOL = 1e-9
BIN_TOL_FACTOR = 1.5


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling between two measures with cost Sum pi_ij d(x_i, y_j)^p."""

    rows: np.ndarray        # source point indices per atom
    cols: np.ndarray        # target point indices per atom
    mass: np.ndarray        # atom masses
    p: float
    total_cost: float       # Sum pi d^p  (no 1/p)

    @property
    def wasserstein(self) -> float:
        return self.total_cost ** (1.0 / self.p)

    def coupling_matrix(self, n: int) -> np.ndarray:
        pi = np.zeros((n, n))
        np.add.at(pi, (self.rows, self.cols), self.mass)
        return pi


@dataclass(frozen=True)
class PotentialField:
    """c-concave Kantorovich pair for the cost d^p / p, defined on all points."""

    phi: np.ndarray
    phi_c: np.ndarray
    p: float
    dual_gap: float


@dataclass(frozen=True)
class DynamicalPlan:
    """Weighted family of geodesics, one per plan atom."""

    geodesics: List[Geodesic]
    weights: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    p: float

    @property
    def lengths(self) -> np.ndarray:
        return np.array([g.length for g in self.geodesics])


def c_transform(space: MetricMeasureSpace, psi: np.ndarray, p: float,
                support: Optional[np.ndarray] = None) -> np.ndarray:
    """psi^c(x) = min_y d(x, y)^p / p - psi(y), minimized over ``support``
    (default: all points with finite psi)."""
    psi = np.asarray(psi, dtype=float)
    if support is None:
        support = np.flatnonzero(np.isfinite(psi))
    if len(support) == 0:
        raise ValueError("psi is nowhere finite")
    M = space.D[:, support] ** p / p - psi[support][None, :]
    return M.min(axis=1)


def _duals_from_assignment(C: np.ndarray, ri: np.ndarray, cj: np.ndarray):
    # Feasible duals for the assignment LP via single-source shortest paths on
    # the graph of reduced costs; zero duality gap at an optimal assignment.
    # Constraint system: v_j - v_k <= C[inv(k), j] - C[inv(k), k], solved by
    # shortest-path distances v (no negative cycles iff the assignment is
    # optimal).
    n = len(C)
    inv = np.empty(n, dtype=int)
    inv[cj] = ri
    W = C[inv] - C[inv, np.arange(n)][:, None]
    # csr drops exact zeros, which scipy would treat as missing edges; nudge
    # them by a denormal so every constraint stays in the graph
    W = np.where(W == 0.0, 1e-300, W)
    try:
        dist = bellman_ford(csr_matrix(W), indices=0, return_predecessors=False)
    except Exception as exc:  # NegativeCycleError means the assignment is not optimal
        raise RuntimeError(f"dual recovery failed: {exc}") from exc
    v = np.asarray(dist).ravel()
    u = C[np.arange(n), cj] - v[cj]
    # u_i + v_j <= C_ij by the shortest-path inequalities
    return u, v


def _solve_lp(C: np.ndarray, a: np.ndarray, b: np.ndarray):
    ns, nt = C.shape
    row_i = np.repeat(np.arange(ns), nt)
    col_j = np.tile(np.arange(nt), ns)
    var = np.arange(ns * nt)
    A = coo_matrix(
        (np.ones(2 * ns * nt), (np.concatenate([row_i, ns + col_j]), np.concatenate([var, var]))),
        shape=(ns + nt, ns * nt),
    ).tocsr()
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    pi = res.x.reshape(ns, nt)
    duals = res.eqlin.marginals
    return pi, duals[:ns], duals[ns:]


def solve_wp(space: MetricMeasureSpace, mu0: MeasureOnSpace, mu1: MeasureOnSpace,
             p: float):
    """Exact optimal transport between mu0 and mu1 for cost d^p.

    Returns (TransportPlan, PotentialField).  The potential pair is made
    c-concave by a double c-transform and certifies optimality: the duality
    gap (in d^p/p units) is checked against 1e-8 * (1 + |cost|).
    """
    if p <= 1:
        raise ValueError(f"need p > 1, got p={p}")
    for m in (mu0, mu1):
        if abs(m.total_mass - 1.0) > 1e-9:
            raise ValueError("marginals must be probability measures")
    I = np.flatnonzero(mu0.weights > 0)
    J = np.flatnonzero(mu1.weights > 0)
    a, b = mu0.weights[I], mu1.weights[J]
    C = space.D[np.ix_(I, J)] ** p

    equal_masses = (
        len(I) == len(J)
        and np.allclose(a, a[0], rtol=0, atol=1e-12)
        and np.allclose(b, b[0], rtol=0, atol=1e-12)
    )
    if equal_masses:
        ri, cj = linear_sum_assignment(C)
        u, v = _duals_from_assignment(C, ri, cj)
        rows, cols = I[ri], J[cj]
        mass = a[ri]
        total_cost = float((C[ri, cj] * mass).sum())
        dual_value = float(u @ a + v @ b)
    else:
        pi, u, v = _solve_lp(C, a, b)
        ii, jj = np.nonzero(pi > 1e-15)
        rows, cols = I[ii], J[jj]
        mass = pi[ii, jj]
        total_cost = float((C * pi).sum())
        dual_value = float(u @ a + v @ b)

    plan = TransportPlan(rows=rows, cols=cols, mass=mass, p=p, total_cost=total_cost)

    # marginal bookkeeping
    r0 = np.zeros(space.n)
    np.add.at(r0, rows, mass)
    r1 = np.zeros(space.n)
    np.add.at(r1, cols, mass)
    if np.abs(r0 - mu0.weights).max() > MARGINAL_TOL or np.abs(r1 - mu1.weights).max() > MARGINAL_TOL:
        raise RuntimeError("plan marginals drifted beyond tolerance")

    # duals for cost d^p/p, extended to all points and made c-concave
    psi = np.full(space.n, -np.inf)
    psi[J] = v / p
    phi = c_transform(space, psi, p, support=J)
    phi_c = c_transform(space, phi, p)
    phi = c_transform(space, phi_c, p)

    primal = total_cost / p
    dual = float(phi @ mu0.weights + phi_c @ mu1.weights)
    gap = primal - dual
    if not (-1e-9 * (1 + abs(primal)) <= gap <= DUAL_GAP_TOL * (1 + abs(primal))):
        raise RuntimeError(f"transport solve did not certify optimality: duality gap {gap:.3e}")
    pot = PotentialField(phi=phi, phi_c=phi_c, p=p, dual_gap=gap)
    return plan, pot


def average_duals(space: MetricMeasureSpace, pot: PotentialField,
                  permutations: Sequence[np.ndarray]) -> PotentialField:
    """Average a dual pair over measure-preserving isometries of the instance.

    The optimal-dual polytope is convex and invariant under any permutation
    that preserves the metric and both marginals, so the group average is
    still optimal; it is also the unique symmetric choice, which removes the
    arbitrary drift a vertex solver leaves in degenerate instances.  The
    averaged pair is re-conjugated to restore exact c-concavity.
    """
    phi = np.mean([pot.phi[perm] for perm in permutations], axis=0)
    phi_c = c_transform(space, phi, pot.p)
    phi = c_transform(space, phi_c, pot.p)
    return PotentialField(phi=phi, phi_c=phi_c, p=pot.p, dual_gap=pot.dual_gap)


def rotation_permutations(n_radial: int, n_angular: int) -> List[np.ndarray]:
    """Index permutations rotating a polar grid (radial-major layout)."""
    base = np.arange(n_radial * n_angular).reshape(n_radial, n_angular)
    return [np.roll(base, k, axis=1).ravel() for k in range(n_angular)]


def brute_force_cost(space: MetricMeasureSpace, sources, targets, p: float) -> float:
    """Exhaustive permutation minimum for equal-mass atoms (oracle for solve_wp)."""
    from itertools import permutations

    sources = list(sources)
    targets = list(targets)
    if len(sources) != len(targets):
        raise ValueError("equal atom counts required")
    k = len(sources)
    C = space.D[np.ix_(sources, targets)] ** p
    best = np.inf
    for perm in permutations(range(k)):
        best = min(best, sum(C[i, perm[i]] for i in range(k)))
    return best / k


def check_degenerate(space, mu0, mu1, p, seed: int = 0) -> bool:
    """True when a 1e-10 random cost tie-break changes the plan's support,
    i.e. the optimal plan is not unique at working precision."""
    plan, _ = solve_wp(space, mu0, mu1, p)
    rng = np.random.default_rng(seed)
    I = np.flatnonzero(mu0.weights > 0)
    J = np.flatnonzero(mu1.weights > 0)
    a, b = mu0.weights[I], mu1.weights[J]
    C = space.D[np.ix_(I, J)] ** p + 1e-10 * rng.random((len(I), len(J)))
    if len(I) == len(J) and np.allclose(a, a[0], atol=1e-12, rtol=0) and np.allclose(b, b[0], atol=1e-12, rtol=0):
        ri, cj = linear_sum_assignment(C)
        support2 = set(zip(I[ri], J[cj]))
    else:
        pi, _, _ = _solve_lp(C, a, b)
        ii, jj = np.nonzero(pi > 1e-15)
        support2 = set(zip(I[ii], J[jj]))
    support1 = set(zip(plan.rows, plan.cols))
    return support1 != support2


def dynamical_plan(space: MetricMeasureSpace, plan: TransportPlan, grid) -> DynamicalPlan:
    """Lift a plan to geodesics, one per atom, weighted by the atom mass."""
    grid = sorted(set([0.0, 1.0]) | set(float(t) for t in grid))
    geos = [geodesic_between(space, int(i), int(j), grid) for i, j in zip(plan.rows, plan.cols)]
    w = plan.mass / plan.mass.sum()
    return DynamicalPlan(geodesics=geos, weights=w, rows=plan.rows, cols=plan.cols, p=plan.p)


def evaluation_points(space: MetricMeasureSpace, nu: DynamicalPlan, t: float) -> np.ndarray:
    """Nearest space point of each geodesic at time t; errors past bin tolerance."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    idx = np.empty(len(nu.geodesics), dtype=int)
    coords_needed = [k for k, g in enumerate(nu.geodesics) if not g.by_index]
    if coords_needed:
        P0 = np.array([nu.geodesics[k].points[0] for k in coords_needed])
        P1 = np.array([nu.geodesics[k].points[-1] for k in coords_needed])
        pos = (1.0 - t) * P0 + t * P1
        dist, nearest = space.kdtree().query(pos)
        tol = BIN_TOL_FACTOR * space.local_spacing[nearest]
        bad = dist > tol
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"evaluation point of geodesic {coords_needed[k]} at t={t} is "
                f"{dist[k]:.3g} from the nearest space point (tol {tol[k]:.3g})"
            )
        idx[coords_needed] = nearest
    for k, g in enumerate(nu.geodesics):
        if g.by_index:
            idx[k] = int(g.position(t))
    return idx


def interpolate_density(space: MetricMeasureSpace, nu: DynamicalPlan, t: float) -> MeasureOnSpace:
    """mu_t = (e_t)# nu binned to the nearest space points."""
    idx = evaluation_points(space, nu, t)
    w = np.zeros(space.n)
    np.add.at(w, idx, nu.weights)
    return measure_on(space, w)


def kantorovich_geodesic_residual(space: MetricMeasureSpace, nu: DynamicalPlan,
                                  pot: PotentialField) -> float:
    """max |phi(g_0) + phi_c(g_1) - d(g_0, g_1)^p / p| over plan geodesics."""
    p = pot.p
    res = [
        abs(pot.phi[i] + pot.phi_c[j] - space.D[i, j] ** p / p)
        for i, j in zip(nu.rows, nu.cols)
    ]
    return float(max(res))
