"""Finite metric measure spaces: construction, validation, geodesics, file I/O.

A space is a finite point set with a metric (explicit symmetric matrix, or
euclidean from coordinates), a normalized reference measure, and a geodesic
backend.  Everything downstream (transport, Hopf-Lax, needles) consumes this
type read-only; all arrays are frozen after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

EUCLIDEAN = "euclidean-segment"
MATRIX = "matrix-midpoint"

MASS_TOL = 1e-12
TRIANGLE_TOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MetricMeasureSpace:
    """Finite point set with metric, reference probability measure, geodesic oracle."""

    ids: np.ndarray                  # (n,) integer point ids
    coords: Optional[np.ndarray]     # (n, d) or None for matrix-only spaces
    D: np.ndarray                    # (n, n) pairwise distances
    weights: np.ndarray              # (n,) reference measure, sums to 1
    geodesic_mode: str = EUCLIDEAN
    # distance to the nearest other point, used for binning tolerances
    local_spacing: np.ndarray = field(default=None, repr=False)
    _tree: object = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.ids)

    def kdtree(self):
        """Cached spatial index over the coordinates."""
        if self.coords is None:
            raise ValueError("space has no coordinates")
        if self._tree is None:
            from scipy.spatial import cKDTree

            object.__setattr__(self, "_tree", cKDTree(self.coords))
        return self._tree

    def index_of(self, point_id: int) -> int:
        idx = int(np.searchsorted(self._id_order, point_id))
        if idx >= self.n or self.ids[self._id_order[idx]] != point_id:
            raise KeyError(f"no point with id {point_id}")
        return int(self._id_order[idx])

    @property
    def _id_order(self) -> np.ndarray:
        return np.argsort(self.ids, kind="stable")


@dataclass(frozen=True)
class Geodesic:
    """Constant-speed curve sampled on a time grid.

    ``points`` holds coordinates (euclidean mode) or point indices into the
    space (matrix mode).
    """

    times: np.ndarray       # (k,) in [0, 1], increasing
    points: np.ndarray      # (k, d) coords, or (k,) int indices
    length: float
    by_index: bool = False

    def position(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.points[k]


@dataclass(frozen=True)
class MeasureOnSpace:
    """Weights per space point; tracks absolute continuity w.r.t. the reference."""

    weights: np.ndarray
    total_mass: float
    absolutely_continuous: bool

    def density(self, space: MetricMeasureSpace) -> np.ndarray:
        """Density w.r.t. the reference measure, zero off the reference support."""
        rho = np.zeros(space.n)
        pos = space.weights > 0
        rho[pos] = self.weights[pos] / space.weights[pos]
        return rho


def measure_on(space: MetricMeasureSpace, weights: Sequence[float]) -> MeasureOnSpace:
    w = np.asarray(weights, dtype=float)
    if w.shape != (space.n,):
        raise ValueError(f"measure has {w.shape} weights, space has {space.n} points")
    if (w < -MASS_TOL).any():
        raise ValueError("measure weights must be nonnegative")
    w = np.clip(w, 0.0, None)
    ac = bool(np.all(space.weights[w > 0] > 0))
    return MeasureOnSpace(_freeze(w), float(w.sum()), ac)


def _check_triangle(D: np.ndarray) -> None:
    n = len(D)
    worst = (0.0, (0, 0, 0))
    # via one intermediate index at a time to keep memory at O(n^2)
    for j in range(n):
        slack = D - (D[:, j][:, None] + D[j][None, :])
        k = np.unravel_index(np.argmax(slack), slack.shape)
        if slack[k] > worst[0]:
            worst = (float(slack[k]), (int(k[0]), j, int(k[1])))
    if worst[0] > TRIANGLE_TOL:
        i, j, k = worst[1]
        raise ValueError(
            f"triangle inequality violated by {worst[0]:.3e} at triple "
            f"({i}, {j}, {k}): d({i},{k}) > d({i},{j}) + d({j},{k})"
        )


def build_space(
    coords=None,
    matrix=None,
    measure=None,
    geodesic_mode: Optional[str] = None,
    ids=None,
    normalize: bool = False,
) -> MetricMeasureSpace:
    """Assemble and validate a space from coordinates and/or a distance matrix.

    The measure must sum to 1 up to 1e-12 unless ``normalize`` is set, in which
    case it is rescaled.  Matrix metrics are checked for symmetry, zero
    diagonal and the triangle inequality on all triples; the euclidean backend
    satisfies these by construction and is only spot-checked.
    """
    if coords is None and matrix is None:
        raise ValueError("need coordinates or an explicit distance matrix")
    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        n = len(coords)
    if matrix is not None:
        matrix = np.asarray(matrix, dtype=float)
        n = len(matrix)
        if matrix.shape != (n, n):
            raise ValueError("distance matrix must be square")
        if np.abs(matrix - matrix.T).max() > TRIANGLE_TOL:
            raise ValueError("distance matrix is not symmetric")
        if np.abs(np.diag(matrix)).max() > TRIANGLE_TOL:
            raise ValueError("distance matrix has nonzero diagonal")
        if (matrix < -TRIANGLE_TOL).any():
            raise ValueError("distances must be nonnegative")
        D = 0.5 * (matrix + matrix.T)
        np.fill_diagonal(D, 0.0)
        _check_triangle(D)
    else:
        D = cdist(coords, coords)
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)

    if measure is None:
        measure = np.full(n, 1.0 / n)
    w = np.asarray(measure, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"measure has {len(w)} weights for {n} points")
    if (w < 0).any():
        raise ValueError("measure weights must be nonnegative")
    mass = w.sum()
    if normalize:
        if mass <= 0:
            raise ValueError("cannot normalize a zero measure")
        w = w / mass
    elif abs(mass - 1.0) > MASS_TOL:
        raise ValueError(f"mass {mass:.6g} != 1 (pass normalize=True to rescale)")

    if geodesic_mode is None:
        geodesic_mode = EUCLIDEAN if coords is not None else MATRIX
    if geodesic_mode not in (EUCLIDEAN, MATRIX):
        raise ValueError(f"unknown geodesic mode {geodesic_mode!r}")
    if geodesic_mode == EUCLIDEAN and coords is None:
        raise ValueError("euclidean-segment mode requires coordinates")

    if ids is None:
        ids = np.arange(n)
    ids = np.asarray(ids, dtype=int)

    Dru = D.copy()
    np.fill_diagonal(Dru, np.inf)
    spacing = Dru.min(axis=1)

    return MetricMeasureSpace(
        ids=_freeze(ids),
        coords=None if coords is None else _freeze(coords),
        D=_freeze(D),
        weights=_freeze(w),
        geodesic_mode=geodesic_mode,
        local_spacing=_freeze(spacing),
    )


def load_space(path, normalize: bool = False) -> MetricMeasureSpace:
    """Read a space document (JSON with points/metric/measure/geodesic_mode)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"could not parse space file {path}: {exc}") from exc
    try:
        pts = doc["points"]
        metric = doc["metric"]
        measure = doc["measure"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"space file {path} missing key: {exc}") from exc
    mode = doc.get("geodesic_mode")
    ids = [p["id"] for p in pts]
    coords = None
    if pts and pts[0].get("coords") is not None:
        coords = [p["coords"] for p in pts]
    matrix = None
    if isinstance(metric, dict):
        matrix = metric["matrix"]
    elif metric != "euclidean":
        raise ValueError(f"unknown metric entry {metric!r}")
    return build_space(
        coords=coords, matrix=matrix, measure=measure,
        geodesic_mode=mode, ids=ids, normalize=normalize,
    )


def dump_space(space: MetricMeasureSpace, path) -> None:
    """Write a space document in the same schema accepted by load_space."""
    doc = {
        "points": [
            {"id": int(i), "coords": None if space.coords is None else list(map(float, c))}
            for i, c in zip(space.ids, space.coords if space.coords is not None else [None] * space.n)
        ],
        "metric": "euclidean" if space.coords is not None else {"matrix": space.D.tolist()},
        "measure": space.weights.tolist(),
        "geodesic_mode": space.geodesic_mode,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_measure(path, space: MetricMeasureSpace) -> MeasureOnSpace:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"could not parse measure file {path}: {exc}") from exc
    weights = doc["weights"] if isinstance(doc, dict) else doc
    return measure_on(space, weights)


def sample_disc(n_radial: int, n_angular: int, r_min: float, r_max: float) -> MetricMeasureSpace:
    """Polar grid on the annulus r_min < |x| < r_max with cell-area weights.

    Points sit at cell centers (i+1/2) dr, j dtheta; reference weights are
    proportional to the exact cell area r dr dtheta, normalized to total 1.
    """
    if not (0 <= r_min < r_max):
        raise ValueError(f"need 0 <= r_min < r_max, got [{r_min}, {r_max}]")
    if n_radial < 2 or n_angular < 3:
        raise ValueError("need n_radial >= 2 and n_angular >= 3")
    dr = (r_max - r_min) / n_radial
    radii = r_min + (np.arange(n_radial) + 0.5) * dr
    angles = np.arange(n_angular) * (2 * math.pi / n_angular)
    rr, tt = np.meshgrid(radii, angles, indexing="ij")
    coords = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])
    w = rr.ravel().copy()
    w /= w.sum()
    return build_space(coords=coords, measure=w, geodesic_mode=EUCLIDEAN)


def _midpoint_index(space: MetricMeasureSpace, i: int, j: int) -> int:
    D = space.D
    score = np.abs(D[i] - D[j]) + np.abs(D[i, j] - D[i] - D[j])
    # ties broken by lowest id for determinism
    order = np.lexsort((space.ids, score))
    return int(order[0])


def geodesic_between(space, i: int, j: int, grid) -> Geodesic:
    """Constant-speed geodesic between points i and j sampled on ``grid``.

    Euclidean mode interpolates the segment; matrix mode bisects with
    nearest-midpoint search and snaps each requested time to the closest
    dyadic sample.
    """
    grid = np.asarray(sorted(set(float(t) for t in grid)))
    if grid.min() < 0 or grid.max() > 1:
        raise ValueError("time grid must lie in [0, 1]")
    length = float(space.D[i, j])
    if space.geodesic_mode == EUCLIDEAN:
        x, y = space.coords[i], space.coords[j]
        pts = np.array([(1.0 - t) * x + t * y for t in grid])
        geo = Geodesic(_freeze(grid), _freeze(pts), length, by_index=False)
        _check_constant_speed_euclidean(geo)
        return geo

    # matrix mode: dyadic bisection down to the grid resolution
    depth = max(1, math.ceil(math.log2(max(len(grid), 2))) + 1)
    chain = {0.0: i, 1.0: j}
    tol = 2.0 * float(np.median(space.local_spacing))
    for _ in range(depth):
        snap = sorted(chain)
        for a, b in zip(snap[:-1], snap[1:]):
            ia, ib = chain[a], chain[b]
            if space.D[ia, ib] <= tol:
                continue
            m = _midpoint_index(space, ia, ib)
            defect = abs(space.D[ia, m] - space.D[m, ib]) + abs(
                space.D[ia, ib] - space.D[ia, m] - space.D[m, ib]
            )
            if defect > tol:
                raise ValueError(
                    f"no admissible midpoint between points {ia} and {ib} "
                    f"(best defect {defect:.3g} > tol {tol:.3g})"
                )
            chain[(a + b) / 2] = m
    snap_times = np.array(sorted(chain))
    snap_idx = np.array([chain[t] for t in snap_times])
    sel = [int(np.argmin(np.abs(snap_times - t))) for t in grid]
    geo = Geodesic(_freeze(grid), _freeze(snap_idx[sel]), length, by_index=True)
    return geo


def _check_constant_speed_euclidean(geo: Geodesic, tol: float = 1e-6) -> None:
    t, P = geo.times, geo.points
    for a in range(len(t)):
        d = np.linalg.norm(P - P[a], axis=1)
        err = np.abs(d - np.abs(t - t[a]) * geo.length)
        if err.max() > tol * (1.0 + geo.length):
            raise ValueError(f"geodesic samples are not constant speed (err {err.max():.3g})")


def geodesic_positions(space: MetricMeasureSpace, geo: Geodesic) -> np.ndarray:
    """Coordinates of the geodesic samples (matrix mode resolves indices)."""
    if not geo.by_index:
        return geo.points
    if space.coords is None:
        raise ValueError("space has no coordinates")
    return space.coords[geo.points.astype(int)]
