"""Closed-form ground truth used as the independent verification layer.

Two oracles: the radial annulus transport on R^n (optimal map pushes every
point outward by 2 along its ray, all interpolants explicit), and elementary
uniform-block transport on the line.  Nothing here imports solver code; the
acceptance suite takes every expected value from this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def unit_sphere_area(n: int) -> float:
    """Surface measure of S^(n-1); equals n * volume of the unit n-ball."""
    return n * math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


@dataclass(frozen=True)
class RadialOracle:
    """Closed forms for the outward radial transport of the 1/(w_n r^(n-1))
    annulus measures A(1,2) -> A(3,4) under cost d^q/q."""

    n: int = 2
    q: float = 2.0

    @property
    def q_dual(self) -> float:
        return self.q / (self.q - 1.0)

    def phi(self, r: float) -> float:
        """Kantorovich potential at radius r."""
        return -(2.0 ** (self.q - 1.0)) * r

    def phi_c(self, r: float) -> float:
        """Conjugate potential at radius r."""
        if r <= 2.0:
            return r ** self.q / self.q
        return 2.0 ** (self.q - 1.0) * (r - 2.0 / self.q_dual)

    def phi_t(self, r: float, t: float) -> float:
        """Interpolating potential at radius r and time t."""
        if t > 0.0 and r <= 2.0 * t:
            return -(r ** self.q) / (self.q * t ** (self.q - 1.0))
        return -(2.0 ** (self.q - 1.0)) * (r - 2.0 * t / self.q_dual)

    def transport_radius(self, r: float, t: float = 1.0) -> float:
        """Radius of the time-t image of a source point at radius r."""
        return r + 2.0 * t

    def rho_t(self, r0: float, t: float) -> float:
        """Interpolant density w.r.t. Lebesgue along the ray from radius r0."""
        return 1.0 / (unit_sphere_area(self.n) * (r0 + 2.0 * t) ** (self.n - 1))

    def density_ratio(self, ell: float, s: float, t: float) -> float:
        """rho_t(gamma_t) / rho_s(gamma_s) for the ray with |gamma_0| = 1 + ell."""
        return ((1.0 + ell + 2.0 * s) / (1.0 + ell + 2.0 * t)) ** (self.n - 1)

    def propagated_potential(self, r: float, s: float, t: float) -> float:
        """Time-s potential propagated to time t, evaluated at radius r."""
        return -(2.0 ** (self.q - 1.0)) * (r - 2.0 * t + 2.0 * s / self.q)

    def propagated_potential_rate(self) -> float:
        """d/dtau of the propagated potential; constant 2^q."""
        return 2.0 ** self.q

    def conditional_density(self, ell: float, s: float, t: float) -> float:
        """Needle conditional density along the ray, normalized to 1 at time s."""
        return ((1.0 + ell + 2.0 * t) / (1.0 + ell + 2.0 * s)) ** (self.n - 1)

    def level_value(self, ell: float, s: float) -> float:
        """Potential level a with phi_s(gamma_s) = a on the ray |gamma_0| = 1 + ell."""
        return -(2.0 ** (self.q - 1.0)) * (1.0 + ell + 2.0 * s / self.q)

    def wasserstein(self) -> float:
        """W_q(mu_0, mu_1): every particle moves distance 2."""
        return 2.0

    def z_log_speed(self) -> float:
        """d/dtau log ell_tau(gamma_t) at tau = t: the speed profile is locally
        constant at every transported point, so this vanishes identically."""
        return 0.0


_RADIAL_QUANTITIES = {
    "phi": lambda o, a: o.phi(a["r"]),
    "phi_c": lambda o, a: o.phi_c(a["r"]),
    "phi_t": lambda o, a: o.phi_t(a["r"], a["t"]),
    "T": lambda o, a: o.transport_radius(a["r"], 1.0),
    "T_t": lambda o, a: o.transport_radius(a["r"], a["t"]),
    "rho_t": lambda o, a: o.rho_t(a["r"], a["t"]),
    "ratio": lambda o, a: o.density_ratio(a["ell"], a["s"], a["t"]),
    "Phi": lambda o, a: o.propagated_potential(a["r"], a["s"], a["t"]),
    "dPhi_dt": lambda o, a: o.propagated_potential_rate(),
    "h": lambda o, a: o.conditional_density(a["ell"], a["s"], a["t"]),
    "a_level": lambda o, a: o.level_value(a["ell"], a["s"]),
    "W": lambda o, a: o.wasserstein(),
}


def radial_eval(oracle: RadialOracle, quantity: str, **args) -> float:
    """Evaluate a named closed-form quantity of the radial example."""
    if quantity not in _RADIAL_QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}; know {sorted(_RADIAL_QUANTITIES)}")
    for key, lo, hi in (("t", 0.0, 1.0), ("s", 0.0, 1.0), ("r", 0.0, math.inf),
                        ("ell", 0.0, math.inf)):
        if key in args and not lo <= args[key] <= hi:
            raise ValueError(f"argument {key}={args[key]} outside [{lo}, {hi}]")
    try:
        return float(_RADIAL_QUANTITIES[quantity](oracle, args))
    except KeyError as exc:
        raise ValueError(f"quantity {quantity!r} missing argument {exc}") from exc


@dataclass(frozen=True)
class LineBlocks:
    """Uniform block on [a0, a0+len0] transported to the uniform block on
    [a1, a1+len1]; the monotone map is affine and p-independent."""

    a0: float
    len0: float
    a1: float
    len1: float

    def __post_init__(self):
        if self.len0 <= 0 or self.len1 <= 0:
            raise ValueError("blocks must have positive length (uniform blocks only)")

    def map_point(self, x: float) -> float:
        return self.a1 + (x - self.a0) * self.len1 / self.len0

    def support_t(self, t: float) -> tuple:
        lo = (1.0 - t) * self.a0 + t * self.a1
        hi = (1.0 - t) * (self.a0 + self.len0) + t * (self.a1 + self.len1)
        return lo, hi

    def length_t(self, t: float) -> float:
        return (1.0 - t) * self.len0 + t * self.len1

    def density_t(self, x: float, t: float) -> float:
        """Interpolant density w.r.t. Lebesgue at position x, time t."""
        lo, hi = self.support_t(t)
        if lo <= x <= hi:
            return 1.0 / self.length_t(t)
        return 0.0

    def interpolant_position(self, x: float, t: float) -> float:
        return (1.0 - t) * x + t * self.map_point(x)
