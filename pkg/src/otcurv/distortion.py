"""Volume distortion coefficients of the (K, N) model spaces.

The sigma coefficient is the interpolation weight sin(t*theta*sqrt(K/NN)) /
sin(theta*sqrt(K/NN)) (sinh for K < 0), the exact weight that reproduces
solutions of g'' + (K/NN) g = 0 at intermediate points.  tau mixes a t^(1/N)
volume factor with sigma at one dimension lower.  Both blow up to +infinity
past the conjugate-point bound when K > 0; that case is returned as a tagged
value so callers have to deal with it explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ExtendedReal:
    """A real number or a tagged +infinity (never a floating inf)."""

    value: float = 0.0
    is_infinite: bool = False

    @staticmethod
    def of(x: float) -> "ExtendedReal":
        return ExtendedReal(float(x), False)

    @staticmethod
    def infinite() -> "ExtendedReal":
        return ExtendedReal(0.0, True)

    def finite(self) -> float:
        """Return the finite value, raising if this is +infinity."""
        if self.is_infinite:
            raise OverflowError("coefficient is +infinity")
        return self.value

    def __str__(self) -> str:
        return "inf" if self.is_infinite else repr(self.value)


@dataclass(frozen=True)
class DistortionParams:
    """Arguments (K, N, t, theta) of a distortion coefficient.

    For ``sigma`` the field N plays the role of the dimension parameter of the
    comparison ODE and may be any value in (0, inf]; for ``tau`` it is the
    usual dimension bound N >= 1.
    """

    K: float
    N: float
    t: float
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {self.t}")
        if self.theta < 0.0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")
        if self.N <= 0.0:
            raise ValueError(f"N must be positive, got {self.N}")


# Below this value of theta*sqrt(|K|/NN) the sin/sinh quotient is evaluated by
# a 4-term series of numerator and denominator; the direct quotient loses
# digits to cancellation there.  Truncation error of the series is O(a^8).
_SERIES_CUTOFF = 1e-4


def domain_bound(K: float, NN: float) -> float:
    """Conjugate-point bound: pi / sqrt(K/NN) for K > 0, NN < inf, else inf."""
    if K > 0.0 and not math.isinf(NN) and K / NN > 0.0:
        return math.pi / math.sqrt(K / NN)
    return math.inf


def _ratio_series(t: float, u: float, sign: float) -> float:
    # sin(t a)/sin(a) with u = a^2, sign = -1; sinh for sign = +1.
    def g(x: float) -> float:
        return 1.0 + sign * x / 6.0 + x * x / 120.0 + sign * x ** 3 / 5040.0

    return t * g(t * t * u) / g(u)


def sigma(params: DistortionParams) -> ExtendedReal:
    """Distortion coefficient sigma^(t)_{K,NN}(theta).

    Equals t when K = 0, NN = inf or theta = 0; the sin quotient for K > 0
    below the conjugate bound (tagged +infinity at or past it); the sinh
    quotient for K < 0.
    """
    K, NN, t, theta = params.K, params.N, params.t, params.theta
    if theta == 0.0 or K == 0.0 or math.isinf(NN):
        return ExtendedReal.of(t)
    if K > 0.0:
        if theta >= domain_bound(K, NN):
            return ExtendedReal.infinite()
        a = theta * math.sqrt(K / NN)
        if a < _SERIES_CUTOFF:
            return ExtendedReal.of(_ratio_series(t, a * a, -1.0))
        return ExtendedReal.of(math.sin(t * a) / math.sin(a))
    a = theta * math.sqrt(-K / NN)
    if a < _SERIES_CUTOFF:
        return ExtendedReal.of(_ratio_series(t, a * a, 1.0))
    # sinh(t a)/sinh(a) in overflow-free form e^{(t-1)a} (1-e^{-2ta})/(1-e^{-2a})
    return ExtendedReal.of(
        math.exp((t - 1.0) * a) * (-math.expm1(-2.0 * t * a)) / (-math.expm1(-2.0 * a))
    )


def tau(params: DistortionParams) -> ExtendedReal:
    """Distortion coefficient tau^(t)_{K,N}(theta) = t^(1/N) sigma_{K,N-1}^(1-1/N).

    N = 1 degenerates to t for K <= 0 and +infinity for K > 0 away from
    theta = 0; N = inf degenerates to t.
    """
    K, N, t, theta = params.K, params.N, params.t, params.theta
    if N < 1.0:
        raise ValueError(f"tau requires N >= 1, got {N}")
    if N == 1.0:
        if K <= 0.0 or theta == 0.0:
            return ExtendedReal.of(t)
        return ExtendedReal.infinite()
    if math.isinf(N):
        return ExtendedReal.of(t)
    s = sigma(DistortionParams(K, N - 1.0, t, theta))
    if s.is_infinite:
        return ExtendedReal.of(0.0) if t == 0.0 else ExtendedReal.infinite()
    return ExtendedReal.of(t ** (1.0 / N) * s.value ** (1.0 - 1.0 / N))


def sigma_value(K: float, NN: float, t: float, theta: float) -> float:
    """sigma as a plain float; raises OverflowError past the domain bound."""
    return sigma(DistortionParams(K, NN, t, theta)).finite()


def sigma_array(K: float, NN: float, t, theta):
    """Vectorized sigma over broadcast arrays t, theta.

    Returns (values, inf_mask); values are meaningless where inf_mask is set.
    """
    import numpy as np

    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t, theta = np.broadcast_arrays(t, theta)
    if K == 0.0 or math.isinf(NN):
        return t.copy(), np.zeros(t.shape, dtype=bool)
    a = theta * math.sqrt(abs(K) / NN)
    small = a < _SERIES_CUTOFF
    sign = -1.0 if K > 0.0 else 1.0
    u = a * a

    def g(x):
        return 1.0 + sign * x / 6.0 + x * x / 120.0 + sign * x ** 3 / 5040.0

    if K > 0.0:
        inf_mask = theta >= domain_bound(K, NN)
        a_safe = np.where(inf_mask | small, 0.5, a)
        with np.errstate(invalid="ignore"):
            direct = np.sin(t * a_safe) / np.sin(a_safe)
    else:
        inf_mask = np.zeros(t.shape, dtype=bool)
        a_safe = np.where(small, 0.5, a)
        with np.errstate(invalid="ignore"):
            direct = (np.exp((t - 1.0) * a_safe) * (-np.expm1(-2.0 * t * a_safe))
                      / (-np.expm1(-2.0 * a_safe)))
    series = t * g(t * t * u) / g(u)
    vals = np.where(small, series, direct)
    return vals, inf_mask


def tau_array(K: float, N: float, t, theta):
    """Vectorized tau over broadcast arrays t, theta; returns (values, inf_mask)."""
    import numpy as np

    t = np.asarray(t, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t, theta = np.broadcast_arrays(t, theta)
    if N < 1.0:
        raise ValueError(f"tau requires N >= 1, got {N}")
    if N == 1.0:
        if K <= 0.0:
            return t.copy(), np.zeros(t.shape, dtype=bool)
        return t.copy(), theta > 0.0
    if math.isinf(N):
        return t.copy(), np.zeros(t.shape, dtype=bool)
    s, inf_mask = sigma_array(K, N - 1.0, t, theta)
    inf_mask = inf_mask & (t > 0.0)
    with np.errstate(invalid="ignore"):
        vals = t ** (1.0 / N) * np.where(inf_mask, 1.0, np.abs(s)) ** (1.0 - 1.0 / N)
    vals = np.where(t == 0.0, 0.0, vals)
    return vals, inf_mask


def tau_value(K: float, N: float, t: float, theta: float) -> float:
    """tau as a plain float; raises OverflowError when infinite."""
    return tau(DistortionParams(K, N, t, theta)).finite()
