"""Resonator mathematics.

A resonator maps a transformed scalar input ``X = f(x)`` to ``y = X (k - X)``.
The output peaks at ``k**2 / 4`` when ``X = k / 2`` whatever the transform,
which is what keeps node outputs bounded.  Everything here is a pure function.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EmptyCoverageError, ParameterError

# cosh^-1(1.8409): sigmoid coverage half-width times rho at T = 0.176
SIGMOID_HALF_POWER_WIDTH = 1.2198
# sqrt(ln 2): Gaussian half-power half-width in units of sigma
GAUSSIAN_HALF_POWER_WIDTH = 0.8325
# ratio of the two widths; rho = RHO_PER_SIGMA / sigma
RHO_PER_SIGMA = 1.4652


class Transform(enum.Enum):
    SCALED = "scaled"
    TRANSLATED = "translated"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class ResonatorSpec:
    """One scalar input's resonance curve.

    ``center`` is only read by the sigmoid transform; ``p`` only by the scaled
    and translated ones (scale factor and offset respectively).
    """

    transform: Transform = Transform.SIGMOID
    k: float = 1.0
    center: float = 0.0
    rho: float = 1.0
    p: float = 1.0

    def __post_init__(self) -> None:
        validate(self)


@dataclass(frozen=True)
class CoverageInterval:
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


def validate(spec: ResonatorSpec) -> None:
    if not (spec.k > 0 and math.isfinite(spec.k)):
        raise ParameterError(f"k must be positive and finite, got {spec.k}")
    if spec.transform is Transform.SIGMOID:
        if not (spec.rho > 0 and math.isfinite(spec.rho)):
            raise ParameterError(f"rho must be positive, got {spec.rho}")
        # sigmoid range is (0, 1); the peak X = k/2 has to sit strictly inside it
        if spec.k >= 2.0:
            raise ParameterError(
                f"k={spec.k} puts the sigmoid resonance at X={spec.k / 2} outside (0, 1)"
            )
    elif spec.transform is Transform.SCALED:
        if not (spec.p > 0 and math.isfinite(spec.p)):
            raise ParameterError(f"scale p must be positive, got {spec.p}")
    elif not math.isfinite(spec.p):
        raise ParameterError(f"offset p must be finite, got {spec.p}")


def transform_input(spec: ResonatorSpec, x):
    x = np.asarray(x, dtype=float)
    if spec.transform is Transform.SCALED:
        return x * spec.p
    if spec.transform is Transform.TRANSLATED:
        return x - spec.p
    return 0.5 * (1.0 + np.tanh(0.5 * spec.rho * (x - spec.center)))


def resonate(spec: ResonatorSpec, x):
    """Raw resonator output ``X (k - X)``; scalar in, float out."""
    if spec.transform is Transform.SIGMOID and spec.k == 1.0:
        # X(1-X) = sech^2(z/2)/4, exact symmetry about the centre
        z = spec.rho * (np.asarray(x, dtype=float) - spec.center)
        y = 0.25 * normalized_resonance(z)
    else:
        big_x = transform_input(spec, x)
        y = big_x * (spec.k - big_x)
    return float(y) if np.ndim(y) == 0 else y


def normalized_resonance(z):
    """``4 X (1 - X)`` for ``X = sigmoid(z)``: the k = 1 resonator scaled to peak 1.

    Written as ``4a / (1 + a)^2`` with ``a = exp(-|z|)`` so the tails never
    overflow.  This is the kernel every layer evaluates.
    """
    return normalized_resonance_(np.array(z, dtype=float))


def normalized_resonance_(z: np.ndarray) -> np.ndarray:
    """In-place variant of :func:`normalized_resonance`; overwrites and returns ``z``."""
    a = np.abs(z, out=z)
    np.negative(a, out=a)
    np.exp(a, out=a)
    d = a + 1.0
    d *= d
    a *= 4.0
    a /= d
    return a


def peak(spec: ResonatorSpec) -> tuple[float, float]:
    y_m = spec.k * spec.k / 4.0
    if spec.transform is Transform.SCALED:
        return spec.k / (2.0 * spec.p), y_m
    if spec.transform is Transform.TRANSLATED:
        return spec.k / 2.0 + spec.p, y_m
    half = spec.k / 2.0
    # logit(k/2) is zero for k = 1
    return spec.center + math.log(half / (1.0 - half)) / spec.rho, y_m


def half_power_threshold(k: float = 1.0) -> float:
    if not k > 0:
        raise ParameterError(f"k must be positive, got {k}")
    return (k * k / 4.0) / math.sqrt(2.0)


def _check_threshold(spec: ResonatorSpec, threshold: float) -> None:
    if not threshold > 0:
        raise ParameterError(f"threshold must be positive, got {threshold}")
    if threshold >= spec.k * spec.k / 4.0:
        raise EmptyCoverageError(
            f"threshold {threshold} is not below the peak {spec.k * spec.k / 4.0}"
        )


def coverage_bounds(spec: ResonatorSpec, threshold: float) -> CoverageInterval:
    """Raw input interval over which ``resonate(spec, x) >= threshold``."""
    _check_threshold(spec, threshold)
    k = spec.k
    disc = math.sqrt(k * k - 4.0 * threshold)
    lo_root, hi_root = (k - disc) / 2.0, (k + disc) / 2.0
    if spec.transform is Transform.SCALED:
        return CoverageInterval(lo_root / spec.p, hi_root / spec.p)
    if spec.transform is Transform.TRANSLATED:
        return CoverageInterval(lo_root + spec.p, hi_root + spec.p)
    if k == 1.0:
        half_width = math.acosh((1.0 / threshold - 2.0) / 2.0) / spec.rho
        return CoverageInterval(spec.center - half_width, spec.center + half_width)
    if hi_root >= 1.0:
        # the sigmoid never gets back down to the threshold on the right
        return coverage_bounds_numeric(spec, threshold)
    return CoverageInterval(
        spec.center + math.log(lo_root / (1.0 - lo_root)) / spec.rho,
        spec.center + math.log(hi_root / (1.0 - hi_root)) / spec.rho,
    )


def coverage_bounds_numeric(
    spec: ResonatorSpec, threshold: float, tol: float = 1e-10
) -> CoverageInterval:
    """Bisection fallback, valid for any transform with a single interior peak."""
    _check_threshold(spec, threshold)
    x_m, _ = peak(spec)

    def f(x: float) -> float:
        return resonate(spec, x) - threshold

    return CoverageInterval(
        _bisect_crossing(f, x_m, -1.0, tol), _bisect_crossing(f, x_m, 1.0, tol)
    )


def _bisect_crossing(f: Callable[[float], float], x_m: float, direction: float, tol: float) -> float:
    width = 1.0
    while f(x_m + direction * width) >= 0.0:
        width *= 2.0
        if width > 1e12:
            raise EmptyCoverageError("coverage is unbounded on one side")
    inside, outside = x_m, x_m + direction * width
    while abs(outside - inside) > tol * max(1.0, abs(x_m)):
        mid = 0.5 * (inside + outside)
        if f(mid) >= 0.0:
            inside = mid
        else:
            outside = mid
    return 0.5 * (inside + outside)


def rho_from_sigma(sigma: float) -> float:
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return RHO_PER_SIGMA / sigma


def coverage_from_stats(center: float, sigma: float, alpha: float = GAUSSIAN_HALF_POWER_WIDTH) -> CoverageInterval:
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    return CoverageInterval(center - alpha * sigma, center + alpha * sigma)
