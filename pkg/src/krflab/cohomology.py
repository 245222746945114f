"""Cohomology classes in the two-dimensional model basis {[omega_ref], -c_1(X)}.

Under the normalised flow a class evolves by
``a(t) = e^{-t} a_0`` and ``b(t) = e^{-t} b_0 + (1 - e^{-t})``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KahlerClass:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("class coefficients must be finite")

    def __mul__(self, c):
        return KahlerClass(c * self.a, c * self.b)

    __rmul__ = __mul__

    def __sub__(self, other):
        return KahlerClass(self.a - other.a, self.b - other.b)

    def norm(self):
        return math.hypot(self.a, self.b)

    def as_tuple(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class NefCanonical:
    """-c_1 is nef: a class is Kähler iff its [omega_ref] coefficient is positive."""

    def contains(self, c):
        return c.a > 0


@dataclass(frozen=True)
class ToyFano:
    """Toy cone where -c_1 points out of the cone: Kähler iff a - kappa * b > 0."""

    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    def contains(self, c):
        return c.a - self.kappa * c.b > 0


def evolve_class(c0, t):
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if math.isinf(t):
        return KahlerClass(0.0, 1.0)
    decay = math.exp(-t)
    return KahlerClass(decay * c0.a, decay * c0.b + (1.0 - decay))


def is_kahler(c, cone):
    return bool(cone.contains(c))


def singular_time(c0, cone):
    """sup{t : evolve_class(c0, t) is Kähler}; +inf for the nef model."""
    if not is_kahler(c0, cone):
        raise ValueError(f"{c0} is not Kähler in {cone}")
    if isinstance(cone, NefCanonical):
        return math.inf
    if isinstance(cone, ToyFano):
        # e^{-T}(a0 - kappa b0 + kappa) = kappa
        k = cone.kappa
        return math.log((c0.a - k * c0.b + k) / k)
    raise TypeError(f"unsupported cone model {cone!r}")


def singular_time_bisection(c0, cone, t_max=200.0, tol=1e-12):
    """Independent root search on the membership predicate (test oracle)."""
    if not is_kahler(c0, cone):
        raise ValueError(f"{c0} is not Kähler in {cone}")
    if is_kahler(evolve_class(c0, t_max), cone):
        return math.inf
    lo, hi = 0.0, t_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_kahler(evolve_class(c0, mid), cone):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def class_series(c0, times):
    """Coefficient arrays (a(t), b(t)) for an array of times."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    decay = np.exp(-times)
    return decay * c0.a, decay * c0.b + (1.0 - decay)
