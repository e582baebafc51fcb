"""Gaussian noise calibration: classic, extended, heterogeneous and analytic.

All calibrators return the smallest admissible noise scale (the bound itself);
add slack explicitly if you want it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr

from .rng import standard_normal

# Below this delta the Condition-2 bound already implies Condition 1.
CROSSOVER_DELTA = math.sqrt(2.0 / math.pi) * math.exp(-0.5)

R_FLOOR = 1e-12


class DomainError(ValueError):
    """A privacy parameter or sensitivity lies outside a mechanism's domain."""


class Mechanism(str, enum.Enum):
    CLASSIC = "classic"
    EXTENDED = "extended"
    HETEROGENEOUS = "heterogeneous"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be a positive finite number, got {self.epsilon}")
        if not (0.0 < self.delta < 1.0):
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True, eq=False)
class RedistributionVector:
    """Simplex weights deciding how noise variance is spread over K components.

    Any nonnegative vector with a positive sum is accepted and normalized.
    Entries below ``R_FLOOR`` are raised to it before the final normalization
    because the heterogeneous sensitivity divides by ``K * r_k``.
    """

    r: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=np.float64).reshape(-1)
        if r.size == 0:
            raise ValueError("redistribution vector needs at least one component")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("redistribution entries must be finite and nonnegative")
        total = r.sum()
        if total <= 0:
            raise ValueError("redistribution vector must have a positive sum")
        r = np.maximum(r / total, R_FLOOR)
        r = r / r.sum()
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @classmethod
    def restore(cls, r) -> "RedistributionVector":
        """Rebuild from an already-normalized array without touching its bits."""
        r = np.array(r, dtype=np.float64).reshape(-1)
        if r.size == 0 or np.any(r < R_FLOOR * 0.5) or abs(r.sum() - 1.0) > 1e-9:
            raise ValueError("stored redistribution vector is not normalized")
        obj = cls.uniform(r.size)
        r.setflags(write=False)
        object.__setattr__(obj, "r", r)
        return obj

    @classmethod
    def uniform(cls, k: int) -> "RedistributionVector":
        return cls(np.full(int(k), 1.0 / int(k)))

    @property
    def K(self) -> int:
        return self.r.size

    @property
    def scale(self) -> np.ndarray:
        """The vector ``K * r``."""
        return self.K * self.r

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.r, 1.0 / self.K, rtol=0, atol=1e-15))

    def __len__(self):
        return self.K

    def __eq__(self, other):
        return isinstance(other, RedistributionVector) and np.array_equal(self.r, other.r)


@dataclass(frozen=True)
class NoiseSpec:
    mechanism: Mechanism
    sigma: float
    sensitivity: float
    r: RedistributionVector
    privacy: PrivacyParams | None = field(default=None)

    @property
    def K(self) -> int:
        return self.r.K

    @property
    def per_component_std(self) -> np.ndarray:
        if self.mechanism is Mechanism.HETEROGENEOUS:
            return self.sigma * np.sqrt(self.r.scale)
        return np.full(self.K, self.sigma)


def _check_sensitivity(sensitivity: float) -> float:
    sensitivity = float(sensitivity)
    if not (sensitivity >= 0 and math.isfinite(sensitivity)):
        raise DomainError(f"sensitivity must be finite and >= 0, got {sensitivity}")
    return sensitivity


def calibrate_classic(p: PrivacyParams, sensitivity: float) -> float:
    """sqrt(2 ln(1.25/delta)) * sensitivity / epsilon, valid only for epsilon <= 1."""
    sensitivity = _check_sensitivity(sensitivity)
    if p.epsilon > 1.0:
        raise DomainError(
            f"the classic Gaussian mechanism requires epsilon in (0, 1], got {p.epsilon}"
        )
    if p.delta >= 1.25:
        raise DomainError("delta >= 1.25 makes ln(1.25/delta) nonpositive")
    return math.sqrt(2.0 * math.log(1.25 / p.delta)) * sensitivity / p.epsilon


def _extended_multiplier(epsilon: float, delta: float) -> float:
    """Noise scale per unit sensitivity for the extended mechanism."""
    s = math.log(math.sqrt(2.0 / math.pi) / delta)
    cond1 = (1.0 + math.sqrt(1.0 + 2.0 * epsilon)) / (2.0 * epsilon)
    if s < 0:
        # the tail requirement is vacuous; only the log-term condition binds
        return cond1
    cond2 = math.sqrt(2.0) / (2.0 * epsilon) * (math.sqrt(s) + math.sqrt(s + epsilon))
    if delta < CROSSOVER_DELTA:
        return cond2
    return max(cond1, cond2)


def calibrate_extended(p: PrivacyParams, sensitivity: float) -> float:
    """Noise scale of the extended Gaussian mechanism, valid for any epsilon > 0.

    sigma = sqrt(2) * sensitivity / (2 eps) * (sqrt(s) + sqrt(s + eps)),
    s = ln(sqrt(2/pi) / delta). For delta at or above ``CROSSOVER_DELTA`` the
    bound ``sensitivity * (1 + sqrt(1 + 2 eps)) / (2 eps)`` is enforced as well.
    """
    sensitivity = _check_sensitivity(sensitivity)
    return _extended_multiplier(p.epsilon, p.delta) * sensitivity


def calibrate_hgm(p: PrivacyParams, sensitivity: float, r: RedistributionVector) -> NoiseSpec:
    """Heterogeneous mechanism: base scale from the extended bound, variance spread by ``K r``.

    ``sensitivity`` must already be the r-weighted l2 sensitivity
    ``max ||(A(D) - A(D')) / sqrt(K r)||_2``.
    """
    if not isinstance(r, RedistributionVector):
        r = RedistributionVector(r)
    sigma = calibrate_extended(p, sensitivity)
    return NoiseSpec(Mechanism.HETEROGENEOUS, sigma, float(sensitivity), r, p)


def analytic_delta(t: float, epsilon: float) -> float:
    """Exact delta of a Gaussian mechanism with noise/sensitivity ratio ``t``."""
    a = 1.0 / (2.0 * t)
    b = epsilon * t
    return float(ndtr(a - b) - math.exp(epsilon + log_ndtr(-a - b)))


def _analytic_multiplier(epsilon: float, delta: float, rtol: float = 1e-10) -> float:
    lo, hi = 1.0, 1.0
    while analytic_delta(hi, epsilon) > delta:
        hi *= 2.0
    while analytic_delta(lo, epsilon) <= delta:
        lo *= 0.5
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if analytic_delta(mid, epsilon) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_analytic(p: PrivacyParams, sensitivity: float) -> float:
    """Smallest sigma meeting the exact Gaussian (epsilon, delta) condition.

    Bisection on sigma/sensitivity for
    Phi(D/2s - eps s/D) - exp(eps) Phi(-D/2s - eps s/D) <= delta,
    stopped at relative width 1e-10; the admissible endpoint is returned.
    """
    sensitivity = _check_sensitivity(sensitivity)
    if sensitivity == 0:
        return 0.0
    return _analytic_multiplier(p.epsilon, p.delta) * sensitivity


def calibrate(mechanism: Mechanism | str, p: PrivacyParams, sensitivity: float) -> float:
    """Scalar base scale for any mechanism (heterogeneous uses the extended bound)."""
    mechanism = Mechanism(mechanism)
    if mechanism is Mechanism.CLASSIC:
        return calibrate_classic(p, sensitivity)
    if mechanism is Mechanism.ANALYTIC:
        return calibrate_analytic(p, sensitivity)
    return calibrate_extended(p, sensitivity)


def make_spec(
    mechanism: Mechanism | str,
    p: PrivacyParams,
    sensitivity: float,
    k: int = 1,
    r: RedistributionVector | None = None,
) -> NoiseSpec:
    mechanism = Mechanism(mechanism)
    if mechanism is Mechanism.HETEROGENEOUS:
        return calibrate_hgm(p, sensitivity, r if r is not None else RedistributionVector.uniform(k))
    if r is not None and not r.is_uniform():
        raise ValueError(f"{mechanism.value} mechanism adds homogeneous noise; r must be uniform")
    sigma = calibrate(mechanism, p, sensitivity)
    return NoiseSpec(mechanism, sigma, float(sensitivity), r or RedistributionVector.uniform(k), p)


def sample_noise(spec: NoiseSpec, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw one noise vector of length K, or an ``(n, K)`` array of independent vectors."""
    shape = (spec.K,) if n is None else (int(n), spec.K)
    return standard_normal(rng, shape) * spec.per_component_std
