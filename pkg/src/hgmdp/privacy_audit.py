"""Numerical checks that a calibrated Gaussian mechanism keeps its privacy loss below epsilon.

For an additive Gaussian mechanism whose outputs under neighbouring inputs
differ by a shift of (noise-weighted) length ``D``, the privacy loss
``L = ln p_D(o) / p_D'(o)`` is itself Gaussian with mean ``D**2 / (2 sigma**2)``
and variance ``D**2 / sigma**2``. The audit compares ``Pr(|L| > eps)`` with
delta, both exactly and by sampling outputs.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .mechanisms import CROSSOVER_DELTA, DomainError, Mechanism, NoiseSpec, PrivacyParams, make_spec
from .rng import make_rng, spawn, standard_normal

_CHUNK = 200_000


@dataclass(frozen=True)
class AuditReport:
    mechanism: Mechanism
    epsilon: float
    delta: float
    analytic_exceedance: float
    empirical_exceedance: float
    samples: int
    passed: bool
    # exact hockey-stick divergence at epsilon; informational, not part of `passed`
    hockey_stick: float = float("nan")

    CSV_HEADER = (
        "mechanism,epsilon,delta,analytic_exceedance,empirical_exceedance,samples,passed,hockey_stick"
    )

    def csv_row(self) -> str:
        return (
            f"{self.mechanism.value},{self.epsilon!r},{self.delta!r},"
            f"{self.analytic_exceedance!r},{self.empirical_exceedance!r},"
            f"{self.samples},{int(self.passed)},{self.hockey_stick!r}"
        )


def empirical_margin(delta: float, samples: int) -> float:
    """Three binomial standard deviations around delta."""
    return 3.0 * math.sqrt(delta * (1.0 - delta) / samples)


def privacy_loss_exceedance(sigma: float, sensitivity: float, epsilon: float) -> float:
    """Exact Pr(|L| > epsilon) for noise scale ``sigma`` and shift length ``sensitivity``."""
    if not (sigma > 0 and sensitivity > 0 and epsilon > 0):
        raise DomainError("sigma, sensitivity and epsilon must all be positive")
    mean = sensitivity**2 / (2.0 * sigma**2)
    sd = sensitivity / sigma
    upper = ndtr((mean - epsilon) / sd)
    lower = ndtr((-epsilon - mean) / sd)
    return float(upper + lower)


def hockey_stick_delta(sigma: float, sensitivity: float, epsilon: float) -> float:
    """Exact Pr[L > eps] - e^eps Pr[L' < -eps]: the smallest delta the mechanism satisfies."""
    a = sensitivity / (2.0 * sigma)
    b = epsilon * sigma / sensitivity
    return float(ndtr(a - b) - math.exp(epsilon + log_ndtr(-a - b)))


def condition_crossover(delta: float) -> bool:
    """True when the Condition-2 noise bound alone already implies Condition 1."""
    return delta < CROSSOVER_DELTA


def _loss_exceedance_count(spec, shift, epsilon, samples, rng) -> int:
    std = spec.per_component_std
    var = std**2
    # L(o) = sum_k ((o_k - A(D')_k)^2 - (o_k - A(D)_k)^2) / (2 var_k) with o = A(D) + z, A(D') = A(D) - shift
    lin = shift / var
    const = 0.5 * np.sum(shift**2 / var)
    count = 0
    done = 0
    while done < samples:
        n = min(_CHUNK, samples - done)
        z = standard_normal(rng, (n, spec.K)) * std
        loss = z @ lin + const
        count += int(np.count_nonzero(np.abs(loss) > epsilon))
        done += n
    return count


def weighted_shift_norm(spec: NoiseSpec, shift: np.ndarray) -> float:
    """Length of ``shift`` in the metric the spec's sensitivity is measured in."""
    if spec.mechanism is Mechanism.HETEROGENEOUS:
        return float(np.linalg.norm(shift / np.sqrt(spec.r.scale)))
    return float(np.linalg.norm(shift))


def monte_carlo_audit(
    spec: NoiseSpec,
    epsilon: float,
    shift_direction,
    samples: int,
    rng,
    workers: int = 1,
) -> AuditReport:
    """Sample mechanism outputs under D and count how often |L| exceeds epsilon.

    ``shift_direction`` is scaled so its weighted norm equals ``spec.sensitivity``
    (the worst-case neighbour); a zero direction audits identical inputs. With
    ``workers > 1`` the draws are split over independent child streams and the
    counts summed in stream order.
    """
    if samples < 10_000:
        raise ValueError("a Monte-Carlo audit needs at least 1e4 samples")
    direction = np.asarray(shift_direction, dtype=np.float64).reshape(-1)
    if direction.size != spec.K:
        raise ValueError(f"shift has {direction.size} components, mechanism has {spec.K}")
    delta = spec.privacy.delta
    norm = weighted_shift_norm(spec, direction)
    if norm > 0:
        shift = direction * (spec.sensitivity / norm)
    else:
        shift = np.zeros_like(direction)
    if weighted_shift_norm(spec, shift) > spec.sensitivity * (1 + 1e-12):
        raise ValueError("shift exceeds the mechanism's sensitivity")

    shift_len = weighted_shift_norm(spec, shift)
    if shift_len == 0:
        analytic = 0.0
        hs = 0.0
        count = 0
    else:
        analytic = privacy_loss_exceedance(spec.sigma, shift_len, epsilon)
        hs = hockey_stick_delta(spec.sigma, shift_len, epsilon)
        if workers <= 1:
            count = _loss_exceedance_count(spec, shift, epsilon, samples, make_rng(rng))
        else:
            seed = rng if isinstance(rng, (int, np.integer)) else int(make_rng(rng).integers(2**63))
            parts = [samples // workers + (i < samples % workers) for i in range(workers)]
            with ThreadPoolExecutor(workers) as pool:
                counts = list(
                    pool.map(
                        lambda args: _loss_exceedance_count(spec, shift, epsilon, *args),
                        zip(parts, spawn(seed, workers)),
                    )
                )
            count = sum(counts)
    empirical = count / samples
    passed = analytic <= delta and empirical <= delta + empirical_margin(delta, samples)
    return AuditReport(spec.mechanism, float(epsilon), float(delta), analytic, empirical, int(samples), passed, hs)


def audit_mechanism(
    mechanism: Mechanism | str,
    epsilon: float,
    delta: float,
    sensitivity: float = 1.0,
    samples: int = 1_000_000,
    seed: int = 0,
    k: int = 1,
) -> AuditReport:
    """Calibrate ``mechanism`` for (epsilon, delta) and audit it along the first axis."""
    p = PrivacyParams(epsilon, delta)
    spec = make_spec(mechanism, p, sensitivity, k=k)
    direction = np.zeros(spec.K)
    direction[0] = 1.0
    return monte_carlo_audit(spec, epsilon, direction, samples, seed)
