"""Certified robustness from Gaussian noise injected into the first hidden layer.

A model whose first hidden layer receives noise calibrated to
(eps_r, delta_r) for input perturbations of size ``mu`` satisfies the
expected-score stability condition, so a prediction ``k`` is certified at
radius ``mu`` when

    E_lb[k] > exp(2 eps_r) * max_{i != k} E_ub[i] + (1 + exp(eps_r)) * delta_r.

The noise scale is fixed at training time; certification solves for the
eps_r that scale buys at each candidate ``mu`` and bisects for the largest
``mu`` that still passes.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .mechanisms import (
    DomainError,
    Mechanism,
    PrivacyParams,
    RedistributionVector,
    analytic_delta,
    calibrate_extended,
)
from .mechanisms import sample_noise
from .nn import Conv2D

EPS_CAP = 100.0
EPS_TOL = 1e-9
MU_HI = 10.0
MU_ITERS = 40


class Uncertifiable(ValueError):
    """The trained noise scale cannot support the requested radius for any eps_r <= EPS_CAP."""


class CertificationNotApplicable(RuntimeError):
    """The model carries no robustness noise (e.g. the plain DP-SGD baseline)."""


class NormKind(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


@dataclass(frozen=True)
class Sensitivity:
    delta_f: float
    norm_kind: NormKind
    r: RedistributionVector


@dataclass(frozen=True)
class ScoreEstimate:
    e_hat: np.ndarray
    e_lb: np.ndarray
    e_ub: np.ndarray
    n_draws: int
    eta: float


@dataclass(frozen=True)
class CertificationResult:
    label: int
    mu_max: float
    is_robust: bool
    e_lb: np.ndarray
    e_ub: np.ndarray
    n_draws: int
    confidence: float
    e_hat: np.ndarray | None = None


def _as_r(r, k):
    if r is None:
        return RedistributionVector.uniform(k)
    r = r if isinstance(r, RedistributionVector) else RedistributionVector(r)
    if r.K != k:
        raise ValueError(f"redistribution vector has {r.K} entries, layer has {k} outputs")
    return r


def sensitivity_l2(W1, r=None) -> float:
    """Largest l2 norm over input rows of ``W1 / sqrt(K r)``.

    ``W1`` is ``(inputs, K)``, so row ``j`` is input ``j``'s fan-out. This is
    the operator norm from l1-bounded input changes to the r-weighted l2 norm
    of the first hidden layer.
    """
    W1 = np.asarray(W1, dtype=np.float64)
    r = _as_r(r, W1.shape[1])
    return float(np.max(np.linalg.norm(W1 / np.sqrt(r.scale), axis=1)))


def sensitivity_linf(W1, r=None) -> float:
    """Upper bound on ``||W1^T (x - x') / sqrt(K r)||_2`` per unit ``||x - x'||_inf``.

    Each hidden unit ``k`` moves by at most the 1-norm of its incoming weights
    (column ``k`` of ``W1``) when every input moves by at most one, so the
    bound is the r-weighted l2 norm of those column 1-norms. It never exceeds
    ``sqrt(K) * max_k ||W1[:, k]||_1 / sqrt(K r_k)`` and equals ``sqrt(K)`` for
    the identity with uniform r.
    """
    W1 = np.asarray(W1, dtype=np.float64)
    r = _as_r(r, W1.shape[1])
    col = np.abs(W1).sum(axis=0)
    return float(np.sqrt(np.sum(col**2 / r.scale)))


def conv_sensitivity_linf(conv: Conv2D, r=None) -> float:
    """Per-feature-map l_inf sensitivity of a convolution, maximized over maps.

    Every output position of map ``c`` moves by at most ``||kernel_c||_1``; the
    map's r-weighted l2 change is bounded accordingly and the worst map wins.
    """
    r = _as_r(r, conv.out_size)
    per_map_l1 = np.abs(conv.kernel).reshape(conv.kernel.shape[0], -1).sum(axis=1)
    scale = r.scale.reshape(conv.kernel.shape[0], conv.positions)
    return float(np.max(np.sqrt(np.sum(per_map_l1[:, None] ** 2 / scale, axis=1))))


def first_layer_sensitivity(model, r=None, norm: NormKind | str = NormKind.LINF) -> Sensitivity:
    norm = NormKind(norm)
    layer = model.first
    r = _as_r(r, layer.out_size)
    if isinstance(layer, Conv2D):
        if norm is not NormKind.LINF:
            raise NotImplementedError("convolutional first layers are certified for l_inf only")
        return Sensitivity(conv_sensitivity_linf(layer, r), norm, r)
    if norm is NormKind.LINF:
        return Sensitivity(sensitivity_linf(layer.W, r), norm, r)
    if norm is NormKind.L1:
        return Sensitivity(sensitivity_l2(layer.W, r), norm, r)
    raise NotImplementedError("l2 input perturbations are not supported")


def calibrate_sigma_r(eps_r: float, delta_r: float, delta_f: float, mu: float) -> float:
    """Robustness noise scale: extended-mechanism bound for ``delta_f`` times ``mu / eps_r``."""
    if not (mu > 0 and delta_f >= 0):
        raise DomainError("mu must be positive and delta_f nonnegative")
    return calibrate_extended(PrivacyParams(eps_r, delta_r), delta_f) * mu / eps_r


def _bisect_eps(ok, cap=EPS_CAP, tol=EPS_TOL):
    """Smallest eps in (0, cap] with ok(eps), given ok is monotone false -> true."""
    if not ok(cap):
        raise Uncertifiable(f"no eps_r <= {cap} satisfies the noise requirement")
    lo, hi = 0.0, cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def solve_eps_r(sigma_r: float, delta_r: float, delta_f: float, mu: float) -> float:
    """Invert :func:`calibrate_sigma_r` in eps_r by bisection on (0, 100], abs. tolerance 1e-9.

    The returned eps_r sits on the admissible side: calibrate_sigma_r(eps_r, ...) <= sigma_r.
    """
    if not (sigma_r > 0 and delta_f > 0 and mu > 0):
        raise DomainError("sigma_r, delta_f and mu must be positive")
    return _bisect_eps(lambda e: calibrate_sigma_r(e, delta_r, delta_f, mu) <= sigma_r)


def solve_eps_r_analytic(sigma_r: float, delta_r: float, delta_f: float, mu: float) -> float:
    """Smallest eps_r for which the exact Gaussian condition holds at shift ``delta_f * mu``."""
    if not (sigma_r > 0 and delta_f > 0 and mu > 0):
        raise DomainError("sigma_r, delta_f and mu must be positive")
    t = sigma_r / (delta_f * mu)
    return _bisect_eps(lambda e: analytic_delta(t, e) <= delta_r)


def eps_for_mu(mechanism: Mechanism, sigma_r, delta_r, delta_f, mu) -> float:
    if Mechanism(mechanism) is Mechanism.ANALYTIC:
        return solve_eps_r_analytic(sigma_r, delta_r, delta_f, mu)
    return solve_eps_r(sigma_r, delta_r, delta_f, mu)


def hoeffding_width(n_draws: int, n_classes: int, eta: float) -> float:
    """Half-width valid simultaneously for all classes with probability eta."""
    return math.sqrt(math.log(2.0 * n_classes / (1.0 - eta)) / (2.0 * n_draws))


def _require_noise(tm):
    spec = getattr(tm, "gamma_spec", None)
    if spec is None or spec.sigma <= 0:
        raise CertificationNotApplicable("model has no robustness noise; certification does not apply")
    return spec


def monte_carlo_scores(tm, x, n_draws: int, eta: float, rng, chunk: int = 20_000) -> ScoreEstimate:
    """Average softmax scores over ``n_draws`` fresh robustness-noise draws."""
    spec = _require_noise(tm)
    if n_draws < 30:
        raise ValueError("need at least 30 Monte-Carlo draws")
    if not (0.5 < eta < 1):
        raise ValueError("eta must lie in (0.5, 1)")
    x = np.asarray(x, dtype=np.float64)
    partial = []
    done = 0
    while done < n_draws:
        n = min(chunk, n_draws - done)
        noise = sample_noise(spec, rng, n)
        scores, _ = tm.model.forward(np.broadcast_to(x, (n, x.size)), noise)
        # exactly rounded per-class sums, so a constant model averages to its constant
        partial.append([math.fsum(col) for col in scores.T])
        done += n
    e_hat = np.array([math.fsum(col) for col in zip(*partial)]) / n_draws
    w = hoeffding_width(n_draws, tm.model.n_classes, eta)
    return ScoreEstimate(e_hat, np.clip(e_hat - w, 0, 1), np.clip(e_hat + w, 0, 1), int(n_draws), float(eta))


def robustness_check(e_lb, e_ub, k: int, eps_r: float, delta_r: float) -> bool:
    others = np.delete(np.asarray(e_ub), k)
    runner_up = others.max() if others.size else 0.0
    return bool(e_lb[k] > math.exp(2 * eps_r) * runner_up + (1 + math.exp(eps_r)) * delta_r)


def robustness_size(
    e_hat,
    e_lb,
    e_ub,
    sigma_r: float,
    delta_r: float,
    delta_f: float,
    mechanism: Mechanism = Mechanism.HETEROGENEOUS,
    mu_hi: float = MU_HI,
    iters: int = MU_ITERS,
) -> tuple[int, float]:
    """Label and largest certifiable radius for given expectation bounds.

    Binary search over ``[0, mu_hi]``; a radius whose eps_r would exceed the
    cap counts as failing. Returns mu_max = 0 when even mu -> 0 fails.
    """
    k = int(np.argmax(e_hat))

    def passes(mu):
        try:
            eps = eps_for_mu(mechanism, sigma_r, delta_r, delta_f, mu)
        except Uncertifiable:
            return False
        return robustness_check(e_lb, e_ub, k, eps, delta_r)

    if passes(mu_hi):
        return k, float(mu_hi)
    lo, hi = 0.0, float(mu_hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return k, lo


def certify(tm, x, mu_a: float, n_draws: int, eta: float, rng) -> CertificationResult:
    """Monte-Carlo certification of one input at attack radius ``mu_a``."""
    spec = _require_noise(tm)
    est = monte_carlo_scores(tm, x, n_draws, eta, rng)
    k, mu_max = robustness_size(
        est.e_hat, est.e_lb, est.e_ub, spec.sigma, spec.privacy.delta, tm.delta_f, spec.mechanism
    )
    return CertificationResult(k, mu_max, mu_max >= mu_a, est.e_lb, est.e_ub, n_draws, eta, est.e_hat)


def mc_predict(tm, x, n_draws: int, rng) -> int:
    """Argmax of the Monte-Carlo mean score (the smoothed prediction)."""
    spec = _require_noise(tm)
    noise = sample_noise(spec, rng, n_draws)
    x = np.asarray(x, dtype=np.float64)
    scores, _ = tm.model.forward(np.broadcast_to(x, (n_draws, x.size)), noise)
    return int(np.argmax(scores.mean(axis=0)))
