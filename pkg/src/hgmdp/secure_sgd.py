"""Secure-SGD: DP-SGD training with a heterogeneous Gaussian perturbation of h1.

One robustness-noise vector ``gamma`` is drawn before the first step and added
to the first hidden layer of every training example. Gradients are computed
per example, clipped to l2 norm ``clip_norm``, summed, perturbed with
``N(0, noise_scale**2 * clip_norm**2 I)`` and divided by the batch size.
Privacy accounting over the T steps is not composed here; the inputs an
accountant needs are recorded on the result.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mechanisms import (
    Mechanism,
    NoiseSpec,
    PrivacyParams,
    RedistributionVector,
    calibrate_analytic,
    sample_noise,
)
from .nn import Model, build_mlp
from .rng import named_streams, standard_normal
from .robustness import calibrate_sigma_r, first_layer_sensitivity

log = logging.getLogger(__name__)

GAMMA_MECHANISMS = {"hgm": Mechanism.HETEROGENEOUS, "extended": Mechanism.EXTENDED, "agm": Mechanism.ANALYTIC}


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1.5
    lr_decay: float = 0.0  # xi_t = learning_rate / (1 + lr_decay * t)
    clip_norm: float = 1.0
    noise_scale: float = 1.0
    epsilon: float = 1.0
    delta: float = 1e-5
    eps_r: float = 8.0
    delta_r: float = 1e-5
    beta: float = 1.0
    steps: int = 500
    seed: int = 0
    mechanism: str = "hgm"
    hidden: tuple = (64,)
    redraw_gamma: bool = False
    pretrain_steps: int = 200
    pretrain_lr: float = 0.5
    conv: dict | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.mechanism not in GAMMA_MECHANISMS:
            raise ValueError(f"mechanism must be one of {sorted(GAMMA_MECHANISMS)}")
        PrivacyParams(self.eps_r, self.delta_r)

    def learning_rate_at(self, t: int) -> float:
        return self.learning_rate / (1.0 + self.lr_decay * t)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainedModel:
    model: Model
    gamma_spec: NoiseSpec | None
    r: RedistributionVector
    delta_f: float
    gamma: np.ndarray | None
    accounting: dict
    config: TrainConfig
    history: list = field(default_factory=list)
    gamma_seed: int | None = None

    @property
    def certifiable(self) -> bool:
        return self.gamma_spec is not None and self.gamma_spec.sigma > 0

    def deterministic_scores(self, x):
        """Scores with h1 perturbed by the fixed training draw of gamma."""
        return self.model.forward(x, self.gamma)[0]


@dataclass
class TrainTrace:
    """Optional per-step recorder used by tests and diagnostics."""

    batches: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    clipped_norms: list = field(default_factory=list)
    grad_noise: list = field(default_factory=list)


def _xy(data):
    if hasattr(data, "inputs"):
        return np.asarray(data.inputs, dtype=np.float64), np.asarray(data.labels, dtype=np.int64)
    X, y = data
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)


def _n_classes(y, data):
    return int(getattr(data, "n_classes", None) or (y.max() + 1))


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip(grads, clip_norm: float):
    """g / max(1, ||g||_2 / C), applied to the whole parameter gradient."""
    factor = max(1.0, global_norm(grads) / clip_norm)
    out = [g / factor for g in grads]
    # rounding can leave the norm an ulp above C; shrink until it is not
    while factor > 1.0 and global_norm(out) > clip_norm:
        out = [g * (1.0 - 2.0**-52) for g in out]
    return out


def plain_sgd(model: Model, X, y, steps: int, batch_size: int, lr: float, rng) -> Model:
    """Non-private minibatch SGD (with-replacement batches), in place."""
    n = X.shape[0]
    for _ in range(steps):
        idx = rng.integers(0, n, batch_size)
        total = None
        for i in idx:
            g = model.per_example_gradient(X[i], y[i])
            total = g if total is None else [a + b for a, b in zip(total, g)]
        for p, g in zip(model.params, total):
            p -= lr * (g / batch_size)
    return model


def compute_r(pretrained: Model, data, beta: float) -> RedistributionVector:
    """Redistribution vector from the mean of |dL/dh1|**beta over the data."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    X, y = _xy(data)
    g = np.abs(pretrained.h1_gradient(X, y))
    s = np.mean(g**beta, axis=0)
    if not np.isfinite(s).all() or s.sum() <= 0:
        log.warning("all h1 gradient magnitudes are zero; falling back to uniform redistribution")
        return RedistributionVector.uniform(pretrained.first_hidden_size)
    return RedistributionVector(s)


def _gamma_spec(config: TrainConfig, mechanism: Mechanism, delta_f: float, r: RedistributionVector) -> NoiseSpec:
    p = PrivacyParams(config.eps_r, config.delta_r)
    if mechanism is Mechanism.ANALYTIC:
        sigma = calibrate_analytic(p, delta_f)
    else:
        sigma = calibrate_sigma_r(config.eps_r, config.delta_r, delta_f, 1.0)
    return NoiseSpec(mechanism, sigma, delta_f, r, p)


def train(config: TrainConfig, data, gamma_enabled: bool = True, trace: TrainTrace | None = None) -> TrainedModel:
    """Run Secure-SGD; with ``gamma_enabled=False`` this is plain DP-SGD."""
    X, y = _xy(data)
    n, d = X.shape
    if n == 0:
        raise ValueError("training data is empty")
    n_classes = _n_classes(y, data)
    streams = named_streams(config.seed)
    model = build_mlp(d, config.hidden, n_classes, seed=streams["init"], conv=config.conv)
    K = model.first_hidden_size
    mechanism = GAMMA_MECHANISMS[config.mechanism]

    gamma = None
    gamma_spec = None
    r = RedistributionVector.uniform(K)
    if gamma_enabled:
        if mechanism is Mechanism.HETEROGENEOUS:
            pre = plain_sgd(
                model.copy(), X, y, config.pretrain_steps, config.batch_size, config.pretrain_lr, streams["pretrain"]
            )
            r = compute_r(pre, (X, y), config.beta)
        delta_f = first_layer_sensitivity(model, r).delta_f
        gamma_spec = _gamma_spec(config, mechanism, delta_f, r)
        gamma = sample_noise(gamma_spec, streams["gamma"])

    shapes = [p.shape for p in model.params]
    sizes = [p.size for p in model.params]
    splits = np.cumsum(sizes)[:-1]
    history = []
    m = config.batch_size
    for t in range(config.steps):
        idx = streams["batch"].integers(0, n, m)
        if gamma_enabled and config.redraw_gamma and t > 0:
            gamma = sample_noise(gamma_spec, streams["gamma"])
        total = [np.zeros(s) for s in shapes]
        norms = []
        for i in idx:
            g = model.per_example_gradient(X[i], y[i], gamma)
            norms.append(global_norm(g))
            g = clip(g, config.clip_norm)
            total = [a + b for a, b in zip(total, g)]
            if trace is not None:
                trace.clipped_norms.append(global_norm(g))
        z = config.noise_scale * config.clip_norm * standard_normal(streams["grad_noise"], sum(sizes))
        noise = [part.reshape(s) for part, s in zip(np.split(z, splits), shapes)]
        lr = config.learning_rate_at(t)
        for p, g_sum, e in zip(model.params, total, noise):
            p -= lr * ((g_sum + e) / m)
        loss = float(np.mean(model.loss(X[idx], y[idx], gamma)))
        if not math.isfinite(loss) or not all(np.isfinite(p).all() for p in model.params):
            raise FloatingPointError(
                f"non-finite loss or parameters at step {t} (lr={lr}, clip={config.clip_norm}, "
                f"noise_scale={config.noise_scale}, mean grad norm={np.mean(norms):.4g})"
            )
        history.append((t, loss, float(np.mean(norms))))
        if trace is not None:
            trace.batches.append(idx)
            trace.gammas.append(None if gamma is None else gamma.copy())
            trace.grad_noise.append(z)

    if gamma_enabled:
        # W1 moved during training: certify with the sensitivity of the final weights
        delta_f = first_layer_sensitivity(model, r).delta_f
        gamma_spec = _gamma_spec(config, mechanism, delta_f, r)
    else:
        delta_f = first_layer_sensitivity(model, r).delta_f

    accounting = {
        "noise_scale": config.noise_scale,
        "clip_norm": config.clip_norm,
        "sampling_rate": m / n,
        "steps": config.steps,
        "epsilon": config.epsilon,
        "delta": config.delta,
    }
    return TrainedModel(model, gamma_spec, r, delta_f, gamma, accounting, config, history, config.seed)


def train_dpsgd_baseline(config: TrainConfig, data, trace: TrainTrace | None = None) -> TrainedModel:
    """DP-SGD without the h1 perturbation; not certifiable."""
    return train(config, data, gamma_enabled=False, trace=trace)
