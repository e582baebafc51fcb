"""White-box l_inf attacks: FGSM, I-FGSM, MIM and MadryEtAl (PGD).

Attacks see the deployed scoring function: for a trained Secure-SGD model the
first hidden layer carries the fixed training draw of gamma. Every attack
works on a single input or a batch and keeps iterates inside both the l_inf
ball of radius ``mu_a`` around ``x`` and the data range [-1, 1].
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .rng import make_rng

LO, HI = -1.0, 1.0


class AttackFamily(str, enum.Enum):
    FGSM = "fgsm"
    IFGSM = "ifgsm"
    MIM = "mim"
    MADRY = "madry"


@dataclass(frozen=True)
class AttackConfig:
    family: AttackFamily = AttackFamily.IFGSM
    mu_a: float = 0.1
    steps: int = 10
    momentum_decay: float = 1.0
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", AttackFamily(self.family))
        if self.mu_a < 0:
            raise ValueError("mu_a must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.momentum_decay < 0:
            raise ValueError("momentum_decay must be >= 0")


def _gradient_fn(target):
    # TrainedModel -> attack its network with the training gamma in place
    if hasattr(target, "model") and hasattr(target, "gamma"):
        net, gamma = target.model, target.gamma
    else:
        net, gamma = target, None
    return lambda x, y: net.input_gradient(x, y, gamma)


def _project(x_adv, x, mu_a):
    return np.clip(np.clip(x_adv, x - mu_a, x + mu_a), LO, HI)


def fgsm(model, x, y_true, mu_a: float) -> np.ndarray:
    """One signed-gradient step of size ``mu_a``, clamped to [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    g = _gradient_fn(model)(x, y_true)
    return np.clip(x + mu_a * np.sign(g), LO, HI)


def iterated_attack(model, x, y_true, config: AttackConfig, trace: list | None = None) -> np.ndarray:
    """Run ``config.steps`` projected steps of size ``mu_a / steps``.

    MIM follows the sign of a momentum buffer fed with l1-normalized
    gradients; Madry optionally starts from a uniform point in the ball.
    """
    x = np.asarray(x, dtype=np.float64)
    if config.family is AttackFamily.FGSM:
        x_adv = fgsm(model, x, y_true, config.mu_a)
        if trace is not None:
            trace.append(x_adv.copy())
        return x_adv

    grad = _gradient_fn(model)
    mu, T = config.mu_a, config.steps
    step = mu / T
    x_adv = x.copy()
    if config.family is AttackFamily.MADRY and config.random_start and mu > 0:
        x_adv = _project(x + make_rng(config.seed).uniform(-mu, mu, size=x.shape), x, mu)
    momentum = np.zeros_like(x)
    for _ in range(T):
        g = grad(x_adv, y_true)
        if config.family is AttackFamily.MIM:
            l1 = np.abs(g).sum(axis=-1, keepdims=True)
            momentum = config.momentum_decay * momentum + np.divide(g, l1, out=np.zeros_like(g), where=l1 > 0)
            direction = np.sign(momentum)
        else:
            direction = np.sign(g)
        x_adv = _project(x_adv + step * direction, x, mu)
        if trace is not None:
            trace.append(x_adv.copy())
    return x_adv


def attack(model, x, y_true, config: AttackConfig) -> np.ndarray:
    return iterated_attack(model, x, y_true, config)
