"""Independent oracles shared by the unit and acceptance tests."""
import math

import numpy as np

from hgmdp.nn import build_mlp
from hgmdp.rng import named_streams, standard_normal


def numeric_grad(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """max |a - b| scaled by the larger magnitude (floor 1e-8 avoids 0/0)."""
    scale = max(np.abs(a).max(initial=0), np.abs(b).max(initial=0), 1e-8)
    return float(np.abs(a - b).max(initial=0) / scale)


def param_rel_errors(model, x, y, h1_noise=None, h=1e-5):
    analytic = model.per_example_gradient(x, y, h1_noise)
    errs = []
    for p, g in zip(model.params, analytic):
        def f(v, p=p):
            saved = p.copy()
            p[...] = v
            out = model.loss(x, y, h1_noise)
            p[...] = saved
            return out

        errs.append(rel_error(g, numeric_grad(f, p.copy(), h)))
    return errs


def max_model_error(model, x, y, h1_noise=None, h=1e-5):
    errs = param_rel_errors(model, x, y, h1_noise, h)
    gx = numeric_grad(lambda v: model.loss(v, y, h1_noise), x, h)
    errs.append(rel_error(model.input_gradient(x, y, h1_noise), gx))
    noise0 = np.zeros(model.first_hidden_size) if h1_noise is None else np.asarray(h1_noise, dtype=float)
    gh = numeric_grad(lambda v: model.loss(x, y, v), noise0, h)
    errs.append(rel_error(model.h1_gradient(x, y, h1_noise), gh))
    return max(errs)


def replay_secure_sgd(cfg, X, y):
    """Independent step-by-step transcription of Secure-SGD with HGM noise."""
    s = named_streams(cfg.seed)
    model = build_mlp(X.shape[1], cfg.hidden, int(y.max()) + 1, seed=s["init"])
    n, m = X.shape[0], cfg.batch_size

    pre = model.copy()
    for _ in range(cfg.pretrain_steps):
        idx = s["pretrain"].integers(0, n, m)
        acc = None
        for i in idx:
            g = pre.per_example_gradient(X[i], y[i])
            acc = g if acc is None else [a + b for a, b in zip(acc, g)]
        for p, g in zip(pre.params, acc):
            p -= cfg.pretrain_lr * (g / m)
    # batched dL/dh1 so the float reduction order matches train()
    mag = np.mean(np.abs(pre.h1_gradient(X, y)) ** cfg.beta, axis=0)
    r = mag / mag.sum()
    r = np.maximum(r, 1e-12)
    r = r / r.sum()
    K = r.size

    W1 = model.first.W
    delta_f = math.sqrt(np.sum(np.abs(W1).sum(axis=0) ** 2 / (K * r)))
    sq = math.log(math.sqrt(2 / math.pi) / cfg.delta_r)
    sigma_r = math.sqrt(2) / (2 * cfg.eps_r) * (math.sqrt(sq) + math.sqrt(sq + cfg.eps_r)) * delta_f / cfg.eps_r
    gamma = standard_normal(s["gamma"], K) * (sigma_r * np.sqrt(K * r))

    shapes = [p.shape for p in model.params]
    for t in range(cfg.steps):
        idx = s["batch"].integers(0, n, m)
        total = [np.zeros(sh) for sh in shapes]
        for i in idx:
            g = model.per_example_gradient(X[i], y[i], gamma)
            norm = math.sqrt(sum(float(np.sum(v * v)) for v in g))
            g = [v / max(1.0, norm / cfg.clip_norm) for v in g]
            total = [a + b for a, b in zip(total, g)]
        z = cfg.noise_scale * cfg.clip_norm * standard_normal(s["grad_noise"], sum(p.size for p in model.params))
        offs = np.cumsum([0] + [p.size for p in model.params])
        for j, p in enumerate(model.params):
            e = z[offs[j] : offs[j + 1]].reshape(shapes[j])
            p -= cfg.learning_rate * ((total[j] + e) / m)
    return model, gamma
