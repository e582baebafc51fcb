"""Versioned ``.npz`` checkpoints for trained models.

Layout (all keys live in one ``numpy.savez`` archive):

``meta``
    0-d unicode array holding a JSON object:
    ``format`` = "hgmdp-checkpoint", ``version`` = 1,
    ``layers`` (list of layer descriptors: ``kind`` plus shape fields),
    ``gamma_spec`` (``mechanism``, ``sigma``, ``sensitivity``, ``eps_r``,
    ``delta_r``) or null, ``delta_f``, ``gamma_seed``, ``config`` (the
    TrainConfig fields), ``accounting`` (noise_scale, clip_norm,
    sampling_rate, steps, epsilon, delta), ``history`` (rows of
    [step, loss, grad_norm_mean]) and ``dataset`` (free-form provenance).
``layer{i}.w`` / ``layer{i}.b``
    float64 weights and biases of layer ``i`` (dense: ``(in, out)``;
    conv: ``(c_out, c_in, kh, kw)``). ReLU layers have no arrays.
``r``
    float64 redistribution vector of length K.
``gamma``
    the training draw of the robustness noise (absent for baselines).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import FormatError
from .mechanisms import Mechanism, NoiseSpec, PrivacyParams, RedistributionVector
from .nn import Model
from .secure_sgd import TrainConfig, TrainedModel

FORMAT = "hgmdp-checkpoint"
VERSION = 1


def save_checkpoint(tm: TrainedModel, path, dataset: dict | None = None) -> Path:
    path = Path(path)
    state = tm.model.state()
    spec = tm.gamma_spec
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "layers": state["layers"],
        "gamma_spec": None
        if spec is None
        else {
            "mechanism": spec.mechanism.value,
            "sigma": spec.sigma,
            "sensitivity": spec.sensitivity,
            "eps_r": spec.privacy.epsilon,
            "delta_r": spec.privacy.delta,
        },
        "delta_f": tm.delta_f,
        "gamma_seed": tm.gamma_seed,
        "config": tm.config.to_dict(),
        "accounting": tm.accounting,
        "history": [list(h) for h in tm.history],
        "dataset": dataset or {},
    }
    arrays = dict(state["arrays"])
    arrays["r"] = tm.r.r
    if tm.gamma is not None:
        arrays["gamma"] = tm.gamma
    with open(path, "wb") as f:
        np.savez(f, meta=np.array(json.dumps(meta)), **arrays)
    return path


def load_checkpoint(path) -> tuple[TrainedModel, dict]:
    """Return the trained model and the checkpoint's dataset provenance."""
    try:
        z = np.load(path, allow_pickle=False)
    except ValueError as err:
        raise FormatError(f"{path}: not a readable .npz archive ({err})") from err
    if not hasattr(z, "files"):
        raise FormatError(f"{path}: expected an .npz archive, found a bare array")
    with z:
        if "meta" not in z.files:
            raise FormatError(f"{path}: missing meta record")
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != FORMAT:
            raise FormatError(f"{path}: not an {FORMAT} file")
        if meta.get("version") != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k] for k in z.files if k.startswith("layer")}
        r = RedistributionVector.restore(z["r"])
        gamma = z["gamma"] if "gamma" in z.files else None
    model = Model.from_state({"layers": meta["layers"], "arrays": arrays})
    gs = meta["gamma_spec"]
    spec = None
    if gs is not None:
        spec = NoiseSpec(
            Mechanism(gs["mechanism"]), gs["sigma"], gs["sensitivity"], r, PrivacyParams(gs["eps_r"], gs["delta_r"])
        )
    config = TrainConfig(**meta["config"])
    tm = TrainedModel(
        model,
        spec,
        r,
        meta["delta_f"],
        gamma,
        meta["accounting"],
        config,
        [tuple(h) for h in meta["history"]],
        meta["gamma_seed"],
    )
    return tm, meta["dataset"]
