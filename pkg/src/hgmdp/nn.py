"""A small feedforward network with hand-written reverse-mode gradients.

Inputs are row vectors (or ``(n, d)`` batches). The first layer is dense or a
single 2-D convolution; its pre-activation output is the first hidden layer
``h1``, and an optional noise vector is added to it before anything else
happens. The head is a softmax over the last dense layer, trained with
categorical cross-entropy.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import make_rng, standard_normal


class ShapeError(ValueError):
    pass


class Dense:
    kind = "dense"

    def __init__(self, W, b):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ShapeError(f"dense weight {self.W.shape} and bias {self.b.shape} disagree")

    @property
    def params(self):
        return [self.W, self.b]

    @property
    def in_size(self):
        return self.W.shape[0]

    @property
    def out_size(self):
        return self.W.shape[1]

    def forward(self, x):
        return x @ self.W + self.b, x

    def backward(self, grad_out, cache):
        x = cache
        return grad_out @ self.W.T, [x.T @ grad_out, grad_out.sum(axis=0)]

    def describe(self):
        return {"kind": self.kind, "in": self.in_size, "out": self.out_size}


class ReLU:
    kind = "relu"
    params: list = []

    def forward(self, x):
        return np.maximum(x, 0.0), x

    def backward(self, grad_out, cache):
        return grad_out * (cache > 0), []

    def describe(self):
        return {"kind": self.kind}


class Conv2D:
    """Valid (unpadded) cross-correlation over a ``(channels, height, width)`` input.

    Inputs and outputs travel flattened in C-order, so the layer slots into the
    same row-vector pipeline as :class:`Dense`.
    """

    kind = "conv2d"

    def __init__(self, kernel, b, input_shape, stride=1):
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.stride = int(stride)
        c_out, c_in, kh, kw = self.kernel.shape
        if self.input_shape[0] != c_in or self.b.shape != (c_out,):
            raise ShapeError("conv kernel, bias and input shape disagree")
        _, h, w = self.input_shape
        self.out_hw = ((h - kh) // self.stride + 1, (w - kw) // self.stride + 1)
        if min(self.out_hw) < 1:
            raise ShapeError("conv kernel larger than its input")

    @property
    def params(self):
        return [self.kernel, self.b]

    @property
    def in_size(self):
        return int(np.prod(self.input_shape))

    @property
    def out_size(self):
        return self.kernel.shape[0] * self.out_hw[0] * self.out_hw[1]

    @property
    def positions(self):
        return self.out_hw[0] * self.out_hw[1]

    def _patches(self, x):
        n = x.shape[0]
        img = x.reshape((n,) + self.input_shape)
        _, _, kh, kw = self.kernel.shape
        win = sliding_window_view(img, (kh, kw), axis=(2, 3))
        s = self.stride
        # (n, c_in, oh, ow, kh, kw)
        return win[:, :, ::s, ::s][:, :, : self.out_hw[0], : self.out_hw[1]]

    def forward(self, x):
        patches = self._patches(x)
        out = np.einsum("nchwij,ocij->nohw", patches, self.kernel) + self.b[None, :, None, None]
        return out.reshape(x.shape[0], -1), patches

    def backward(self, grad_out, cache):
        patches = cache
        n = grad_out.shape[0]
        c_out = self.kernel.shape[0]
        g = grad_out.reshape(n, c_out, *self.out_hw)
        d_kernel = np.einsum("nohw,nchwij->ocij", g, patches)
        d_b = g.sum(axis=(0, 2, 3))
        d_patches = np.einsum("nohw,ocij->nchwij", g, self.kernel)
        dx = np.zeros((n,) + self.input_shape)
        _, _, kh, kw = self.kernel.shape
        s = self.stride
        oh, ow = self.out_hw
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i : i + s * oh : s, j : j + s * ow : s] += d_patches[:, :, :, :, i, j]
        return dx.reshape(n, -1), [d_kernel, d_b]

    def describe(self):
        return {
            "kind": self.kind,
            "kernel": list(self.kernel.shape),
            "input_shape": list(self.input_shape),
            "stride": self.stride,
        }


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _labels(y, n, k):
    """Integer class indices from ints or one-hot rows."""
    y = np.asarray(y)
    if y.ndim == 0:
        y = y[None]
    if y.ndim == 2 or (y.ndim == 1 and n == 1 and y.size == k and k > 1 and y.dtype.kind == "f"):
        y = np.atleast_2d(y).argmax(axis=1)
    y = y.astype(np.int64).reshape(-1)
    if y.size != n:
        raise ShapeError(f"{y.size} labels for {n} inputs")
    return y


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Model:
    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers or not isinstance(self.layers[0], (Dense, Conv2D)):
            raise ShapeError("the first layer must be dense or convolutional")
        if not isinstance(self.layers[-1], Dense):
            raise ShapeError("the last layer must be dense (it feeds the softmax)")
        for conv in self.layers[1:]:
            if isinstance(conv, Conv2D):
                raise ShapeError("only the first layer may be convolutional")

    @property
    def first(self):
        return self.layers[0]

    @property
    def input_size(self) -> int:
        return self.first.in_size

    @property
    def first_hidden_size(self) -> int:
        return self.first.out_size

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_size

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def copy(self) -> "Model":
        return Model.from_state(self.state())

    # -- forward / backward ---------------------------------------------------

    def _check(self, x, h1_noise):
        if x.shape[1] != self.input_size:
            raise ShapeError(f"input has {x.shape[1]} features, model expects {self.input_size}")
        if h1_noise is not None:
            h1_noise = np.asarray(h1_noise, dtype=np.float64)
            if h1_noise.shape[-1] != self.first_hidden_size:
                raise ShapeError(
                    f"h1 noise has length {h1_noise.shape[-1]}, first hidden layer has {self.first_hidden_size}"
                )
        return h1_noise

    def _forward(self, x, h1_noise):
        caches = []
        h, cache = self.first.forward(x)
        caches.append(cache)
        if h1_noise is not None:
            h = h + h1_noise
        h1 = h
        for layer in self.layers[1:]:
            h, cache = layer.forward(h)
            caches.append(cache)
        return h, h1, caches

    def logits(self, x, h1_noise=None):
        xb, single = _as_batch(x)
        h1_noise = self._check(xb, h1_noise)
        out, _, _ = self._forward(xb, h1_noise)
        return out[0] if single else out

    def forward(self, x, h1_noise=None):
        """Return ``(scores, h1_pre)``; ``h1_pre = first_layer(x) + h1_noise``."""
        xb, single = _as_batch(x)
        h1_noise = self._check(xb, h1_noise)
        logits, h1, _ = self._forward(xb, h1_noise)
        scores = softmax(logits)
        return (scores[0], h1[0]) if single else (scores, h1)

    def predict(self, x, h1_noise=None):
        return np.argmax(self.forward(x, h1_noise)[0], axis=-1)

    def loss(self, x, y, h1_noise=None):
        """Cross-entropy per example (a scalar for a single input)."""
        xb, single = _as_batch(x)
        h1_noise = self._check(xb, h1_noise)
        logits, _, _ = self._forward(xb, h1_noise)
        labels = _labels(y, xb.shape[0], self.n_classes)
        losses = -log_softmax(logits)[np.arange(xb.shape[0]), labels]
        return float(losses[0]) if single else losses

    def _backward(self, x, y, h1_noise):
        """Gradients of the summed loss: (params, input, h1)."""
        logits, _, caches = self._forward(x, h1_noise)
        labels = _labels(y, x.shape[0], self.n_classes)
        g = softmax(logits)
        g[np.arange(x.shape[0]), labels] -= 1.0
        grads = []
        for layer, cache in zip(reversed(self.layers[1:]), reversed(caches[1:])):
            g, pg = layer.backward(g, cache)
            grads.append(pg)
        g_h1 = g
        g_x, pg = self.first.backward(g, caches[0])
        grads.append(pg)
        flat = [p for layer_grads in reversed(grads) for p in layer_grads]
        return flat, g_x, g_h1

    def per_example_gradient(self, x, y, h1_noise=None) -> list[np.ndarray]:
        """Loss gradient for one example, one array per parameter (same order as ``params``)."""
        xb, single = _as_batch(x)
        if not single:
            raise ShapeError("per_example_gradient takes a single input vector")
        h1_noise = self._check(xb, h1_noise)
        return self._backward(xb, y, h1_noise)[0]

    def input_gradient(self, x, y, h1_noise=None) -> np.ndarray:
        """dL/dx, row-wise for a batch."""
        xb, single = _as_batch(x)
        h1_noise = self._check(xb, h1_noise)
        g = self._backward(xb, y, h1_noise)[1]
        return g[0] if single else g

    def h1_gradient(self, x, y, h1_noise=None) -> np.ndarray:
        """dL/dh1 (gradient at the first hidden pre-activation), row-wise for a batch."""
        xb, single = _as_batch(x)
        h1_noise = self._check(xb, h1_noise)
        g = self._backward(xb, y, h1_noise)[2]
        return g[0] if single else g

    # -- (de)serialization ----------------------------------------------------

    def state(self) -> dict:
        desc = []
        arrays = {}
        for i, layer in enumerate(self.layers):
            desc.append(layer.describe())
            for name, p in zip(("w", "b"), layer.params):
                arrays[f"layer{i}.{name}"] = p.copy()
        return {"layers": desc, "arrays": arrays}

    @classmethod
    def from_state(cls, state: dict) -> "Model":
        layers = []
        arrays = state["arrays"]
        for i, d in enumerate(state["layers"]):
            if d["kind"] == "dense":
                layers.append(Dense(arrays[f"layer{i}.w"].copy(), arrays[f"layer{i}.b"].copy()))
            elif d["kind"] == "relu":
                layers.append(ReLU())
            elif d["kind"] == "conv2d":
                layers.append(
                    Conv2D(arrays[f"layer{i}.w"].copy(), arrays[f"layer{i}.b"].copy(), d["input_shape"], d["stride"])
                )
            else:
                raise ValueError(f"unknown layer kind {d['kind']!r}")
        return cls(layers)


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_mlp(input_size, hidden, n_classes, seed=0, conv=None) -> Model:
    """Dense/ReLU stack; ``hidden[0]`` is the first hidden width K.

    ``conv`` optionally replaces the first dense layer with a convolution:
    ``{"input_shape": (c, h, w), "channels": c_out, "kernel": k, "stride": s}``.
    """
    rng = make_rng(seed)
    layers = []
    if conv is not None:
        c_in, h, w = conv["input_shape"]
        k = conv["kernel"]
        c_out = conv["channels"]
        kernel = _glorot(rng, c_in * k * k, c_out * k * k, (c_out, c_in, k, k))
        first = Conv2D(kernel, np.zeros(c_out), conv["input_shape"], conv.get("stride", 1))
        widths = list(hidden)
    else:
        first = Dense(_glorot(rng, input_size, hidden[0], (input_size, hidden[0])), np.zeros(hidden[0]))
        widths = list(hidden[1:])
    layers.append(first)
    prev = first.out_size
    for width in widths:
        layers += [ReLU(), Dense(_glorot(rng, prev, width, (prev, width)), np.zeros(width))]
        prev = width
    layers += [ReLU(), Dense(_glorot(rng, prev, n_classes, (prev, n_classes)), np.zeros(n_classes))]
    return Model(layers)


def random_model(rng, input_size=3, hidden=(4,), n_classes=3, scale=1.0) -> Model:
    """Model with Gaussian weights and biases; handy for gradient checks."""
    rng = make_rng(rng)
    sizes = [input_size, *hidden, n_classes]
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i:
            layers.append(ReLU())
        layers.append(Dense(scale * standard_normal(rng, (a, b)), scale * standard_normal(rng, b)))
    return Model(layers)
