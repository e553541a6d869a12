"""Small dense networks with hand-written reverse-mode gradients.

Every layer works on batches shaped ``(B, width)``. ``forward`` caches what
``backward`` needs; ``backward(delta)`` accumulates parameter gradients and
returns the gradient with respect to the layer input.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

STANDARD = "standard"
EXPONENTIATED = "exponentiated"
CHECKPOINT_VERSION = 1


class DenseLayer:
    """Affine map ``W z + b`` or, in exponentiated mode, ``exp(W) z + b``."""

    def __init__(self, W, b, mode: str = STANDARD):
        if mode not in (STANDARD, EXPONENTIATED):
            raise ValueError(f"unknown layer mode {mode!r}")
        self.W = np.array(W, dtype=np.float64)
        self.b = np.array(b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("W must be (out, in) and b (out,)")
        self.mode = mode
        self.grad_W = np.zeros_like(self.W)
        self.grad_b = np.zeros_like(self.b)
        self._z = None

    @property
    def shape(self):
        return self.W.shape

    def effective_weight(self) -> np.ndarray:
        return np.exp(self.W) if self.mode == EXPONENTIATED else self.W

    def forward(self, z):
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        z2 = z[None, :] if single else z
        if z2.shape[-1] != self.W.shape[1]:
            raise ValueError(f"input width {z2.shape[-1]} != layer input width {self.W.shape[1]}")
        self._eW = self.effective_weight()
        self._z = z2
        out = z2 @ self._eW.T + self.b
        return out[0] if single else out

    def backward(self, delta):
        if self._z is None:
            raise RuntimeError("backward called before forward")
        delta = np.asarray(delta, dtype=np.float64)
        single = delta.ndim == 1
        d2 = delta[None, :] if single else delta
        gW = d2.T @ self._z
        if self.mode == EXPONENTIATED:
            gW *= self._eW
        self.grad_W += gW
        self.grad_b += d2.sum(axis=0)
        dz = d2 @ self._eW
        return dz[0] if single else dz

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.grad_W, self.grad_b]

    def zero_grad(self):
        self.grad_W.fill(0.0)
        self.grad_b.fill(0.0)

    def to_dict(self):
        return {"type": "dense", "mode": self.mode, "shape": list(self.W.shape),
                "W": self.W.tolist(), "b": self.b.tolist()}


def relu_n(z, N: float = 1.0):
    if N <= 0:
        raise ValueError("N must be positive")
    return np.clip(z, 0.0, N)


class ReLUN:
    """Clamp to [0, N]; gradient passes only strictly inside the interval."""

    def __init__(self, N: float = 1.0):
        if N <= 0:
            raise ValueError("N must be positive")
        self.N = float(N)
        self._mask = None

    def forward(self, z):
        z = np.asarray(z, dtype=np.float64)
        self._mask = (z > 0.0) & (z < self.N)
        return np.clip(z, 0.0, self.N)

    def backward(self, delta):
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        return delta * self._mask

    def params(self):
        return []

    def grads(self):
        return []

    def zero_grad(self):
        pass

    def to_dict(self):
        return {"type": "relu_n", "N": self.N}


class Tanh:
    def __init__(self):
        self._out = None

    def forward(self, z):
        self._out = np.tanh(z)
        return self._out

    def backward(self, delta):
        if self._out is None:
            raise RuntimeError("backward called before forward")
        return delta * (1.0 - self._out ** 2)

    def params(self):
        return []

    def grads(self):
        return []

    def zero_grad(self):
        pass

    def to_dict(self):
        return {"type": "tanh"}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, z):
        for layer in self.layers:
            z = layer.forward(z)
        return z

    __call__ = forward

    def backward(self, delta):
        for layer in reversed(self.layers):
            delta = layer.backward(delta)
        return delta

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def dense_layers(self):
        return [layer for layer in self.layers if isinstance(layer, DenseLayer)]

    def to_dict(self):
        return {"version": CHECKPOINT_VERSION, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        layers = []
        for spec in d["layers"]:
            kind = spec["type"]
            if kind == "dense":
                W = np.array(spec["W"], dtype=np.float64).reshape(spec["shape"])
                layers.append(DenseLayer(W, spec["b"], spec["mode"]))
            elif kind == "relu_n":
                layers.append(ReLUN(spec["N"]))
            elif kind == "tanh":
                layers.append(Tanh())
            else:
                raise ValueError(f"unknown layer type {kind!r}")
        return cls(layers)

    def copy(self) -> "Sequential":
        return Sequential.from_dict(self.to_dict())

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Sequential":
        return cls.from_dict(json.loads(Path(path).read_text()))


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    s = z - z.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    qm, r = np.linalg.qr(a)
    qm *= np.sign(np.diag(r))
    if rows < cols:
        qm = qm.T
    return gain * qm[:rows, :cols]


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter required")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError("gradient shape mismatch")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_update(params, grads, state: Adam):
    state.step(grads)
    return state.params


def clip_grad_norm(grads, max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
