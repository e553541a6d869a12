"""Policy and value networks over encoded queue observations.

Observations are ``(K, n)`` matrices (one row per queue) or batches of them,
``(B, K, n)``. Policies expose ``logits``/``backward`` for training and the
usual action-selection helpers on top of the softmax distribution.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import (EXPONENTIATED, STANDARD, DenseLayer, ReLUN, Sequential, Tanh,
                       log_softmax, orthogonal, softmax)
from .env import encoding_width


def symlog(x):
    """sign(x) * log(1 + |x|): strictly increasing, so row monotonicity is preserved."""
    return np.sign(x) * np.log1p(np.abs(x))


def _identity(x):
    return x


INPUT_TRANSFORMS = {None: _identity, "none": _identity, "symlog": symlog}


def _batched(obs):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 2:
        return obs[None], True
    if obs.ndim != 3:
        raise ValueError("observation must be (K, n) or (B, K, n)")
    return obs, False


class _PolicyBase:
    kind = ""

    def logits(self, obs):
        raise NotImplementedError

    def backward(self, dlogits):
        raise NotImplementedError

    def params(self):
        return self.net.params()

    def grads(self):
        return self.net.grads()

    def zero_grad(self):
        self.net.zero_grad()

    def probs(self, obs):
        return softmax(self.logits(obs))

    def log_probs(self, obs):
        return log_softmax(self.logits(obs))

    def act_stochastic(self, obs, rng: np.random.Generator):
        """Sample from the softmax policy; returns (action, log_prob)."""
        lp = self.log_probs(obs)
        p = np.exp(lp)
        if lp.ndim == 1:
            a = _sample_rows(p[None], [rng])[0]
            return int(a), float(lp[a])
        raise ValueError("act_stochastic takes a single (K, n) observation; use sample_actions")

    def sample_actions(self, obs, rngs):
        """Batched sampling, one generator per row; returns (actions, log_probs, logits)."""
        z = self.logits(obs)
        lp = log_softmax(z)
        a = _sample_rows(np.exp(lp), rngs)
        return a, lp[np.arange(len(a)), a], z

    def act_deterministic(self, obs):
        """Argmax of the logits, lowest index on ties."""
        z = self.logits(obs)
        return int(np.argmax(z)) if z.ndim == 1 else np.argmax(z, axis=-1)

    def entropy(self, obs):
        lp = self.log_probs(obs)
        return -np.sum(np.exp(lp) * lp, axis=-1)

    def manifest(self) -> dict:
        raise NotImplementedError

    def save(self, path):
        Path(path).write_text(json.dumps({"manifest": self.manifest(), "net": self.net.to_dict()}))

    def copy(self):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.net = self.net.copy()
        return clone


def _sample_rows(p, rngs):
    """Inverse-CDF draw per row; each row consumes exactly one uniform of its own stream."""
    u = np.array([rng.random() for rng in rngs])
    cdf = np.cumsum(p, axis=-1)
    a = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=-1)
    return np.minimum(a, p.shape[-1] - 1)


class StnPolicy(_PolicyBase):
    """Switch-type network: one shared monotone scalar net scores every queue row.

    ``f`` is a stack of exponentiated-weight layers with ReLU-N activations and
    an exponentiated output layer, so each score is non-decreasing in every
    coordinate of its own row and independent of the other rows.

    ``bias_span`` tiles the first layer's biases over a range of row means so
    that the untrained net responds across the whole range instead of
    saturating at N; ``None`` gives zero biases. ``out_gain`` sets the average
    effective output weight times fan-in.
    """

    kind = "stn"

    def __init__(self, n: int, scheme: str, width: int = 32, depth: int = 4, N: float = 1.0,
                 rng=None, noise: float = 0.1, bias_span=(-8.0, 8.0), out_gain: float = 128.0,
                 input_transform: str | None = "symlog"):
        if depth < 1:
            raise ValueError("need at least one hidden layer")
        rng = np.random.default_rng(rng)
        self.n, self.scheme, self.width, self.depth, self.N = n, scheme, width, depth, float(N)
        self.bias_span = None if bias_span is None else tuple(float(x) for x in bias_span)
        self.out_gain = float(out_gain)
        self.input_transform = input_transform
        self._tf = INPUT_TRANSFORMS[input_transform]
        layers = []
        fan_in = n
        for l in range(depth):
            W = -np.log(fan_in) + noise * rng.standard_normal((width, fan_in))
            b = np.zeros(width)
            if l == 0 and bias_span is not None:
                lo, hi = bias_span
                b = -np.linspace(lo, hi - N, width)
            layers += [DenseLayer(W, b, EXPONENTIATED), ReLUN(N)]
            fan_in = width
        W = np.log(out_gain / fan_in) + noise * rng.standard_normal((1, fan_in))
        layers.append(DenseLayer(W, np.zeros(1), EXPONENTIATED))
        self.net = Sequential(layers)
        self._shape = None

    def scores(self, rows):
        """Apply the shared scalar net to an (M, n) array of rows."""
        return self.net.forward(self._tf(np.asarray(rows, dtype=np.float64)))[:, 0]

    def logits(self, obs):
        obs3, single = _batched(obs)
        B, K, n = obs3.shape
        if n != self.n:
            raise ValueError(f"observation row width {n} != {self.n}")
        self._shape = (B, K)
        z = self.net.forward(self._tf(obs3.reshape(B * K, n))).reshape(B, K)
        return z[0] if single else z

    def backward(self, dlogits):
        if self._shape is None:
            raise RuntimeError("backward called before forward")
        d = np.asarray(dlogits, dtype=np.float64).reshape(-1, 1)
        self.net.backward(d)

    def manifest(self):
        return {"kind": self.kind, "scheme": self.scheme, "n": self.n, "width": self.width,
                "depth": self.depth, "N": self.N, "bias_span": self.bias_span,
                "out_gain": self.out_gain, "input_transform": self.input_transform}


def _mlp(sizes, rng, out_gain, hidden_gain=np.sqrt(2.0)):
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        W = orthogonal((b, a), out_gain if last else hidden_gain, rng)
        layers.append(DenseLayer(W, np.zeros(b), STANDARD))
        if not last:
            layers.append(Tanh())
    return Sequential(layers)


class MlpPolicy(_PolicyBase):
    """Fully connected tanh network on the flattened (K*n) observation."""

    kind = "mlp"

    def __init__(self, K: int, n: int, scheme: str, hidden=(64, 64), rng=None,
                 out_gain: float = 0.01, input_transform: str | None = "symlog"):
        rng = np.random.default_rng(rng)
        self.K, self.n, self.scheme, self.hidden = K, n, scheme, tuple(hidden)
        self.input_transform = input_transform
        self._tf = INPUT_TRANSFORMS[input_transform]
        self.net = _mlp([K * n, *hidden, K], rng, out_gain)
        self._B = None

    def logits(self, obs):
        obs3, single = _batched(obs)
        B, K, n = obs3.shape
        if (K, n) != (self.K, self.n):
            raise ValueError(f"observation shape {(K, n)} != {(self.K, self.n)}")
        self._B = B
        z = self.net.forward(self._tf(obs3.reshape(B, K * n)))
        return z[0] if single else z

    def backward(self, dlogits):
        if self._B is None:
            raise RuntimeError("backward called before forward")
        self.net.backward(np.asarray(dlogits, dtype=np.float64).reshape(self._B, self.K))

    def manifest(self):
        return {"kind": self.kind, "scheme": self.scheme, "K": self.K, "n": self.n,
                "hidden": list(self.hidden), "input_transform": self.input_transform}


class CriticNet:
    """State-value network on the flattened observation.

    The raw output is multiplied by ``value_scale`` so the net itself only has
    to represent a per-step average cost rather than a discounted sum.
    """

    def __init__(self, K: int, n: int, hidden=(64, 64), rng=None, value_scale: float = 1.0,
                 input_transform: str | None = "symlog"):
        rng = np.random.default_rng(rng)
        self.K, self.n, self.hidden = K, n, tuple(hidden)
        self.input_transform = input_transform
        self._tf = INPUT_TRANSFORMS[input_transform]
        self.value_scale = float(value_scale)
        self.net = _mlp([K * n, *hidden, 1], rng, out_gain=1.0)
        self._B = None

    def value(self, obs):
        obs3, single = _batched(obs)
        B, K, n = obs3.shape
        if (K, n) != (self.K, self.n):
            raise ValueError(f"observation shape {(K, n)} != {(self.K, self.n)}")
        self._B = B
        v = self.value_scale * self.net.forward(self._tf(obs3.reshape(B, K * n)))[:, 0]
        return float(v[0]) if single else v

    __call__ = value

    def backward(self, dvalue):
        if self._B is None:
            raise RuntimeError("backward called before forward")
        d = self.value_scale * np.asarray(dvalue, dtype=np.float64).reshape(self._B, 1)
        self.net.backward(d)

    def params(self):
        return self.net.params()

    def grads(self):
        return self.net.grads()

    def zero_grad(self):
        self.net.zero_grad()

    def copy(self):
        clone = object.__new__(CriticNet)
        clone.__dict__.update(self.__dict__)
        clone.net = self.net.copy()
        return clone

    def manifest(self):
        return {"kind": "critic", "K": self.K, "n": self.n, "hidden": list(self.hidden),
                "value_scale": self.value_scale, "input_transform": self.input_transform}

    def save(self, path):
        Path(path).write_text(json.dumps({"manifest": self.manifest(), "net": self.net.to_dict()}))


def load_policy(path):
    """Rebuild a policy or critic saved with ``save``."""
    d = json.loads(Path(path).read_text())
    m = d["manifest"]
    net = Sequential.from_dict(d["net"])
    if m["kind"] == "stn":
        obj = object.__new__(StnPolicy)
        obj.__dict__.update(n=m["n"], scheme=m["scheme"], width=m["width"], depth=m["depth"],
                            N=m["N"], bias_span=None if m["bias_span"] is None else tuple(m["bias_span"]), out_gain=m["out_gain"],
                            _shape=None)
    elif m["kind"] == "mlp":
        obj = object.__new__(MlpPolicy)
        obj.__dict__.update(K=m["K"], n=m["n"], scheme=m["scheme"], hidden=tuple(m["hidden"]),
                            _B=None)
    elif m["kind"] == "critic":
        obj = object.__new__(CriticNet)
        obj.__dict__.update(K=m["K"], n=m["n"], hidden=tuple(m["hidden"]),
                            value_scale=m["value_scale"], _B=None)
    else:
        raise ValueError(f"unknown network kind {m['kind']!r}")
    obj.input_transform = m.get("input_transform")
    obj._tf = INPUT_TRANSFORMS[obj.input_transform]
    obj.net = net
    return obj


def make_policy(kind: str, K: int, scheme: str, rng=None, **kw):
    n = encoding_width(scheme)
    if kind == "stn":
        return StnPolicy(n, scheme, rng=rng, **kw)
    if kind == "mlp":
        return MlpPolicy(K, n, scheme, rng=rng, **kw)
    raise ValueError(f"unknown policy kind {kind!r}")
