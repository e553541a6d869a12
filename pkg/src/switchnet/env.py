"""Discrete-time single-hop scheduling and multi-path routing queues.

Queue indices are 0-based throughout the package: an action ``a`` in
``range(K)`` picks queue ``a`` to serve (single-hop) or to route the arriving
packet to (multi-path).
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

SINGLEHOP = "singlehop"
MULTIPATH = "multipath"
KINDS = (SINGLEHOP, MULTIPATH)

# observation encodings
ENC_SINGLEHOP = "singlehop"  # (q, y, lam, -mu)
ENC_MULTIPATH = "multipath"  # (-q, y, mu)
ENC_BARE = "bare"            # (q, y) or (-q, y)
ENCODINGS = (ENC_SINGLEHOP, ENC_MULTIPATH, ENC_BARE)

QUEUE_CAP = 10**9


class InvalidActionError(ValueError):
    pass


@dataclass
class EnvParams:
    kind: str
    K: int
    mu: np.ndarray
    lam: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.mu.shape != (self.K,):
            raise ValueError(f"mu must have length {self.K}")
        if self.kind == SINGLEHOP:
            if self.lam is None:
                raise ValueError("single-hop environments need arrival rates")
            self.lam = np.asarray(self.lam, dtype=np.float64)
            if self.lam.shape != (self.K,):
                raise ValueError(f"lambda must have length {self.K}")
            if np.any(self.lam < 0):
                raise ValueError("arrival rates must be non-negative")
        elif self.lam is not None:
            raise ValueError("multi-path environments have deterministic arrivals; lambda must be None")
        if np.any(self.mu < 0):
            raise ValueError("service rates must be non-negative")
        self.seed = int(self.seed) % 2**64

    def arrival_rates(self) -> np.ndarray:
        """Mean arrivals per queue and step (multi-path: zeros, the single packet is routed)."""
        if self.lam is None:
            return np.zeros(self.K)
        return self.lam

    def __eq__(self, other):
        if not isinstance(other, EnvParams):
            return NotImplemented
        lam_eq = (self.lam is None and other.lam is None) or (
            self.lam is not None and other.lam is not None and np.array_equal(self.lam, other.lam))
        return (self.kind == other.kind and self.K == other.K and self.seed == other.seed
                and np.array_equal(self.mu, other.mu) and lam_eq)

    def to_config(self) -> str:
        fmt = lambda v: ", ".join(repr(float(x)) for x in v)
        lines = ["[env]", f"kind = {self.kind}", f"K = {self.K}"]
        if self.lam is not None:
            lines.append(f"lambda = {fmt(self.lam)}")
        lines += [f"mu = {fmt(self.mu)}", f"seed = {self.seed}"]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, text: str) -> "EnvParams":
        cp = configparser.ConfigParser()
        cp.optionxform = str  # keep "K" upper-case
        cp.read_string(text)
        sec = cp["env"]
        parse = lambda s: np.array([float(x) for x in s.split(",")])
        lam = parse(sec["lambda"]) if "lambda" in sec else None
        return cls(kind=sec["kind"], K=int(sec["K"]), lam=lam, mu=parse(sec["mu"]),
                   seed=int(sec.get("seed", "0")))

    def save(self, path):
        Path(path).write_text(self.to_config())

    @classmethod
    def load(cls, path) -> "EnvParams":
        return cls.from_config(Path(path).read_text())


@dataclass
class NetworkState:
    q: np.ndarray
    y: np.ndarray
    t: int = 0
    overflowed: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.q.shape != self.y.shape or self.q.ndim != 1:
            raise ValueError("q and y must be 1-d vectors of equal length")
        if np.any(self.q < 0) or np.any(self.y < 0):
            raise ValueError("queue lengths and capacities must be non-negative")

    @property
    def K(self) -> int:
        return len(self.q)


def _check_action(action, K):
    if not (0 <= int(action) < K) or int(action) != action:
        raise InvalidActionError(f"action {action!r} outside [0, {K})")
    return int(action)


def _capped(q):
    over = bool(np.any(q > QUEUE_CAP))
    return np.minimum(q, QUEUE_CAP), over


def singlehop_step(state: NetworkState, action: int, arrivals, capacities) -> NetworkState:
    """Serve queue ``action`` with its current capacity, then add arrivals."""
    a = _check_action(action, state.K)
    q = state.q.copy()
    q[a] = max(q[a] - state.y[a], 0)
    q += np.asarray(arrivals, dtype=np.int64)
    q, over = _capped(q)
    return NetworkState(q, np.asarray(capacities, dtype=np.int64), state.t + 1,
                        state.overflowed or over)


def multipath_step(state: NetworkState, action: int, capacities) -> NetworkState:
    """Drain every server by its capacity and route the single arrival to ``action``."""
    a = _check_action(action, state.K)
    q = np.maximum(state.q - state.y, 0)
    q[a] += 1
    q, over = _capped(q)
    return NetworkState(q, np.asarray(capacities, dtype=np.int64), state.t + 1,
                        state.overflowed or over)


def backlog(q) -> np.ndarray:
    """Default per-state cost: total backlog, summed over the last axis."""
    return np.sum(q, axis=-1)


def cost(state: NetworkState, component_cost: Callable | None = None) -> float:
    if component_cost is None:
        return float(state.q.sum())
    return float(sum(component_cost(qk, yk) for qk, yk in zip(state.q, state.y)))


def encoding_width(scheme: str) -> int:
    return {ENC_SINGLEHOP: 4, ENC_MULTIPATH: 3, ENC_BARE: 2}[scheme]


def default_encoding(kind: str) -> str:
    return ENC_SINGLEHOP if kind == SINGLEHOP else ENC_MULTIPATH


def encode_rows(q, y, lam, mu, kind: str, scheme: str) -> np.ndarray:
    """Vectorised encoder: all inputs broadcast to (..., K); returns (..., K, n)."""
    if scheme not in ENCODINGS:
        raise ValueError(f"unknown encoding scheme {scheme!r}")
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if scheme == ENC_SINGLEHOP:
        if kind != SINGLEHOP:
            raise ValueError("singlehop encoding needs a single-hop environment")
        lam = np.broadcast_to(lam, q.shape)
        mu = np.broadcast_to(mu, q.shape)
        return np.stack([q, y, lam, -mu], axis=-1)
    if scheme == ENC_MULTIPATH:
        if kind != MULTIPATH:
            raise ValueError("multipath encoding needs a multi-path environment")
        return np.stack([-q, y, np.broadcast_to(mu, q.shape)], axis=-1)
    sign = 1.0 if kind == SINGLEHOP else -1.0
    return np.stack([sign * q, y], axis=-1)


def encode_observation(state: NetworkState, params: EnvParams, scheme: str) -> np.ndarray:
    """Return the (K, n) observation matrix, one row per queue."""
    return encode_rows(state.q, state.y, params.lam, params.mu, params.kind, scheme)


def sample_exogenous(params: EnvParams, rng: np.random.Generator, size=None):
    """Draw (arrivals, capacities) for one step, or ``size`` steps stacked on axis 0.

    Arrivals are Poisson(lam) for single-hop and ``None`` for multi-path
    (one packet per step, routed by the action).
    """
    shape = (params.K,) if size is None else (size, params.K)
    caps = rng.poisson(params.mu, size=shape)
    arr = rng.poisson(params.lam, size=shape) if params.kind == SINGLEHOP else None
    return arr, caps


def sample_bernoulli(p, rng: np.random.Generator, size=None):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("Bernoulli parameter must be in [0, 1]")
    shape = p.shape if size is None else (size,) + p.shape
    return (rng.random(shape) < p).astype(np.int64)


def sample_finite(support, probs, rng: np.random.Generator, size=None):
    """Draw from a finite distribution ``P(X = support[i]) = probs[i]``."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError("probabilities must be non-negative and sum to 1")
    return rng.choice(np.asarray(support), size=size, p=probs)


class VecQueueEnv:
    """Lock-step simulation of R independent runs sharing kind and K.

    Each run owns its parameters and random stream. Exogenous draws are
    pre-sampled in blocks per run, so a run's trajectory depends only on its
    own seed and actions, never on which other runs share the batch.

    ``reset`` puts every run in the empty state with fresh capacities.
    ``step(actions)`` returns the per-run cost of the state acted upon.
    """

    def __init__(self, params_list: list[EnvParams], seeds, block: int = 1024):
        if not params_list:
            raise ValueError("need at least one environment")
        kinds = {p.kind for p in params_list}
        Ks = {p.K for p in params_list}
        if len(kinds) != 1 or len(Ks) != 1:
            raise ValueError("all runs must share kind and K")
        self.params = list(params_list)
        self.kind = kinds.pop()
        self.K = Ks.pop()
        self.R = len(params_list)
        self.lam = np.stack([p.arrival_rates() for p in params_list])
        self.mu = np.stack([p.mu for p in params_list])
        self.rngs = [s if isinstance(s, np.random.Generator) else np.random.default_rng(s)
                     for s in seeds]
        if len(self.rngs) != self.R:
            raise ValueError("one seed per run required")
        self.block = block
        self.t = 0
        self.q = np.zeros((self.R, self.K), dtype=np.int64)
        self.y = np.zeros((self.R, self.K), dtype=np.int64)
        self.overflowed = np.zeros(self.R, dtype=bool)
        self._arr = None
        self._cap = None
        self._pos = block

    def _refill(self):
        caps, arrs = [], []
        for p, rng in zip(self.params, self.rngs):
            a, c = sample_exogenous(p, rng, size=self.block)
            caps.append(c)
            if a is not None:
                arrs.append(a)
        # (block, R, K)
        self._cap = np.stack(caps, axis=1)
        self._arr = np.stack(arrs, axis=1) if arrs else None
        self._pos = 0

    def _next_exogenous(self):
        if self._pos >= self.block:
            self._refill()
        i = self._pos
        self._pos += 1
        arr = self._arr[i] if self._arr is not None else None
        return arr, self._cap[i]

    def reset(self):
        self.t = 0
        self.q[:] = 0
        self.overflowed[:] = False
        _, self.y = self._next_exogenous()
        return self.q, self.y

    def observe(self, scheme: str) -> np.ndarray:
        return encode_rows(self.q, self.y, self.lam, self.mu, self.kind, scheme)

    def step(self, actions):
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.R,) or np.any(actions < 0) or np.any(actions >= self.K):
            raise InvalidActionError(f"actions must be {self.R} indices in [0, {self.K})")
        costs = self.q.sum(axis=1).astype(np.float64)
        rows = np.arange(self.R)
        arr, cap = self._next_exogenous()
        if self.kind == SINGLEHOP:
            served = np.minimum(self.q[rows, actions], self.y[rows, actions])
            self.q[rows, actions] -= served
            self.q += arr
        else:
            self.q = np.maximum(self.q - self.y, 0)
            self.q[rows, actions] += 1
        over = np.any(self.q > QUEUE_CAP, axis=1)
        if over.any():
            self.overflowed |= over
            np.minimum(self.q, QUEUE_CAP, out=self.q)
        self.y = cap
        self.t += 1
        return costs

    def select(self, keep) -> None:
        """Drop runs not in ``keep`` (bool mask or indices); survivors are unaffected."""
        idx = np.flatnonzero(keep) if np.asarray(keep).dtype == bool else np.asarray(keep)
        self.params = [self.params[i] for i in idx]
        self.rngs = [self.rngs[i] for i in idx]
        self.R = len(idx)
        for name in ("lam", "mu", "q", "y", "overflowed"):
            setattr(self, name, getattr(self, name)[idx])
        if self._cap is not None:
            self._cap = self._cap[:, idx]
        if self._arr is not None:
            self._arr = self._arr[:, idx]

    def states(self) -> list[NetworkState]:
        return [NetworkState(self.q[r].copy(), self.y[r].copy(), self.t, bool(self.overflowed[r]))
                for r in range(self.R)]


class QueueEnv:
    """Single-run convenience wrapper with a ``NetworkState`` interface."""

    def __init__(self, params: EnvParams, seed=None):
        self.params = params
        self._vec = VecQueueEnv([params], [params.seed if seed is None else seed])

    def reset(self) -> NetworkState:
        self._vec.reset()
        return self.state

    @property
    def state(self) -> NetworkState:
        return self._vec.states()[0]

    def observe(self, scheme: str) -> np.ndarray:
        return self._vec.observe(scheme)[0]

    def step(self, action: int):
        """Apply ``action``; return (next_state, cost of the pre-action state)."""
        _check_action(action, self.params.K)
        c = self._vec.step([action])[0]
        return self.state, float(c)
