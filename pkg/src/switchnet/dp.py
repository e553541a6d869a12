"""Exact average-cost policy iteration on truncated two-queue single-hop MDPs.

A state is ``(q1, q2, y1, y2)`` with ``q_k`` in ``0..L`` and ``y_k`` drawn from
a finite capacity support. Actions are 0 (serve queue 1) and 1 (serve queue 2).
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class MdpSpec:
    """Independent per-queue arrival and capacity distributions on finite supports."""
    arrival_support: tuple = (0, 1)
    arrival_probs: tuple = ((0.6, 0.4), (0.6, 0.4))
    capacity_support: tuple = (0, 1, 2)
    capacity_probs: tuple = ((0.5, 0.3, 0.2), (0.5, 0.3, 0.2))
    overflow: str = "truncate"  # or "reject": arrivals beyond L are dropped

    def __post_init__(self):
        for probs, support in ((self.arrival_probs, self.arrival_support),
                               (self.capacity_probs, self.capacity_support)):
            if len(probs) != 2:
                raise ValueError("exactly two queues are supported")
            for p in probs:
                p = np.asarray(p, dtype=np.float64)
                if p.shape != (len(support),) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                    raise ValueError(f"invalid distribution {tuple(p)} over support {support}")
        if list(self.capacity_support) != sorted(self.capacity_support):
            raise ValueError("capacity support must be increasing")
        if self.overflow not in ("truncate", "reject"):
            raise ValueError("overflow must be 'truncate' or 'reject'")

    @classmethod
    def bernoulli(cls, lam=(0.4, 0.4), cap_probs=((0.5, 0.3, 0.2), (0.5, 0.3, 0.2)),
                  cap_support=(0, 1, 2)):
        return cls((0, 1), tuple((1.0 - l, l) for l in lam), tuple(cap_support),
                   tuple(tuple(p) for p in cap_probs))


SYMMETRIC = MdpSpec.bernoulli()


@dataclass
class TruncatedMdp:
    spec: MdpSpec
    L: int
    shape: tuple              # (L+1, L+1, Y, Y)
    P: list                   # one CSR matrix per action, rows sum to 1
    cost: np.ndarray

    @property
    def n_states(self) -> int:
        return int(np.prod(self.shape))

    def states(self):
        """(n_states, 4) array of (q1, q2, y1_index, y2_index)."""
        return np.array(np.unravel_index(np.arange(self.n_states), self.shape)).T


def build_truncated_mdp(spec: MdpSpec = SYMMETRIC, L: int = 25) -> TruncatedMdp:
    if L < 1:
        raise ValueError("L must be >= 1")
    ys = np.asarray(spec.capacity_support)
    Y = len(ys)
    shape = (L + 1, L + 1, Y, Y)
    S = int(np.prod(shape))
    q1, q2, i1, i2 = np.unravel_index(np.arange(S), shape)
    y1, y2 = ys[i1], ys[i2]
    xs = np.asarray(spec.arrival_support)
    ap = [np.asarray(p) for p in spec.arrival_probs]
    cp = [np.asarray(p) for p in spec.capacity_probs]

    def clamp(q):
        if spec.overflow == "truncate":
            return np.minimum(q, L)
        return q  # "reject" handled per arrival below

    P = []
    for a in (0, 1):
        b1 = np.maximum(q1 - y1, 0) if a == 0 else q1
        b2 = np.maximum(q2 - y2, 0) if a == 1 else q2
        rows, cols, vals = [], [], []
        for (ix1, x1), (ix2, x2) in itertools.product(enumerate(xs), enumerate(xs)):
            px = ap[0][ix1] * ap[1][ix2]
            if px == 0:
                continue
            n1 = clamp(b1 + x1) if spec.overflow == "truncate" else np.where(b1 + x1 > L, b1, b1 + x1)
            n2 = clamp(b2 + x2) if spec.overflow == "truncate" else np.where(b2 + x2 > L, b2, b2 + x2)
            for j1, j2 in itertools.product(range(Y), range(Y)):
                p = px * cp[0][j1] * cp[1][j2]
                if p == 0:
                    continue
                rows.append(np.arange(S))
                cols.append(np.ravel_multi_index((n1, n2, np.full(S, j1), np.full(S, j2)), shape))
                vals.append(np.full(S, p))
        M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(S, S))
        M.sum_duplicates()
        P.append(M)
    cost = (q1 + q2).astype(np.float64)
    return TruncatedMdp(spec, L, shape, P, cost)


@dataclass
class PolicyTable:
    """Actions (0 or 1) over a (Q, Q, Y, Y) grid of (q1, q2, y1_index, y2_index)."""
    actions: np.ndarray
    capacity_support: tuple = (0, 1, 2)
    meta: dict = field(default_factory=dict)

    def action(self, q1, q2, y1, y2) -> int:
        ys = list(self.capacity_support)
        return int(self.actions[q1, q2, ys.index(y1), ys.index(y2)])

    def restrict(self, bound: int) -> "PolicyTable":
        return PolicyTable(self.actions[:bound + 1, :bound + 1].copy(), self.capacity_support,
                           dict(self.meta, region=bound))

    def region(self, y1, y2) -> np.ndarray:
        """Actions over (q1, q2) at the capacity slice (y1, y2)."""
        ys = list(self.capacity_support)
        return self.actions[:, :, ys.index(y1), ys.index(y2)]


def tabulate(policy, bound: int, capacity_support=(0, 1, 2)) -> PolicyTable:
    """Tabulate a per-state function ``policy(q, y) -> action`` for K=2."""
    Y = len(capacity_support)
    acts = np.zeros((bound + 1, bound + 1, Y, Y), dtype=np.int64)
    for q1, q2, j1, j2 in np.ndindex(acts.shape):
        q = np.array([q1, q2])
        y = np.array([capacity_support[j1], capacity_support[j2]])
        acts[q1, q2, j1, j2] = policy(q, y)
    return PolicyTable(acts, tuple(capacity_support))


class PolicyIterationError(RuntimeError):
    pass


@dataclass
class PiResult:
    table: PolicyTable
    gain: float
    bias: np.ndarray
    gains: list            # average cost of every evaluated policy
    iterations: int


def _evaluate(mdp: TruncatedMdp, policy: np.ndarray, ref: int = 0):
    """Solve g + h = c + P_pi h with h[ref] = 0; returns (g, h)."""
    S = mdp.n_states
    D1 = sp.diags((policy == 1).astype(np.float64))
    D0 = sp.diags((policy == 0).astype(np.float64))
    Ppi = D0 @ mdp.P[0] + D1 @ mdp.P[1]
    A = (sp.identity(S, format="csr") - Ppi).tolil()
    A[:, ref] = np.ones((S, 1))
    x = spla.spsolve(A.tocsc(), mdp.cost)
    if not np.all(np.isfinite(x)):
        raise PolicyIterationError("singular policy-evaluation system (policy not unichain?)")
    g = float(x[ref])
    h = x.copy()
    h[ref] = 0.0
    return g, h


def _maxweight_init(mdp: TruncatedMdp) -> np.ndarray:
    st = mdp.states()
    ys = np.asarray(mdp.spec.capacity_support)
    w1 = st[:, 0] * ys[st[:, 2]]
    w2 = st[:, 1] * ys[st[:, 3]]
    return (w2 > w1).astype(np.int64)


def policy_iteration(mdp: TruncatedMdp, init=None, tol: float = 1e-9,
                     max_iter: int = 200) -> PiResult:
    """Howard policy iteration for the average-cost criterion.

    Starts from MaxWeight (unichain) unless ``init`` is given. Improvement picks
    action 1 only when it beats action 0 by more than ``tol`` (relative to the
    bias scale), so exact ties resolve to the lowest action.
    """
    policy = _maxweight_init(mdp) if init is None else np.asarray(init).reshape(-1).copy()
    gains = []
    for it in range(1, max_iter + 1):
        g, h = _evaluate(mdp, policy)
        gains.append(g)
        Q0 = mdp.P[0] @ h
        Q1 = mdp.P[1] @ h
        thr = tol * max(1.0, float(np.abs(h).max()))
        new = (Q1 < Q0 - thr).astype(np.int64)
        if np.array_equal(new, policy):
            table = PolicyTable(policy.reshape(mdp.shape), tuple(mdp.spec.capacity_support),
                                {"L": mdp.L, "gain": g})
            return PiResult(table, g, h, gains, it)
        policy = new
    raise PolicyIterationError(f"policy iteration did not stabilise in {max_iter} iterations")


@dataclass
class SequenceResult:
    table: PolicyTable       # converged policy restricted to the region
    L: int                   # truncation level whose solution is returned
    history: list            # (L, PiResult)


def approximate_mdp_sequence(spec: MdpSpec = SYMMETRIC, region: int = 20,
                             L_schedule=(25, 30, 35, 40, 45, 50)) -> SequenceResult:
    """Solve growing truncations until two consecutive ones agree on q <= region."""
    if region >= min(L_schedule):
        raise ValueError("region bound must be below every truncation level")
    history = []
    prev = None
    for L in L_schedule:
        res = policy_iteration(build_truncated_mdp(spec, L))
        history.append((L, res))
        cur = res.table.restrict(region)
        if prev is not None and np.array_equal(prev.actions, cur.actions):
            return SequenceResult(cur, L, history)
        prev = cur
    if len(history) < 2:
        raise PolicyIterationError(f"L schedule {tuple(L_schedule)} needs at least two levels")
    diff = np.argwhere(history[-2][1].table.restrict(region).actions != prev.actions)
    raise PolicyIterationError(
        f"no agreement on q <= {region} within L schedule {tuple(L_schedule)}; "
        f"{len(diff)} disagreeing states, e.g. {diff[:5].tolist()}")


def is_switch_type(table: PolicyTable, q_sign: int = 1, y_sign: int = 1):
    """Check the switch-type structure exhaustively over the table's grid.

    For each state choosing queue i, every grid neighbour that moves queue i's
    own coordinates one step in the priority-raising direction (q by
    ``q_sign``, y by ``y_sign``, or both) must choose i too. Returns
    ``(ok, counterexamples)`` with counterexamples as
    ``((q1, q2, y1, y2), (q1', q2', y1', y2'))`` pairs in capacity units.
    """
    acts = table.actions
    ys = np.asarray(table.capacity_support)
    bad = []
    for i in (0, 1):
        qax, yax = i, 2 + i
        for dq, dy in ((1, 0), (0, 1), (1, 1)):
            steps = np.zeros(4, dtype=int)
            steps[qax] = dq * q_sign
            steps[yax] = dy * y_sign
            src = [slice(None)] * 4
            dst = [slice(None)] * 4
            for ax, s in enumerate(steps):
                n = acts.shape[ax]
                if s > 0:
                    src[ax], dst[ax] = slice(0, n - s), slice(s, n)
                elif s < 0:
                    src[ax], dst[ax] = slice(-s, n), slice(0, n + s)
            a_src = acts[tuple(src)]
            a_dst = acts[tuple(dst)]
            viol = np.argwhere((a_src == i) & (a_dst != i))
            offs = np.array([sl.start or 0 for sl in src])
            for v in viol:
                s_idx = v + offs
                d_idx = s_idx + steps
                to_units = lambda idx: (int(idx[0]), int(idx[1]), int(ys[idx[2]]), int(ys[idx[3]]))
                bad.append((to_units(s_idx), to_units(d_idx)))
    return len(bad) == 0, bad


def export_decision_regions(table: PolicyTable, y_slice, path=None) -> np.ndarray:
    """Action grid over (q1, q2) at capacity slice ``y_slice``; optionally write CSV."""
    y1, y2 = y_slice
    grid = table.region(y1, y2)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q1", "q2", "y1", "y2", "action"])
            for q1, q2 in np.ndindex(grid.shape):
                w.writerow([q1, q2, y1, y2, int(grid[q1, q2])])
    return grid
