"""Brute-force ground truth for tests.

These estimators deliberately avoid the numerical kernels they check: no
induced-chain or occupancy helpers, no autodiff. Monte-Carlo routines
sample actions and next states directly from the policy table and the
transition tensor.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

HORIZON_CAP = 10_000


@dataclass(frozen=True)
class McEstimate:
    mean: np.ndarray
    episodes: int
    stderr: np.ndarray
    dropped: int = 0


def _as_probs(policy) -> np.ndarray:
    if hasattr(policy, "logits"):
        z = np.asarray(policy.logits, float)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)
    return np.asarray(policy, dtype=float)


class _FlatSampler:
    """Vectorized categorical sampling from many rows at once.

    Row ``k`` of a row-stochastic table is shifted by ``k`` so a single
    ``searchsorted`` over the concatenated cumulative sums serves every row.
    """

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, float)
        self.n_rows, self.n_cols = table.shape
        cum = np.cumsum(table, axis=1)
        cum[:, -1] = 1.0
        self.flat = (cum + np.arange(self.n_rows)[:, None]).ravel()

    def __call__(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.flat, rows + u, side="right")
        return np.minimum(pos - rows * self.n_cols, self.n_cols - 1)


def _frequency(states: np.ndarray, n_states: int) -> tuple[np.ndarray, np.ndarray]:
    n = states.size
    p = np.bincount(states, minlength=n_states) / n
    return p, np.sqrt(p * (1.0 - p) / n)


def _step(states, pi_sampler, p_sampler, n_actions, rng):
    a = pi_sampler(states, rng.random(states.size))
    return p_sampler(states * n_actions + a, rng.random(states.size))


def mc_marginal(mdp, policy, t: int, episodes: int, seed: int = 0,
                chunk: int = 200_000) -> McEstimate:
    """Empirical distribution of s_t over rollouts from alpha."""
    if episodes < 1:
        raise ValueError("episodes must be positive")
    probs = _as_probs(policy)
    S, A = probs.shape
    rng = np.random.default_rng(seed)
    pi_s = _FlatSampler(probs)
    p_s = _FlatSampler(np.asarray(mdp.transitions).reshape(S * A, S))
    start = _FlatSampler(np.asarray(mdp.start_dist)[None, :])
    finals = []
    remaining = episodes
    while remaining:
        n = min(chunk, remaining)
        s = start(np.zeros(n, dtype=int), rng.random(n))
        for _ in range(t):
            s = _step(s, pi_s, p_s, A, rng)
        finals.append(s)
        remaining -= n
    mean, se = _frequency(np.concatenate(finals), S)
    return McEstimate(mean, episodes, se)


def mc_discounted_occupancy(mdp, policy, episodes: int, seed: int = 0,
                            chunk: int = 200_000) -> McEstimate:
    """Geometric-termination sampler for the normalized discounted occupancy.

    Every visited state is kept with probability 1 - gamma and the rollout
    stops there; the kept states are distributed as (1 - gamma) d_pi.
    Rollouts still alive after HORIZON_CAP steps are dropped and counted.
    """
    gamma = float(mdp.discount)
    if not gamma < 1.0:
        raise ValueError("gamma must be < 1")
    probs = _as_probs(policy)
    S, A = probs.shape
    rng = np.random.default_rng(seed)
    pi_s = _FlatSampler(probs)
    p_s = _FlatSampler(np.asarray(mdp.transitions).reshape(S * A, S))
    start = _FlatSampler(np.asarray(mdp.start_dist)[None, :])
    kept, dropped = [], 0
    remaining = episodes
    while remaining:
        n = min(chunk, remaining)
        s = start(np.zeros(n, dtype=int), rng.random(n))
        for _ in range(HORIZON_CAP):
            stop = rng.random(s.size) < (1.0 - gamma)
            kept.append(s[stop])
            s = s[~stop]
            if s.size == 0:
                break
            s = _step(s, pi_s, p_s, A, rng)
        dropped += s.size
        remaining -= n
    states = np.concatenate(kept)
    mean, se = _frequency(states, S)
    return McEstimate(mean, states.size, se, dropped)


def mc_success_probability(mdp, policy, goal_state: int, episodes: int, seed: int = 0,
                           horizon: int = 2_000) -> tuple[float, float]:
    """Fraction of rollouts that ever enter ``goal_state`` within ``horizon`` steps.

    Rollouts stop once they hit the goal or a state that no action leaves.
    """
    probs = _as_probs(policy)
    S, A = probs.shape
    P = np.asarray(mdp.transitions)
    trapped = np.array([np.all(P[s, :, s] == 1.0) for s in range(S)])
    rng = np.random.default_rng(seed)
    pi_s = _FlatSampler(probs)
    p_s = _FlatSampler(P.reshape(S * A, S))
    s = _FlatSampler(np.asarray(mdp.start_dist)[None, :])(np.zeros(episodes, dtype=int),
                                                          rng.random(episodes))
    hits = int((s == goal_state).sum())
    s = s[(s != goal_state) & ~trapped[s]]
    for _ in range(horizon):
        if s.size == 0:
            break
        s = _step(s, pi_s, p_s, A, rng)
        hit = s == goal_state
        hits += int(hit.sum())
        s = s[~hit & ~trapped[s]]
    p = hits / episodes
    return float(p), float(np.sqrt(p * (1 - p) / episodes))


def fd_gradient(f: Callable[[np.ndarray], float], params, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, same shape as params."""
    x0 = np.array(params, dtype=float)
    flat = x0.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = f(xp.reshape(x0.shape))
        fm = f(xm.reshape(x0.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x0.shape)


def max_relative_error(analytic, numeric, scale_floor: float = 1e-2, abs_floor: float = 1e-12) -> float:
    """Largest per-entry |a - n| / max(|a|, |n|, scale_floor * max|n|, abs_floor).

    Entries far below the gradient's overall scale (e.g. logits of absorbing
    states, whose true gradient is exactly zero) are compared against a
    fraction of that scale instead of their own round-off-sized magnitude.
    """
    a = np.asarray(analytic, float).ravel()
    n = np.asarray(numeric, float).ravel()
    if not a.size:
        return 0.0
    floor = max(scale_floor * float(np.max(np.abs(n))), abs_floor)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


# -- naive recomputations --------------------------------------------------

def naive_returns(rewards, gamma: float) -> np.ndarray:
    """O(T^2) double sum of discounted future rewards."""
    r = [float(x) for x in rewards]
    T = len(r)
    return np.array([sum(gamma ** (k - t) * r[k] for k in range(t, T)) for t in range(T)])


def naive_gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """O(T^2) sum of (gamma lam)^k TD errors; ``values`` has length T + 1."""
    r = [float(x) for x in rewards]
    v = [float(x) for x in values]
    T = len(r)
    delta = [r[t] + gamma * v[t + 1] - v[t] for t in range(T)]
    return np.array([sum((gamma * lam) ** (k - t) * delta[k] for k in range(t, T)) for t in range(T)])


def iterative_policy_evaluation(mdp, policy, tol: float = 1e-10,
                                max_iters: int = 10_000_000) -> np.ndarray:
    """Fixed-point sweep v <- sum_a pi (r + gamma sum_s' P v) until sup-norm change < tol."""
    probs = _as_probs(policy)
    P = np.asarray(mdp.transitions)
    R = np.asarray(mdp.rewards)
    gamma = mdp.discount
    v = np.zeros(P.shape[0])
    for _ in range(max_iters):
        q = R + gamma * np.tensordot(P, v, axes=([2], [0]))
        nxt = (probs * q).sum(axis=1)
        if np.max(np.abs(nxt - v)) < tol:
            return nxt
        v = nxt
    raise RuntimeError("iterative policy evaluation did not converge")


def truncated_occupancy(mdp, policy, T: int) -> np.ndarray:
    """sum_{t=0}^{T} gamma^t alpha^T P_pi^t by explicit per-step propagation."""
    probs = _as_probs(policy)
    P = np.asarray(mdp.transitions)
    x = np.asarray(mdp.start_dist, float).copy()
    total = np.zeros_like(x)
    g = 1.0
    for _ in range(T + 1):
        total += g * x
        x = np.einsum("s,sa,sat->t", x, probs, P)
        g *= mdp.discount
    return total


def absorption_probability(mdp, goal_state: int, policy) -> float:
    """P(ever reach goal) from alpha, by a linear solve over non-absorbing states."""
    probs = _as_probs(policy)
    P = np.einsum("sa,sat->st", probs, np.asarray(mdp.transitions))
    n = P.shape[0]
    absorbing = np.isclose(np.diag(P), 1.0)
    free = ~absorbing
    free[goal_state] = False
    idx = np.flatnonzero(free)
    h = np.zeros(n)
    h[goal_state] = 1.0
    A = np.eye(idx.size) - P[np.ix_(idx, idx)]
    h[idx] = np.linalg.solve(A, P[idx, goal_state])
    return float(np.asarray(mdp.start_dist) @ h)


def bfs_distance(open_cells, src, dst) -> int | None:
    """Shortest 4-connected path length over a set of open cells."""
    from collections import deque

    open_cells = set(open_cells)
    dist = {src: 0}
    q = deque([src])
    while q:
        c = q.popleft()
        if c == dst:
            return dist[c]
        x, y = c
        for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if n in open_cells and n not in dist:
                dist[n] = dist[c] + 1
                q.append(n)
    return None


def reference_pg_gradients(params: dict, x, actions, advantages, value_targets=None,
                           value_coef: float = 0.5) -> dict:
    """Hand-derived gradients of the unregularized policy-gradient loss.

    Network: ``h = tanh(x W0 + b0)``, ``logits = h Wa + ba``, ``v = h Wv + bv``
    (one hidden layer, parameter names as in ``NeuralPolicy.state_dict``).
    Loss: ``-mean(log pi(a|s) A)`` plus ``value_coef * mean((v - target)^2)``
    when targets are given. The latent head receives zero gradient.
    """
    x = np.asarray(x, float)
    actions = np.asarray(actions, int)
    adv = np.asarray(advantages, float)
    n = x.shape[0]
    W0, b0 = params["trunk.0.W"], params["trunk.0.b"]
    Wa, ba = params["action.W"], params["action.b"]
    Wv, bv = params["value.W"], params["value.b"]
    pre = x @ W0 + b0
    h = np.tanh(pre)
    logits = h @ Wa + ba
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), actions] = 1.0
    # d(-mean(logp_a * A))/dlogits = (p - onehot) * A / n
    g_logits = (p - onehot) * adv[:, None] / n
    grads = {"action.W": h.T @ g_logits, "action.b": g_logits.sum(axis=0)}
    g_h = g_logits @ Wa.T
    if value_targets is not None:
        v = (h @ Wv + bv)[:, 0]
        g_v = (2.0 * value_coef / n) * (v - np.asarray(value_targets, float))
        grads["value.W"] = h.T @ g_v[:, None]
        grads["value.b"] = np.array([g_v.sum()])
        g_h = g_h + g_v[:, None] @ Wv.T
    else:
        grads["value.W"] = np.zeros_like(Wv)
        grads["value.b"] = np.zeros_like(bv)
    g_pre = g_h * (1.0 - h * h)
    grads["trunk.0.W"] = x.T @ g_pre
    grads["trunk.0.b"] = g_pre.sum(axis=0)
    grads["latent.W"] = np.zeros_like(params["latent.W"])
    grads["latent.b"] = np.zeros_like(params["latent.b"])
    return grads
