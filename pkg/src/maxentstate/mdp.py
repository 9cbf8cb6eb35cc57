"""Exact finite-MDP mathematics.

Policy-induced Markov chains, policy evaluation, discounted state
weightings and their normalized form, per-step state marginals,
stationary distributions and entropy helpers. Everything here is a pure
function of immutable inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

PROB_ATOL = 1e-9
CLAMP_ATOL = 1e-12

KINDS = ("discounted_weighting", "normalized_occupancy", "per_step_marginal", "stationary")


class ConvergenceError(RuntimeError):
    """Iterative solver did not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite discounted MDP with dense transition tensor ``P[s, a, s']``."""

    transitions: np.ndarray
    rewards: np.ndarray
    start_dist: np.ndarray
    discount: float

    def __post_init__(self):
        P = _frozen(self.transitions)
        R = _frozen(self.rewards)
        alpha = _frozen(self.start_dist)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)
        object.__setattr__(self, "start_dist", alpha)
        object.__setattr__(self, "discount", float(self.discount))

        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transitions must have shape [S, A, S], got {P.shape}")
        S, A, _ = P.shape
        if R.shape != (S, A):
            raise ValueError(f"rewards must have shape {(S, A)}, got {R.shape}")
        if alpha.shape != (S,):
            raise ValueError(f"start_dist must have length {S}, got {alpha.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > PROB_ATOL:
            raise ValueError("every transition row P(.|s,a) must be a probability vector")
        if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > PROB_ATOL:
            raise ValueError("start_dist must be a probability vector")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    def with_rewards(self, rewards: np.ndarray) -> "TabularMDP":
        return TabularMDP(self.transitions, rewards, self.start_dist, self.discount)

    def with_discount(self, discount: float) -> "TabularMDP":
        return TabularMDP(self.transitions, self.rewards, self.start_dist, discount)

    # -- plain-text serialization -------------------------------------
    def dumps(self) -> str:
        S, A = self.num_states, self.num_actions
        lines = [f"{S} {A} {self.discount!r}"]
        for s in range(S):
            for a in range(A):
                row = " ".join(repr(float(p)) for p in self.transitions[s, a])
                lines.append(f"{s} {a} {float(self.rewards[s, a])!r} {row}")
        lines.append(" ".join(repr(float(p)) for p in self.start_dist))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "TabularMDP":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 3:
            raise ValueError("header line must be 'S A gamma'")
        S, A, gamma = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
        if len(rows) != 1 + S * A + 1:
            raise ValueError(f"expected {S * A} transition lines and one start line")
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        seen = np.zeros((S, A), dtype=bool)
        for lineno, row in enumerate(rows[1:1 + S * A], start=2):
            if len(row) != 3 + S:
                raise ValueError(f"line {lineno}: expected {3 + S} fields, got {len(row)}")
            s, a = int(row[0]), int(row[1])
            R[s, a] = float(row[2])
            P[s, a] = [float(x) for x in row[3:]]
            seen[s, a] = True
        if not seen.all():
            raise ValueError("missing (s, a) lines")
        alpha = np.array([float(x) for x in rows[-1]])
        return cls(P, R, alpha, gamma)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "TabularMDP":
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class TabularSoftmaxPolicy:
    """Softmax policy over a logit table ``theta[s, a]`` (temperature 1)."""

    logits: np.ndarray

    def __post_init__(self):
        th = _frozen(self.logits)
        if th.ndim != 2:
            raise ValueError(f"logits must be a [S, A] matrix, got shape {th.shape}")
        object.__setattr__(self, "logits", th)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularSoftmaxPolicy":
        return cls(np.zeros((num_states, num_actions)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape

    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def log_probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class OccupancyVector:
    values: np.ndarray
    kind: str
    discount: float | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown occupancy kind {self.kind!r}")
        object.__setattr__(self, "values", _frozen(self.values))

    def total(self) -> float:
        return float(self.values.sum())


def _check_pair(mdp: TabularMDP, policy: TabularSoftmaxPolicy) -> None:
    if policy.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(
            f"policy shape {policy.shape} does not match MDP "
            f"({mdp.num_states}, {mdp.num_actions})"
        )


def induced_chain(mdp: TabularMDP, policy: TabularSoftmaxPolicy) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    _check_pair(mdp, policy)
    return np.einsum("sa,sat->st", policy.probs(), mdp.transitions)


def policy_reward(mdp: TabularMDP, policy: TabularSoftmaxPolicy) -> np.ndarray:
    _check_pair(mdp, policy)
    return (policy.probs() * mdp.rewards).sum(axis=1)


def policy_evaluation(mdp: TabularMDP, policy: TabularSoftmaxPolicy) -> np.ndarray:
    """Solve (I - gamma P_pi) v = r_pi."""
    P_pi = induced_chain(mdp, policy)
    M = np.eye(mdp.num_states) - mdp.discount * P_pi
    try:
        return np.linalg.solve(M, policy_reward(mdp, policy))
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"policy evaluation solve failed: {exc}") from exc


def _clamp_nonneg(x: np.ndarray, what: str) -> np.ndarray:
    if np.any(x < -CLAMP_ATOL):
        raise FloatingPointError(f"{what} has entries below -{CLAMP_ATOL}: min {x.min():.3e}")
    return np.maximum(x, 0.0)


def discounted_weighting(mdp: TabularMDP, policy: TabularSoftmaxPolicy) -> OccupancyVector:
    """d_pi^T = alpha^T (I - gamma P_pi)^{-1}, summing to 1/(1-gamma)."""
    if mdp.discount >= 1.0:
        raise ValueError("discounted weighting requires gamma < 1")
    P_pi = induced_chain(mdp, policy)
    M = np.eye(mdp.num_states) - mdp.discount * P_pi
    d = np.linalg.solve(M.T, mdp.start_dist)
    return OccupancyVector(_clamp_nonneg(d, "discounted weighting"),
                           "discounted_weighting", mdp.discount)


def normalize_occupancy(d: OccupancyVector) -> OccupancyVector:
    if d.kind != "discounted_weighting":
        raise TypeError(f"normalize_occupancy expects a discounted weighting, got {d.kind!r}")
    return OccupancyVector((1.0 - d.discount) * d.values, "normalized_occupancy", d.discount)


def normalized_occupancy(mdp: TabularMDP, policy: TabularSoftmaxPolicy) -> OccupancyVector:
    return normalize_occupancy(discounted_weighting(mdp, policy))


def marginal_state_distribution(mdp: TabularMDP, policy: TabularSoftmaxPolicy, t: int) -> OccupancyVector:
    """alpha^T P_pi^t by t forward vector-matrix products."""
    if t < 0:
        raise ValueError("t must be non-negative")
    P_pi = induced_chain(mdp, policy)
    x = mdp.start_dist.copy()
    for _ in range(t):
        x = x @ P_pi
    return OccupancyVector(x, "per_step_marginal", mdp.discount)


def damped_chain(chain: np.ndarray, damping: float) -> np.ndarray:
    chain = np.asarray(chain, dtype=float)
    n = chain.shape[0]
    return (1.0 - damping) * chain + damping / n


def stationary_distribution(chain: np.ndarray, tol: float = 1e-12, damping: float = 0.05,
                            max_iters: int = 100_000) -> OccupancyVector:
    """Fixed point of x <- (1 - eps) x P + eps * uniform, by power iteration."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim != 2 or chain.shape[0] != chain.shape[1]:
        raise ValueError(f"chain must be square, got {chain.shape}")
    if np.max(np.abs(chain.sum(axis=1) - 1.0)) > PROB_ATOL:
        raise ValueError("chain must be row-stochastic")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    P = damped_chain(chain, damping)
    n = P.shape[0]
    x = np.full(n, 1.0 / n)
    residual = np.inf
    for _ in range(max_iters):
        nxt = x @ P
        nxt /= nxt.sum()
        residual = np.abs(nxt - x).sum()
        x = nxt
        if residual < tol:
            return OccupancyVector(x, "stationary")
    raise ConvergenceError(f"power iteration did not converge in {max_iters} iterations", residual)


def stationary_solve(chain: np.ndarray, damping: float = 0.05) -> np.ndarray:
    """Stationary vector of the damped chain by a direct linear solve.

    Solves x^T (I - P + 1 1^T) = 1^T, which pins sum(x) = 1.
    """
    P = damped_chain(chain, damping)
    n = P.shape[0]
    x = np.linalg.solve((np.eye(n) - P + np.ones((n, n))).T, np.ones(n))
    return _clamp_nonneg(x, "stationary distribution")


def entropy(dist: Iterable[float]) -> float:
    """Shannon entropy in nats with 0 ln 0 = 0."""
    p = np.asarray(dist, dtype=float)
    if np.any(p < -CLAMP_ATOL):
        raise ValueError(f"negative probability {p.min():.3e}")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"distribution sums to {p.sum():.9f}, normalize first")
    p = np.maximum(p, 0.0)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def row_entropies(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


def expected_policy_entropy(policy: TabularSoftmaxPolicy, weights) -> float:
    """sum_s w(s) H(pi(.|s)) for a normalized state weighting w."""
    w = weights.values if isinstance(weights, OccupancyVector) else np.asarray(weights, float)
    if isinstance(weights, OccupancyVector) and weights.kind == "discounted_weighting":
        raise TypeError("weights must be normalized; call normalize_occupancy first")
    if abs(w.sum() - 1.0) > 1e-8:
        raise TypeError(f"weights sum to {w.sum():.9f}, expected a distribution")
    if w.shape != (policy.shape[0],):
        raise ValueError("weights length does not match the number of states")
    return float(w @ row_entropies(policy.probs()))


def random_mdp(num_states: int, num_actions: int, discount: float,
               rng: np.random.Generator, sparsity: float = 0.0) -> TabularMDP:
    """Dense random MDP with Dirichlet transitions and Gaussian rewards."""
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        mask[..., 0] = False
        P = np.where(mask, 0.0, P)
        P /= P.sum(axis=2, keepdims=True)
    R = rng.normal(size=(num_states, num_actions))
    alpha = rng.dirichlet(np.ones(num_states))
    return TabularMDP(P, R, alpha, discount)
