"""Exact policy gradient for tabular softmax policies on enumerable MDPs.

The regularized objective is

    J_reg(theta) = J + lambda_s * H(rho) + lambda_pi * sum_s rho(s) H(pi(.|s))

where ``J = d_pi . r_pi`` is the discounted return and ``rho`` is either the
normalized discounted occupancy ``(1 - gamma) d_pi`` or the stationary
distribution of the (damped) policy-induced chain.

All gradients are analytic. For a scalar ``f`` of the state weighting with
gradient ``u = df/dd``, the matrix-inverse derivative gives

    df/dpi(a|s) = gamma * d(s) * sum_s' P(s'|s,a) w(s'),  (I - gamma P_pi) w = u

which is then pushed through the softmax Jacobian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mdp import (
    TabularMDP,
    TabularSoftmaxPolicy,
    damped_chain,
    discounted_weighting,
    induced_chain,
    policy_reward,
    row_entropies,
    stationary_solve,
)
from .records import TrainRecord

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-300
OBJECTIVE_KINDS = ("normalized_occupancy", "stationary")
EXACT_COLUMNS = ("iter", "J", "J_reg", "H_state", "H_policy", "lambda_s", "lambda_pi")


@dataclass(frozen=True)
class RegularizationWeights:
    lambda_s: float = 0.0
    lambda_pi: float = 0.1
    decay: float = 1.0
    decay_target: str = "both"  # "both", "s" or "pi"

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_pi < 0:
            raise ValueError("regularization weights must be non-negative")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.decay_target not in ("both", "s", "pi"):
            raise ValueError(f"unknown decay target {self.decay_target!r}")

    def at(self, step: int) -> "RegularizationWeights":
        """Weights after ``step`` multiplicative decays."""
        f = self.decay ** step
        ls = self.lambda_s * (f if self.decay_target in ("both", "s") else 1.0)
        lp = self.lambda_pi * (f if self.decay_target in ("both", "pi") else 1.0)
        return RegularizationWeights(ls, lp, self.decay, self.decay_target)


@dataclass(frozen=True)
class ExactPGConfig:
    learning_rate: float = 1.0
    iterations: int = 500
    weights: RegularizationWeights = field(default_factory=RegularizationWeights)
    init: str = "zeros"  # "zeros" or "gaussian"
    init_scale: float = 0.01
    seed: int = 0
    objective_entropy_kind: str = "normalized_occupancy"
    simple_entropy_grad: bool = False
    damping: float = 0.05
    max_parameters: int = 10_000

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.init not in ("zeros", "gaussian"):
            raise ValueError(f"unknown init rule {self.init!r}")
        if self.objective_entropy_kind not in OBJECTIVE_KINDS:
            raise ValueError(f"objective_entropy_kind must be one of {OBJECTIVE_KINDS}")


class TrainingAborted(FloatingPointError):
    """Raised on non-finite values; ``record`` holds the rows logged so far."""

    def __init__(self, message: str, iteration: int, record=None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.record = record


# -- quantities --------------------------------------------------------

def exact_return(mdp: TabularMDP, policy: TabularSoftmaxPolicy) -> float:
    """J = d_pi^T r_pi."""
    d = discounted_weighting(mdp, policy).values
    return float(d @ policy_reward(mdp, policy))


def _weighting(mdp, policy, kind, damping):
    if kind == "normalized_occupancy":
        return (1.0 - mdp.discount) * discounted_weighting(mdp, policy).values
    if kind == "stationary":
        return stationary_solve(induced_chain(mdp, policy), damping)
    raise ValueError(f"unknown entropy kind {kind!r}")


def _entropy_floor(p: np.ndarray) -> float:
    return float(-(p * np.log(np.maximum(p, LOG_FLOOR))).sum())


@dataclass(frozen=True)
class ObjectiveTerms:
    J: float
    state_entropy: float
    policy_entropy: float
    weights: RegularizationWeights

    @property
    def total(self) -> float:
        return (self.J + self.weights.lambda_s * self.state_entropy
                + self.weights.lambda_pi * self.policy_entropy)


def objective_terms(mdp, policy, weights, kind="normalized_occupancy", damping=0.05) -> ObjectiveTerms:
    rho = _weighting(mdp, policy, kind, damping)
    h = row_entropies(policy.probs())
    return ObjectiveTerms(exact_return(mdp, policy), _entropy_floor(rho), float(rho @ h), weights)


def exact_regularized_objective(mdp: TabularMDP, policy: TabularSoftmaxPolicy,
                                weights: RegularizationWeights,
                                kind: str = "normalized_occupancy", damping: float = 0.05) -> float:
    return objective_terms(mdp, policy, weights, kind, damping).total


# -- gradients ---------------------------------------------------------

def _softmax_backward(probs: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. pi(a|s) back to the logits."""
    return probs * (g - (probs * g).sum(axis=1, keepdims=True))


class _Pullback:
    """Shared factorizations for pulling weighting gradients back to pi."""

    def __init__(self, mdp, probs, kind, damping):
        self.mdp = mdp
        self.kind = kind
        S = mdp.num_states
        P_pi = np.einsum("sa,sat->st", probs, mdp.transitions)
        gamma = mdp.discount
        self.M = np.eye(S) - gamma * P_pi
        self.d = np.maximum(np.linalg.solve(self.M.T, mdp.start_dist), 0.0)
        if kind == "normalized_occupancy":
            self.rho = (1.0 - gamma) * self.d
        else:
            self.damping = damping
            Pd = damped_chain(P_pi, damping)
            self.Z = np.eye(S) - Pd + np.ones((S, S))
            self.rho = np.maximum(np.linalg.solve(self.Z.T, np.ones(S)), 0.0)

    def through_d(self, u: np.ndarray) -> np.ndarray:
        """df/dpi(a|s) for f depending on pi only via d_pi, with df/dd = u."""
        w = np.linalg.solve(self.M, u)
        return self.mdp.discount * self.d[:, None] * (self.mdp.transitions @ w)

    def through_rho(self, u: np.ndarray) -> np.ndarray:
        """df/dpi(a|s) for f depending on pi only via rho, with df/drho = u."""
        if self.kind == "normalized_occupancy":
            return self.through_d((1.0 - self.mdp.discount) * u)
        # stationary x of damped chain: dx^T = (1 - eps) x^T dP_pi Z^{-1}
        w = np.linalg.solve(self.Z, u)
        return (1.0 - self.damping) * self.rho[:, None] * (self.mdp.transitions @ w)


@dataclass(frozen=True)
class GradientTerms:
    J: np.ndarray
    state_entropy: np.ndarray
    policy_entropy: np.ndarray
    weights: RegularizationWeights

    @property
    def total(self) -> np.ndarray:
        return (self.J + self.weights.lambda_s * self.state_entropy
                + self.weights.lambda_pi * self.policy_entropy)


def gradient_terms(mdp: TabularMDP, policy: TabularSoftmaxPolicy, weights: RegularizationWeights,
                   kind: str = "normalized_occupancy", simple_entropy_grad: bool = False,
                   damping: float = 0.05) -> GradientTerms:
    """Analytic logit gradients of J, H(rho) and sum_s rho(s) H(pi(.|s)), separately."""
    if policy.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("policy shape does not match MDP")
    probs = policy.probs()
    pb = _Pullback(mdp, probs, kind, damping)

    # return: d(s) Q(s, a)
    v = np.linalg.solve(pb.M, (probs * mdp.rewards).sum(axis=1))
    Q = mdp.rewards + mdp.discount * (mdp.transitions @ v)
    g_J = _softmax_backward(probs, pb.d[:, None] * Q)

    # state entropy: dH/drho = -(1 + ln rho)
    u = -(1.0 + np.log(np.maximum(pb.rho, LOG_FLOOR)))
    g_H = _softmax_backward(probs, pb.through_rho(u))

    # expected policy entropy sum_s rho(s) h(s)
    logp = policy.log_probs()
    h = -(probs * logp).sum(axis=1)
    direct = pb.rho[:, None] * (-logp - 1.0)
    if not simple_entropy_grad:
        direct = direct + pb.through_rho(h)
    g_P = _softmax_backward(probs, direct)
    return GradientTerms(g_J, g_H, g_P, weights)


def exact_gradient(mdp: TabularMDP, policy: TabularSoftmaxPolicy, weights: RegularizationWeights,
                   kind: str = "normalized_occupancy", simple_entropy_grad: bool = False,
                   damping: float = 0.05) -> np.ndarray:
    return gradient_terms(mdp, policy, weights, kind, simple_entropy_grad, damping).total


# -- training ----------------------------------------------------------

def initial_logits(mdp: TabularMDP, config: ExactPGConfig) -> np.ndarray:
    shape = (mdp.num_states, mdp.num_actions)
    if config.init == "zeros":
        return np.zeros(shape)
    return np.random.default_rng(config.seed).normal(0.0, config.init_scale, size=shape)


def train_exact(mdp: TabularMDP, config: ExactPGConfig,
                return_policy: bool = False):
    """Plain gradient ascent on the regularized objective.

    Row ``i`` of the record holds the objective of the policy *before* update
    ``i``; a final row holds the policy after the last update, so the record
    has ``iterations + 1`` rows indexed 0..iterations.
    """
    if mdp.num_states * mdp.num_actions > config.max_parameters:
        raise ValueError(
            f"MDP has {mdp.num_states * mdp.num_actions} parameters, "
            f"cap is {config.max_parameters}"
        )
    theta = initial_logits(mdp, config)
    kind = config.objective_entropy_kind
    record = TrainRecord(EXACT_COLUMNS)
    for it in range(config.iterations + 1):
        w = config.weights.at(it)
        policy = TabularSoftmaxPolicy(theta)
        terms = objective_terms(mdp, policy, w, kind, config.damping)
        row = (it, terms.J, terms.total, terms.state_entropy, terms.policy_entropy,
               w.lambda_s, w.lambda_pi)
        if not np.all(np.isfinite(row[1:])):
            raise TrainingAborted(f"non-finite objective {row}", it, record)
        record.append(row)
        if it == config.iterations:
            break
        grad = exact_gradient(mdp, policy, w, kind, config.simple_entropy_grad, config.damping)
        if not np.all(np.isfinite(grad)):
            raise TrainingAborted("non-finite gradient", it, record)
        theta = theta + config.learning_rate * grad
    logger.debug("exact PG finished: J=%.6f J_reg=%.6f", record.rows[-1][1], record.rows[-1][2])
    if return_policy:
        return record, TabularSoftmaxPolicy(theta)
    return record
