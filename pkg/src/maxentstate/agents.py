"""Sampled policy-gradient agents with policy- and latent-state-entropy bonuses.

Per step the reward is augmented with ``lambda_pi * H(pi(.|s_t))`` and
``lambda_s * H(q(z|s_t))``, and both entropies also enter the loss as
explicit regularizers so their gradients reach the network directly.
Two estimators are provided: REINFORCE on augmented returns-to-go and an
actor-critic with generalized advantage estimation.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import diffnet as dn
from .exact_pg import RegularizationWeights, TrainingAborted
from .gridworlds import GridEnv
from .records import TrainRecord

logger = logging.getLogger(__name__)

AGENT_COLUMNS = ("update", "env_return_mean", "env_return_stderr", "H_policy_mean",
                 "H_latent_mean", "coverage")
ALGORITHMS = ("reinforce", "a2c_gae")


@dataclass(frozen=True)
class AgentConfig:
    algorithm: str = "reinforce"
    weights: RegularizationWeights = field(default_factory=RegularizationWeights)
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 1e-3
    rollout_batch: int = 8
    max_updates: int = 200
    seed: int = 0
    bonus_in_critic: bool = True
    normalize_advantages: bool = True
    max_grad_norm: float = 0.5
    value_coef: float = 0.5
    kl_weight: float = 0.0
    z_dim: int = 64
    hidden: tuple = (64,)
    encoding: str = "one_hot"
    discount_entropy_reg: bool = False
    count_bonus: float = 0.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.rollout_batch < 1:
            raise ValueError("rollout_batch must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    bonus_policy_entropy: np.ndarray
    bonus_state_entropy: np.ndarray
    dones: np.ndarray
    final_state: int
    terminated: bool
    episode_id: int = 0
    seed: int = 0
    bonus_count: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def env_return(self) -> float:
        return float(self.rewards.sum())

    def augmented_rewards(self, weights: RegularizationWeights) -> np.ndarray:
        r = (self.rewards + weights.lambda_pi * self.bonus_policy_entropy
             + weights.lambda_s * self.bonus_state_entropy)
        if self.bonus_count is not None:
            r = r + self.bonus_count
        return r


class VisitationCounts:
    """Per-state visit tallies for one grid."""

    def __init__(self, spec, counts=None):
        self.spec = spec
        self.counts = np.zeros(spec.num_states, dtype=np.int64) if counts is None else np.asarray(counts, np.int64)

    def add(self, states) -> None:
        np.add.at(self.counts, np.asarray(states, dtype=int), 1)

    def grid(self) -> np.ndarray:
        return self.spec.grid_array(self.counts, wall_value=-1)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.grid(), fmt="%d", delimiter=",")

    @classmethod
    def from_csv(cls, path, spec) -> "VisitationCounts":
        g = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
        counts = np.array([g[y, x] for x, y in (spec.coord(i) for i in range(spec.num_states))])
        return cls(spec, counts)


def reachable_states(mdp) -> np.ndarray:
    """Boolean mask of states reachable from the start support (BFS on P > 0)."""
    P = np.asarray(mdp.transitions)
    succ = (P > 0).any(axis=1)
    seen = np.asarray(mdp.start_dist) > 0
    queue = deque(np.flatnonzero(seen))
    while queue:
        s = queue.popleft()
        for t in np.flatnonzero(succ[s] & ~seen):
            seen[t] = True
            queue.append(t)
    return seen


def coverage_metric(counts, mdp) -> float:
    """Fraction of reachable states visited at least once."""
    c = counts.counts if isinstance(counts, VisitationCounts) else np.asarray(counts)
    reach = reachable_states(mdp)
    return float(((c > 0) & reach).sum() / reach.sum())


# -- returns and advantages ---------------------------------------------

def discounted_cumsum(x: np.ndarray, discount: float) -> np.ndarray:
    out = np.zeros(len(x))
    acc = 0.0
    for t in range(len(x) - 1, -1, -1):
        acc = x[t] + discount * acc
        out[t] = acc
    return out


def returns_to_go(traj: Trajectory, gamma: float, weights: RegularizationWeights) -> np.ndarray:
    """G_t = sum_k gamma^(k-t) (r_k + lambda_pi b_pi_k + lambda_s b_s_k)."""
    return discounted_cumsum(traj.augmented_rewards(weights), gamma)


def gae_advantages(traj: Trajectory, values, gamma: float, gae_lambda: float,
                   weights: RegularizationWeights, bonus_in_critic: bool = True) -> np.ndarray:
    """A_t = sum_k (gamma lam)^k delta_{t+k}; ``values`` has length T + 1."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(traj) + 1,):
        raise ValueError(f"values must have length {len(traj) + 1}, got {values.shape}")
    r = traj.augmented_rewards(weights) if bonus_in_critic else traj.rewards
    delta = r + gamma * values[1:] - values[:-1]
    return discounted_cumsum(delta, gamma * gae_lambda)


# -- rollouts -----------------------------------------------------------

@dataclass
class PolicyTables:
    """Per-state action probabilities and entropies for a frozen parameter set."""

    probs: np.ndarray
    policy_entropy: np.ndarray
    latent_entropy: np.ndarray
    values: np.ndarray


def policy_tables(env: GridEnv, policy: dn.NeuralPolicy, encoding: str = "one_hot") -> PolicyTables:
    out = policy.forward(env.encode(np.arange(env.num_states), encoding))
    logp = dn.log_softmax(out.logits).value
    probs = np.exp(logp)
    return PolicyTables(
        probs=probs,
        policy_entropy=-(probs * logp).sum(axis=1),
        latent_entropy=dn.gaussian_entropy(out.latent).value,
        values=out.values.value,
    )


def collect_rollouts(env: GridEnv, policy: dn.NeuralPolicy, config: AgentConfig,
                     rng: np.random.Generator | None = None, weights: RegularizationWeights | None = None,
                     visit_counts: VisitationCounts | None = None, first_episode: int = 0) -> list[Trajectory]:
    """Run ``rollout_batch`` episodes with actions drawn from pi(.|s).

    Bonus fields hold the raw entropies at each visited state, or zero when
    the corresponding weight is zero.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    weights = weights or config.weights
    tab = policy_tables(env, policy, config.encoding)
    b_pi = tab.policy_entropy if weights.lambda_pi > 0 else np.zeros(env.num_states)
    b_s = tab.latent_entropy if weights.lambda_s > 0 else np.zeros(env.num_states)
    if not (np.all(np.isfinite(b_pi)) and np.all(np.isfinite(b_s))):
        raise FloatingPointError("non-finite entropy bonus table")
    cum = np.cumsum(tab.probs, axis=1)
    cum[:, -1] = 1.0
    horizon = env.spec.max_episode_steps
    trajs = []
    for ep in range(config.rollout_batch):
        s = env.reset()
        states, actions, rewards, dones = [], [], [], []
        u = rng.random(horizon)
        terminated = env.done
        t = 0
        while not env.done:
            a = int(np.searchsorted(cum[s], u[t], side="right"))
            a = min(a, env.num_actions - 1)
            step = env.step(a)
            states.append(s)
            actions.append(a)
            rewards.append(step.reward)
            dones.append(step.done)
            s = step.next_state
            terminated = step.done and not step.truncated
            t += 1
        states = np.array(states, dtype=int)
        count_b = None
        if config.count_bonus > 0 and visit_counts is not None:
            visit_counts.add(states)
            count_b = config.count_bonus / np.sqrt(np.maximum(visit_counts.counts[states], 1))
        trajs.append(Trajectory(
            states=states,
            actions=np.array(actions, dtype=int),
            rewards=np.array(rewards, dtype=float),
            bonus_policy_entropy=b_pi[states],
            bonus_state_entropy=b_s[states],
            dones=np.array(dones, dtype=bool),
            final_state=int(s),
            terminated=bool(terminated),
            episode_id=first_episode + ep,
            seed=config.seed,
            bonus_count=count_b,
        ))
    return trajs


# -- losses and updates ---------------------------------------------------

@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray
    step_index: np.ndarray


def build_batch(env: GridEnv, policy: dn.NeuralPolicy, trajectories: list[Trajectory],
                config: AgentConfig, weights: RegularizationWeights | None = None) -> Batch:
    weights = weights or config.weights
    advs, targets = [], []
    if config.algorithm == "a2c_gae":
        tab_values = policy_tables(env, policy, config.encoding).values
    for tr in trajectories:
        if config.algorithm == "reinforce":
            g = returns_to_go(tr, config.gamma, weights)
            advs.append(g)
            targets.append(g)
        else:
            v = tab_values[tr.states]
            boot = 0.0 if tr.terminated else tab_values[tr.final_state]
            values = np.append(v, boot)
            adv = gae_advantages(tr, values, config.gamma, config.gae_lambda, weights,
                                 config.bonus_in_critic)
            advs.append(adv)
            targets.append(adv + v)
    adv = np.concatenate(advs)
    if config.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return Batch(
        states=np.concatenate([tr.states for tr in trajectories]),
        actions=np.concatenate([tr.actions for tr in trajectories]),
        advantages=adv,
        value_targets=np.concatenate(targets),
        step_index=np.concatenate([np.arange(len(tr)) for tr in trajectories]),
    )


@dataclass
class LossParts:
    total: dn.Var
    policy_loss: float
    value_loss: float
    policy_entropy: float
    latent_entropy: float
    kl: float


def policy_loss(policy: dn.NeuralPolicy, env: GridEnv, batch: Batch, config: AgentConfig,
                weights: RegularizationWeights | None = None) -> LossParts:
    """-mean(log pi * A) - lambda_pi mean H(pi) - lambda_s mean H(q) (+ critic and KL terms)."""
    weights = weights or config.weights
    out = policy.forward(env.encode(batch.states, config.encoding))
    logp = dn.categorical_log_prob(out.logits, batch.actions)
    pg = dn.neg(dn.mean(logp * batch.advantages))
    h_pi = dn.categorical_entropy(out.logits)
    total = pg
    if config.discount_entropy_reg:
        scale = config.gamma ** batch.step_index
    else:
        scale = None

    def reg_mean(x):
        return dn.mean(x * scale) if scale is not None else dn.mean(x)

    if weights.lambda_pi > 0:
        total = total - weights.lambda_pi * reg_mean(h_pi)
    h_q_val = np.nan
    if weights.lambda_s > 0 or config.kl_weight > 0:
        h_q = dn.gaussian_entropy(out.latent)
        h_q_val = float(h_q.value.mean())
        if weights.lambda_s > 0:
            total = total - weights.lambda_s * reg_mean(h_q)
    kl_val = 0.0
    if config.kl_weight > 0:
        kl = dn.kl_standard_normal(out.latent)
        kl_val = float(kl.value.mean())
        total = total + config.kl_weight * dn.mean(kl)
    v_loss = 0.0
    if config.algorithm == "a2c_gae":
        err = out.values - batch.value_targets
        vl = dn.mean(dn.square(err))
        v_loss = float(vl.value)
        total = total + config.value_coef * vl
    if np.isnan(h_q_val):
        h_q_val = float(dn.gaussian_entropy(out.latent).value.mean())
    return LossParts(total, float(pg.value), v_loss, float(h_pi.value.mean()), h_q_val, kl_val)


class Adam:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_by_global_norm(grads, max_norm: float):
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm and norm > max_norm:
        grads = [g * (max_norm / (norm + 1e-12)) for g in grads]
    return grads, norm


def loss_gradients(policy: dn.NeuralPolicy, env: GridEnv, batch: Batch, config: AgentConfig,
                   weights: RegularizationWeights | None = None) -> tuple[LossParts, list[np.ndarray]]:
    policy.zero_grad()
    parts = policy_loss(policy, env, batch, config, weights)
    dn.backward(parts.total)
    return parts, policy.grads()


def update(policy: dn.NeuralPolicy, env: GridEnv, trajectories: list[Trajectory], config: AgentConfig,
           optimizer: Adam | None = None, weights: RegularizationWeights | None = None) -> dict:
    """One gradient step; returns loss diagnostics.

    A non-finite loss or gradient restores the pre-update parameters and
    raises ``TrainingAborted``.
    """
    if not trajectories:
        raise ValueError("update needs at least one trajectory")
    optimizer = optimizer or Adam(policy.parameters(), config.learning_rate)
    batch = build_batch(env, policy, trajectories, config, weights)
    checkpoint = policy.state_dict()
    parts, grads = loss_gradients(policy, env, batch, config, weights)
    if not np.isfinite(parts.total.value) or not all(np.all(np.isfinite(g)) for g in grads):
        policy.load_state_dict(checkpoint)
        raise TrainingAborted("non-finite loss or gradient", optimizer.t)
    grads, norm = clip_by_global_norm(grads, config.max_grad_norm)
    optimizer.step(grads)
    return {
        "loss": float(parts.total.value),
        "policy_loss": parts.policy_loss,
        "value_loss": parts.value_loss,
        "H_policy_mean": parts.policy_entropy,
        "H_latent_mean": parts.latent_entropy,
        "kl_mean": parts.kl,
        "grad_norm": norm,
    }


def make_policy(env: GridEnv, config: AgentConfig, seed: int | None = None) -> dn.NeuralPolicy:
    return dn.NeuralPolicy(env.encoding_dim(config.encoding), env.num_actions,
                           hidden=config.hidden, z_dim=config.z_dim,
                           seed=config.seed if seed is None else seed)


@dataclass
class TrainResult:
    record: TrainRecord
    counts: VisitationCounts
    policy: dn.NeuralPolicy


def train(env: GridEnv, config: AgentConfig) -> TrainResult:
    """Alternate rollout collection and updates for ``max_updates`` rounds.

    Logged returns are undiscounted environment rewards only.
    """
    env_seed, init_seed, act_seed = np.random.SeedSequence(config.seed).generate_state(3)
    env.seed(int(env_seed))
    rng = np.random.default_rng(int(act_seed))
    policy = make_policy(env, config, seed=int(init_seed))
    opt = Adam(policy.parameters(), config.learning_rate)
    counts = VisitationCounts(env.spec)
    count_table = VisitationCounts(env.spec) if config.count_bonus > 0 else None
    mdp = env.spec.to_mdp(min(config.gamma, 0.99))
    record = TrainRecord(AGENT_COLUMNS)
    for u in range(config.max_updates):
        w = config.weights.at(u)
        trajs = collect_rollouts(env, policy, config, rng, w, count_table,
                                 first_episode=u * config.rollout_batch)
        for tr in trajs:
            counts.add(tr.states)
            counts.add([tr.final_state])
        rets = np.array([tr.env_return for tr in trajs])
        se = float(rets.std(ddof=1) / np.sqrt(rets.size)) if rets.size > 1 else 0.0
        if config.learning_rate > 0:
            try:
                diag = update(policy, env, trajs, config, opt, w)
            except TrainingAborted as exc:
                exc.iteration, exc.record = u, record
                raise
        else:
            tab = policy_tables(env, policy, config.encoding)
            states = np.concatenate([tr.states for tr in trajs])
            diag = {"H_policy_mean": float(tab.policy_entropy[states].mean()),
                    "H_latent_mean": float(tab.latent_entropy[states].mean())}
        record.append((u, float(rets.mean()), se, diag["H_policy_mean"], diag["H_latent_mean"],
                       coverage_metric(counts, mdp)))
    return TrainResult(record, counts, policy)
