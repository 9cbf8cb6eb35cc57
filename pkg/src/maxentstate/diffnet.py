"""A small reverse-mode autodiff over numpy arrays, an MLP, and the
policy network with action, latent-Gaussian and value heads.

Only the node types the policy losses need are provided: affine maps,
elementwise tanh/softplus/log/square, reductions, a row-wise log-softmax,
row gathers and broadcasting arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIGMA_FLOOR = 1e-3
HALF_LOG_2PI_E = 0.5 * math.log(2.0 * math.pi * math.e)


class Var:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(self, value, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.value.shape})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_var(other)))

    def __rsub__(self, other):
        return add(as_var(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, (a, b))
    out.backward_fn = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return out


def neg(a: Var) -> Var:
    return Var(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value * b.value, (a, b))
    out.backward_fn = lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape))
    return out


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value @ b.value, (a, b))
    out.backward_fn = lambda g: (g @ b.value.T, a.value.T @ g)
    return out


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return Var(y, (a,), lambda g: (g * (1.0 - y * y),))


def softplus(a: Var) -> Var:
    x = a.value
    y = np.logaddexp(0.0, x)
    sig = np.exp(-np.logaddexp(0.0, -x))
    return Var(y, (a,), lambda g: (g * sig,))


def log(a: Var) -> Var:
    x = a.value
    return Var(np.log(x), (a,), lambda g: (g / x,))


def square(a: Var) -> Var:
    x = a.value
    return Var(x * x, (a,), lambda g: (2.0 * g * x,))


def sum_(a: Var, axis=None) -> Var:
    shape = a.shape

    def back(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(a.value.sum(axis=axis), (a,), back)


def mean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def log_softmax(a: Var) -> Var:
    z = a.value - a.value.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(y)
    return Var(y, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def take_rows(a: Var, cols) -> Var:
    """out[i] = a[i, cols[i]]."""
    cols = np.asarray(cols, dtype=int)
    rows = np.arange(cols.size)

    def back(g):
        full = np.zeros_like(a.value)
        full[rows, cols] = g
        return (full,)

    return Var(a.value[rows, cols], (a,), back)


def slice_cols(a: Var, start: int, stop: int) -> Var:
    def back(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return Var(a.value[:, start:stop], (a,), back)


def detach(a: Var) -> Var:
    return Var(a.value.copy())


def backward(loss: Var) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every upstream node."""
    if loss.value.size != 1:
        raise ValueError("backward() needs a scalar loss")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            grads[id(p)] = pg if id(p) not in grads else grads[id(p)] + pg


# -- distributions ------------------------------------------------------

@dataclass
class LatentGaussian:
    """Diagonal Gaussian rows: ``mean`` and ``std`` have shape [n, Z]."""

    mean: Var
    std: Var

    @classmethod
    def from_raw(cls, mean: Var, raw_std: Var, floor: float = SIGMA_FLOOR) -> "LatentGaussian":
        return cls(mean, softplus(raw_std) + floor)

    @classmethod
    def from_values(cls, mean, std) -> "LatentGaussian":
        mean = np.atleast_2d(np.asarray(mean, float))
        std = np.atleast_2d(np.asarray(std, float))
        return cls(Var(mean), Var(std))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def log_density(self, z: np.ndarray) -> np.ndarray:
        mu, sd = self.mean.value, self.std.value
        return (-0.5 * ((z - mu) / sd) ** 2 - np.log(sd) - 0.5 * math.log(2 * math.pi)).sum(axis=-1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n draws from the first row."""
        return self.mean.value[0] + self.std.value[0] * rng.standard_normal((n, self.dim))


def gaussian_entropy(g: LatentGaussian) -> Var:
    """Per-row entropy sum_i [0.5 ln(2 pi e) + ln sigma_i] (nats)."""
    return sum_(log(g.std), axis=-1) + HALF_LOG_2PI_E * g.dim


def kl_standard_normal(g: LatentGaussian) -> Var:
    """Per-row KL(N(mu, sigma^2) || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - ln sigma^2)."""
    terms = square(g.mean) + square(g.std) - 1.0 - 2.0 * log(g.std)
    return 0.5 * sum_(terms, axis=-1)


def categorical_entropy(logits: Var) -> Var:
    return neg(sum_(_exp_times(log_softmax(logits)), axis=-1))


def _exp_times(logp: Var) -> Var:
    """p * log p with p = exp(logp), differentiable in logp."""
    p = np.exp(logp.value)
    y = p * logp.value
    return Var(y, (logp,), lambda g: (g * p * (logp.value + 1.0),))


def categorical_log_prob(logits: Var, actions) -> Var:
    return take_rows(log_softmax(logits), actions)


# -- layers -------------------------------------------------------------

class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False, name="linear"):
        scale = 0.0 if zero else 1.0 / math.sqrt(n_in)
        self.W = Var(rng.normal(0.0, 1.0, size=(n_in, n_out)) * scale, name=f"{name}.W")
        self.b = Var(np.zeros(n_out), name=f"{name}.b")

    def __call__(self, x) -> Var:
        return matmul(x, self.W) + self.b

    def parameters(self) -> list[Var]:
        return [self.W, self.b]


class Mlp:
    """Affine layers with tanh between them (none after the last)."""

    def __init__(self, dims, rng: np.random.Generator, name="mlp", zero_last: bool = False):
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        self.dims = tuple(int(d) for d in dims)
        self.layers = [
            Linear(a, b, rng, zero=zero_last and i == len(dims) - 2, name=f"{name}.{i}")
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]

    def __call__(self, x) -> Var:
        h = as_var(x)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = tanh(h)
        return h

    def parameters(self) -> list[Var]:
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class PolicyOutput:
    logits: Var
    latent: LatentGaussian
    values: Var


class NeuralPolicy:
    """Shared tanh trunk feeding action, latent-Gaussian and value heads.

    ``p(a, z | s) = pi(a | s) q(z | s)``: action log-probabilities come from
    the action head alone.
    """

    def __init__(self, input_dim: int, num_actions: int, hidden=(64,), z_dim: int = 64,
                 seed: int = 0, sigma_floor: float = SIGMA_FLOOR):
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.num_actions = num_actions
        self.z_dim = z_dim
        self.sigma_floor = sigma_floor
        self.hidden = tuple(hidden)
        self.trunk = Mlp((input_dim, *hidden), rng, name="trunk") if hidden else None
        feat = hidden[-1] if hidden else input_dim
        self.action_head = Linear(feat, num_actions, rng, zero=True, name="action")
        self.latent_head = Linear(feat, 2 * z_dim, rng, zero=True, name="latent")
        self.value_head = Linear(feat, 1, rng, zero=True, name="value")

    def features(self, x) -> Var:
        if self.trunk is None:
            return as_var(x)
        return tanh(self.trunk(x))

    def forward(self, states) -> PolicyOutput:
        x = np.asarray(states, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected encodings of shape [n, {self.input_dim}], got {x.shape}")
        h = self.features(Var(x))
        logits = self.action_head(h)
        lat = self.latent_head(h)
        latent = LatentGaussian.from_raw(slice_cols(lat, 0, self.z_dim),
                                         slice_cols(lat, self.z_dim, 2 * self.z_dim),
                                         self.sigma_floor)
        values = sum_(self.value_head(h), axis=-1)
        for name, v in (("logits", logits), ("latent mean", latent.mean),
                        ("latent std", latent.std), ("values", values)):
            if not np.all(np.isfinite(v.value)):
                norms = {p.name: float(np.abs(p.value).max()) for p in self.parameters()}
                raise FloatingPointError(f"non-finite {name} in forward pass; max |param|: {norms}")
        return PolicyOutput(logits, latent, values)

    __call__ = forward

    def parameters(self) -> list[Var]:
        ps = self.trunk.parameters() if self.trunk is not None else []
        return ps + self.action_head.parameters() + self.latent_head.parameters() + self.value_head.parameters()

    def named_parameters(self) -> dict[str, Var]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p.value) if p.grad is None else p.grad for p in self.parameters()]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.parameters():
            n = p.value.size
            p.value = np.asarray(flat[i:i + n], dtype=float).reshape(p.value.shape).copy()
            i += n

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads()])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=float)
            if arr.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.value.shape}")
        for name, p in params.items():
            p.value = np.asarray(state[name], dtype=float).copy()

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, **self.state_dict())

    def load(self, path: str | Path) -> None:
        with np.load(path) as data:
            self.load_state_dict({k: data[k] for k in data.files})


def forward(policy: NeuralPolicy, states) -> PolicyOutput:
    return policy.forward(states)
