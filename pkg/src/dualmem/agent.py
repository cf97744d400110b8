"""Minimal DQN: numpy MLP with hand-written backprop and a target network."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .replay_core import as_batch

MAGIC = b"DQNW"
FORMAT_VERSION = 1


class DivergedError(FloatingPointError):
    pass


class QNetwork:
    """Fully connected net: ReLU on hidden layers, identity output.

    ``weights[k]`` has shape ``(sizes[k], sizes[k + 1])``; inputs are row vectors.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2 or min(self.sizes) <= 0:
            raise ValueError(f"need at least input and output sizes, all positive; got {sizes}")
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                w, b = np.zeros((fan_in, fan_out)), np.zeros(fan_out)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, (fan_in, fan_out))
                b = rng.uniform(-bound, bound, fan_out)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def obs_dim(self):
        return self.sizes[0]

    @property
    def action_count(self):
        return self.sizes[-1]

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[-1]}")
        return x

    def forward(self, x) -> np.ndarray:
        h = self._check_input(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    __call__ = forward

    def forward_trace(self, x):
        """Forward pass that keeps each layer's input for :meth:`backward`."""
        h = self._check_input(x)
        inputs = []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h, inputs

    def backward(self, inputs, grad_out):
        """Parameter gradients given dL/d(output) for a batch traced by forward_trace."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        g = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w[k] = inputs[k].T @ g
            grads_b[k] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.weights[k].T) * (inputs[k] > 0.0)
        return grads_w, grads_b

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def copy(self) -> QNetwork:
        net = QNetwork.__new__(QNetwork)
        net.sizes = list(self.sizes)
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def copy_from(self, other: QNetwork):
        if other.sizes != self.sizes:
            raise ValueError(f"layer sizes differ: {other.sizes} vs {self.sizes}")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def save(self, path):
        header = MAGIC + struct.pack(f"<II{len(self.sizes)}I", FORMAT_VERSION, len(self.sizes), *self.sizes)
        Path(path).write_bytes(header + self.flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> QNetwork:
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ValueError(f"{path}: not a parameter snapshot (bad magic {raw[:4]!r})")
        version, n_sizes = struct.unpack_from("<II", raw, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        sizes = struct.unpack_from(f"<{n_sizes}I", raw, 12)
        offset = 12 + 4 * n_sizes
        values = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64)
        net = cls(sizes)
        expected = sum(p.size for p in net.parameters())
        if values.size != expected:
            raise ValueError(f"{path}: expected {expected} parameters, found {values.size}")
        pos = 0
        for p in net.parameters():
            p[...] = values[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        return net


def huber(x, delta: float = 1.0):
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def td_errors(net: QNetwork, target_net: QNetwork, batch, gamma: float) -> np.ndarray:
    """delta_i = r_i + gamma * max_a Q_target(s'_i, a) * (1 - terminal_i) - Q(s_i, a_i)."""
    b = as_batch(batch)
    if len(b) == 0:
        raise ValueError("empty batch")
    q = net.forward(b.states)[np.arange(len(b)), b.actions]
    bootstrap = target_net.forward(b.next_states).max(axis=1)
    return b.rewards + gamma * bootstrap * (1.0 - b.terminals) - q


def loss_and_grads(net: QNetwork, target_net: QNetwork, batch, is_weights, gamma: float, huber_delta: float = 1.0):
    """Importance-weighted Huber loss, its parameter gradients and the TD errors.

    Targets are constants; only Q(s_i, a_i) carries gradient.
    """
    b = as_batch(batch)
    w = np.asarray(is_weights, dtype=np.float64)
    n = len(b)
    if w.shape != (n,):
        raise ValueError(f"need {n} importance weights, got shape {w.shape}")
    rows = np.arange(n)
    y = b.rewards + gamma * target_net.forward(b.next_states).max(axis=1) * (1.0 - b.terminals)
    q_all, inputs = net.forward_trace(b.states)
    delta = y - q_all[rows, b.actions]
    loss = float(np.mean(w * huber(delta, huber_delta)))
    grad_out = np.zeros_like(q_all)
    grad_out[rows, b.actions] = -w * np.clip(delta, -huber_delta, huber_delta) / n
    grads_w, grads_b = net.backward(inputs, grad_out)
    return loss, grads_w, grads_b, delta


def act_epsilon_greedy(net: QNetwork, state, epsilon: float, rng: np.random.Generator) -> int:
    if rng.random() < epsilon:
        return int(rng.integers(net.action_count))
    # np.argmax returns the first maximum, i.e. lowest-index tie-break
    return int(np.argmax(net.forward(state)))


@dataclass
class AgentConfig:
    gamma: float = 0.99
    learning_rate: float = 1e-3
    batch_size: int = 32
    target_sync_interval: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 10_000
    hidden: tuple = (64, 64)
    grad_clip: float = 10.0
    huber_delta: float = 1.0
    optimizer: str = "adam"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.target_sync_interval <= 0:
            raise ValueError("learning_rate, batch_size and target_sync_interval must be positive")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    def epsilon(self, step: int) -> float:
        if self.epsilon_decay_steps <= 0 or step >= self.epsilon_decay_steps:
            return self.epsilon_end
        frac = step / self.epsilon_decay_steps
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class DQNAgent:
    def __init__(self, obs_dim: int, action_count: int, config: AgentConfig, rng: np.random.Generator):
        self.config = config
        self.online = QNetwork([obs_dim, *config.hidden, action_count], rng)
        self.target = self.online.copy()
        self.train_steps = 0
        if config.optimizer == "adam":
            self._m = [np.zeros_like(p) for p in self.online.parameters()]
            self._v = [np.zeros_like(p) for p in self.online.parameters()]

    def act(self, state, epsilon: float, rng: np.random.Generator) -> int:
        return act_epsilon_greedy(self.online, state, epsilon, rng)

    def td_errors(self, batch) -> np.ndarray:
        return td_errors(self.online, self.target, batch, self.config.gamma)

    def sync_target(self):
        self.target.copy_from(self.online)

    def train_step(self, batch, is_weights):
        """One clipped gradient step; returns the loss and the pre-update TD errors."""
        cfg = self.config
        loss, gw, gb, delta = loss_and_grads(
            self.online, self.target, batch, is_weights, cfg.gamma, cfg.huber_delta
        )
        if not np.isfinite(loss):
            raise DivergedError("diverged")
        grads = [g for pair in zip(gw, gb) for g in pair]
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > cfg.grad_clip:
            clip = cfg.grad_clip / norm
            grads = [g * clip for g in grads]
        self.train_steps += 1
        if cfg.optimizer == "adam":
            self._adam(grads)
        else:
            for p, g in zip(self.online.parameters(), grads):
                p -= cfg.learning_rate * g
        if self.train_steps % cfg.target_sync_interval == 0:
            self.sync_target()
        return loss, delta

    def _adam(self, grads, b1=0.9, b2=0.999, eps=1e-8):
        k = self.train_steps
        lr = self.config.learning_rate * np.sqrt(1.0 - b2**k) / (1.0 - b1**k)
        for p, g, m, v in zip(self.online.parameters(), grads, self._m, self._v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * m / (np.sqrt(v) + eps)
