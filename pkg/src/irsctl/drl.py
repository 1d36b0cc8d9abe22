"""Deterministic-policy-gradient actor-critic agents for codeword updates.

Everything is plain numpy in float64 with hand-written backpropagation so
the gradients can be checked against finite differences.

Units: the actor emits *scaled* actions (physical farads x ``ACTION_UNIT``),
which is also what the critic consumes and what the replay buffer stores.
States are built by :func:`scale_state`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import C_MAX, C_MIN, quantize_direction

ACTION_UNIT = 1e13
STATE_Q_UNIT = 1e12
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class TrainingDivergence(RuntimeError):
    """A loss or objective became non-finite."""


class DenseNet:
    """Two-hidden-layer ReLU network.

    An optional side input (the critic's action) is concatenated to the first
    hidden layer's output before the second hidden layer.  The output layer
    is linear, or ``out_scale * tanh`` when ``out_act == "tanh"``.
    """

    def __init__(self, n_in, h1, h2, n_out, side_dim=0, out_act="linear", out_scale=1.0, rng=None, final_init=3e-3):
        if out_act not in ("linear", "tanh"):
            raise ValueError(f"unknown output activation {out_act!r}")
        self.dims = (int(n_in), int(h1), int(h2), int(n_out))
        self.side_dim = int(side_dim)
        self.out_act = out_act
        self.out_scale = float(out_scale)
        rng = np.random.default_rng() if rng is None else rng

        def fan_in(n, shape):
            lim = 1.0 / math.sqrt(n)
            return rng.uniform(-lim, lim, size=shape)

        self.params = {
            "W1": fan_in(n_in, (n_in, h1)),
            "b1": fan_in(n_in, (h1,)),
            "W2": fan_in(h1 + side_dim, (h1 + side_dim, h2)),
            "b2": fan_in(h1 + side_dim, (h2,)),
            "W3": rng.uniform(-final_init, final_init, size=(h2, n_out)),
            "b3": rng.uniform(-final_init, final_init, size=(n_out,)),
        }

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "DenseNet":
        new = object.__new__(DenseNet)
        new.dims, new.side_dim, new.out_act, new.out_scale = self.dims, self.side_dim, self.out_act, self.out_scale
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def set_flat(self, vec) -> None:
        i = 0
        for k in PARAM_NAMES:
            p = self.params[k]
            p[...] = np.reshape(vec[i : i + p.size], p.shape)
            i += p.size

    def forward(self, x, side=None, keep=False):
        p = self.params
        x = np.atleast_2d(x)
        z1 = x @ p["W1"] + p["b1"]
        a1 = np.maximum(z1, 0.0)
        if self.side_dim:
            side = np.atleast_2d(side)
            a1 = np.concatenate([a1, side], axis=1)
        z2 = a1 @ p["W2"] + p["b2"]
        a2 = np.maximum(z2, 0.0)
        z3 = a2 @ p["W3"] + p["b3"]
        if self.out_act == "tanh":
            t = np.tanh(z3)
            out = self.out_scale * t
        else:
            t = None
            out = z3
        if keep:
            return out, (x, z1, a1, z2, a2, t)
        return out

    def backward(self, cache, g_out, need_input_grad=True):
        """Gradients of sum(g_out * out) w.r.t. params, input and side input."""
        x, z1, a1, z2, a2, t = cache
        p = self.params
        g = np.atleast_2d(g_out)
        if self.out_act == "tanh":
            g = g * self.out_scale * (1.0 - t * t)
        grads = {"W3": a2.T @ g, "b3": g.sum(axis=0)}
        g = (g @ p["W3"].T) * (z2 > 0)
        grads["W2"] = a1.T @ g
        grads["b2"] = g.sum(axis=0)
        g_a1 = g @ p["W2"].T
        h1 = self.dims[1]
        g_side = g_a1[:, h1:] if self.side_dim else None
        g = g_a1[:, :h1] * (z1 > 0)
        grads["W1"] = x.T @ g
        grads["b1"] = g.sum(axis=0)
        g_x = g @ p["W1"].T if need_input_grad else None
        return grads, g_x, g_side


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr / (1.0 - b1**self.t)
        root_c2 = math.sqrt(1.0 - b2**self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            tmp = np.multiply(g, g)
            tmp *= 1.0 - b2
            v += tmp
            # p -= lr * m_hat / (sqrt(v_hat) + eps), reusing tmp as scratch
            np.sqrt(v, out=tmp)
            tmp /= root_c2
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step
            params[k] -= tmp


class ReplayBuffer:
    """FIFO ring of (s, a, r, s') transitions stored as packed float rows."""

    def __init__(self, capacity: int, n_state: int, n_action: int):
        self.capacity = int(capacity)
        self.n_state, self.n_action = n_state, n_action
        self.width = 2 * n_state + n_action + 1
        self._data = np.empty((min(self.capacity, 1024), self.width))
        self._size = 0
        self._next = 0
        self.n_pushed = 0

    def __len__(self):
        return self._size

    def push(self, s, a, r, s_next) -> None:
        if self._size < self.capacity and self._size == len(self._data):
            grown = np.empty((min(self.capacity, 2 * len(self._data)), self.width))
            grown[: self._size] = self._data[: self._size]
            self._data = grown
        row = self._data[self._next]
        ns, na = self.n_state, self.n_action
        row[:ns] = s
        row[ns : ns + na] = a
        row[ns + na] = r
        row[ns + na + 1 :] = s_next
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.n_pushed += 1

    def rows(self) -> np.ndarray:
        """Stored rows, oldest first."""
        if self._size < self.capacity:
            return self._data[: self._size].copy()
        return np.concatenate([self._data[self._next :], self._data[: self._next]])

    def sample_indices(self, n: int, rng) -> np.ndarray:
        return rng.choice(self._size, size=n, replace=False)

    def sample(self, n: int, rng):
        if n > self._size:
            raise ValueError(f"cannot sample {n} transitions from {self._size}")
        rows = self._data[self.sample_indices(n, rng)]
        ns, na = self.n_state, self.n_action
        return rows[:, :ns], rows[:, ns : ns + na], rows[:, ns + na], rows[:, ns + na + 1 :]


@dataclass
class AgentConfig:
    n_state: int = 20
    n_action: int = 10
    L1: int = 400
    L2: int = 300
    gamma: float = 0.9
    tau: float = 0.005
    lr_actor: float = 3e-4
    lr_critic: float = 3e-3
    batch_size: int = 32
    buffer_capacity: int = 500_000
    # maximum physical step per dimension, farads
    delta: float = (C_MAX - C_MIN) / 4

    @property
    def action_scale(self) -> float:
        return self.delta * ACTION_UNIT


@dataclass
class Agent:
    actor: DenseNet
    critic: DenseNet
    actor_target: DenseNet
    critic_target: DenseNet
    opt_actor: Adam
    opt_critic: Adam
    buffer: ReplayBuffer
    cfg: AgentConfig
    epsilon: float = 0.0
    n_updates: int = field(default=0)

    @classmethod
    def create(cls, cfg: AgentConfig, rng) -> "Agent":
        actor = DenseNet(cfg.n_state, cfg.L1, cfg.L2, cfg.n_action, out_act="tanh", out_scale=cfg.action_scale, rng=rng)
        critic = DenseNet(cfg.n_state, cfg.L1, cfg.L2, 1, side_dim=cfg.n_action, rng=rng)
        return cls(
            actor=actor,
            critic=critic,
            actor_target=actor.copy(),
            critic_target=critic.copy(),
            opt_actor=Adam(actor.params, cfg.lr_actor),
            opt_critic=Adam(critic.params, cfg.lr_critic),
            buffer=ReplayBuffer(cfg.buffer_capacity, cfg.n_state, cfg.n_action),
            cfg=cfg,
        )

    def train_step(self, rng) -> tuple[float, float] | None:
        """One critic step, one actor step and soft target updates, once the buffer is warm."""
        if len(self.buffer) < self.cfg.batch_size:
            return None
        batch = self.buffer.sample(self.cfg.batch_size, rng)
        loss = critic_train_step(self, batch)
        obj = actor_train_step(self, batch)
        soft_update(self.actor, self.actor_target, self.cfg.tau)
        soft_update(self.critic, self.critic_target, self.cfg.tau)
        self.n_updates += 1
        return loss, obj


def scale_state(h_measured, q, P: float, sigma2: float, n_bs: int, n_g: int) -> np.ndarray:
    """[Re h, Im h] * sqrt(P / (sigma2 N_BS N_G)) followed by q in picofarads."""
    h = np.asarray(h_measured, dtype=complex)
    k = math.sqrt(P / (sigma2 * n_bs * n_g))
    return np.concatenate([h.real * k, h.imag * k, np.asarray(q, dtype=float) * STATE_Q_UNIT])


def actor_forward(agent: Agent, s) -> np.ndarray:
    """Deterministic physical action (farads) for one state."""
    return agent.actor.forward(s)[0] / ACTION_UNIT


def behavior_train(agent: Agent, s, D, epsilon: float, rng):
    """Noisy, clipped action and its nearest direction index.

    Returns the scaled continuous action (what the buffer stores) and k.
    """
    if epsilon < 0:
        raise ValueError("exploration variance must be non-negative")
    lim = agent.actor.out_scale
    a = agent.actor.forward(s)[0]
    if epsilon > 0:
        a = a + rng.normal(0.0, math.sqrt(epsilon), size=a.shape)
    a = np.clip(a, -lim, lim)
    return a, quantize_direction(a / ACTION_UNIT, D)


def behavior_util(agent: Agent, s, D) -> int:
    return quantize_direction(actor_forward(agent, s), D)


def reward(rate_next: float, n_clip: int) -> float:
    return rate_next - n_clip


def critic_loss_and_grads(critic: DenseNet, s, a, y):
    q, cache = critic.forward(s, a, keep=True)
    diff = q[:, 0] - y
    loss = float(np.mean(diff * diff))
    grads, _, _ = critic.backward(cache, (2.0 / len(y)) * diff[:, None], need_input_grad=False)
    return loss, grads


def critic_targets(agent: Agent, r, s_next) -> np.ndarray:
    a_next = agent.actor_target.forward(s_next)
    return r + agent.cfg.gamma * agent.critic_target.forward(s_next, a_next)[:, 0]


def critic_train_step(agent: Agent, batch) -> float:
    """One Adam step on the mean squared TD error; returns the pre-step loss."""
    s, a, r, s_next = batch
    y = critic_targets(agent, r, s_next)
    loss, grads = critic_loss_and_grads(agent.critic, s, a, y)
    if not math.isfinite(loss):
        raise TrainingDivergence(f"critic loss became {loss} after {agent.n_updates} updates")
    agent.opt_critic.step(agent.critic.params, grads)
    return loss


def actor_objective_and_grads(actor: DenseNet, critic, s):
    """Mean Q(s, actor(s)) and the gradient of its negative w.r.t. actor params."""
    a, cache_a = actor.forward(s, keep=True)
    q, cache_c = critic.forward(s, a, keep=True)
    obj = float(np.mean(q))
    g_q = np.full_like(q, -1.0 / len(q))
    _, _, g_a = critic.backward(cache_c, g_q, need_input_grad=False)
    grads, _, _ = actor.backward(cache_a, g_a, need_input_grad=False)
    return obj, grads


def actor_train_step(agent: Agent, batch) -> float:
    """One Adam ascent step on mean Q through the critic; returns the pre-step mean Q."""
    s = batch[0]
    obj, grads = actor_objective_and_grads(agent.actor, agent.critic, s)
    if not math.isfinite(obj):
        raise TrainingDivergence(f"actor objective became {obj} after {agent.n_updates} updates")
    agent.opt_actor.step(agent.actor.params, grads)
    return obj


def soft_update(live: DenseNet, target: DenseNet, tau: float) -> None:
    for k, v in live.params.items():
        t = target.params[k]
        t *= 1.0 - tau
        t += tau * v


def epsilon_schedule(e: int, eps0: float | None = None, floor_ratio: float = 300.0, decay: float = 0.99) -> float:
    """Exploration variance for episode ``e`` (scaled-action units)."""
    if e < 0:
        raise ValueError("episode index must be non-negative")
    if eps0 is None:
        eps0 = (C_MAX - C_MIN) * ACTION_UNIT / 5.0
    eps_min = eps0 / floor_ratio
    eps = eps0
    for _ in range(e):
        eps = max(eps_min, decay * eps)
    return eps


def allocate_agents(M_dpic: int, M_a: int) -> list[int]:
    """Round-robin agent index for each DPIC codeword slot."""
    if M_a < 1:
        raise ValueError("need at least one agent")
    return [m % M_a for m in range(M_dpic)]


# Checkpoint layout (all little-endian):
#   8s  magic b"IRSCKPT\0"      u32 version      u32 n_agents
#   u32 K   u32 n_dims           -- direction codebook shape, K = 0 if absent
#   per agent:
#     u32 n_state, L1, L2, n_action
#     f64 action_scale, gamma, tau, lr_actor, lr_critic
#     u64 adam steps (actor), u64 adam steps (critic)
#     f64 blocks: actor, critic, actor_target, critic_target parameters,
#                 then actor Adam m, v and critic Adam m, v;
#                 each block is W1, b1, W2, b2, W3, b3 in C order
#   f64 direction codebook, K x n_dims, C order
MAGIC = b"IRSCKPT\x00"
VERSION = 1
_HEAD = struct.Struct("<8sIIII")
_AGENT = struct.Struct("<IIII5dQQ")


def _blocks(agent: Agent):
    yield from (agent.actor.params, agent.critic.params, agent.actor_target.params, agent.critic_target.params)
    yield from (agent.opt_actor.m, agent.opt_actor.v, agent.opt_critic.m, agent.opt_critic.v)


def save_checkpoint(path, agents: list[Agent], D=None) -> None:
    D = np.zeros((0, 0)) if D is None else np.asarray(D, dtype="<f8")
    out = [_HEAD.pack(MAGIC, VERSION, len(agents), D.shape[0], D.shape[1])]
    for ag in agents:
        c = ag.cfg
        out.append(
            _AGENT.pack(c.n_state, c.L1, c.L2, c.n_action, ag.actor.out_scale, c.gamma, c.tau,
                        c.lr_actor, c.lr_critic, ag.opt_actor.t, ag.opt_critic.t)
        )
        for block in _blocks(ag):
            out.extend(np.ascontiguousarray(block[k], dtype="<f8").tobytes() for k in PARAM_NAMES)
    out.append(np.ascontiguousarray(D, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path, template: AgentConfig | None = None):
    """Returns (agents, D); ``D`` is None when the file carries no direction codebook."""
    buf = memoryview(Path(path).read_bytes())
    magic, version, n_agents, K, n_dims = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an agent checkpoint")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = _HEAD.size
    agents = []
    base = template or AgentConfig()
    for _ in range(n_agents):
        n_state, L1, L2, n_action, scale, gamma, tau, lr_a, lr_c, t_a, t_c = _AGENT.unpack_from(buf, off)
        off += _AGENT.size
        cfg = AgentConfig(
            n_state=n_state, n_action=n_action, L1=L1, L2=L2, gamma=gamma, tau=tau, lr_actor=lr_a,
            lr_critic=lr_c, batch_size=base.batch_size, buffer_capacity=base.buffer_capacity,
            delta=scale / ACTION_UNIT,
        )
        ag = Agent.create(cfg, np.random.default_rng(0))
        ag.opt_actor.t, ag.opt_critic.t = t_a, t_c
        ag.actor.out_scale = ag.actor_target.out_scale = scale
        for block in _blocks(ag):
            for k in PARAM_NAMES:
                n = block[k].size
                block[k][...] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(block[k].shape)
                off += 8 * n
        agents.append(ag)
    D = None
    if K:
        D = np.frombuffer(buf, dtype="<f8", count=K * n_dims, offset=off).reshape(K, n_dims).copy()
        off += 8 * K * n_dims
    if off != len(buf):
        raise ValueError(f"{path}: {len(buf) - off} trailing bytes")
    return agents, D
