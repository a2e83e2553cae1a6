"""Multi-pass parameterized deep Q-network over a hybrid action space.

The action is a pair (k, x_k): a discrete slot k (the RRI choice) and a
continuous parameter x_k in [0, 1] (normalized transmit power). An actor
net maps state -> x for every slot; a Q net scores (state, x padded into
its slot). Multi-pass evaluation feeds each slot's parameter in isolation,
so Q_k never sees the parameters of other slots.

Everything is float64 numpy with explicit backward passes, which keeps the
gradients checkable against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sps import RRI_CHOICES

N_DISCRETE = len(RRI_CHOICES)
STATE_DIM = 4
Q_IN_DIM = STATE_DIM + N_DISCRETE


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Mlp:
    """Single-hidden-layer perceptron with ReLU, explicit backward."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int,
                 rng: np.random.Generator):
        self.w1 = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_hidden))
        self.b1 = np.zeros(n_hidden)
        self.w2 = rng.normal(0.0, np.sqrt(2.0 / n_hidden), size=(n_hidden, n_out))
        self.b2 = np.zeros(n_out)

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        z1 = x @ self.w1 + self.b1
        a1 = relu(z1)
        y = a1 @ self.w2 + self.b2
        return y, (x, z1, a1)

    def backward(self, cache: tuple, dy: np.ndarray) -> tuple[np.ndarray, list]:
        """Returns (grad wrt input, grads aligned with params())."""
        x, z1, a1 = cache
        dw2 = a1.T @ dy
        db2 = dy.sum(axis=0)
        da1 = dy @ self.w2.T
        dz1 = da1 * (z1 > 0)
        dw1 = x.T @ dz1
        db1 = dz1.sum(axis=0)
        dx = dz1 @ self.w1.T
        return dx, [dw1, db1, dw2, db2]

    def copy_from(self, other: "Mlp") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions, uniform sampling w/o replacement."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.states = np.zeros((capacity, STATE_DIM))
        self.ks = np.zeros(capacity, dtype=np.int64)
        self.xs = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, STATE_DIM))
        self.dones = np.zeros(capacity)
        self.size = 0
        self.head = 0

    def push(self, s, k, x, r, s2, done) -> None:
        i = self.head
        self.states[i] = s
        self.ks[i] = k
        self.xs[i] = x
        self.rewards[i] = r
        self.next_states[i] = s2
        self.dones[i] = float(done)
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int) -> tuple:
        idx = self.rng.choice(self.size, size=batch, replace=False)
        return (self.states[idx], self.ks[idx], self.xs[idx],
                self.rewards[idx], self.next_states[idx], self.dones[idx])


class OuNoise:
    """Discrete Ornstein-Uhlenbeck walk with a set stationary variance."""

    def __init__(self, n: int, decay: float, stationary_var: float,
                 rng: np.random.Generator):
        if not 0 < decay < 2:
            raise ValueError("decay must lie in (0, 2) for a stable walk")
        self.n = n
        self.decay = decay
        self.sigma_w = np.sqrt(stationary_var * decay * (2.0 - decay))
        self.rng = rng
        self.state = np.zeros(n)

    def reset(self) -> None:
        self.state[:] = 0.0

    def sample(self) -> np.ndarray:
        self.state += -self.decay * self.state + \
            self.sigma_w * self.rng.standard_normal(self.n)
        return self.state


@dataclass
class AgentParams:
    hidden: int = 128
    lr_q: float = 5e-4
    lr_actor: float = 1e-4
    gamma: float = 0.99
    tau: float = 0.01
    buffer_capacity: int = 2000
    batch_size: int = 128
    ou_decay: float = 0.15
    ou_stationary_var: float = 1e-4
    p_ran_start: float = 1.0
    p_ran_end: float = 0.05
    p_ran_decay_frac: float = 0.5
    seed: int = 0


def pad_slots(xn: np.ndarray) -> np.ndarray:
    """(B, K) parameters -> K inputs of shape (B, K) with one live slot each."""
    b = xn.shape[0]
    out = np.zeros((N_DISCRETE, b, N_DISCRETE))
    for k in range(N_DISCRETE):
        out[k, :, k] = xn[:, k]
    return out


def q_multipass(qnet: Mlp, states: np.ndarray, xn: np.ndarray) -> np.ndarray:
    """Q_k(s, x_k) for all k; each pass sees only its own slot's parameter."""
    padded = pad_slots(xn)
    q = np.zeros((states.shape[0], N_DISCRETE))
    for k in range(N_DISCRETE):
        y, _ = qnet.forward(np.concatenate([states, padded[k]], axis=1))
        q[:, k] = y[:, k]
    return q


class MpdqnAgent:
    """Shared policy: every vehicle queries the same nets at its epochs."""

    def __init__(self, n_vehicles: int, params: AgentParams | None = None):
        self.params = params or AgentParams()
        p = self.params
        seq = np.random.SeedSequence(p.seed)
        init_seed, buf_seed, act_seed, ou_seed = seq.spawn(4)
        rng_init = np.random.default_rng(init_seed)
        self.rng = np.random.default_rng(act_seed)
        self.actor = Mlp(STATE_DIM, p.hidden, N_DISCRETE, rng_init)
        self.qnet = Mlp(Q_IN_DIM, p.hidden, N_DISCRETE, rng_init)
        self.actor_target = Mlp(STATE_DIM, p.hidden, N_DISCRETE, rng_init)
        self.qnet_target = Mlp(Q_IN_DIM, p.hidden, N_DISCRETE, rng_init)
        self.actor_target.copy_from(self.actor)
        self.qnet_target.copy_from(self.qnet)
        self.opt_q = Adam(self.qnet.params(), p.lr_q)
        self.opt_actor = Adam(self.actor.params(), p.lr_actor)
        self.buffer = ReplayBuffer(p.buffer_capacity, np.random.default_rng(buf_seed))
        self.noise = OuNoise(n_vehicles, p.ou_decay, p.ou_stationary_var,
                             np.random.default_rng(ou_seed))
        self.p_ran = p.p_ran_start

    # -- acting --------------------------------------------------------------

    def continuous_params(self, states: np.ndarray) -> np.ndarray:
        y, _ = self.actor.forward(states)
        return sigmoid(y)

    def select_action(self, state: np.ndarray, vehicle: int,
                      explore: bool) -> tuple[int, float]:
        """Returns (discrete slot index, normalized power in [0, 1]).

        While exploring, with probability p_ran both components are drawn
        uniformly; otherwise the greedy pair is used. Mean-reverting noise
        perturbs the power in either exploring branch.
        """
        s = state.reshape(1, -1)
        xn = self.continuous_params(s)
        if explore and self.rng.random() < self.p_ran:
            k = int(self.rng.integers(N_DISCRETE))
            x = float(self.rng.random())
        else:
            q = q_multipass(self.qnet, s, xn)[0]
            k = int(np.argmax(q))
            x = float(xn[0, k])
        if explore:
            x = float(np.clip(x + self.noise.sample()[vehicle], 0.0, 1.0))
        return k, x

    def set_p_ran(self, episode: int, total_episodes: int) -> None:
        p = self.params
        span = max(int(p.p_ran_decay_frac * total_episodes), 1)
        frac = min(episode / span, 1.0)
        self.p_ran = p.p_ran_start + frac * (p.p_ran_end - p.p_ran_start)

    # -- learning ------------------------------------------------------------

    def td_target(self, rewards, next_states, dones) -> np.ndarray:
        xn2 = sigmoid(self.actor_target.forward(next_states)[0])
        q2 = q_multipass(self.qnet_target, next_states, xn2)
        return rewards + self.params.gamma * (1.0 - dones) * q2.max(axis=1)

    def loss_q(self, states, ks, xs, targets) -> tuple[float, list, tuple]:
        """Half squared TD error, averaged; grads flow only through taken slots."""
        b = states.shape[0]
        slots = np.zeros((b, N_DISCRETE))
        slots[np.arange(b), ks] = xs
        y, cache = self.qnet.forward(np.concatenate([states, slots], axis=1))
        q_taken = y[np.arange(b), ks]
        err = q_taken - targets
        loss = 0.5 * float(np.mean(err ** 2))
        dy = np.zeros_like(y)
        dy[np.arange(b), ks] = err / b
        _, grads = self.qnet.backward(cache, dy)
        return loss, grads, (q_taken,)

    def loss_actor(self, states) -> tuple[float, list]:
        """Mean of -sum_k Q_k(s, actor(s)_k); Q weights held fixed."""
        b = states.shape[0]
        z, actor_cache = self.actor.forward(states)
        xn = sigmoid(z)
        padded = pad_slots(xn)
        loss = 0.0
        dxn = np.zeros_like(xn)
        for k in range(N_DISCRETE):
            y, q_cache = self.qnet.forward(
                np.concatenate([states, padded[k]], axis=1))
            loss -= float(np.mean(y[:, k]))
            dy = np.zeros_like(y)
            dy[:, k] = -1.0 / b
            din, _ = self.qnet.backward(q_cache, dy)
            dxn[:, k] += din[:, STATE_DIM + k]
        dz = dxn * xn * (1.0 - xn)
        _, grads = self.actor.backward(actor_cache, dz)
        return loss, grads

    def update(self) -> tuple[float, float] | None:
        if self.buffer.size < self.params.batch_size:
            return None
        s, k, x, r, s2, d = self.buffer.sample(self.params.batch_size)
        y = self.td_target(r, s2, d)
        lq, gq, _ = self.loss_q(s, k, x, y)
        self.opt_q.step(self.qnet.params(), gq)
        la, ga = self.loss_actor(s)
        self.opt_actor.step(self.actor.params(), ga)
        self.soft_update()
        return lq, la

    def soft_update(self) -> None:
        tau = self.params.tau
        for dst, src in zip(self.actor_target.params(), self.actor.params()):
            dst *= 1.0 - tau
            dst += tau * src
        for dst, src in zip(self.qnet_target.params(), self.qnet.params()):
            dst *= 1.0 - tau
            dst += tau * src

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        arrays = {}
        for name, net in self._nets().items():
            for j, p in enumerate(net.params()):
                arrays[f"{name}_{j}"] = p
        np.savez(path.with_suffix(".npz"), **arrays)
        meta = {"hidden": self.params.hidden, "n_noise": self.noise.n,
                "p_ran": self.p_ran}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    def load(self, path: str | Path) -> None:
        path = Path(path)
        data = np.load(path.with_suffix(".npz"))
        for name, net in self._nets().items():
            for j, p in enumerate(net.params()):
                p[...] = data[f"{name}_{j}"]
        meta = json.loads(path.with_suffix(".json").read_text())
        self.p_ran = meta["p_ran"]

    def _nets(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "qnet": self.qnet,
                "actor_target": self.actor_target, "qnet_target": self.qnet_target}


class AgentPolicy:
    """Adapter giving the agent the environment's policy interface."""

    def __init__(self, agent: MpdqnAgent, p_max_w: float):
        self.agent = agent
        self.p_max_w = p_max_w
        self.last: dict[int, tuple[int, float]] = {}

    def action(self, obs: np.ndarray, vehicle: int, epoch: int,
               explore: bool) -> tuple[int, float]:
        k, xn = self.agent.select_action(obs, vehicle, explore)
        self.last[vehicle] = (k, xn)
        return RRI_CHOICES[k], xn * self.p_max_w


@dataclass
class TrainReport:
    episode_rewards: list[float] = field(default_factory=list)
    episode_aoi: list[float] = field(default_factory=list)
    episode_energy: list[float] = field(default_factory=list)
    q_losses: list[float] = field(default_factory=list)


def train(agent: MpdqnAgent, env, episodes: int,
          progress=None) -> TrainReport:
    """Exploration rollouts with one gradient step per stored transition."""
    from .env import run_episode

    policy = AgentPolicy(agent, env.p_max_w)
    report = TrainReport()

    def on_transition(tr):
        k, xn = policy.last[tr.vehicle]
        agent.buffer.push(tr.state, tr.action[0], tr.action[1] / env.p_max_w,
                          tr.reward, tr.next_state, tr.done)
        losses = agent.update()
        if losses is not None:
            report.q_losses.append(losses[0])

    for ep in range(episodes):
        agent.set_p_ran(ep, episodes)
        agent.noise.reset()
        metrics = run_episode(env, policy, explore=True,
                              on_transition=on_transition)
        report.episode_rewards.append(metrics["mean_reward"])
        report.episode_aoi.append(metrics["avg_aoi_slots"])
        report.episode_energy.append(metrics["avg_energy_j"])
        if progress is not None:
            progress(ep, metrics)
    return report


def evaluate(agent: MpdqnAgent, env, episodes: int) -> dict[str, float]:
    """Greedy rollouts; returns mean KPIs over the episodes."""
    from .env import run_episode

    policy = AgentPolicy(agent, env.p_max_w)
    aoi, energy, reward = [], [], []
    for _ in range(episodes):
        metrics = run_episode(env, policy, explore=False)
        aoi.append(metrics["avg_aoi_slots"])
        energy.append(metrics["avg_energy_j"])
        reward.append(metrics["mean_reward"])
    return {"avg_aoi_slots": float(np.mean(aoi)),
            "avg_energy_j": float(np.mean(energy)),
            "mean_reward": float(np.mean(reward)),
            "episodes": episodes}
