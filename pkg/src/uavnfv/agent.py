"""Hybrid-action agents: dual replay buffers, the DDPG and DQN blocks, the
hierarchical two-step action selection, baselines, and the training loop.

Action selection runs in two steps: the actor emits the continuous action from
the observation, then the DQN scores each discrete head on (observation ++
continuous action). Training keeps two buffers, one per block, exactly as the
loop stores them; the DQN's next input is rebuilt at train time with the
target actor (the same convention the critic target uses).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig, config_to_dict
from .env import ActionSpec, HybridAction, UavNetworkEnv, level_for_power
from .metrics import SlotMetrics, episode_kpis
from .neural import LINEAR, TANH, Adam, Mlp, load_networks, save_networks, sync_target

LEARNING_CURVE_HEADER = "episode,mean_reward,mean_ee,mean_delay,rrr,epsilon,lr"


def epsilon_at(episode: int, cfg: ScenarioConfig) -> float:
    ag = cfg.agent
    return max(ag.epsilon_min, 1.0 - ag.epsilon_decay * episode)


def lr_at(episode: int, cfg: ScenarioConfig) -> float:
    """Inverse time decay: large early steps, small late ones."""
    ag = cfg.agent
    return ag.lr_initial / (1.0 + ag.lr_decay * episode)


def noise_at(episode: int, cfg: ScenarioConfig) -> float:
    return cfg.agent.noise_scale * epsilon_at(episode, cfg)


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform sampling."""

    def __init__(self, capacity: int, fields: dict):
        self.capacity = capacity
        self._data = {
            name: np.zeros((capacity,) + tuple(shape), dtype=dtype)
            for name, (shape, dtype) in fields.items()
        }
        self._idx = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, **values) -> None:
        for name, value in values.items():
            self._data[name][self._idx] = value
        self._idx = (self._idx + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> dict:
        idx = rng.integers(self._size, size=batch)
        return {name: arr[idx] for name, arr in self._data.items()}

    def newest(self, n: int) -> dict:
        idx = [(self._idx - 1 - i) % self.capacity for i in range(min(n, self._size))]
        return {name: arr[idx] for name, arr in self._data.items()}


class DdpgCore:
    """Actor/critic pair with target copies; the critic scores (state, action)."""

    def __init__(self, obs_dim: int, act_dim: int, hidden, rng: np.random.Generator,
                 lr: float):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.actor = Mlp([obs_dim, *hidden, act_dim], output=TANH, rng=rng)
        self.critic = Mlp([obs_dim + act_dim, *hidden, 1], output=LINEAR, rng=rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.opt_actor = Adam(self.actor.parameters(), lr=lr)
        self.opt_critic = Adam(self.critic.parameters(), lr=lr)

    def set_lr(self, lr: float) -> None:
        self.opt_actor.lr = lr
        self.opt_critic.lr = lr

    def act(self, obs: np.ndarray) -> np.ndarray:
        return self.actor.forward(obs)

    def train_critic(self, s, a, r, s2, done, gamma: float,
                     a2: np.ndarray | None = None) -> float:
        """One Adam step on the critic; returns the mean squared TD error."""
        if a2 is None:
            a2 = self.target_actor.forward(s2)
        q2 = self.target_critic.forward(np.concatenate([s2, a2], axis=1))[:, 0]
        y = r + gamma * (1.0 - done) * q2
        cache: list = []
        q = self.critic.forward(np.concatenate([s, a], axis=1), cache)[:, 0]
        err = q - y
        loss = float(np.mean(err**2))
        grad_out = (2.0 * err / err.shape[0])[:, None]
        grads, _ = self.critic.backward(cache, grad_out)
        self.opt_critic.step(self.critic.parameters(), grads)
        return loss

    def train_actor(self, s) -> float:
        """Ascend E[Q(s, actor(s))] by chaining the critic's input gradient
        through the actor; the critic's parameters are left untouched."""
        cache_a: list = []
        a = self.actor.forward(s, cache_a)
        cache_c: list = []
        q = self.critic.forward(np.concatenate([s, a], axis=1), cache_c)
        _, g_in = self.critic.backward(cache_c, np.full_like(q, 1.0 / q.shape[0]))
        dq_da = g_in[:, self.obs_dim :]
        grads, _ = self.actor.backward(cache_a, -dq_da)
        self.opt_actor.step(self.actor.parameters(), grads)
        return float(q.mean())

    def sync(self, mix: float) -> None:
        sync_target(self.actor, self.target_actor, mix)
        sync_target(self.critic, self.target_critic, mix)


class DqnCore:
    """Factorized-head DQN: one shared body, per-head argmax and TD targets."""

    def __init__(self, input_dim: int, head_sizes, hidden, rng: np.random.Generator,
                 lr: float):
        self.input_dim = input_dim
        self.head_sizes = np.asarray(head_sizes, dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.head_sizes)])
        self.net = Mlp([input_dim, *hidden, int(self.head_sizes.sum())], output=LINEAR, rng=rng)
        self.target = self.net.copy()
        self.opt = Adam(self.net.parameters(), lr=lr)

    def set_lr(self, lr: float) -> None:
        self.opt.lr = lr

    def greedy(self, x: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(self.net.forward(x))
        out = np.zeros((q.shape[0], len(self.head_sizes)), dtype=int)
        for h in range(len(self.head_sizes)):
            seg = q[:, self.offsets[h] : self.offsets[h + 1]]
            out[:, h] = np.argmax(seg, axis=1)
        return out[0] if np.asarray(x).ndim == 1 else out

    def train(self, x, a_disc, r, x2, done, gamma: float) -> float:
        q2 = self.target.forward(x2)
        batch, n_heads = a_disc.shape
        y = np.zeros((batch, n_heads))
        for h in range(n_heads):
            seg = q2[:, self.offsets[h] : self.offsets[h + 1]]
            y[:, h] = r + gamma * (1.0 - done) * seg.max(axis=1)
        cache: list = []
        q = self.net.forward(x, cache)
        rows = np.arange(batch)[:, None]
        cols = self.offsets[:-1][None, :] + a_disc
        q_sel = q[rows, cols]
        err = q_sel - y
        loss = float(np.mean(err**2))
        grad = np.zeros_like(q)
        np.add.at(grad, (rows, cols), 2.0 * err / err.size)
        grads, _ = self.net.backward(cache, grad)
        self.opt.step(self.net.parameters(), grads)
        return loss

    def sync(self, mix: float) -> None:
        sync_target(self.net, self.target, mix)


def _view_masks(cfg: ScenarioConfig) -> np.ndarray:
    env = UavNetworkEnv.__new__(UavNetworkEnv)
    env.cfg = cfg
    env.spec = ActionSpec(cfg)
    return UavNetworkEnv.view_masks(env)


def _dual_buffers(cfg: ScenarioConfig, spec: ActionSpec, cont_dim: int):
    """The two experience stores of the training loop: D for the continuous
    block and D_DQN keyed by (state ++ continuous action)."""
    buf_d = ReplayBuffer(
        cfg.agent.buffer_capacity,
        {
            "s": ((cfg.obs_size,), float),
            "cont": ((cont_dim,), float),
            "r": ((), float),
            "s2": ((cfg.obs_size,), float),
            "done": ((), float),
        },
    )
    buf_dqn = ReplayBuffer(
        cfg.agent.buffer_capacity,
        {
            "x": ((cfg.obs_size + spec.cont_size,), float),
            "disc": ((spec.n_heads,), int),
            "r": ((), float),
            "s2": ((cfg.obs_size,), float),
            "done": ((), float),
        },
    )
    return buf_d, buf_dqn


class HhcdaAgent:
    """Single-agent hierarchical hybrid agent: DDPG for the continuous part,
    a factorized DQN conditioned on (state, continuous action) for the rest."""

    algo = "hhcda"

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = cfg
        self.spec = ActionSpec(cfg)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 101)))
        hidden = list(cfg.agent.hidden_sizes)
        lr = cfg.agent.lr_initial
        self.ddpg = DdpgCore(cfg.obs_size, self.spec.cont_size, hidden, rng, lr)
        self.dqn = DqnCore(
            cfg.obs_size + self.spec.cont_size, self.spec.head_sizes, hidden, rng, lr
        )
        assert self.dqn.input_dim == cfg.obs_size + self.spec.cont_size
        self.buf_d, self.buf_dqn = _dual_buffers(cfg, self.spec, self.spec.cont_size)
        self.updates = 0

    def set_lr(self, lr: float) -> None:
        self.ddpg.set_lr(lr)
        self.dqn.set_lr(lr)

    def select_action(self, obs: np.ndarray, explore: bool = False, eps: float = 0.0,
                      sigma: float = 0.0, rng: np.random.Generator | None = None) -> HybridAction:
        cont = self.ddpg.act(obs)
        if explore and sigma > 0:
            cont = cont + rng.normal(0.0, sigma, size=cont.shape)
        cont = np.clip(cont, -1.0, 1.0)
        disc = self.dqn.greedy(np.concatenate([obs, cont]))
        if explore and eps > 0:
            for h in range(len(disc)):
                if rng.random() < eps:
                    disc[h] = rng.integers(self.spec.head_sizes[h])
        return HybridAction(cont, disc)

    def action(self, obs: np.ndarray) -> HybridAction:
        return self.select_action(obs, explore=False)

    def remember(self, obs, action: HybridAction, reward, obs2, done: float) -> None:
        self.buf_d.push(s=obs, cont=action.continuous, r=reward, s2=obs2, done=done)
        self.buf_dqn.push(
            x=np.concatenate([obs, action.continuous]),
            disc=action.discrete,
            r=reward,
            s2=obs2,
            done=done,
        )

    def ready(self) -> bool:
        return len(self.buf_d) >= self.cfg.agent.batch_size

    def update(self, rng: np.random.Generator) -> dict:
        ag = self.cfg.agent
        batch = self.buf_d.sample(rng, ag.batch_size)
        critic_loss = self.ddpg.train_critic(
            batch["s"], batch["cont"], batch["r"], batch["s2"], batch["done"], ag.discount
        )
        actor_obj = self.ddpg.train_actor(batch["s"])
        batch_q = self.buf_dqn.sample(rng, ag.batch_size)
        s2 = batch_q["s2"]
        x2 = np.concatenate([s2, self.ddpg.target_actor.forward(s2)], axis=1)
        dqn_loss = self.dqn.train(
            batch_q["x"], batch_q["disc"], batch_q["r"], x2, batch_q["done"], ag.discount
        )
        self.updates += 1
        if self.updates % ag.target_period == 0:
            self.ddpg.sync(ag.target_mix)
            self.dqn.sync(ag.target_mix)
        return {"critic": critic_loss, "actor": actor_obj, "dqn": dqn_loss}

    def networks(self) -> dict:
        return {
            "actor": self.ddpg.actor,
            "critic": self.ddpg.critic,
            "target_actor": self.ddpg.target_actor,
            "target_critic": self.ddpg.target_critic,
            "dqn": self.dqn.net,
            "target_dqn": self.dqn.target,
        }

    def load_nets(self, nets: dict) -> None:
        self.ddpg.actor = nets["actor"]
        self.ddpg.critic = nets["critic"]
        self.ddpg.target_actor = nets["target_actor"]
        self.ddpg.target_critic = nets["target_critic"]
        self.dqn.net = nets["dqn"]
        self.dqn.target = nets["target_dqn"]
        self.ddpg.opt_actor = Adam(self.ddpg.actor.parameters(), lr=self.ddpg.opt_actor.lr)
        self.ddpg.opt_critic = Adam(self.ddpg.critic.parameters(), lr=self.ddpg.opt_critic.lr)
        self.dqn.opt = Adam(self.dqn.net.parameters(), lr=self.dqn.opt.lr)


class MultiHhcdaAgent:
    """One actor+DQN per UAV over masked views, one centralized critic scoring
    the full state with the joint continuous action; the reward is shared."""

    algo = "hhcda"

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = cfg
        self.spec = ActionSpec(cfg)
        self.masks = _view_masks(cfg)
        hidden = list(cfg.agent.hidden_sizes)
        lr = cfg.agent.lr_initial
        u_n = cfg.num_uavs
        self.cont_idx = [self.spec.agent_cont_indices(u) for u in range(u_n)]
        self.head_idx = [self.spec.agent_head_indices(u) for u in range(u_n)]
        self.actors = []
        self.dqns = []
        for u in range(u_n):
            rng = np.random.default_rng(np.random.SeedSequence((seed, 201, u)))
            self.actors.append(
                Mlp([cfg.obs_size, *hidden, len(self.cont_idx[u])], output=TANH, rng=rng)
            )
            self.dqns.append(
                DqnCore(
                    cfg.obs_size + len(self.cont_idx[u]),
                    self.spec.head_sizes[self.head_idx[u]],
                    hidden,
                    rng,
                    lr,
                )
            )
        rng = np.random.default_rng(np.random.SeedSequence((seed, 202)))
        self.critic = Mlp(
            [cfg.obs_size + self.spec.cont_size, *hidden, 1], output=LINEAR, rng=rng
        )
        self.target_actors = [a.copy() for a in self.actors]
        self.target_critic = self.critic.copy()
        self.opt_actors = [Adam(a.parameters(), lr=lr) for a in self.actors]
        self.opt_critic = Adam(self.critic.parameters(), lr=lr)
        self.buf_d, self.buf_dqn = _dual_buffers(cfg, self.spec, self.spec.cont_size)
        self.updates = 0

    def set_lr(self, lr: float) -> None:
        for opt in self.opt_actors:
            opt.lr = lr
        self.opt_critic.lr = lr
        for d in self.dqns:
            d.set_lr(lr)

    def _joint_cont(self, obs: np.ndarray, actors) -> np.ndarray:
        views = self.masks * obs[None, :]
        joint = np.zeros(self.spec.cont_size)
        for u, actor in enumerate(actors):
            joint[self.cont_idx[u]] = actor.forward(views[u])
        return joint

    def select_action(self, obs: np.ndarray, explore: bool = False, eps: float = 0.0,
                      sigma: float = 0.0, rng: np.random.Generator | None = None) -> HybridAction:
        views = self.masks * obs[None, :]
        cont = np.zeros(self.spec.cont_size)
        disc = np.zeros(self.spec.n_heads, dtype=int)
        for u, actor in enumerate(self.actors):
            a_u = actor.forward(views[u])
            if explore and sigma > 0:
                a_u = a_u + rng.normal(0.0, sigma, size=a_u.shape)
            a_u = np.clip(a_u, -1.0, 1.0)
            cont[self.cont_idx[u]] = a_u
            picks = self.dqns[u].greedy(np.concatenate([views[u], a_u]))
            heads = self.head_idx[u]
            if explore and eps > 0:
                for pos in range(len(heads)):
                    if rng.random() < eps:
                        picks[pos] = rng.integers(self.spec.head_sizes[heads[pos]])
            disc[heads] = picks
        return HybridAction(cont, disc)

    def action(self, obs: np.ndarray) -> HybridAction:
        return self.select_action(obs, explore=False)

    def remember(self, obs, action: HybridAction, reward, obs2, done: float) -> None:
        self.buf_d.push(s=obs, cont=action.continuous, r=reward, s2=obs2, done=done)
        self.buf_dqn.push(
            x=np.concatenate([obs, action.continuous]),
            disc=action.discrete,
            r=reward,
            s2=obs2,
            done=done,
        )

    def ready(self) -> bool:
        return len(self.buf_d) >= self.cfg.agent.batch_size

    def update(self, rng: np.random.Generator) -> dict:
        ag = self.cfg.agent
        batch = self.buf_d.sample(rng, ag.batch_size)
        s, a, r, s2, done = batch["s"], batch["cont"], batch["r"], batch["s2"], batch["done"]
        n = s.shape[0]
        a2 = np.zeros_like(a)
        for u, actor in enumerate(self.target_actors):
            views2 = s2 * self.masks[u][None, :]
            a2[:, self.cont_idx[u]] = actor.forward(views2)
        q2 = self.target_critic.forward(np.concatenate([s2, a2], axis=1))[:, 0]
        y = r + ag.discount * (1.0 - done) * q2
        cache: list = []
        q = self.critic.forward(np.concatenate([s, a], axis=1), cache)[:, 0]
        err = q - y
        critic_loss = float(np.mean(err**2))
        grads, _ = self.critic.backward(cache, (2.0 * err / n)[:, None])
        self.opt_critic.step(self.critic.parameters(), grads)

        for u, actor in enumerate(self.actors):
            views = s * self.masks[u][None, :]
            cache_a: list = []
            a_u = actor.forward(views, cache_a)
            a_mix = a.copy()
            a_mix[:, self.cont_idx[u]] = a_u
            cache_c: list = []
            qv = self.critic.forward(np.concatenate([s, a_mix], axis=1), cache_c)
            _, g_in = self.critic.backward(cache_c, np.full_like(qv, 1.0 / n))
            dq_da = g_in[:, self.cfg.obs_size + self.cont_idx[u]]
            a_grads, _ = actor.backward(cache_a, -dq_da)
            self.opt_actors[u].step(actor.parameters(), a_grads)

        batch_q = self.buf_dqn.sample(rng, ag.batch_size)
        sq = batch_q["x"][:, : self.cfg.obs_size]
        cont = batch_q["x"][:, self.cfg.obs_size :]
        s2q = batch_q["s2"]
        dqn_loss = 0.0
        for u, dqn in enumerate(self.dqns):
            views = sq * self.masks[u][None, :]
            x_u = np.concatenate([views, cont[:, self.cont_idx[u]]], axis=1)
            views2 = s2q * self.masks[u][None, :]
            a2_u = self.target_actors[u].forward(views2)
            x2_u = np.concatenate([views2, a2_u], axis=1)
            dqn_loss += dqn.train(
                x_u,
                batch_q["disc"][:, self.head_idx[u]],
                batch_q["r"],
                x2_u,
                batch_q["done"],
                ag.discount,
            )

        self.updates += 1
        if self.updates % ag.target_period == 0:
            for main, tgt in zip(self.actors, self.target_actors):
                sync_target(main, tgt, ag.target_mix)
            sync_target(self.critic, self.target_critic, ag.target_mix)
            for d in self.dqns:
                d.sync(ag.target_mix)
        return {"critic": critic_loss, "dqn": dqn_loss}

    def networks(self) -> dict:
        nets = {"critic": self.critic, "target_critic": self.target_critic}
        for u in range(self.cfg.num_uavs):
            nets[f"actor{u}"] = self.actors[u]
            nets[f"target_actor{u}"] = self.target_actors[u]
            nets[f"dqn{u}"] = self.dqns[u].net
            nets[f"target_dqn{u}"] = self.dqns[u].target
        return nets

    def load_nets(self, nets: dict) -> None:
        self.critic = nets["critic"]
        self.target_critic = nets["target_critic"]
        for u in range(self.cfg.num_uavs):
            self.actors[u] = nets[f"actor{u}"]
            self.target_actors[u] = nets[f"target_actor{u}"]
            self.dqns[u].net = nets[f"dqn{u}"]
            self.dqns[u].target = nets[f"target_dqn{u}"]


class QuantizedDdpgAgent:
    """Baseline: one DDPG whose extra actor outputs are binned into the
    discrete heads; no DQN block."""

    algo = "quantized-ddpg"

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = cfg
        self.spec = ActionSpec(cfg)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 301)))
        hidden = list(cfg.agent.hidden_sizes)
        self.out_dim = self.spec.cont_size + self.spec.n_heads
        self.ddpg = DdpgCore(cfg.obs_size, self.out_dim, hidden, rng, cfg.agent.lr_initial)
        self.buf_d, self.buf_dqn = _dual_buffers(cfg, self.spec, self.out_dim)
        self._last_raw = None
        self.updates = 0

    def set_lr(self, lr: float) -> None:
        self.ddpg.set_lr(lr)

    def quantize(self, values: np.ndarray) -> np.ndarray:
        """Map [-1, 1] outputs onto category indices, one bin per category."""
        bins = self.cfg.agent.quantize_bins
        sizes = self.spec.head_sizes
        disc = np.zeros(self.spec.n_heads, dtype=int)
        for h, size in enumerate(sizes):
            n = bins if bins > 0 else int(size)
            idx = int((values[h] + 1.0) / 2.0 * n)
            idx = min(idx, n - 1)
            disc[h] = min(idx, size - 1)
        return disc

    def select_action(self, obs: np.ndarray, explore: bool = False, eps: float = 0.0,
                      sigma: float = 0.0, rng: np.random.Generator | None = None) -> HybridAction:
        raw = self.ddpg.act(obs)
        if explore and sigma > 0:
            raw = raw + rng.normal(0.0, sigma, size=raw.shape)
        raw = np.clip(raw, -1.0, 1.0)
        self._last_raw = raw
        return HybridAction(raw[: self.spec.cont_size], self.quantize(raw[self.spec.cont_size :]))

    def action(self, obs: np.ndarray) -> HybridAction:
        return self.select_action(obs, explore=False)

    def remember(self, obs, action: HybridAction, reward, obs2, done: float) -> None:
        raw = self._last_raw
        if raw is None:  # actions not produced by this agent: rebuild from bin centers
            raw = self._raw_from_action(action)
        self.buf_d.push(s=obs, cont=raw, r=reward, s2=obs2, done=done)

    def _raw_from_action(self, action: HybridAction) -> np.ndarray:
        raw = np.zeros(self.out_dim)
        raw[: self.spec.cont_size] = action.continuous
        bins = self.cfg.agent.quantize_bins
        for h, size in enumerate(self.spec.head_sizes):
            n = bins if bins > 0 else int(size)
            raw[self.spec.cont_size + h] = (action.discrete[h] + 0.5) / n * 2.0 - 1.0
        return raw

    def ready(self) -> bool:
        return len(self.buf_d) >= self.cfg.agent.batch_size

    def update(self, rng: np.random.Generator) -> dict:
        ag = self.cfg.agent
        batch = self.buf_d.sample(rng, ag.batch_size)
        loss = self.ddpg.train_critic(
            batch["s"], batch["cont"], batch["r"], batch["s2"], batch["done"], ag.discount
        )
        obj = self.ddpg.train_actor(batch["s"])
        self.updates += 1
        if self.updates % ag.target_period == 0:
            self.ddpg.sync(ag.target_mix)
        return {"critic": loss, "actor": obj}

    def networks(self) -> dict:
        return {
            "actor": self.ddpg.actor,
            "critic": self.ddpg.critic,
            "target_actor": self.ddpg.target_actor,
            "target_critic": self.ddpg.target_critic,
        }

    def load_nets(self, nets: dict) -> None:
        self.ddpg.actor = nets["actor"]
        self.ddpg.critic = nets["critic"]
        self.ddpg.target_actor = nets["target_actor"]
        self.ddpg.target_critic = nets["target_critic"]


class RandomPolicy:
    """Uniform over valid index ranges and [-1, 1] continuous entries."""

    algo = "random"

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.spec = ActionSpec(cfg)
        self.rng = np.random.default_rng(np.random.SeedSequence((seed, 401)))

    def action(self, obs: np.ndarray) -> HybridAction:
        return self.spec.random_action(self.rng)


class GreedyPolicy:
    """Nearest-UAV association, equal DL power split, first-feasible hosts,
    no relays, no movement. Reads geometry and requests back out of the
    observation vector, which doubles as a check of the encoding contract."""

    algo = "greedy"

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = cfg
        self.spec = ActionSpec(cfg)

    def action(self, obs: np.ndarray) -> HybridAction:
        cfg = self.cfg
        spec = self.spec
        u_n, k_n, j_n = cfg.num_uavs, cfg.num_users, cfg.max_chain_len
        uav = (obs[: 3 * u_n].reshape(u_n, 3) + 1.0) * cfg.area_side / 2.0
        users = (obs[3 * u_n : 3 * u_n + 2 * k_n].reshape(k_n, 2) + 1.0) * cfg.area_side / 2.0
        desc = obs[3 * u_n + 2 * k_n :][: cfg.max_services * j_n * k_n]
        desc = desc.reshape(cfg.max_services, j_n, k_n)

        users3 = np.concatenate([users, np.zeros((k_n, 1))], axis=1)
        dist = np.linalg.norm(uav[:, None, :] - users3[None, :, :], axis=2)
        nearest = dist.argmin(axis=0)

        cont = np.full(spec.cont_size, -1.0)
        disc = np.zeros(spec.n_heads, dtype=int)
        per_uav = np.bincount(nearest, minlength=u_n)
        half = float(level_for_power(0.5, 1.0))
        for k in range(k_n):
            u = int(nearest[k])
            disc[spec.dl_head(k)] = u * cfg.n_sub_dl + k % cfg.n_sub_dl
            disc[spec.ul_head(k)] = u * cfg.n_sub_ul + k % cfg.n_sub_ul
            # equal split of the DL budget; half the UL budget
            cont[3 * u_n + k] = float(level_for_power(1.0 / per_uav[u], 1.0))
            cont[3 * u_n + k_n + k] = half
        cont[2 * u_n : 3 * u_n] = half  # half the backhaul budget
        for h in range(spec._relay_base, spec._relay_base + spec.n_relay):
            disc[h] = u_n                               # no relays

        caps = cfg.cpu_per_uav().copy()
        edges = []
        for i in range(cfg.max_services):
            chain = [j for j in range(j_n) if desc[i, j, i] != 0.0]
            if not chain:
                continue
            dst = [k for k in range(k_n) if k != i and desc[i, 0, k] != 0.0]
            route = [int(nearest[i])]
            for j in chain:
                host = -1
                order = [route[-1]] + [u for u in range(u_n) if u != route[-1]]
                for u in order:
                    if caps[u] >= cfg.cycles_per_bit * cfg.catalog.bit_rate_max:
                        host = u
                        break
                host = host if host >= 0 else route[-1]
                caps[host] -= cfg.cycles_per_bit * cfg.catalog.bit_rate_max
                disc[spec.host_head(i, j)] = host
                route.append(host)
            if dst:
                route.append(int(nearest[dst[0]]))
            for a, b in zip(route[:-1], route[1:]):
                if a != b:
                    edges.append((a, b))
        if cfg.sigma_in_action and edges:
            for v in range(spec.n_sigma):
                a, b = edges[v % len(edges)]
                disc[spec.sigma_head(v)] = spec.pairs.index((a, b)) + 1
        return HybridAction(cont, disc)


def make_agent(cfg: ScenarioConfig, algo: str, seed: int = 0):
    if algo == "hhcda":
        if cfg.agent.mode == "multi":
            return MultiHhcdaAgent(cfg, seed)
        return HhcdaAgent(cfg, seed)
    if algo == "quantized-ddpg":
        return QuantizedDdpgAgent(cfg, seed)
    if algo == "random":
        return RandomPolicy(cfg, seed)
    if algo == "greedy":
        return GreedyPolicy(cfg, seed)
    raise ValueError(f"unknown policy {algo!r}")


def save_agent(agent, path, extra_meta: dict | None = None) -> None:
    meta = {"algo": agent.algo, "config": config_to_dict(agent.cfg)}
    meta.update(extra_meta or {})
    save_networks(path, agent.networks(), meta)


def load_agent(path, cfg: ScenarioConfig | None = None):
    from .config import config_from_dict

    nets, meta = load_networks(path)
    cfg = cfg or config_from_dict(meta["config"])
    agent = make_agent(cfg, meta["algo"])
    agent.load_nets(nets)
    return agent, meta


# -- training and evaluation loops ---------------------------------------------


@dataclass
class EpisodeRow:
    episode: int
    mean_reward: float
    mean_ee: float
    mean_delay: float
    rrr: float
    epsilon: float
    lr: float

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.episode),
                repr(self.mean_reward),
                repr(self.mean_ee),
                repr(self.mean_delay),
                repr(self.rrr),
                repr(self.epsilon),
                repr(self.lr),
            ]
        )


@dataclass
class TrainResult:
    rows: list
    agent: object


def run_training(
    cfg: ScenarioConfig,
    seed: int,
    algo: str = "hhcda",
    episodes: int | None = None,
    on_slot=None,
    on_episode=None,
    checkpoint_every: int = 0,
    checkpoint_fn=None,
) -> TrainResult:
    """Train an agent; fully determined by (cfg, seed, algo)."""
    episodes = episodes if episodes is not None else cfg.agent.episodes
    env = UavNetworkEnv(cfg, seed=(seed, 0))
    agent = make_agent(cfg, algo, seed)
    trainable = hasattr(agent, "update")
    rng_train = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    rows = []
    for ep in range(episodes):
        eps = epsilon_at(ep, cfg)
        sigma = noise_at(ep, cfg)
        lr = lr_at(ep, cfg)
        if trainable:
            agent.set_lr(lr)
        env.episode = ep
        obs = env.reset(seed=(seed, ep))
        slots = []
        done = False
        while not done:
            if trainable:
                action = agent.select_action(
                    obs, explore=True, eps=eps, sigma=sigma, rng=rng_train
                )
            else:
                action = agent.action(obs)
            obs2, reward, m, done = env.step(action)
            slots.append(m)
            if on_slot:
                on_slot(m)
            if trainable:
                agent.remember(obs, action, reward, obs2, float(done))
            obs = obs2
            if trainable and cfg.agent.update_every_step and agent.ready():
                agent.update(rng_train)
        if trainable and not cfg.agent.update_every_step and agent.ready():
            agent.update(rng_train)
        kpi = episode_kpis(slots)
        row = EpisodeRow(ep, kpi.avg_reward, kpi.avg_ee, kpi.avg_delay, kpi.rrr, eps, lr)
        rows.append(row)
        if on_episode:
            on_episode(row)
        if checkpoint_every and checkpoint_fn and (ep + 1) % checkpoint_every == 0:
            checkpoint_fn(agent, ep)
    return TrainResult(rows=rows, agent=agent)


def evaluate(
    cfg: ScenarioConfig,
    seed: int,
    policy,
    episodes: int,
    on_slot=None,
    slot_logger=None,
) -> list:
    """Frozen-policy rollouts; returns the per-episode SlotMetrics lists."""
    env = UavNetworkEnv(cfg, seed=(seed, 0))
    out = []
    for ep in range(episodes):
        env.episode = ep
        obs = env.reset(seed=(seed, ep))
        slots = []
        done = False
        while not done:
            action = policy.action(obs)
            obs, reward, m, done = env.step(action)
            slots.append(m)
            if on_slot:
                on_slot(m)
            if slot_logger:
                slot_logger(ep, action, reward, m, env)
        out.append(slots)
    return out
