"""The slot-stepped MDP: observation encoding, hybrid-action decoding, and the
per-slot pipeline (moves, channels, rates, NFV checks, admissions, reward).

Observation layout (all entries scaled to [-1, 1]):
  UAV poses (3U) | user poses (2K) | request descriptor (I*J*K) |
  residual CPU (U) | residual backhaul per ordered UAV pair (U(U-1))
with I = num_users (one request slot per source user) and J the catalog's
maximum chain length. Descriptor entry (i, j, k): for user i's active service,
at k = source it is +remaining_fraction when function j is placed and
-remaining_fraction while pending; at k = destination it is -0.5 for existing
chain positions; zero elsewhere.

Continuous action layout (length 3U + 2K, each in [-1, 1]):
  per-UAV move magnitude (U) | per-UAV move heading (U) |
  per-UAV backhaul power level (U) | per-user DL power level (K) |
  per-user UL power level (K)
Magnitude/level -1 maps to zero, +1 to the full budget; heading spans a turn.

Discrete heads: DL (UAV x subcarrier) per user, UL per user, host UAV per
(user, chain position), relay per (user, path segment) with "none" = U, and,
when sigma_in_action, one ordered-pair-or-idle head per backhaul subcarrier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel, kinematics, nfv, radio
from .config import ScenarioConfig
from .metrics import SlotMetrics, energy_efficiency, operation_power, reward_value
from .nfv import MigrationPlan, ServicePlacement, derive_migration, user_node
from .services import RequestGenerator, Service


def power_from_level(level, budget):
    """[-1, 1] -> [0, budget], linear."""
    return budget * (np.asarray(level, dtype=float) + 1.0) / 2.0


def level_for_power(power, budget):
    """Inverse of power_from_level."""
    return 2.0 * np.asarray(power, dtype=float) / budget - 1.0


@dataclass
class HybridAction:
    continuous: np.ndarray  # (3U + 2K,) in [-1, 1]
    discrete: np.ndarray    # (n_heads,) category indices


class ActionSpec:
    """Head layout shared by the decoder, the agents, and the baselines."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        u, k, j = cfg.num_uavs, cfg.num_users, cfg.max_chain_len
        self.cont_size = cfg.cont_action_size
        self.n_dl = k
        self.n_ul = k
        self.n_host = k * j
        self.n_relay = k * (j + 1)
        self.n_sigma = cfg.n_sub_backhaul if cfg.sigma_in_action else 0
        self.pairs = [(a, b) for a in range(u) for b in range(u) if a != b]
        sizes = [u * cfg.n_sub_dl] * self.n_dl
        sizes += [u * cfg.n_sub_ul] * self.n_ul
        sizes += [u] * self.n_host
        sizes += [u + 1] * self.n_relay
        sizes += [len(self.pairs) + 1] * self.n_sigma
        self.head_sizes = np.asarray(sizes, dtype=int)
        self.n_heads = len(sizes)
        self._host_base = self.n_dl + self.n_ul
        self._relay_base = self._host_base + self.n_host
        self._sigma_base = self._relay_base + self.n_relay

    def dl_head(self, k: int) -> int:
        return k

    def ul_head(self, k: int) -> int:
        return self.n_dl + k

    def host_head(self, k: int, j: int) -> int:
        return self._host_base + k * self.cfg.max_chain_len + j

    def relay_head(self, k: int, seg: int) -> int:
        return self._relay_base + k * (self.cfg.max_chain_len + 1) + seg

    def sigma_head(self, v: int) -> int:
        return self._sigma_base + v

    def random_action(self, rng: np.random.Generator) -> HybridAction:
        cont = rng.uniform(-1.0, 1.0, size=self.cont_size)
        disc = np.array([rng.integers(s) for s in self.head_sizes], dtype=int)
        return HybridAction(cont, disc)

    # -- multi-agent ownership -------------------------------------------

    def users_of_agent(self, u: int) -> list:
        k = self.cfg.num_users
        block = -(-k // self.cfg.num_uavs)
        return [i for i in range(k) if min(i // block, self.cfg.num_uavs - 1) == u]

    def agent_cont_indices(self, u: int) -> np.ndarray:
        n_u, k = self.cfg.num_uavs, self.cfg.num_users
        idx = [u, n_u + u, 2 * n_u + u]
        for i in self.users_of_agent(u):
            idx.append(3 * n_u + i)
        for i in self.users_of_agent(u):
            idx.append(3 * n_u + k + i)
        return np.asarray(idx, dtype=int)

    def agent_head_indices(self, u: int) -> np.ndarray:
        idx = []
        j = self.cfg.max_chain_len
        for k in self.users_of_agent(u):
            idx.append(self.dl_head(k))
            idx.append(self.ul_head(k))
            idx.extend(self.host_head(k, jj) for jj in range(j))
            idx.extend(self.relay_head(k, s) for s in range(j + 1))
        for v in range(self.n_sigma):
            if v % self.cfg.num_uavs == u:
                idx.append(self.sigma_head(v))
        return np.asarray(sorted(idx), dtype=int)


@dataclass
class ActiveService:
    service: Service
    hosts: np.ndarray  # (J,) UAV index per function, -1 while pending
    admitted: bool = False


@dataclass
class DecodedAction:
    alloc: radio.RadioAllocation
    placements: list
    migration: MigrationPlan
    repairs: list = field(default_factory=list)
    effective_discrete: np.ndarray | None = None
    move_deltas: np.ndarray | None = None
    # kept so the migration gate can rebuild a route with the previous hosts
    dl_uav: np.ndarray | None = None
    ul_uav: np.ndarray | None = None
    discrete: np.ndarray | None = None


class UavNetworkEnv:
    """One environment instance is strictly sequential; seed fixes everything."""

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = cfg
        self.spec = ActionSpec(cfg)
        self.seed = seed
        self.episode = 0
        self.reset(seed)

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        cfg = self.cfg
        if seed is not None:
            self.seed = seed
        ss = np.random.SeedSequence(self.seed)
        s_users, s_requests, s_init = ss.spawn(3)
        self._rng_users = np.random.default_rng(s_users)
        self._rng_init = np.random.default_rng(s_init)
        self.generator = RequestGenerator(cfg, np.random.default_rng(s_requests))
        self.slot = 0
        self.uav_poses = kinematics.uav_start_grid(cfg)
        self.user_poses = self._rng_init.uniform(
            0.0, cfg.area_side, size=(cfg.num_users, 2)
        )
        self.active: dict[int, ActiveService] = {}
        self._pending = {s.id: s for s in self.generator.generate(-1)}
        self._cpu_used = np.zeros(cfg.num_uavs)
        self._bh_capacity = np.zeros((cfg.num_uavs, cfg.num_uavs))
        self._link_demand = np.zeros((cfg.num_uavs, cfg.num_uavs))
        obs = self.observe()
        assert obs.shape == (cfg.obs_size,)
        return obs

    # -- observation ---------------------------------------------------------

    def observe(self) -> np.ndarray:
        cfg = self.cfg
        u_n, k_n, j_n = cfg.num_uavs, cfg.num_users, cfg.max_chain_len
        pos_scale = 2.0 / cfg.area_side
        parts = [
            (self.uav_poses * pos_scale - 1.0).ravel(),
            (self.user_poses * pos_scale - 1.0).ravel(),
        ]
        desc = np.zeros((cfg.max_services, j_n, k_n))
        visible = [(st.service, st.hosts) for st in self.active.values()]
        visible += [
            (svc, np.full(svc.chain_len, -1, dtype=int))
            for svc in self._pending.values()
            if svc.start_slot == self.slot
        ]
        for svc, hosts in visible:
            i = svc.src_user
            remaining = (svc.start_slot + svc.duration - self.slot) / svc.duration
            remaining = float(np.clip(remaining, 0.0, 1.0))
            for j in range(svc.chain_len):
                desc[i, j, svc.src_user] = remaining if hosts[j] >= 0 else -remaining
                desc[i, j, svc.dst_user] = -0.5
        parts.append(desc.ravel())
        caps = cfg.cpu_per_uav()
        parts.append(np.clip((caps - self._cpu_used) / caps, -1.0, 1.0))
        ref = cfg.backhaul_rate_ref()
        resid = (self._bh_capacity - self._link_demand) / ref
        off = ~np.eye(u_n, dtype=bool)
        parts.append(np.clip(resid[off], -1.0, 1.0))
        obs = np.concatenate(parts)
        assert obs.shape == (cfg.obs_size,)
        return obs

    def view_masks(self) -> np.ndarray:
        """Per-agent observation masks, shape (U, obs_size)."""
        cfg = self.cfg
        u_n, k_n, j_n = cfg.num_uavs, cfg.num_users, cfg.max_chain_len
        masks = np.zeros((u_n, cfg.obs_size))
        base_users = 3 * u_n
        base_desc = base_users + 2 * k_n
        base_tail = base_desc + cfg.max_services * j_n * k_n
        for u in range(u_n):
            m = masks[u]
            m[:base_users] = 1.0  # every agent sees all UAV poses
            mine = self.spec.users_of_agent(u)
            for k in mine:
                m[base_users + 2 * k : base_users + 2 * k + 2] = 1.0
            for i in mine:
                for j in range(j_n):
                    for k in mine:
                        m[base_desc + (i * j_n + j) * k_n + k] = 1.0
            m[base_tail:] = 1.0  # shared infrastructure residuals
        return masks

    def agent_views(self, obs: np.ndarray) -> np.ndarray:
        """Masked per-agent observations; single-agent mode sees everything."""
        if self.cfg.agent.mode == "single":
            return obs[None, :].copy()
        return self.view_masks() * obs[None, :]

    # -- action decoding ------------------------------------------------------

    def _starting_services(self):
        return [s for s in self._pending.values() if s.start_slot == self.slot]

    def decode_action(self, action: HybridAction) -> DecodedAction:
        """Map raw action vectors onto radio/NFV variables, repairing instead of
        failing: indices are clamped, DL power renormalized onto the budget,
        invalid relays dropped. Structural constraints C4/C5/C7/C8/C9/C10 hold
        on the output by construction."""
        cfg = self.cfg
        spec = self.spec
        u_n, k_n = cfg.num_uavs, cfg.num_users
        repairs: list[str] = []

        cont = np.asarray(action.continuous, dtype=float)
        assert cont.shape == (spec.cont_size,)
        if not np.all(np.isfinite(cont)):
            cont = np.nan_to_num(cont, nan=0.0, posinf=1.0, neginf=-1.0)
            repairs.append("continuous_sanitized")
        if np.any(cont < -1.0) or np.any(cont > 1.0):
            cont = np.clip(cont, -1.0, 1.0)
            repairs.append("continuous_clipped")

        disc = np.asarray(action.discrete, dtype=int).copy()
        assert disc.shape == (spec.n_heads,)
        clip_hi = spec.head_sizes - 1
        if np.any(disc < 0) or np.any(disc > clip_hi):
            disc = np.clip(disc, 0, clip_hi)
            repairs.append("index_clamped")
        effective = disc.copy()

        mag = (cont[:u_n] + 1.0) / 2.0 * cfg.max_move
        heading = (cont[u_n : 2 * u_n] + 1.0) * np.pi
        deltas = mag[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
        bh_level = power_from_level(cont[2 * u_n : 3 * u_n], cfg.backhaul_power_max)
        dl_level = power_from_level(cont[3 * u_n : 3 * u_n + k_n], cfg.dl_power_max)
        ul_level = power_from_level(cont[3 * u_n + k_n :], cfg.ul_power_max)

        alloc = radio.RadioAllocation.empty(cfg)
        dl_uav = np.zeros(k_n, dtype=int)
        ul_uav = np.zeros(k_n, dtype=int)
        for k in range(k_n):
            c = disc[spec.dl_head(k)]
            u, l = divmod(int(c), cfg.n_sub_dl)
            dl_uav[k] = u
            alloc.dl_assign[u, k, l] = True
            alloc.dl_power[u, k, l] = dl_level[k]
            c = disc[spec.ul_head(k)]
            u, e = divmod(int(c), cfg.n_sub_ul)
            ul_uav[k] = u
            alloc.ul_assign[k, u, e] = True
            alloc.ul_power[k, u, e] = ul_level[k]
        # C5: renormalize each UAV's DL power onto its budget
        for u in range(u_n):
            total = alloc.dl_power[u][alloc.dl_assign[u]].sum()
            if total > cfg.dl_power_max:
                alloc.dl_power[u] *= cfg.dl_power_max / total
                repairs.append("dl_power_renorm")

        # backhaul subcarrier assignment
        services_now = [st.service for st in self.active.values()]
        starting = self._starting_services()
        if cfg.sigma_in_action:
            for v in range(cfg.n_sub_backhaul):
                c = int(disc[spec.sigma_head(v)])
                if c > 0:
                    a, b = spec.pairs[c - 1]
                    alloc.bh_assign[a, b, v] = True
            if cfg.strict_c9 and alloc.bh_assign.sum() > 1:
                keep = np.argwhere(alloc.bh_assign)[0]
                alloc.bh_assign[:] = False
                alloc.bh_assign[tuple(keep)] = True
                for v in range(cfg.n_sub_backhaul):
                    if v != keep[2]:
                        effective[spec.sigma_head(v)] = 0
                repairs.append("sigma_strict_trim")

        placements: list[ServicePlacement] = []
        migration = MigrationPlan()
        by_id = {s.id: s for s in services_now}
        by_id.update({s.id: s for s in starting})
        for svc in sorted(by_id.values(), key=lambda s: s.id):
            state = self.active.get(svc.id)
            mid_life = state is not None and state.admitted
            k = svc.src_user
            hosts = np.zeros(svc.chain_len, dtype=int)
            for j in range(svc.chain_len):
                if mid_life and not cfg.migration_enabled:
                    hosts[j] = state.hosts[j]
                    effective[spec.host_head(k, j)] = state.hosts[j]
                else:
                    hosts[j] = int(disc[spec.host_head(k, j)])
            pl = self._build_route(svc, hosts, dl_uav, ul_uav, disc, effective, repairs)
            placements.append(pl)
            if mid_life and cfg.migration_enabled:
                prev = np.zeros((svc.chain_len, u_n), dtype=bool)
                for j, h in enumerate(state.hosts):
                    if h >= 0:
                        prev[j, h] = True
                m = derive_migration(prev, pl.hosts)
                if m.any():
                    migration.moves[svc.id] = m

        if not cfg.sigma_in_action:
            self._auto_sigma(alloc, placements, migration)
        # backhaul power: each UAV splits its level over its outgoing subcarriers
        for u in range(u_n):
            idx = np.argwhere(alloc.bh_assign[u])
            if len(idx):
                share = bh_level[u] / len(idx)
                for b, v in idx:
                    alloc.bh_power[u, b, v] = share

        return DecodedAction(
            alloc=alloc,
            placements=placements,
            migration=migration,
            repairs=repairs,
            effective_discrete=effective,
            move_deltas=deltas,
            dl_uav=dl_uav,
            ul_uav=ul_uav,
            discrete=disc,
        )

    def _build_route(self, svc, hosts, dl_uav, ul_uav, disc, effective, repairs):
        cfg = self.cfg
        spec = self.spec
        u_n = cfg.num_uavs
        ingress = int(ul_uav[svc.src_user])
        egress = int(dl_uav[svc.dst_user])
        anchors = [ingress] + [int(h) for h in hosts] + [egress]
        pl = ServicePlacement.empty(svc, u_n, cfg.num_users, ingress)
        for j, h in enumerate(hosts):
            pl.hosts[j, h] = True
        k = svc.src_user
        used = set(anchors)
        completed = -1  # highest chain index already executed along the walk
        for pos in range(len(anchors) - 1):
            a, b = anchors[pos], anchors[pos + 1]
            if a == b:
                if pos + 1 <= svc.chain_len:
                    completed = pos  # function runs where the traffic already sits
                continue
            label = completed if (completed >= 0 and pl.hosts[completed, a]) else -1
            seg_head = spec.relay_head(k, pos)
            relay = int(disc[seg_head])
            if relay < u_n and relay in used:
                effective[seg_head] = u_n
                repairs.append("relay_invalid")
                relay = u_n
            if relay < u_n:
                used.add(relay)
                self._add_edge(pl, a, relay, label)
                self._add_edge(pl, relay, b, -1)
            else:
                self._add_edge(pl, a, b, label)
            if pos + 1 <= svc.chain_len:
                completed = pos
        # final access hop to the destination user
        last_label = completed if (completed >= 0 and pl.hosts[completed, egress]) else -1
        self._add_edge(pl, egress, user_node(svc.dst_user, u_n), last_label)
        return pl

    @staticmethod
    def _add_edge(pl: ServicePlacement, u: int, n: int, label: int):
        if label >= 0:
            pl.fn_edges[label, u, n] = True
        else:
            pl.relay_edges[u, n] = True

    def _auto_sigma(self, alloc, placements, migration: MigrationPlan):
        """Deterministic fallback when sigma is not in the action: round-robin
        subcarriers over route edges by demand; migration edges only join the
        rotation behind them so payload transfers cannot starve live traffic."""
        cfg = self.cfg
        u_n = cfg.num_uavs
        route = np.zeros((u_n, u_n))
        mig = np.zeros((u_n, u_n))
        for pl in placements:
            for u, n, _ in pl.edges():
                if n < u_n:
                    route[u, n] += pl.service.bit_rate
            moves = migration.moves.get(pl.service.id)
            if moves is not None:
                payload_rate = cfg.migration_payload(pl.service.bit_rate) / cfg.slot_duration
                for _, u_from, u_to in zip(*np.nonzero(moves)):
                    mig[u_from, u_to] += payload_rate
        edges = sorted(
            ((u, n) for u in range(u_n) for n in range(u_n) if route[u, n] > 0),
            key=lambda e: (-route[e], e),
        )
        edges += sorted(
            (
                (u, n)
                for u in range(u_n)
                for n in range(u_n)
                if mig[u, n] > 0 and route[u, n] == 0
            ),
            key=lambda e: (-mig[e], e),
        )
        if not edges:
            return
        for v in range(cfg.n_sub_backhaul):
            u, n = edges[v % len(edges)]
            alloc.bh_assign[u, n, v] = True

    # -- slot pipeline ------------------------------------------------------

    def step(self, action: HybridAction):
        """Advance one slot; returns (obs, reward, SlotMetrics, done)."""
        cfg = self.cfg
        # activate services scheduled for this slot
        for svc in self._starting_services():
            self.active[svc.id] = ActiveService(
                svc, hosts=np.full(svc.chain_len, -1, dtype=int)
            )
            del self._pending[svc.id]

        prev_hosts_snapshot = {
            sid: st.hosts.copy() for sid, st in self.active.items() if st.admitted
        }
        decoded = self.decode_action(action)

        prev_uav_poses = self.uav_poses
        self.uav_poses, _, c2_pairs = kinematics.apply_uav_moves(
            self.uav_poses, decoded.move_deltas, cfg
        )
        move_dists = np.linalg.norm(
            (self.uav_poses - prev_uav_poses)[:, :2], axis=1
        )
        self.user_poses = kinematics.step_users(self.user_poses, self._rng_users, cfg)

        gains_dl = channel.ground_gain_matrix(self.uav_poses, self.user_poses, cfg)
        gains_uu = channel.uav_gain_matrix(self.uav_poses, cfg)
        _, dl_rate = radio.dl_sinr_rates(decoded.alloc, gains_dl, cfg)
        _, ul_rate = radio.ul_sinr_rates(decoded.alloc, gains_dl.T, cfg)
        bh_sub, bh_rate = radio.backhaul_rates(decoded.alloc, gains_uu, cfg)
        report = radio.RateReport(
            dl_rate=dl_rate,
            ul_rate=ul_rate,
            bh_rate_sub=bh_sub,
            bh_rate=bh_rate,
            sic_violations=radio.check_sic(decoded.alloc, gains_dl, cfg),
        )

        delays = nfv.service_delays(
            decoded.placements,
            decoded.migration,
            self.uav_poses,
            self.user_poses,
            bh_rate,
            cfg,
        )
        self._migration_gate(decoded, delays, bh_rate)
        delay_ok = nfv.check_service_delay(
            delays, decoded.placements, decoded.migration, cfg
        )
        cpu_over, link_over = nfv.check_capacities(decoded.placements, bh_rate, cfg)

        # admissions: a just-started service must be fully servable or it is rejected
        placements = {pl.service.id: pl for pl in decoded.placements}
        requests = 0
        rejects = 0
        reject_violations = 0
        for sid, state in list(self.active.items()):
            if state.admitted:
                continue
            requests += 1
            svc = state.service
            pl = placements[sid]
            broken = self._admission_violations(
                svc, pl, report, bh_rate, delay_ok, cpu_over, link_over
            )
            if not broken:
                state.admitted = True
                state.hosts = np.array(
                    [pl.host_of(j) for j in range(svc.chain_len)], dtype=int
                )
            else:
                rejects += 1
                reject_violations += len(broken)
                del self.active[sid]
                del placements[sid]
                self.generator.release(svc.src_user)
        surviving = list(placements.values())
        for pl in surviving:  # migrations may have moved hosts mid-life
            st = self.active[pl.service.id]
            st.hosts = np.array(
                [pl.host_of(j) for j in range(pl.service.chain_len)], dtype=int
            )
        cpu_over, link_over = nfv.check_capacities(surviving, bh_rate, cfg)
        structural = nfv.validate_placement(surviving, cfg)
        prev_bool = {
            sid: self._hosts_bool(hosts, cfg.num_uavs)
            for sid, hosts in prev_hosts_snapshot.items()
        }
        migration_bad = nfv.check_migration(
            decoded.migration,
            prev_bool,
            {pl.service.id: pl.hosts for pl in surviving},
        )

        # rejected admissions count once each: the slot the service arrived, its
        # constraint set was infeasible, and the reward must feel that
        violations = (
            rejects
            + len(c2_pairs)
            + len(report.sic_violations)
            + len(structural)
            + int((cpu_over > 0).sum())
            + len(link_over)
            + len(migration_bad)
            + sum(
                1
                for pl in surviving
                if self.active[pl.service.id].admitted and not delay_ok[pl.service.id]
            )
        )

        d_pr = sum(delays[pl.service.id].processing for pl in surviving)
        d_pd = sum(delays[pl.service.id].propagation for pl in surviving)
        d_td = sum(delays[pl.service.id].transmission for pl in surviving)
        d_mg = sum(delays[pl.service.id].migration for pl in surviving)
        d_total = d_pr + d_pd + d_td + d_mg
        # the reward sees each service saturated at one slot: beyond that the
        # service already failed its slot bound and the excess carries no signal
        d_reward = sum(
            min(delays[pl.service.id].total, cfg.slot_duration) for pl in surviving
        )

        tx_power = float(
            (decoded.alloc.dl_power * decoded.alloc.dl_assign).sum()
            + (decoded.alloc.ul_power * decoded.alloc.ul_assign).sum()
        )
        op = operation_power(move_dists, cfg)
        sum_rate = report.sum_rate_dl + report.sum_rate_ul
        ee = energy_efficiency(sum_rate, tx_power, op)
        reward = reward_value(ee, d_reward, violations, cfg)

        metrics = SlotMetrics(
            episode=self.episode,
            slot=self.slot,
            sum_rate_dl=report.sum_rate_dl,
            sum_rate_ul=report.sum_rate_ul,
            tx_power=tx_power,
            op_power=op,
            ee=ee,
            delay_pr=d_pr,
            delay_pd=d_pd,
            delay_td=d_td,
            delay_mg=d_mg,
            delay_total=d_total,
            reward=reward,
            rejects=rejects,
            violations=violations,
            requests=requests,
        )

        # bookkeeping for the next observation
        caps_used = np.zeros(cfg.num_uavs)
        demand = np.zeros((cfg.num_uavs, cfg.num_uavs))
        for pl in surviving:
            for j in range(pl.hosts.shape[0]):
                for u in np.flatnonzero(pl.hosts[j]):
                    caps_used[u] += cfg.cycles_per_bit * pl.service.bit_rate
            for u, n, _ in pl.edges():
                if n < cfg.num_uavs:
                    demand[u, n] += pl.service.bit_rate
        self._cpu_used = caps_used
        self._bh_capacity = bh_rate
        self._link_demand = demand

        # expire finished services, then draw next slot's arrivals
        for sid, state in list(self.active.items()):
            svc = state.service
            if self.slot >= svc.start_slot + svc.duration - 1:
                del self.active[sid]
                self.generator.release(svc.src_user)
        for svc in self.generator.generate(self.slot):
            self._pending[svc.id] = svc

        self.slot += 1
        done = self.slot >= cfg.slots_per_episode
        return self.observe(), reward, metrics, done

    def _migration_gate(self, decoded: DecodedAction, delays: dict, bh_rate: np.ndarray):
        """A migration happens only when it does not degrade the service: the
        migrated layout must meet the full delay budget and either beat the
        frozen layout or rescue one that no longer meets its own budget.
        Rejected migrations revert to the previous hosts."""
        cfg = self.cfg
        tol = 1e-12
        for idx, pl in enumerate(decoded.placements):
            sid = pl.service.id
            if sid not in decoded.migration.moves:
                continue
            svc = pl.service
            state = self.active.get(sid)
            if state is None or not state.admitted:
                continue
            scratch_eff = decoded.discrete.copy()
            keep_pl = self._build_route(
                svc, state.hosts, decoded.dl_uav, decoded.ul_uav,
                decoded.discrete, scratch_eff, [],
            )
            keep = nfv.service_delays(
                [keep_pl], MigrationPlan(), self.uav_poses, self.user_poses, bh_rate, cfg
            )[sid]
            cand = delays[sid]
            cand_ok = (
                cand.total <= svc.delay_budget + tol
                and cand.total <= cfg.slot_duration + tol
            )
            keep_fails = (
                keep.no_migration_total > svc.reduced_budget + tol
                or keep.total > cfg.slot_duration + tol
            )
            # compare standing route delays: the one-time migration payload is
            # paid against every later slot served from the better layout
            improves = cand.no_migration_total < keep.no_migration_total - 1e-9
            if cand_ok and (improves or keep_fails):
                continue
            decoded.placements[idx] = keep_pl
            del decoded.migration.moves[sid]
            delays[sid] = keep
            for j, h in enumerate(state.hosts):
                decoded.effective_discrete[self.spec.host_head(svc.src_user, j)] = h
            decoded.repairs.append("migration_reverted")

    @staticmethod
    def _hosts_bool(hosts: np.ndarray, u_n: int) -> np.ndarray:
        out = np.zeros((hosts.shape[0], u_n), dtype=bool)
        for j, h in enumerate(hosts):
            if h >= 0:
                out[j, h] = True
        return out

    def _admission_ok(self, svc, pl, report, bh_rate, delay_ok, cpu_over, link_over) -> bool:
        tol = 1.0 - 1e-12
        if report.ul_user_rate(svc.src_user) < svc.bit_rate * tol:
            return False
        if report.dl_user_rate(svc.dst_user) < svc.bit_rate * tol:
            return False
        uav_edges = [(u, n) for u, n, _ in pl.edges() if n < self.cfg.num_uavs]
        if uav_edges and float(bh_rate.sum()) < svc.bit_rate * tol:
            return False
        my_uavs = {pl.host_of(j) for j in range(svc.chain_len)}
        if any(cpu_over[u] > 0 for u in my_uavs if u >= 0):
            return False
        my_edges = set(uav_edges)
        if any((u, n) in my_edges for u, n, _ in link_over):
            return False
        return delay_ok[svc.id]

    # -- convenience ----------------------------------------------------------

    def active_hosts(self) -> dict:
        """Service id -> tuple of current host UAVs (admitted services only)."""
        return {
            sid: tuple(int(h) for h in st.hosts)
            for sid, st in self.active.items()
            if st.admitted
        }
