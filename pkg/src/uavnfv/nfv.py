"""VNF chain placement, routing, delay accounting, and migration checks.

Node ids: UAVs are 0..U-1, users are U..U+K-1. Each service's traffic enters
at the UL-associated UAV of its source user (a virtual ingress edge), follows
function-output edges (``fn_edges``) and pure-relay edges (``relay_edges``)
across UAVs, and leaves on an edge into the destination user's node.

A hop whose link capacity is zero would give an infinite transmission or
migration delay; such delays are recorded as one full slot and flagged so the
caller can reject or penalize instead of propagating infinities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SPEED_OF_LIGHT, ScenarioConfig
from .services import Service


def user_node(k: int, num_uavs: int) -> int:
    return num_uavs + k


@dataclass
class ServicePlacement:
    """Placement and routing booleans for one service."""

    service: Service
    hosts: np.ndarray       # (J, U) bool: function j hosted at UAV u
    fn_edges: np.ndarray    # (J, U, N) bool: output of function j forwarded u -> n
    relay_edges: np.ndarray # (U, N) bool: pure relay u -> n
    src_uav: int            # UL ingress (association of the source user)

    @classmethod
    def empty(cls, service: Service, num_uavs: int, num_users: int, src_uav: int):
        j = service.chain_len
        n = num_uavs + num_users
        return cls(
            service=service,
            hosts=np.zeros((j, num_uavs), dtype=bool),
            fn_edges=np.zeros((j, num_uavs, n), dtype=bool),
            relay_edges=np.zeros((num_uavs, n), dtype=bool),
            src_uav=src_uav,
        )

    @property
    def relay_roles(self) -> np.ndarray:
        """Derived y: UAVs acting as pure relays for this service."""
        return self.relay_edges.any(axis=1)

    def host_of(self, j: int) -> int:
        idx = np.flatnonzero(self.hosts[j])
        return int(idx[0]) if idx.size == 1 else -1

    def edges(self):
        """All active (u, n, label) edges; label is the function index or -1 for relay."""
        out = []
        for j in range(self.hosts.shape[0]):
            for u, n in zip(*np.nonzero(self.fn_edges[j])):
                out.append((int(u), int(n), j))
        for u, n in zip(*np.nonzero(self.relay_edges)):
            out.append((int(u), int(n), -1))
        return out


@dataclass
class MigrationPlan:
    """Per-service migration bits m[j, u_from, u_to] (diagonal excluded)."""

    moves: dict = field(default_factory=dict)  # service id -> (J, U, U) bool

    def any_move(self, service_id: int) -> bool:
        m = self.moves.get(service_id)
        return bool(m is not None and m.any())


def derive_migration(prev_hosts: np.ndarray, now_hosts: np.ndarray) -> np.ndarray:
    """m = x(t-1) outer x(t) with self-moves removed, per function."""
    j, u = prev_hosts.shape
    m = prev_hosts[:, :, None] & now_hosts[:, None, :]
    m &= ~np.eye(u, dtype=bool)[None, :, :]
    return m


@dataclass
class Violation:
    constraint: str
    service_id: int
    detail: str
    fn_idx: int = -1
    uav: int = -1


def validate_placement(placements, cfg: ScenarioConfig) -> list:
    """Structural checks C10, role exclusivity, flow conservation, path order.

    Returns every violation found; an empty list means the placement is a
    single source-to-destination path visiting the chain's hosts in order.
    """
    u_n = cfg.num_uavs
    violations: list[Violation] = []
    for pl in placements:
        svc = pl.service
        j_n = pl.hosts.shape[0]
        counts = pl.hosts.sum(axis=1)
        for j in np.flatnonzero(counts != 1):
            violations.append(
                Violation("C10", svc.id, f"function {j} placed at {counts[j]} UAVs", int(j))
            )
        hosts_any = pl.hosts.any(axis=0)
        relays = pl.relay_roles
        for u in np.flatnonzero(hosts_any & relays):
            violations.append(
                Violation("role-exclusivity", svc.id, f"UAV {u} both hosts and relays", uav=int(u))
            )
        edge_load = pl.fn_edges.sum(axis=0) + pl.relay_edges.astype(int)
        for u, n in zip(*np.nonzero(edge_load > 1)):
            violations.append(
                Violation(
                    "edge-exclusivity", svc.id, f"edge {u}->{n} carries multiple roles", uav=int(u)
                )
            )
        # flow conservation with the virtual ingress edge and destination sink
        dst = user_node(svc.dst_user, u_n)
        out_deg = edge_load.sum(axis=1)  # per UAV
        in_deg = edge_load[:, :u_n].sum(axis=0)
        in_full = np.zeros(u_n, dtype=int)
        in_full[:] = in_deg
        if 0 <= pl.src_uav < u_n:
            in_full[pl.src_uav] += 1
        else:
            violations.append(Violation("C11", svc.id, "service has no ingress UAV"))
        for u in range(u_n):
            if out_deg[u] != in_full[u]:
                violations.append(
                    Violation(
                        "C11",
                        svc.id,
                        f"flow imbalance at UAV {u}: out {out_deg[u]} in {in_full[u]}",
                        uav=int(u),
                    )
                )
        into_dst = int(edge_load[:, dst].sum())
        extra_user_edges = int(edge_load[:, u_n:].sum()) - into_dst
        if into_dst != 1:
            violations.append(
                Violation("C11", svc.id, f"{into_dst} edges into destination user")
            )
        if extra_user_edges != 0:
            violations.append(
                Violation("C11", svc.id, "edges into a user other than the destination")
            )
        if violations and violations[-1].service_id == svc.id and any(
            v.constraint in ("C10", "C11", "edge-exclusivity") and v.service_id == svc.id
            for v in violations
        ):
            # path walk below assumes single-assignment structure
            continue
        # walk the unique path and check hosts appear in chain order
        edges = {}
        ok = True
        for u, n, label in pl.edges():
            if u in edges:
                ok = False
                break
            edges[u] = (n, label)
        if not ok:
            violations.append(Violation("C11", svc.id, "node with multiple outgoing edges"))
            continue
        node = pl.src_uav
        next_fn = 0
        seen = set()
        while node < u_n:
            if node in seen:
                violations.append(Violation("C11", svc.id, "cycle in service path"))
                break
            seen.add(node)
            while next_fn < j_n and pl.hosts[next_fn, node]:
                next_fn += 1
            if node not in edges:
                violations.append(
                    Violation("C11", svc.id, f"path dead-ends at UAV {node}", uav=node)
                )
                break
            nxt, label = edges.pop(node)
            if label >= 0:
                if not pl.hosts[label, node]:
                    violations.append(
                        Violation(
                            "chain-order", svc.id, f"edge labeled f{label} leaves non-host {node}",
                            fn_idx=label, uav=node,
                        )
                    )
                elif label != next_fn - 1:
                    violations.append(
                        Violation(
                            "chain-order", svc.id,
                            f"function {label} forwarded before chain position reached",
                            fn_idx=label, uav=node,
                        )
                    )
            node = nxt
        else:
            if node != dst:
                violations.append(
                    Violation("C11", svc.id, f"path terminates at node {node}, not destination")
                )
            elif next_fn != j_n:
                violations.append(
                    Violation(
                        "chain-order", svc.id, f"only {next_fn}/{j_n} functions on the path"
                    )
                )
        if edges:
            violations.append(Violation("C11", svc.id, "disconnected edges off the path"))
    return violations


@dataclass
class DelayBreakdown:
    """Per-service delay components (seconds)."""

    processing: float = 0.0
    propagation: float = 0.0
    transmission: float = 0.0
    migration: float = 0.0
    capped: bool = False  # a zero-capacity hop was charged as one full slot

    @property
    def total(self) -> float:
        return self.processing + self.propagation + self.transmission + self.migration

    @property
    def no_migration_total(self) -> float:
        return self.processing + self.propagation + self.transmission


def processing_delay(pl: ServicePlacement, cfg: ScenarioConfig) -> float:
    """Sum of b_i * c_o / C_u over hosted functions."""
    caps = cfg.cpu_per_uav()
    total = 0.0
    for j in range(pl.hosts.shape[0]):
        for u in np.flatnonzero(pl.hosts[j]):
            total += pl.service.bit_rate * cfg.cycles_per_bit / caps[u]
    return total


def propagation_delay(pl: ServicePlacement, uav_poses: np.ndarray, user_poses: np.ndarray) -> float:
    """Sum of hop distances over active edges divided by the speed of light."""
    u_n = uav_poses.shape[0]
    total = 0.0
    for u, n, _ in pl.edges():
        a = uav_poses[u]
        if n < u_n:
            b = uav_poses[n]
        else:
            b = np.append(user_poses[n - u_n], 0.0)
        total += float(np.linalg.norm(a - b)) / SPEED_OF_LIGHT
    return total


def _hop_delay(bits: float, rate: float, cfg: ScenarioConfig):
    """bits/rate, saturated at one slot: a hop that cannot finish within the
    slot has already failed, and charging more carries no information."""
    if rate > 0.0:
        delay = bits / rate
        if delay <= cfg.slot_duration:
            return delay, False
    return cfg.slot_duration, True


def transmission_delay(pl: ServicePlacement, bh_rate: np.ndarray, cfg: ScenarioConfig):
    """b_i over the aggregate link rate, per UAV-UAV hop; edges into a user node
    ride the access link and carry no backhaul transmission delay.

    Returns (delay, capped): an overlong or zero-rate hop charges one slot.
    """
    u_n = bh_rate.shape[0]
    total = 0.0
    capped = False
    for u, n, _ in pl.edges():
        if n >= u_n:
            continue
        d, c = _hop_delay(pl.service.bit_rate, bh_rate[u, n], cfg)
        total += d
        capped |= c
    return total, capped


def migration_delay(moves: np.ndarray, service: Service, bh_rate: np.ndarray, cfg: ScenarioConfig):
    """Payload bits over the source-to-target link rate, per migrating function."""
    total = 0.0
    capped = False
    payload = cfg.migration_payload(service.bit_rate)
    for _, u_from, u_to in zip(*np.nonzero(moves)):
        d, c = _hop_delay(payload, bh_rate[u_from, u_to], cfg)
        total += d
        capped |= c
    return total, capped


def service_delays(
    placements,
    migration: MigrationPlan,
    uav_poses: np.ndarray,
    user_poses: np.ndarray,
    bh_rate: np.ndarray,
    cfg: ScenarioConfig,
) -> dict:
    """DelayBreakdown per service id."""
    out = {}
    for pl in placements:
        d = DelayBreakdown()
        d.processing = processing_delay(pl, cfg)
        d.propagation = propagation_delay(pl, uav_poses, user_poses)
        d.transmission, cap_t = transmission_delay(pl, bh_rate, cfg)
        moves = migration.moves.get(pl.service.id)
        if moves is not None and moves.any():
            d.migration, cap_m = migration_delay(moves, pl.service, bh_rate, cfg)
        else:
            cap_m = False
        d.capped = cap_t or cap_m
        out[pl.service.id] = d
    return out


def check_capacities(placements, bh_rate: np.ndarray, cfg: ScenarioConfig):
    """C12 CPU per UAV and C13 bandwidth per link; overshoots are returned.

    Returns (cpu_over (U,), link_over list of (u, n, overshoot_bits)).
    """
    u_n = cfg.num_uavs
    caps = cfg.cpu_per_uav()
    cpu_used = np.zeros(u_n)
    link_demand = np.zeros((u_n, u_n))
    for pl in placements:
        rate = pl.service.bit_rate
        for j in range(pl.hosts.shape[0]):
            for u in np.flatnonzero(pl.hosts[j]):
                cpu_used[u] += cfg.cycles_per_bit * rate
        for u, n, _ in pl.edges():
            if n < u_n:
                link_demand[u, n] += rate
    cpu_over = np.maximum(0.0, cpu_used - caps)
    link_over = []
    for u, n in zip(*np.nonzero(link_demand > bh_rate + 1e-9)):
        link_over.append((int(u), int(n), float(link_demand[u, n] - bh_rate[u, n])))
    return cpu_over, link_over


def check_migration(migration: MigrationPlan, prev_hosts: dict, now_hosts: dict):
    """C14 consistency: m must equal the off-diagonal product of x(t-1) and x(t)."""
    mismatches = []
    ids = set(migration.moves) | (set(prev_hosts) & set(now_hosts))
    for sid in sorted(ids):
        if sid not in prev_hosts or sid not in now_hosts:
            if migration.moves.get(sid) is not None and migration.moves[sid].any():
                mismatches.append((sid, "migration bits for a service without history"))
            continue
        expect = derive_migration(prev_hosts[sid], now_hosts[sid])
        got = migration.moves.get(sid)
        if got is None:
            got = np.zeros_like(expect)
        if got.shape != expect.shape or (got != expect).any():
            mismatches.append((sid, "migration bits disagree with placement product"))
    return mismatches


def check_service_delay(
    delays: dict, placements, migration: MigrationPlan, cfg: ScenarioConfig
) -> dict:
    """C15 plus the per-slot bound; True means the service meets its budgets."""
    out = {}
    for pl in placements:
        svc = pl.service
        d = delays[svc.id]
        if migration.any_move(svc.id):
            ok = d.total <= svc.delay_budget + 1e-12
        else:
            ok = d.no_migration_total <= svc.reduced_budget + 1e-12
        if d.total > cfg.slot_duration + 1e-12:
            ok = False
        out[svc.id] = ok
    return out
