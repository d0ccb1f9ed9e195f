"""Service catalog types and stochastic request generation.

Requests drawn during slot t activate at slot t+1. A user holds at most one
service at a time; the generator tracks occupancy and must be told (via
``release``) when a service was rejected or ended early.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig


@dataclass(frozen=True)
class Service:
    id: int
    src_user: int
    dst_user: int
    vnf_chain: tuple       # ordered function type ids, length J >= 1
    bit_rate: float        # bit/s
    duration: int          # slots
    delay_budget: float    # s, full budget tau_i (migration branch)
    reduced_budget: float  # s, tau_hat_i (no-migration branch)
    start_slot: int

    @property
    def chain_len(self) -> int:
        return len(self.vnf_chain)

    def active_at(self, t: int) -> bool:
        return self.start_slot <= t < self.start_slot + self.duration

    def check(self) -> None:
        assert self.chain_len >= 1
        assert self.src_user != self.dst_user
        assert 0 < self.reduced_budget <= self.delay_budget
        assert self.bit_rate > 0
        assert self.duration >= 1


def request_indicator(services, num_users: int, t: int) -> np.ndarray:
    """Boolean (service, user) matrix: user k requests service i at slot t."""
    mat = np.zeros((len(services), num_users), dtype=bool)
    for row, svc in enumerate(services):
        mat[row, svc.src_user] = svc.active_at(t)
    return mat


class RequestGenerator:
    """Owns one random stream; one logical thread per instance."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self._next_id = 0
        # slot index after which the user is free again; -1 = idle
        self._busy_until = np.full(cfg.num_users, -1, dtype=int)

    def release(self, user: int) -> None:
        """Free a user whose service was rejected or ended."""
        self._busy_until[user] = -1

    def generate(self, t: int) -> list[Service]:
        """Draw requests during slot t; returned services start at slot t+1."""
        cat = self.cfg.catalog
        out: list[Service] = []
        for k in range(self.cfg.num_users):
            if self._busy_until[k] > t:
                continue
            if self.rng.random() >= cat.arrival_prob:
                continue
            dst = int(self.rng.integers(self.cfg.num_users - 1))
            if dst >= k:
                dst += 1
            j = int(self.rng.choice(np.asarray(cat.chain_lengths)))
            chain = tuple(int(v) for v in self.rng.integers(cat.n_vnf_types, size=j))
            rate = float(self.rng.uniform(cat.bit_rate_min, cat.bit_rate_max))
            dur = int(self.rng.integers(cat.duration_min, cat.duration_max + 1))
            svc = Service(
                id=self._next_id,
                src_user=k,
                dst_user=dst,
                vnf_chain=chain,
                bit_rate=rate,
                duration=dur,
                delay_budget=cat.delay_budget,
                reduced_budget=cat.reduced_budget_factor * cat.delay_budget,
                start_slot=t + 1,
            )
            svc.check()
            self._next_id += 1
            self._busy_until[k] = t + 1 + dur
            out.append(svc)
        return out
