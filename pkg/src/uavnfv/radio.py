"""PD-NOMA downlink/uplink rates, backhaul rates, and radio-side constraint checks.

Conventions:
  * DL decoding order is by CINR (descending), UL order by raw channel gain
    (descending); ties break on user id ascending.
  * A user's DL interference comes from same-cell users with higher CINR plus
    the channel-weighted total co-subcarrier power of every other UAV.
  * Backhaul subcarriers are interference-free (orthogonal by C9).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig


@dataclass
class RadioAllocation:
    """Assignment booleans and transmit powers for one slot.

    Shapes: DL (U, K, L), UL (K, U, E), backhaul (U, U, V). Power must be zero
    wherever the matching assignment boolean is unset.
    """

    dl_assign: np.ndarray
    dl_power: np.ndarray
    ul_assign: np.ndarray
    ul_power: np.ndarray
    bh_assign: np.ndarray
    bh_power: np.ndarray

    @classmethod
    def empty(cls, cfg: ScenarioConfig) -> "RadioAllocation":
        u, k = cfg.num_uavs, cfg.num_users
        return cls(
            dl_assign=np.zeros((u, k, cfg.n_sub_dl), dtype=bool),
            dl_power=np.zeros((u, k, cfg.n_sub_dl)),
            ul_assign=np.zeros((k, u, cfg.n_sub_ul), dtype=bool),
            ul_power=np.zeros((k, u, cfg.n_sub_ul)),
            bh_assign=np.zeros((u, u, cfg.n_sub_backhaul), dtype=bool),
            bh_power=np.zeros((u, u, cfg.n_sub_backhaul)),
        )


@dataclass
class RateReport:
    dl_rate: np.ndarray        # (U, K, L) bit/s
    ul_rate: np.ndarray        # (K, U, E)
    bh_rate_sub: np.ndarray    # (U, U, V)
    bh_rate: np.ndarray        # (U, U), sum of assigned subcarrier rates
    sic_violations: list = field(default_factory=list)  # (u, l, strong, weak)

    @property
    def sum_rate_dl(self) -> float:
        return float(self.dl_rate.sum())

    @property
    def sum_rate_ul(self) -> float:
        return float(self.ul_rate.sum())

    def dl_user_rate(self, k: int) -> float:
        return float(self.dl_rate[:, k, :].sum())

    def ul_user_rate(self, k: int) -> float:
        return float(self.ul_rate[k, :, :].sum())


def check_c4(alloc: RadioAllocation):
    """Users associated with more than one UAV in DL."""
    per_uav = alloc.dl_assign.any(axis=2)  # (U, K)
    return [int(k) for k in np.flatnonzero(per_uav.sum(axis=0) > 1)]


def check_c7(alloc: RadioAllocation):
    per_uav = alloc.ul_assign.any(axis=2)  # (K, U)
    return [int(k) for k in np.flatnonzero(per_uav.sum(axis=1) > 1)]


def check_c9(alloc: RadioAllocation, strict: bool = False):
    """Backhaul orthogonality: per-subcarrier exclusivity (or one total when strict)."""
    if strict:
        return [] if alloc.bh_assign.sum() <= 1 else ["network"]
    bad = np.flatnonzero(alloc.bh_assign.sum(axis=(0, 1)) > 1)
    return [int(v) for v in bad]


def cinr_matrix(gains: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """CINR per (u, k): own gain over other-UAV gains plus subcarrier noise."""
    noise = cfg.bw_per_dl_sub * cfg.noise_psd
    total = gains.sum(axis=0, keepdims=True)
    return gains / (total - gains + noise)


def cinr_order(u: int, l: int, gains: np.ndarray, alloc: RadioAllocation, cfg: ScenarioConfig):
    """Users of UAV u on DL subcarrier l, strongest CINR first, ties by id."""
    cinr = cinr_matrix(gains, cfg)
    users = np.flatnonzero(alloc.dl_assign[u, :, l])
    return sorted((int(k) for k in users), key=lambda k: (-cinr[u, k], k))


def _gain_order(u: int, e: int, gains_ul: np.ndarray, alloc: RadioAllocation):
    users = np.flatnonzero(alloc.ul_assign[:, u, e])
    return sorted((int(k) for k in users), key=lambda k: (-gains_ul[k, u], k))


def dl_sinr_rates(alloc: RadioAllocation, gains: np.ndarray, cfg: ScenarioConfig):
    """DL NOMA SINR and Shannon rate per (u, k, l). Requires C4."""
    bad = check_c4(alloc)
    if bad:
        raise ValueError(f"C4 violated: users {bad} associated with multiple UAVs in DL")
    u_n, k_n, l_n = alloc.dl_assign.shape
    b1 = cfg.bw_per_dl_sub
    noise = b1 * cfg.noise_psd
    sinr = np.zeros((u_n, k_n, l_n))
    for l in range(l_n):
        power = alloc.dl_power[:, :, l] * alloc.dl_assign[:, :, l]
        cell_power = power.sum(axis=1)  # total power each UAV spends on l
        recv = gains * cell_power[:, None]  # (U, K): power of UAV u seen at user k
        inter = recv.sum(axis=0, keepdims=True) - recv
        for u in range(u_n):
            stronger = 0.0
            for k in cinr_order(u, l, gains, alloc, cfg):
                denom = gains[u, k] * stronger + inter[u, k] + noise
                sinr[u, k, l] = gains[u, k] * power[u, k] / denom
                stronger += power[u, k]
    rate = b1 * np.log2(1.0 + sinr) * alloc.dl_assign
    return sinr, rate


def check_sic(alloc: RadioAllocation, gains: np.ndarray, cfg: ScenarioConfig):
    """C6: the weaker user's signal must be at least as decodable at every
    stronger receiver as at its own; returns violating (u, l, strong, weak)."""
    u_n, _, l_n = alloc.dl_assign.shape
    b1 = cfg.bw_per_dl_sub
    noise = b1 * cfg.noise_psd
    violations = []
    for l in range(l_n):
        power = alloc.dl_power[:, :, l] * alloc.dl_assign[:, :, l]
        cell_power = power.sum(axis=1)
        recv = gains * cell_power[:, None]
        inter = recv.sum(axis=0, keepdims=True) - recv
        for u in range(u_n):
            order = cinr_order(u, l, gains, alloc, cfg)
            for pos, k in enumerate(order):
                stronger_power = sum(power[u, s] for s in order[:pos])
                own = gains[u, k] * power[u, k] / (
                    gains[u, k] * stronger_power + inter[u, k] + noise
                )
                for i in order[:pos]:
                    at_i = gains[u, i] * power[u, k] / (
                        gains[u, i] * stronger_power + inter[u, i] + noise
                    )
                    if at_i - own < 0.0:
                        violations.append((u, l, i, k))
    return violations


def ul_sinr_rates(alloc: RadioAllocation, gains_ul: np.ndarray, cfg: ScenarioConfig):
    """UL NOMA SINR and rate per (k, u, e). Requires C7.

    The receiving UAV decodes strongest-gain users first; the residual from
    still-undecoded weaker users is weighted by the decoded user's own gain.
    """
    bad = check_c7(alloc)
    if bad:
        raise ValueError(f"C7 violated: users {bad} associated with multiple UAVs in UL")
    k_n, u_n, e_n = alloc.ul_assign.shape
    b1 = cfg.bw_per_ul_sub
    noise = b1 * cfg.noise_psd
    sinr = np.zeros((k_n, u_n, e_n))
    for e in range(e_n):
        power = alloc.ul_power[:, :, e] * alloc.ul_assign[:, :, e]
        user_power = power.sum(axis=1)  # (K,)
        # received at u from every transmitting user, own-cell or not
        recv_total = gains_ul.T @ user_power  # (U,)
        for u in range(u_n):
            order = _gain_order(u, e, gains_ul, alloc)
            own_cell = sum(user_power[k] * gains_ul[k, u] for k in order)
            inter = recv_total[u] - own_cell
            residual = sum(user_power[k] for k in order)
            for k in order:
                residual -= user_power[k]
                denom = gains_ul[k, u] * residual + inter + noise
                sinr[k, u, e] = gains_ul[k, u] * user_power[k] / denom
    rate = b1 * np.log2(1.0 + sinr) * alloc.ul_assign
    return sinr, rate


def backhaul_rates(alloc: RadioAllocation, gains_uu: np.ndarray, cfg: ScenarioConfig):
    """Interference-free per-subcarrier backhaul rates and per-link aggregates."""
    b1 = cfg.bw_per_backhaul_sub
    noise = b1 * cfg.noise_psd
    snr = alloc.bh_assign * alloc.bh_power * gains_uu[:, :, None] / noise
    per_sub = b1 * np.log2(1.0 + snr)
    total = (per_sub * alloc.bh_assign).sum(axis=2)
    return per_sub, total


@dataclass
class PowerBudgetFlags:
    dl_over: np.ndarray  # (U,) overshoot in W, 0 when within budget
    ul_over: np.ndarray  # (K,)
    bh_over: np.ndarray  # (U,)

    @property
    def ok(self) -> bool:
        return (
            not self.dl_over.any() and not self.ul_over.any() and not self.bh_over.any()
        )


def check_power_budgets(alloc: RadioAllocation, cfg: ScenarioConfig) -> PowerBudgetFlags:
    """C5 per UAV (DL), C8 per user (UL), plus the shared backhaul budget.

    Budgets are inclusive; a relative 1e-9 slack absorbs renormalization
    rounding so repaired allocations never flag.
    """

    def over(total, budget):
        return np.where(total > budget * (1.0 + 1e-9), total - budget, 0.0)

    dl_tot = (alloc.dl_power * alloc.dl_assign).sum(axis=(1, 2))
    ul_tot = (alloc.ul_power * alloc.ul_assign).sum(axis=(1, 2))
    bh_tot = (alloc.bh_power * alloc.bh_assign).sum(axis=(1, 2))
    return PowerBudgetFlags(
        dl_over=over(dl_tot, cfg.dl_power_max),
        ul_over=over(ul_tot, cfg.ul_power_max),
        bh_over=over(bh_tot, cfg.backhaul_power_max),
    )
