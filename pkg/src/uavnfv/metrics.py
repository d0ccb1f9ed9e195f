"""Energy efficiency, operation power, reward, and per-episode KPIs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig

CSV_HEADER = (
    "episode,slot,sum_rate_dl,sum_rate_ul,tx_power,op_power,ee,"
    "delay_pr,delay_pd,delay_td,delay_mg,delay_total,reward,rejects,violations"
)


@dataclass
class SlotMetrics:
    episode: int = 0
    slot: int = 0
    sum_rate_dl: float = 0.0
    sum_rate_ul: float = 0.0
    tx_power: float = 0.0   # DL + UL transmit power (the EE denominator share)
    op_power: float = 0.0
    ee: float = 0.0
    delay_pr: float = 0.0
    delay_pd: float = 0.0
    delay_td: float = 0.0
    delay_mg: float = 0.0
    delay_total: float = 0.0
    reward: float = 0.0
    rejects: int = 0
    violations: int = 0
    requests: int = 0  # admissions attempted this slot; not part of the CSV row

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.episode),
                str(self.slot),
                repr(self.sum_rate_dl),
                repr(self.sum_rate_ul),
                repr(self.tx_power),
                repr(self.op_power),
                repr(self.ee),
                repr(self.delay_pr),
                repr(self.delay_pd),
                repr(self.delay_td),
                repr(self.delay_mg),
                repr(self.delay_total),
                repr(self.reward),
                str(self.rejects),
                str(self.violations),
            ]
        )


def operation_power(move_dists, cfg: ScenarioConfig) -> float:
    """P_cr = sum_u P_d * meters_moved + U * P_c * slot."""
    move_dists = np.asarray(move_dists, dtype=float)
    return float(
        cfg.move_power * move_dists.sum()
        + cfg.num_uavs * cfg.static_power * cfg.slot_duration
    )


def energy_efficiency(sum_rate: float, tx_power: float, op_power: float) -> float:
    """Network sum rate over transmit plus operation power, bit/J."""
    return sum_rate / (tx_power + op_power)


def reward_value(ee: float, delay: float, violations: int, cfg: ScenarioConfig) -> float:
    """Weighted normalized EE minus normalized delay minus the violation penalty."""
    return (
        cfg.weight_ee * ee / cfg.ee_ref()
        - cfg.weight_delay * delay / cfg.delay_ref()
        - cfg.reward.violation_penalty * violations
    )


@dataclass
class EpisodeKpis:
    rrr: float
    avg_delay: float
    avg_ee: float
    avg_reward: float


def episode_kpis(slots) -> EpisodeKpis:
    """Aggregate a slot-metrics sequence; RRR is 0 when no requests arrived."""
    slots = list(slots)
    requests = sum(m.requests for m in slots)
    rejects = sum(m.rejects for m in slots)
    n = max(len(slots), 1)
    return EpisodeKpis(
        rrr=rejects / requests if requests else 0.0,
        avg_delay=sum(m.delay_total for m in slots) / n,
        avg_ee=sum(m.ee for m in slots) / n,
        avg_reward=sum(m.reward for m in slots) / n,
    )


def parse_csv_row(line: str) -> SlotMetrics:
    parts = line.strip().split(",")
    return SlotMetrics(
        episode=int(parts[0]),
        slot=int(parts[1]),
        sum_rate_dl=float(parts[2]),
        sum_rate_ul=float(parts[3]),
        tx_power=float(parts[4]),
        op_power=float(parts[5]),
        ee=float(parts[6]),
        delay_pr=float(parts[7]),
        delay_pd=float(parts[8]),
        delay_td=float(parts[9]),
        delay_mg=float(parts[10]),
        delay_total=float(parts[11]),
        reward=float(parts[12]),
        rejects=int(parts[13]),
        violations=int(parts[14]),
    )
