"""Static experiment description: network constants, service catalog, agent hyperparameters.

A config file is a YAML mapping whose keys mirror the dataclass field names
exactly (nested sections ``catalog``, ``reward``, ``agent``). Unknown keys are
an error so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

SPEED_OF_LIGHT = 3.0e8  # m/s, also used for propagation delay


@dataclass
class ServiceCatalog:
    """Stochastic law for service requests (all draws are per idle user)."""

    arrival_prob: float = 0.3
    chain_lengths: tuple = (1, 2, 3)
    n_vnf_types: int = 8
    bit_rate_min: float = 1.0e6
    bit_rate_max: float = 5.0e6
    duration_min: int = 5          # slots
    duration_max: int = 15
    delay_budget: float = 0.1      # seconds, tau_i
    reduced_budget_factor: float = 0.8  # tau_hat = factor * tau_i


@dataclass
class RewardConfig:
    # None -> derived at load time: ee_ref from the single-user full-power
    # overhead rate, delay_ref from the catalog delay budget.
    ee_ref: float | None = None
    delay_ref: float | None = None
    violation_penalty: float = 1.0


@dataclass
class AgentConfig:
    discount: float = 0.99
    buffer_capacity: int = 100_000
    batch_size: int = 128
    lr_initial: float = 1e-3
    lr_decay: float = 0.01        # lr_ep = lr_initial / (1 + lr_decay * episode)
    epsilon_decay: float = 0.01   # eps_ep = max(eps_min, 1 - epsilon_decay * episode)
    epsilon_min: float = 0.05
    noise_scale: float = 0.3      # continuous exploration sigma, annealed like epsilon
    target_period: int = 1000     # optimizer steps between target syncs
    target_mix: float = 1.0       # 1.0 = hard copy, <1 = soft update
    hidden_sizes: tuple = (512, 512, 512)
    episodes: int = 3000
    update_every_step: bool = False
    quantize_bins: int = 0        # 0 -> bins follow each head's category count
    mode: str = "single"          # "single" | "multi"


@dataclass
class ScenarioConfig:
    """Full static description of one experiment."""

    num_uavs: int = 6
    num_users: int = 12
    uav_altitude: float = 75.0        # m, fixed
    uav_speed_max: float = 10.0       # m/s, W_max
    user_speed_max: float = 3.0 / 3.6  # m/s, V_max (3 km/h)
    slot_duration: float = 0.5        # s
    min_uav_separation: float = 50.0  # m
    area_side: float = 1000.0         # m
    slots_per_episode: int = 100

    bw_backhaul: float = 5e6   # Hz, UAV-UAV band
    bw_dl: float = 5e6         # Hz, UAV-user band
    bw_ul: float = 5e6         # Hz, user-UAV band
    n_sub_backhaul: int = 4    # V
    n_sub_dl: int = 4          # L
    n_sub_ul: int = 4          # E

    noise_psd: float = 1e-20   # W/Hz (-170 dBm/Hz)
    carrier_freq: float = 2e9  # Hz
    pathloss_exp: float = 3.5
    nlos_extra_loss: float = 0.2  # multiplicative NLoS penalty, <= 1
    env_beta1: float = 0.36
    env_beta2: float = 0.21

    dl_power_max: float = 5.0        # W per UAV
    ul_power_max: float = 5.0        # W per user
    backhaul_power_max: float = 5.0  # W per UAV across backhaul subcarriers

    cpu_capacity: float | tuple = 1e9  # cycles/s, scalar or per-UAV tuple
    cycles_per_bit: float = 10.0
    move_power: float = 0.05    # W per meter moved
    static_power: float = 0.01  # W per UAV per second

    weight_ee: float = 1.0      # rho_1
    weight_delay: float = 1.0   # rho_2
    migration_payload_bits: float | None = None  # None -> bit_rate * slot_duration
    migration_enabled: bool = True
    sigma_in_action: bool = True
    strict_c9: bool = False
    rng_seed: int = 0

    catalog: ServiceCatalog = field(default_factory=ServiceCatalog)
    reward: RewardConfig = field(default_factory=RewardConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)

    # -- derived quantities -------------------------------------------------

    @property
    def bw_per_dl_sub(self) -> float:
        return self.bw_dl / self.n_sub_dl

    @property
    def bw_per_ul_sub(self) -> float:
        return self.bw_ul / self.n_sub_ul

    @property
    def bw_per_backhaul_sub(self) -> float:
        return self.bw_backhaul / self.n_sub_backhaul

    @property
    def max_move(self) -> float:
        """Per-slot UAV travel bound D_max = W_max * slot."""
        return self.uav_speed_max * self.slot_duration

    @property
    def max_chain_len(self) -> int:
        return max(self.catalog.chain_lengths)

    @property
    def max_services(self) -> int:
        """Concurrent-service cap I: one request slot per source user."""
        return self.num_users

    @property
    def obs_size(self) -> int:
        u, k = self.num_uavs, self.num_users
        return 3 * u + 2 * k + self.max_services * self.max_chain_len * k + u + u * (u - 1)

    @property
    def cont_action_size(self) -> int:
        return 3 * self.num_uavs + 2 * self.num_users

    def cpu_per_uav(self) -> np.ndarray:
        cap = self.cpu_capacity
        if isinstance(cap, (int, float)):
            return np.full(self.num_uavs, float(cap))
        return np.asarray(cap, dtype=float)

    def migration_payload(self, bit_rate: float) -> float:
        if self.migration_payload_bits is not None:
            return float(self.migration_payload_bits)
        return bit_rate * self.slot_duration

    def ee_ref(self) -> float:
        """Normalizer for the reward's EE term: overhead single-user full-power rate / P_max."""
        if self.reward.ee_ref is not None:
            return self.reward.ee_ref
        gain = (self.uav_altitude * 4.0 * math.pi * self.carrier_freq / SPEED_OF_LIGHT) ** (
            -self.pathloss_exp
        )
        b1 = self.bw_per_dl_sub
        snr = self.dl_power_max * gain / (b1 * self.noise_psd)
        return b1 * math.log2(1.0 + snr) / self.dl_power_max

    def delay_ref(self) -> float:
        if self.reward.delay_ref is not None:
            return self.reward.delay_ref
        return self.catalog.delay_budget

    def backhaul_rate_ref(self) -> float:
        """Fixed scale for residual-backhaul observation entries."""
        gain = (
            max(self.min_uav_separation, 1.0)
            * 4.0
            * math.pi
            * self.carrier_freq
            / SPEED_OF_LIGHT
        ) ** (-self.pathloss_exp)
        b1 = self.bw_per_backhaul_sub
        snr = self.backhaul_power_max * gain / (b1 * self.noise_psd)
        return self.bw_backhaul * math.log2(1.0 + snr)


# -- validation ---------------------------------------------------------------


def _positive(errors, path, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        errors.append(f"{path}: must be a positive finite number, got {value!r}")


def validate_config(cfg: ScenarioConfig) -> list[str]:
    """Return every violated invariant with a field path; empty list means ok."""
    errors: list[str] = []
    for name in (
        "num_uavs",
        "num_users",
        "uav_altitude",
        "uav_speed_max",
        "slot_duration",
        "min_uav_separation",
        "area_side",
        "slots_per_episode",
        "bw_backhaul",
        "bw_dl",
        "bw_ul",
        "noise_psd",
        "carrier_freq",
        "pathloss_exp",
        "dl_power_max",
        "ul_power_max",
        "backhaul_power_max",
        "cycles_per_bit",
    ):
        _positive(errors, name, getattr(cfg, name))
    if cfg.user_speed_max < 0:
        errors.append("user_speed_max: must be >= 0")
    if cfg.num_users < 2:
        errors.append("num_users: need at least 2 (services need distinct endpoints)")
    for name in ("n_sub_backhaul", "n_sub_dl", "n_sub_ul"):
        if getattr(cfg, name) < 1:
            errors.append(f"{name}: must be >= 1")
    if cfg.min_uav_separation >= cfg.area_side:
        errors.append("min_uav_separation: must be smaller than area_side")
    if not (0 < cfg.nlos_extra_loss <= 1):
        errors.append("nlos_extra_loss: must be in (0, 1]")
    if cfg.env_beta1 < 0 or cfg.env_beta2 < 0:
        errors.append("env_beta1/env_beta2: must be >= 0")
    if cfg.weight_ee < 0 or cfg.weight_delay < 0:
        errors.append("weight_ee/weight_delay: weights must be >= 0")
    if cfg.weight_ee == 0 and cfg.weight_delay == 0:
        errors.append("weight_ee/weight_delay: weights must not both be zero")
    if cfg.move_power < 0 or cfg.static_power <= 0:
        errors.append("move_power/static_power: move >= 0 and static > 0 required")
    caps = cfg.cpu_per_uav()
    if caps.shape != (cfg.num_uavs,) or np.any(caps <= 0):
        errors.append("cpu_capacity: scalar or per-UAV tuple of positive values")
    if cfg.migration_payload_bits is not None and cfg.migration_payload_bits <= 0:
        errors.append("migration_payload_bits: must be positive when given")

    cat = cfg.catalog
    if not (0.0 <= cat.arrival_prob <= 1.0):
        errors.append("catalog.arrival_prob: must be in [0, 1]")
    if len(cat.chain_lengths) == 0 or any(j < 1 for j in cat.chain_lengths):
        errors.append("catalog.chain_lengths: nonempty, every length >= 1")
    if cat.n_vnf_types < 1:
        errors.append("catalog.n_vnf_types: must be >= 1")
    if not (0 < cat.bit_rate_min <= cat.bit_rate_max):
        errors.append("catalog.bit_rate_min/bit_rate_max: need 0 < min <= max")
    if not (1 <= cat.duration_min <= cat.duration_max):
        errors.append("catalog.duration_min/duration_max: need 1 <= min <= max")
    if cat.delay_budget <= 0:
        errors.append("catalog.delay_budget: must be positive")
    if not (0 < cat.reduced_budget_factor <= 1):
        errors.append("catalog.reduced_budget_factor: must be in (0, 1]")

    rew = cfg.reward
    if rew.ee_ref is not None and rew.ee_ref <= 0:
        errors.append("reward.ee_ref: must be positive when given")
    if rew.delay_ref is not None and rew.delay_ref <= 0:
        errors.append("reward.delay_ref: must be positive when given")
    if rew.violation_penalty < 0:
        errors.append("reward.violation_penalty: must be >= 0")

    ag = cfg.agent
    if not (0.0 <= ag.discount < 1.0):
        errors.append("agent.discount: must be in [0, 1)")
    if ag.batch_size < 1 or ag.batch_size > ag.buffer_capacity:
        errors.append("agent.batch_size: need 1 <= batch_size <= buffer_capacity")
    if ag.lr_initial <= 0 or ag.lr_decay < 0:
        errors.append("agent.lr_initial/lr_decay: lr > 0 and decay >= 0 required")
    if not (0.0 <= ag.epsilon_min <= 1.0) or ag.epsilon_decay < 0:
        errors.append("agent.epsilon_min/epsilon_decay: invalid exploration schedule")
    if ag.noise_scale < 0:
        errors.append("agent.noise_scale: must be >= 0")
    if ag.target_period < 1 or not (0 < ag.target_mix <= 1):
        errors.append("agent.target_period/target_mix: period >= 1, 0 < mix <= 1")
    if len(ag.hidden_sizes) == 0 or any(h < 1 for h in ag.hidden_sizes):
        errors.append("agent.hidden_sizes: nonempty, all sizes >= 1")
    if ag.episodes < 1:
        errors.append("agent.episodes: must be >= 1")
    if ag.mode not in ("single", "multi"):
        errors.append("agent.mode: must be 'single' or 'multi'")
    if ag.quantize_bins < 0:
        errors.append("agent.quantize_bins: must be >= 0")
    return errors


# -- (de)serialization ---------------------------------------------------------


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ValueError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValueError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = {"catalog": ServiceCatalog, "reward": RewardConfig, "agent": AgentConfig}.get(name)
        if sub is not None:
            value = _build(sub, value, f"{path}{name}.")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "")


def config_to_dict(cfg: ScenarioConfig) -> dict:
    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj

    return convert(cfg)


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(cfg: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.path=value`` overrides onto a config dict (values parsed as YAML)."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {key!r}: {part} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return data
