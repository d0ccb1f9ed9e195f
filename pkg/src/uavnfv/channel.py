"""Air-to-ground and air-to-air channel power gains with LoS/NLoS mixing.

Ground links use the expected gain p_los * g_los + (1 - p_los) * g_nlos,
deterministically per slot. UAV-UAV links are pure LoS. All subcarriers of a
band share the carrier frequency; sub-band offsets (<= a few MHz at 2 GHz)
move the gains by well under a percent and are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SPEED_OF_LIGHT, ScenarioConfig


@dataclass(frozen=True)
class LinkGain:
    los_gain: float
    nlos_gain: float
    p_los: float


def fspl_gain(d, f: float, kappa: float, nlos_factor: float = 1.0):
    """Power-law gain (d * 4 pi f / c)^(-kappa); multiply by the extra NLoS loss."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("fspl_gain: distance must be positive")
    return nlos_factor * (d * 4.0 * np.pi * f / SPEED_OF_LIGHT) ** (-kappa)


def p_los(uav_pos, user_pos, beta1: float, beta2: float):
    """LoS probability from the elevation angle between a UAV and a ground user."""
    uav_pos = np.asarray(uav_pos, dtype=float)
    user_pos = np.asarray(user_pos, dtype=float)
    horiz = np.linalg.norm(uav_pos[..., :2] - user_pos[..., :2], axis=-1)
    alt = uav_pos[..., 2]
    theta_deg = np.degrees(np.arctan2(alt, horiz))  # horiz == 0 -> 90 degrees
    return 1.0 / (1.0 + beta1 * np.exp(-beta2 * (theta_deg - beta1)))


def expected_gain(link: LinkGain) -> float:
    return link.p_los * link.los_gain + (1.0 - link.p_los) * link.nlos_gain


def ground_link(uav_pos, user_pos, cfg: ScenarioConfig) -> LinkGain:
    d = float(
        np.linalg.norm(np.append(np.asarray(user_pos, dtype=float), 0.0) - np.asarray(uav_pos, dtype=float))
    )
    los = float(fspl_gain(d, cfg.carrier_freq, cfg.pathloss_exp))
    return LinkGain(
        los_gain=los,
        nlos_gain=cfg.nlos_extra_loss * los,
        p_los=float(p_los(uav_pos, user_pos, cfg.env_beta1, cfg.env_beta2)),
    )


def uav_uav_gain(d, f: float, kappa: float):
    """UAV-UAV channel: pure LoS, no probability mixing."""
    return fspl_gain(d, f, kappa)


def ground_gain_matrix(uav_poses: np.ndarray, user_poses: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Expected DL gains, shape (U, K); the UL matrix is its transpose."""
    users3 = np.concatenate([user_poses, np.zeros((user_poses.shape[0], 1))], axis=1)
    diff = uav_poses[:, None, :] - users3[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    los = fspl_gain(d, cfg.carrier_freq, cfg.pathloss_exp)
    p = p_los(
        uav_poses[:, None, :], users3[None, :, :2], cfg.env_beta1, cfg.env_beta2
    )
    return p * los + (1.0 - p) * cfg.nlos_extra_loss * los


def uav_gain_matrix(uav_poses: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Pure-LoS UAV-UAV gains, shape (U, U), zero diagonal."""
    u = uav_poses.shape[0]
    diff = uav_poses[:, None, :] - uav_poses[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    out = np.zeros((u, u))
    off = ~np.eye(u, dtype=bool)
    out[off] = fspl_gain(d[off], cfg.carrier_freq, cfg.pathloss_exp)
    return out
