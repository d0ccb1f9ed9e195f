"""Positions and motion of UAVs and users.

UAV moves are norm-clamped to the per-slot travel bound and backed off along
the move direction when a pair would close below the minimum separation. Users
follow a random walk with reflecting area boundaries.
"""

from __future__ import annotations

import numpy as np

from .config import ScenarioConfig


def distance(a, b) -> float:
    """Euclidean distance between two points (2D points are at height 0)."""
    pa = np.zeros(3)
    pb = np.zeros(3)
    pa[: len(a)] = a
    pb[: len(b)] = b
    return float(np.linalg.norm(pa - pb))


def _pair_backoff_t(p0, p1, q0, q1, d_min: float) -> float:
    """Largest t in [0,1] keeping ||lerp(p)-lerp(q)|| >= d_min along the move."""
    rel0 = p0 - q0
    drel = (p1 - p0) - (q1 - q0)
    a = float(drel @ drel)
    b = 2.0 * float(rel0 @ drel)
    c = float(rel0 @ rel0) - d_min * d_min
    if c < 0:
        return 0.0  # already violating before the move
    if a == 0.0:
        return 1.0
    disc = b * b - 4 * a * c
    if disc <= 0:
        return 1.0
    sq = np.sqrt(disc)
    t1 = (-b - sq) / (2 * a)
    if 0.0 <= t1 <= 1.0:
        return max(0.0, t1)
    return 1.0


def apply_uav_moves(poses: np.ndarray, deltas: np.ndarray, cfg: ScenarioConfig):
    """Apply per-UAV (dx, dy) moves.

    Returns (new_poses, clamped_flags, separation_violations) where violations
    are the pairs whose requested (speed-clamped) moves would end closer than
    the minimum separation; those UAVs stop at the pre-collision point.
    """
    deltas = np.asarray(deltas, dtype=float)
    u = poses.shape[0]
    d_max = cfg.max_move
    norms = np.linalg.norm(deltas, axis=1)
    clamped = norms > d_max * (1 + 1e-12)
    scale = np.ones(u)
    nz = norms > 0
    scale[nz] = np.minimum(1.0, d_max / norms[nz])
    prop = poses.copy()
    prop[:, :2] += deltas * scale[:, None]
    prop[:, :2] = np.clip(prop[:, :2], 0.0, cfg.area_side)

    violations = []
    for i in range(u):
        for j in range(i + 1, u):
            if np.linalg.norm(prop[i] - prop[j]) < cfg.min_uav_separation * (1 - 1e-12):
                violations.append((i, j))

    new = prop.copy()
    if violations:
        t = np.ones(u)
        for i, j in violations:
            tij = _pair_backoff_t(
                poses[i], prop[i], poses[j], prop[j], cfg.min_uav_separation
            )
            t[i] = min(t[i], tij)
            t[j] = min(t[j], tij)
        new = poses + t[:, None] * (prop - poses)
        # partial moves can create fresh conflicts; freeze those UAVs in place
        for _ in range(u):
            bad = set()
            for i in range(u):
                for j in range(i + 1, u):
                    if np.linalg.norm(new[i] - new[j]) < cfg.min_uav_separation * (1 - 1e-12):
                        if not np.allclose(new[i], poses[i]):
                            bad.add(i)
                        if not np.allclose(new[j], poses[j]):
                            bad.add(j)
            if not bad:
                break
            for i in bad:
                new[i] = poses[i]
    return new, clamped, violations


def step_users(poses: np.ndarray, rng: np.random.Generator, cfg: ScenarioConfig) -> np.ndarray:
    """Random-walk users: speed ~ U[0, V_max], heading ~ U[0, 2pi), reflecting walls."""
    k = poses.shape[0]
    speed = rng.uniform(0.0, cfg.user_speed_max, size=k)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=k)
    step = speed[:, None] * cfg.slot_duration * np.stack(
        [np.cos(theta), np.sin(theta)], axis=1
    )
    new = poses + step
    side = cfg.area_side
    # mirror-fold back into [0, side]; per-slot steps are far below the area size
    new = np.abs(new)
    over = new > side
    new[over] = 2.0 * side - new[over]
    return np.clip(new, 0.0, side)


def uav_start_grid(cfg: ScenarioConfig) -> np.ndarray:
    """Deterministic initial UAV layout: evenly spread grid at the fixed altitude."""
    u = cfg.num_uavs
    cols = int(np.ceil(np.sqrt(u)))
    rows = int(np.ceil(u / cols))
    xs = np.linspace(cfg.area_side / (cols + 1), cols * cfg.area_side / (cols + 1), cols)
    ys = np.linspace(cfg.area_side / (rows + 1), rows * cfg.area_side / (rows + 1), rows)
    poses = np.zeros((u, 3))
    for i in range(u):
        poses[i] = (xs[i % cols], ys[i // cols], cfg.uav_altitude)
    return poses
