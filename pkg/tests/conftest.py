import numpy as np
import pytest

from uavnfv.config import AgentConfig, RewardConfig, ScenarioConfig, ServiceCatalog


def desk_config(users=6, uavs=3, kmh=3.0, migration=True, episodes=200, slots=100):
    """Small scenario used across the suite: 3 UAVs, 6 users, 2 subcarriers per
    band, chains of at most 2 VNFs. delay_ref equals the slot length so one
    saturated service weighs like one violation in the reward; backhaul
    subcarriers are auto-assigned from demand (sigma_in_action off)."""
    return ScenarioConfig(
        num_uavs=uavs,
        num_users=users,
        uav_altitude=50.0,
        area_side=300.0,
        min_uav_separation=25.0,
        user_speed_max=kmh / 3.6,
        n_sub_dl=2,
        n_sub_ul=2,
        n_sub_backhaul=2,
        migration_enabled=migration,
        sigma_in_action=False,
        slots_per_episode=slots,
        catalog=ServiceCatalog(
            arrival_prob=0.35,
            chain_lengths=(1, 2),
            bit_rate_min=5e4,
            bit_rate_max=2e5,
            duration_min=8,
            duration_max=16,
            delay_budget=0.2,
        ),
        reward=RewardConfig(delay_ref=0.5, violation_penalty=0.5),
        agent=AgentConfig(
            hidden_sizes=(64, 64, 64),
            episodes=episodes,
            batch_size=128,
            update_every_step=True,
            target_period=200,
            noise_scale=0.3,
            epsilon_decay=0.015,
        ),
    )


@pytest.fixture
def desk_cfg():
    return desk_config()


@pytest.fixture
def paper_cfg():
    """Table-scale defaults: 6 UAVs, 12 users, chains up to 3."""
    return ScenarioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
