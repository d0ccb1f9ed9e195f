import numpy as np
import pytest

from uavnfv.config import SPEED_OF_LIGHT, ScenarioConfig
from uavnfv.nfv import (
    DelayBreakdown,
    MigrationPlan,
    ServicePlacement,
    check_capacities,
    check_migration,
    check_service_delay,
    derive_migration,
    migration_delay,
    processing_delay,
    propagation_delay,
    service_delays,
    transmission_delay,
    user_node,
    validate_placement,
)
from uavnfv.services import Service


def mk_service(sid=0, src=0, dst=1, chain=1, rate=1e6, dur=5, tau=0.1, start=0):
    return Service(sid, src, dst, tuple(range(chain)), rate, dur, tau, 0.8 * tau, start)


def cfg3(**kw):
    base = dict(num_uavs=3, num_users=4, cpu_capacity=1e9, cycles_per_bit=10.0)
    base.update(kw)
    return ScenarioConfig(**base)


def path_placement(svc, cfg, uav_path, hosts_at):
    """Build a placement from an explicit UAV path and a {chain_idx: uav} map."""
    pl = ServicePlacement.empty(svc, cfg.num_uavs, cfg.num_users, uav_path[0])
    for j, u in hosts_at.items():
        pl.hosts[j, u] = True
    completed = -1
    nodes = list(uav_path) + [user_node(svc.dst_user, cfg.num_uavs)]
    for a, b in zip(nodes[:-1], nodes[1:]):
        while completed + 1 < svc.chain_len and hosts_at.get(completed + 1) == a:
            completed += 1
        label = completed if (completed >= 0 and hosts_at.get(completed) == a) else -1
        if label >= 0:
            pl.fn_edges[label, a, b] = True
        else:
            pl.relay_edges[a, b] = True
    return pl


# -- validate_placement ---------------------------------------------------------


def test_minimal_valid_chain():
    cfg = cfg3()
    svc = mk_service(chain=1)
    pl = path_placement(svc, cfg, [1], {0: 1})
    assert validate_placement([pl], cfg) == []


def test_relay_path_valid():
    cfg = cfg3()
    svc = mk_service(chain=1)
    pl = path_placement(svc, cfg, [0, 2, 1], {0: 1})
    assert validate_placement([pl], cfg) == []


def test_function_at_two_uavs_is_c10_violation():
    cfg = cfg3()
    svc = mk_service(chain=1)
    pl = path_placement(svc, cfg, [1], {0: 1})
    pl.hosts[0, 2] = True
    out = validate_placement([pl], cfg)
    assert any(v.constraint == "C10" for v in out)


def test_unplaced_function_is_c10_violation():
    cfg = cfg3()
    svc = mk_service(chain=2)
    pl = path_placement(svc, cfg, [1], {0: 1})  # second function missing
    out = validate_placement([pl], cfg)
    assert any(v.constraint == "C10" and v.fn_idx == 1 for v in out)


def test_host_also_relaying_flagged():
    cfg = cfg3()
    svc = mk_service(chain=1)
    pl = path_placement(svc, cfg, [0, 1], {0: 1})
    pl.relay_edges[1, 2] = True  # host 1 additionally relays somewhere
    out = validate_placement([pl], cfg)
    assert any(v.constraint == "role-exclusivity" for v in out)


def test_dangling_edge_breaks_flow():
    cfg = cfg3()
    svc = mk_service(chain=1)
    pl = path_placement(svc, cfg, [1], {0: 1})
    pl.relay_edges[2, 0] = True  # edge disconnected from the path
    out = validate_placement([pl], cfg)
    assert any(v.constraint == "C11" for v in out)


def test_wrong_chain_order_flagged():
    cfg = cfg3()
    svc = mk_service(chain=2)
    # f1 hosted upstream of f0: walk sees f1's output edge before f0 ran
    pl = ServicePlacement.empty(svc, cfg.num_uavs, cfg.num_users, 0)
    pl.hosts[1, 0] = True
    pl.hosts[0, 1] = True
    pl.fn_edges[1, 0, 1] = True
    pl.fn_edges[0, 1, user_node(svc.dst_user, 3)] = True
    out = validate_placement([pl], cfg)
    assert any(v.constraint == "chain-order" for v in out)


def brute_force_valid(pl, cfg):
    """Oracle: enumerate all simple UAV paths; the placement is valid iff its
    edge set equals the labeled edge set of one source->destination path that
    visits the hosts in chain order."""
    svc = pl.service
    u_n = cfg.num_uavs
    hosts = []
    for j in range(svc.chain_len):
        idx = np.flatnonzero(pl.hosts[j])
        if idx.size != 1:
            return False
        hosts.append(int(idx[0]))
    if not (0 <= pl.src_uav < u_n):
        return False
    got = set()
    for j in range(svc.chain_len):
        for u, n in zip(*np.nonzero(pl.fn_edges[j])):
            got.add((int(u), int(n), j))
    for u, n in zip(*np.nonzero(pl.relay_edges)):
        got.add((int(u), int(n), -1))

    import itertools

    dst = user_node(svc.dst_user, u_n)
    for length in range(1, u_n + 1):
        for path in itertools.permutations(range(u_n), length):
            if path[0] != pl.src_uav:
                continue
            # hosts must appear along the path in chain order
            pos = 0
            order_ok = True
            for h in hosts:
                while pos < len(path) and path[pos] != h:
                    pos += 1
                if pos == len(path):
                    order_ok = False
                    break
            if not order_ok:
                continue
            want = set()
            completed = -1
            nodes = list(path) + [dst]
            ok = True
            for a, b in zip(nodes[:-1], nodes[1:]):
                while completed + 1 < len(hosts) and hosts[completed + 1] == a:
                    completed += 1
                label = completed if (completed >= 0 and hosts[completed] == a) else -1
                if (a, b, label) in want:
                    ok = False
                    break
                want.add((a, b, label))
            if not ok:
                continue
            if completed != len(hosts) - 1:
                continue
            # pure-relay nodes must not host anything (x + y <= 1)
            relays = {a for a, _, lab in want if lab == -1}
            if relays & set(hosts):
                continue
            if want == got:
                return True
    return False


def test_validator_agrees_with_path_enumeration_oracle():
    cfg = cfg3()
    rng = np.random.default_rng(42)
    agree = 0
    for trial in range(400):
        chain = int(rng.integers(1, 3))
        svc = mk_service(sid=trial, chain=chain)
        if rng.random() < 0.6:
            # start from a structurally valid random path
            length = int(rng.integers(1, 4))
            path = list(rng.permutation(3)[:length])
            hosts_at = {}
            positions = sorted(rng.integers(0, length, size=chain))
            for j in range(chain):
                hosts_at[j] = int(path[positions[j]])
            pl = path_placement(svc, cfg, path, hosts_at)
        else:
            pl = ServicePlacement.empty(svc, 3, 4, int(rng.integers(3)))
            for j in range(chain):
                pl.hosts[j, rng.integers(3)] = True
        # random corruption half the time
        if rng.random() < 0.5:
            kind = rng.integers(3)
            if kind == 0:
                pl.relay_edges[rng.integers(3), rng.integers(7)] ^= True
            elif kind == 1:
                pl.fn_edges[rng.integers(chain), rng.integers(3), rng.integers(7)] ^= True
            else:
                pl.hosts[rng.integers(chain), rng.integers(3)] ^= True
        got_valid = validate_placement([pl], cfg) == []
        want_valid = brute_force_valid(pl, cfg)
        assert got_valid == want_valid, f"trial {trial}: validator {got_valid}, oracle {want_valid}"
        agree += 1
    assert agree == 400


# -- delays ---------------------------------------------------------------------


def test_processing_delay_example():
    cfg = cfg3()
    svc = mk_service(rate=1e6)
    pl = path_placement(svc, cfg, [0], {0: 0})
    # 1e6 bit/s * 10 cycles/bit / 1e9 cycles/s = 0.01 s
    assert processing_delay(pl, cfg) == pytest.approx(0.01, rel=1e-12)


def test_processing_delay_empty_placement_zero():
    cfg = cfg3()
    svc = mk_service()
    pl = ServicePlacement.empty(svc, 3, 4, 0)
    assert processing_delay(pl, cfg) == 0.0


def test_processing_delay_inverse_in_cpu():
    svc = mk_service(rate=1e6)
    full = cfg3(cpu_capacity=1e9)
    half = cfg3(cpu_capacity=5e8)
    pl = path_placement(svc, full, [0], {0: 0})
    assert processing_delay(pl, half) == pytest.approx(2 * processing_delay(pl, full), rel=1e-12)


def test_propagation_delay_300m_hop():
    cfg = cfg3()
    svc = mk_service(chain=1, dst=1)
    pl = path_placement(svc, cfg, [0, 1], {0: 1})
    uav = np.array([[0.0, 0.0, 0.0], [300.0, 0.0, 0.0], [0.0, 500.0, 0.0]])
    users = np.zeros((4, 2))
    users[1] = [300.0, 0.0]  # destination directly under UAV 1
    d = propagation_delay(pl, uav, users)
    assert d == pytest.approx(300.0 / 3e8, rel=1e-12)
    assert d == pytest.approx(1e-6, rel=1e-9)


def test_propagation_delay_matches_oracle_path_walk():
    cfg = cfg3()
    rng = np.random.default_rng(0)
    svc = mk_service(chain=2)
    pl = path_placement(svc, cfg, [0, 2, 1], {0: 2, 1: 1})
    uav = np.column_stack([rng.uniform(0, 500, 3), rng.uniform(0, 500, 3), np.full(3, 60.0)])
    users = rng.uniform(0, 500, size=(4, 2))
    want = 0.0
    for a, b in [(0, 2), (2, 1)]:
        want += np.linalg.norm(uav[a] - uav[b]) / SPEED_OF_LIGHT
    dst3 = np.append(users[svc.dst_user], 0.0)
    want += np.linalg.norm(uav[1] - dst3) / SPEED_OF_LIGHT
    assert propagation_delay(pl, uav, users) == pytest.approx(want, rel=1e-12)


def test_transmission_delay_ratio_and_cap():
    cfg = cfg3()
    svc = mk_service(rate=1e6)
    pl = path_placement(svc, cfg, [0, 1], {0: 1})
    rate = np.zeros((3, 3))
    rate[0, 1] = 1e7
    d, capped = transmission_delay(pl, rate, cfg)
    assert d == pytest.approx(0.1, rel=1e-12)
    assert not capped
    rate[0, 1] = 2e7
    d2, _ = transmission_delay(pl, rate, cfg)
    assert d2 == pytest.approx(0.05, rel=1e-12)
    rate[0, 1] = 0.0
    d3, capped3 = transmission_delay(pl, rate, cfg)
    assert capped3 and d3 == cfg.slot_duration


def test_transmission_delay_access_hop_free():
    cfg = cfg3()
    svc = mk_service(rate=1e6)
    pl = path_placement(svc, cfg, [0], {0: 0})  # single UAV, only the user hop
    d, capped = transmission_delay(pl, np.zeros((3, 3)), cfg)
    assert d == 0.0 and not capped


def test_migration_delay_examples():
    cfg = cfg3(migration_payload_bits=1e6)
    svc = mk_service(rate=1e6)
    moves = np.zeros((1, 3, 3), dtype=bool)
    rate = np.full((3, 3), 1e7)
    d, _ = migration_delay(moves, svc, rate, cfg)
    assert d == 0.0  # no moves
    moves[0, 0, 1] = True
    d, _ = migration_delay(moves, svc, rate, cfg)
    assert d == pytest.approx(0.1, rel=1e-12)


def test_self_migration_excluded():
    prev = np.zeros((1, 3), dtype=bool)
    now = np.zeros((1, 3), dtype=bool)
    prev[0, 1] = True
    now[0, 1] = True
    assert not derive_migration(prev, now).any()
    now[0, 1] = False
    now[0, 2] = True
    m = derive_migration(prev, now)
    assert m[0, 1, 2] and m.sum() == 1


def test_migration_product_oracle():
    rng = np.random.default_rng(9)
    for _ in range(200):
        j, u = int(rng.integers(1, 4)), int(rng.integers(2, 5))
        prev = np.zeros((j, u), dtype=bool)
        now = np.zeros((j, u), dtype=bool)
        for jj in range(j):
            prev[jj, rng.integers(u)] = True
            now[jj, rng.integers(u)] = True
        m = derive_migration(prev, now)
        for jj in range(j):
            for a in range(u):
                for b in range(u):
                    want = prev[jj, a] and now[jj, b] and a != b
                    assert m[jj, a, b] == want


def test_check_migration_flags_mismatch():
    prev = {7: np.array([[True, False, False]])}
    now = {7: np.array([[False, True, False]])}
    plan = MigrationPlan(moves={7: derive_migration(prev[7], now[7])})
    assert check_migration(plan, prev, now) == []
    plan_bad = MigrationPlan(moves={7: np.zeros((1, 3, 3), dtype=bool)})
    assert len(check_migration(plan_bad, prev, now)) == 1
    # unchanged placement requires all-zero migration bits
    plan_extra = MigrationPlan(moves={7: derive_migration(prev[7], prev[7]) | True})
    same = {7: prev[7]}
    assert len(check_migration(plan_extra, same, same)) == 1


# -- capacities -------------------------------------------------------------------


def test_cpu_capacity_threshold():
    cfg = cfg3(cpu_capacity=1e9, cycles_per_bit=10.0)
    rate = 0.4e8  # each function uses 0.4 of the CPU
    svcs = [mk_service(sid=i, src=i % 3, dst=3, chain=1, rate=rate) for i in range(3)]
    pls = [path_placement(s, cfg, [0], {0: 0}) for s in svcs]
    bh = np.full((3, 3), 1e9)
    over, link = check_capacities(pls[:2], bh, cfg)
    assert over.sum() == 0 and link == []
    over, link = check_capacities(pls, bh, cfg)
    assert over[0] == pytest.approx(0.2e9, rel=1e-9)


def test_link_capacity_overshoot():
    cfg = cfg3()
    svc = mk_service(rate=2e6)
    pl = path_placement(svc, cfg, [0, 1], {0: 1})
    bh = np.zeros((3, 3))
    bh[0, 1] = 1.5e6
    _, link = check_capacities([pl], bh, cfg)
    assert link == [(0, 1, pytest.approx(0.5e6, rel=1e-9))]


def test_empty_placement_passes_capacities():
    cfg = cfg3()
    over, link = check_capacities([], np.zeros((3, 3)), cfg)
    assert over.sum() == 0 and link == []


# -- C15 --------------------------------------------------------------------------


def _delays(pr=0.0, pd=0.0, td=0.0, mg=0.0):
    return DelayBreakdown(processing=pr, propagation=pd, transmission=td, migration=mg)


def test_c15_migrating_uses_full_budget():
    cfg = cfg3(slot_duration=0.5)
    svc = mk_service(tau=0.1)
    pl = path_placement(svc, cfg, [0], {0: 0})
    plan = MigrationPlan(moves={svc.id: np.ones((1, 3, 3), dtype=bool)})
    ok = check_service_delay({svc.id: _delays(td=0.05)}, [pl], plan, cfg)
    assert ok[svc.id]
    ok = check_service_delay({svc.id: _delays(td=0.11)}, [pl], plan, cfg)
    assert not ok[svc.id]


def test_c15_non_migrating_uses_reduced_budget():
    cfg = cfg3(slot_duration=0.5)
    svc = mk_service(tau=0.1)  # reduced budget 0.08
    pl = path_placement(svc, cfg, [0], {0: 0})
    plan = MigrationPlan()
    ok = check_service_delay({svc.id: _delays(td=0.09)}, [pl], plan, cfg)
    assert not ok[svc.id]
    ok = check_service_delay({svc.id: _delays(td=0.079)}, [pl], plan, cfg)
    assert ok[svc.id]


def test_slot_bound_rejects_regardless_of_budget():
    cfg = cfg3(slot_duration=0.5)
    svc = mk_service(tau=10.0)  # huge budget, still bound by the slot
    pl = path_placement(svc, cfg, [0], {0: 0})
    plan = MigrationPlan(moves={svc.id: np.ones((1, 3, 3), dtype=bool)})
    ok = check_service_delay({svc.id: _delays(td=0.6)}, [pl], plan, cfg)
    assert not ok[svc.id]


def test_breakdown_additivity_exact():
    d = _delays(pr=0.01, pd=1e-6, td=0.2, mg=0.05)
    assert d.total == 0.01 + 1e-6 + 0.2 + 0.05
    assert d.no_migration_total == 0.01 + 1e-6 + 0.2


def test_service_delays_drop_migration_never_increases():
    cfg = cfg3()
    rng = np.random.default_rng(4)
    svc = mk_service(chain=2, rate=5e5)
    pl = path_placement(svc, cfg, [0, 1], {0: 1, 1: 1})
    uav = np.column_stack([rng.uniform(0, 300, 3), rng.uniform(0, 300, 3), np.full(3, 50.0)])
    users = rng.uniform(0, 300, size=(4, 2))
    bh = np.full((3, 3), 2e6)
    moves = np.zeros((2, 3, 3), dtype=bool)
    moves[0, 0, 1] = True
    with_mg = service_delays([pl], MigrationPlan(moves={svc.id: moves}), uav, users, bh, cfg)
    without = service_delays([pl], MigrationPlan(), uav, users, bh, cfg)
    assert without[svc.id].total <= with_mg[svc.id].total
