import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import desk_config
from uavnfv.cli import main
from uavnfv.config import config_to_dict


@pytest.fixture
def cfg_file(tmp_path):
    cfg = desk_config(episodes=2, slots=8)
    cfg.agent.hidden_sizes = (16, 16, 16)
    cfg.agent.batch_size = 16
    path = tmp_path / "desk.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh)
    return path


def test_missing_config_exits_2(tmp_path, capsys):
    rc = main(["train", "--config", str(tmp_path / "nope.yaml"), "--outdir", str(tmp_path / "o")])
    assert rc == 2
    assert "nope.yaml" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("min_uav_separation: -1\n")
    rc = main(["validate-config", "--config", str(bad)])
    assert rc == 2
    assert "min_uav_separation" in capsys.readouterr().err


def test_validate_config_ok(cfg_file, capsys):
    rc = main(["validate-config", "--config", str(cfg_file)])
    assert rc == 0
    assert "config ok" in capsys.readouterr().out


def test_override_lands_in_manifest(cfg_file, tmp_path):
    out = tmp_path / "run"
    rc = main(
        [
            "train", "--config", str(cfg_file), "--outdir", str(out),
            "--seed", "3", "--episodes", "1", "--override", "num_users=9",
            "--override", "agent.batch_size=8",
        ]
    )
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["num_users"] == 9
    assert manifest["config"]["agent"]["batch_size"] == 8
    assert manifest["seed"] == 3
    assert manifest["command"] == "train"
    assert (out / "checkpoint.npz").exists()


def test_train_outputs_and_determinism(cfg_file, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(
            ["train", "--config", str(cfg_file), "--outdir", str(out), "--seed", "7"]
        )
        assert rc == 0
        outs.append(out)
    for fname in ("learning_curve.csv", "metrics.csv"):
        b0 = (outs[0] / fname).read_bytes()
        b1 = (outs[1] / fname).read_bytes()
        assert b0 == b1, f"{fname} differs between identical runs"
    header = (outs[0] / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("episode,slot,sum_rate_dl")
    curve = (outs[0] / "learning_curve.csv").read_text().splitlines()
    assert curve[0] == "episode,mean_reward,mean_ee,mean_delay,rrr,epsilon,lr"
    assert len(curve) == 1 + 2  # header + one row per episode


def test_eval_random_policy_kpis(cfg_file, tmp_path, capsys):
    out = tmp_path / "eval"
    rc = main(
        [
            "eval", "--config", str(cfg_file), "--outdir", str(out),
            "--policy", "random", "--episodes", "2", "--seed", "1",
        ]
    )
    assert rc == 0
    rows = (out / "kpis.csv").read_text().splitlines()
    assert rows[0].startswith("policy,migration,mobility_kmh")
    cells = rows[1].split(",")
    rrr = float(cells[6])
    assert 0.0 <= rrr <= 1.0


def test_eval_checkpointed_policy_and_config_embed(cfg_file, tmp_path):
    train_out = tmp_path / "t"
    assert main(["train", "--config", str(cfg_file), "--outdir", str(train_out), "--seed", "2"]) == 0
    eval_out = tmp_path / "e"
    rc = main(
        [
            "eval", "--policy", "hhcda", "--checkpoint", str(train_out / "checkpoint.npz"),
            "--outdir", str(eval_out), "--episodes", "1", "--seed", "2",
        ]
    )
    assert rc == 0
    assert (eval_out / "kpis.csv").exists()


def test_eval_hhcda_without_checkpoint_errors(cfg_file, tmp_path, capsys):
    rc = main(
        ["eval", "--config", str(cfg_file), "--outdir", str(tmp_path / "x"),
         "--policy", "hhcda"]
    )
    assert rc == 2
    assert "--checkpoint" in capsys.readouterr().err


def test_migration_off_placements_frozen_in_logs(cfg_file, tmp_path):
    out = tmp_path / "logs"
    rc = main(
        [
            "eval", "--config", str(cfg_file), "--outdir", str(out),
            "--policy", "greedy", "--episodes", "2", "--migration", "off",
            "--log-episodes", "--seed", "4",
            "--override", "slots_per_episode=40",
        ]
    )
    assert rc == 0
    checked = 0
    for log in sorted(out.glob("episode_*.jsonl")):
        lines = [json.loads(line) for line in log.read_text().splitlines()]
        assert lines[0]["type"] == "header"
        assert lines[0]["config"]["migration_enabled"] is False
        seen = {}
        for rec in lines[1:]:
            for sid, hosts in rec["hosts"].items():
                if sid in seen:
                    assert seen[sid] == hosts
                    checked += 1
                seen[sid] = hosts
    assert checked > 0


def test_replay_fresh_log_no_divergence(cfg_file, tmp_path, capsys):
    out = tmp_path / "ev"
    main(
        ["eval", "--config", str(cfg_file), "--outdir", str(out), "--policy",
         "random", "--episodes", "1", "--log-episodes", "--seed", "5"]
    )
    log = next(out.glob("episode_*.jsonl"))
    rc = main(["replay", "--log", str(log)])
    assert rc == 0
    assert "0 divergences" in capsys.readouterr().out


def test_replay_detects_perturbed_reward(cfg_file, tmp_path, capsys):
    out = tmp_path / "ev"
    main(
        ["eval", "--config", str(cfg_file), "--outdir", str(out), "--policy",
         "random", "--episodes", "1", "--log-episodes", "--seed", "6"]
    )
    log = next(out.glob("episode_*.jsonl"))
    lines = log.read_text().splitlines()
    rec = json.loads(lines[3])
    rec["reward_hex"] = np.nextafter(float.fromhex(rec["reward_hex"]), 1.0).hex()
    lines[3] = json.dumps(rec)
    log.write_text("\n".join(lines) + "\n")
    rc = main(["replay", "--log", str(log)])
    assert rc == 3
    out_text = capsys.readouterr().out
    assert f"first at slot {rec['slot']}" in out_text


def test_replay_truncated_log_clean_error(cfg_file, tmp_path, capsys):
    out = tmp_path / "ev"
    main(
        ["eval", "--config", str(cfg_file), "--outdir", str(out), "--policy",
         "random", "--episodes", "1", "--log-episodes", "--seed", "7"]
    )
    log = next(out.glob("episode_*.jsonl"))
    truncated = tmp_path / "trunc.jsonl"
    lines = log.read_text().splitlines()
    # cut the third record in half: parse must fail cleanly, not crash
    truncated.write_text("\n".join(lines[:2]) + "\n" + lines[2][: len(lines[2]) // 2] + "\n")
    rc = main(["replay", "--log", str(truncated)])
    assert rc == 2
    assert "cannot parse" in capsys.readouterr().err


def test_replay_missing_file(tmp_path, capsys):
    rc = main(["replay", "--log", str(tmp_path / "none.jsonl")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_sweep_mobility_emits_four_rows(cfg_file, tmp_path):
    out = tmp_path / "sweep"
    rc = main(
        [
            "sweep", "--config", str(cfg_file), "--outdir", str(out),
            "--policy", "greedy", "--episodes", "1", "--seed", "1",
            "--mobility-kmh", "0,3,6,9",
        ]
    )
    assert rc == 0
    rows = (out / "kpis.csv").read_text().splitlines()
    assert len(rows) == 5
    speeds = [float(r.split(",")[2]) for r in rows[1:]]
    assert speeds == [0.0, 3.0, 6.0, 9.0]


def test_sweep_grid_and_parallel(cfg_file, tmp_path):
    out = tmp_path / "sweep2"
    rc = main(
        [
            "sweep", "--config", str(cfg_file), "--outdir", str(out),
            "--policy", "random", "--episodes", "1", "--seed", "1",
            "--num-users", "6,9", "--migration", "both", "--parallel", "2",
        ]
    )
    assert rc == 0
    rows = (out / "kpis.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2


def test_sweep_checkpoint_shape_guard(cfg_file, tmp_path, capsys):
    train_out = tmp_path / "t"
    main(["train", "--config", str(cfg_file), "--outdir", str(train_out), "--seed", "1"])
    rc = main(
        [
            "sweep", "--config", str(cfg_file), "--outdir", str(tmp_path / "s"),
            "--policy", "hhcda", "--checkpoint", str(train_out / "checkpoint.npz"),
            "--num-users", "6,9", "--seed", "1",
        ]
    )
    assert rc == 2
    assert "shape-bound" in capsys.readouterr().err
