"""Command-line entry point: train, eval, replay, sweep, validate-config.

Exit codes: 0 ok, 2 config/input error, 3 runtime assertion (replay divergence).
Every output lands under the run's --outdir; a manifest.json is written before
any training step so a run can be reproduced from it.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .agent import (
    LEARNING_CURVE_HEADER,
    evaluate,
    load_agent,
    make_agent,
    run_training,
    save_agent,
)
from .config import (
    apply_overrides,
    config_from_dict,
    config_to_dict,
    validate_config,
)
from .env import HybridAction, UavNetworkEnv
from .metrics import CSV_HEADER, episode_kpis

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

KPI_HEADER = "policy,migration,mobility_kmh,num_users,seed,episodes,rrr,avg_delay,avg_ee,avg_reward"


class ConfigError(Exception):
    pass


def _read_config(path: str | None, overrides) -> dict:
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        with open(p, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    return apply_overrides(data, list(overrides or []))


def _build_config(path, overrides):
    data = _read_config(path, overrides)
    try:
        cfg = config_from_dict(data)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    errors = validate_config(cfg)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def _write_manifest(outdir: Path, command: str, cfg, seed: int, outputs: dict) -> None:
    manifest = {
        "command": command,
        "config": config_to_dict(cfg),
        "seed": seed,
        "code_version": __version__,
        "start_time": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": outputs,
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    cfg = _build_config(args.config, args.override)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = {
        "learning_curve": "learning_curve.csv",
        "metrics": "metrics.csv",
        "checkpoint": "checkpoint.npz",
    }
    _write_manifest(outdir, "train", cfg, args.seed, outputs)
    episodes = args.episodes if args.episodes else None
    with open(outdir / "metrics.csv", "w", encoding="utf-8") as m_fh, open(
        outdir / "learning_curve.csv", "w", encoding="utf-8"
    ) as c_fh:
        m_fh.write(CSV_HEADER + "\n")
        c_fh.write(LEARNING_CURVE_HEADER + "\n")

        def ckpt(agent, ep):
            save_agent(agent, outdir / f"checkpoint_ep{ep + 1}.npz", {"episode": ep})

        result = run_training(
            cfg,
            args.seed,
            algo=args.policy,
            episodes=episodes,
            on_slot=lambda m: m_fh.write(m.csv_row() + "\n"),
            on_episode=lambda r: c_fh.write(r.csv_row() + "\n"),
            checkpoint_every=args.checkpoint_every,
            checkpoint_fn=ckpt if args.checkpoint_every else None,
        )
    save_agent(result.agent, outdir / "checkpoint.npz", {"episodes": len(result.rows)})
    print(f"trained {args.policy} for {len(result.rows)} episodes -> {outdir}")
    return EXIT_OK


def _policy_for_eval(args, cfg):
    if args.policy in ("hhcda", "quantized-ddpg"):
        if not args.checkpoint:
            raise ConfigError(f"policy {args.policy} needs --checkpoint")
        agent, _ = load_agent(args.checkpoint, cfg)
        return agent
    return make_agent(cfg, args.policy, args.seed)


def _eval_cfg(args):
    if args.config is None and args.checkpoint:
        from .neural import load_networks

        _, meta = load_networks(args.checkpoint)
        data = apply_overrides(meta["config"], list(args.override or []))
        cfg = config_from_dict(data)
        errors = validate_config(cfg)
        if errors:
            raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    else:
        cfg = _build_config(args.config, args.override)
    if args.migration is not None:
        cfg.migration_enabled = args.migration == "on"
    return cfg


def _episode_logger(outdir: Path, cfg, seed: int, policy_name: str):
    files = {}

    def log(ep, action, reward, m, env):
        if ep not in files:
            path = outdir / f"episode_{ep:04d}.jsonl"
            fh = open(path, "w", encoding="utf-8")
            header = {
                "type": "header",
                "config": config_to_dict(cfg),
                "seed": seed,
                "episode": ep,
                "policy": policy_name,
            }
            fh.write(json.dumps(header) + "\n")
            files[ep] = fh
        rec = {
            "type": "slot",
            "slot": m.slot,
            "cont": [float(v) for v in action.continuous],
            "disc": [int(v) for v in action.discrete],
            "reward_hex": float(reward).hex(),
            "rejects": m.rejects,
            "violations": m.violations,
            "hosts": {str(sid): list(h) for sid, h in env.active_hosts().items()},
        }
        files[ep].write(json.dumps(rec) + "\n")
        return None

    def close():
        for fh in files.values():
            fh.close()

    log.close = close
    return log


def cmd_eval(args) -> int:
    cfg = _eval_cfg(args)
    policy = _policy_for_eval(args, cfg)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_manifest(outdir, "eval", cfg, args.seed, {"kpis": "kpis.csv"})
    logger = _episode_logger(outdir, cfg, args.seed, args.policy) if args.log_episodes else None
    with open(outdir / "metrics.csv", "w", encoding="utf-8") as m_fh:
        m_fh.write(CSV_HEADER + "\n")
        episodes = evaluate(
            cfg,
            args.seed,
            policy,
            args.episodes,
            on_slot=lambda m: m_fh.write(m.csv_row() + "\n"),
            slot_logger=logger,
        )
    if logger:
        logger.close()
    kpi = episode_kpis([m for ep in episodes for m in ep])
    row = ",".join(
        [
            args.policy,
            "on" if cfg.migration_enabled else "off",
            repr(cfg.user_speed_max * 3.6),
            str(cfg.num_users),
            str(args.seed),
            str(args.episodes),
            repr(kpi.rrr),
            repr(kpi.avg_delay),
            repr(kpi.avg_ee),
            repr(kpi.avg_reward),
        ]
    )
    with open(outdir / "kpis.csv", "w", encoding="utf-8") as fh:
        fh.write(KPI_HEADER + "\n" + row + "\n")
    print(KPI_HEADER)
    print(row)
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.log)
    if not path.exists():
        print(f"error: episode log not found: {path}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("type") != "header":
            raise ValueError("missing header record")
        header = lines[0]
        cfg = config_from_dict(header["config"])
        seed = header["seed"]
        episode = header["episode"]
        slots = lines[1:]
        if not slots:
            raise ValueError("log holds no slot records")
        for i, rec in enumerate(slots):
            if rec.get("type") != "slot" or "reward_hex" not in rec:
                raise ValueError(f"malformed slot record at line {i + 2}")
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: cannot parse episode log: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    env = UavNetworkEnv(cfg, seed=(seed, episode))
    env.episode = episode
    divergences = []
    for rec in slots:
        action = HybridAction(
            np.asarray(rec["cont"], dtype=float), np.asarray(rec["disc"], dtype=int)
        )
        _, reward, m, done = env.step(action)
        if float(reward).hex() != rec["reward_hex"]:
            divergences.append((m.slot, rec["reward_hex"], float(reward).hex()))
        if done:
            break
    if divergences:
        slot, want, got = divergences[0]
        print(f"{len(divergences)} divergences; first at slot {slot}: logged {want}, replayed {got}")
        return EXIT_RUNTIME
    print(f"replayed {len(slots)} slots: 0 divergences")
    return EXIT_OK


def _sweep_cell(payload):
    (cfg_dict, seed, policy_name, checkpoint, episodes) = payload
    cfg = config_from_dict(cfg_dict)
    if policy_name in ("hhcda", "quantized-ddpg"):
        agent, _ = load_agent(checkpoint, cfg)
        policy = agent
    else:
        policy = make_agent(cfg, policy_name, seed)
    eps = evaluate(cfg, seed, policy, episodes)
    kpi = episode_kpis([m for ep in eps for m in ep])
    return ",".join(
        [
            policy_name,
            "on" if cfg.migration_enabled else "off",
            repr(cfg.user_speed_max * 3.6),
            str(cfg.num_users),
            str(seed),
            str(episodes),
            repr(kpi.rrr),
            repr(kpi.avg_delay),
            repr(kpi.avg_ee),
            repr(kpi.avg_reward),
        ]
    )


def cmd_sweep(args) -> int:
    cfg = _build_config(args.config, args.override)
    base = config_to_dict(cfg)
    mobilities = [float(v) for v in args.mobility_kmh.split(",")] if args.mobility_kmh else [
        cfg.user_speed_max * 3.6
    ]
    user_counts = [int(v) for v in args.num_users.split(",")] if args.num_users else [
        cfg.num_users
    ]
    migrations = {"on": [True], "off": [False], "both": [True, False]}[args.migration or "on"]
    if args.policy in ("hhcda", "quantized-ddpg"):
        if not args.checkpoint:
            print(f"error: policy {args.policy} needs --checkpoint", file=sys.stderr)
            return EXIT_CONFIG
        if len(user_counts) > 1 or user_counts[0] != cfg.num_users:
            print(
                "error: checkpointed policies are shape-bound to the trained user count",
                file=sys.stderr,
            )
            return EXIT_CONFIG
    cells = []
    for k in user_counts:
        for v in mobilities:
            for mig in migrations:
                d = json.loads(json.dumps(base))
                d["num_users"] = k
                d["user_speed_max"] = v / 3.6
                d["migration_enabled"] = mig
                cells.append((d, args.seed, args.policy, args.checkpoint, args.episodes))
    if args.parallel > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_manifest(outdir, "sweep", cfg, args.seed, {"kpis": "kpis.csv"})
    with open(outdir / "kpis.csv", "w", encoding="utf-8") as fh:
        fh.write(KPI_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
    print(KPI_HEADER)
    for row in rows:
        print(row)
    return EXIT_OK


def cmd_validate_config(args) -> int:
    try:
        _build_config(args.config, args.override)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavnfv", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--override", action="append", default=[], metavar="K=V")

    t = sub.add_parser("train", help="train a policy and write curves + checkpoints")
    common(t)
    t.add_argument("--outdir", required=True)
    t.add_argument("--policy", choices=["hhcda", "quantized-ddpg"], default="hhcda")
    t.add_argument("--episodes", type=int, default=0, help="override agent.episodes")
    t.add_argument("--checkpoint-every", type=int, default=0)

    e = sub.add_parser("eval", help="frozen-policy rollouts and KPI table")
    common(e, config_required=False)
    e.add_argument("--outdir", required=True)
    e.add_argument(
        "--policy", choices=["hhcda", "quantized-ddpg", "random", "greedy"], required=True
    )
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--migration", choices=["on", "off"], default=None)
    e.add_argument("--log-episodes", action="store_true")

    r = sub.add_parser("replay", help="re-execute an episode log and verify rewards")
    r.add_argument("--log", required=True)

    s = sub.add_parser("sweep", help="KPI grid over mobility / user count / migration")
    common(s)
    s.add_argument("--outdir", required=True)
    s.add_argument(
        "--policy", choices=["hhcda", "quantized-ddpg", "random", "greedy"], required=True
    )
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--episodes", type=int, default=10)
    s.add_argument("--mobility-kmh", default=None, help="comma list, e.g. 0,3,6,9")
    s.add_argument("--num-users", default=None, help="comma list, e.g. 6,9,12")
    s.add_argument("--migration", choices=["on", "off", "both"], default=None)
    s.add_argument("--parallel", type=int, default=1)

    v = sub.add_parser("validate-config", help="check a config file against all invariants")
    common(v)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "replay": cmd_replay,
        "sweep": cmd_sweep,
        "validate-config": cmd_validate_config,
    }
    try:
        return handlers[args.cmd](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())
