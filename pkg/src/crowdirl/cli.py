"""Command-line entry points: simulate, collect, train, evaluate, rank, teleop.

Configuration comes from an optional YAML file (--config flag or the
CROWDIRL_CONFIG environment variable) with sections ``scenario``,
``runtime``, ``training`` and ``forces``; command-line flags override
file values key by key.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from .archive import DemoArchive
from .reward_net import init_model, load_checkpoint, save_checkpoint
from .runtime import (
    RuntimeConfig,
    ScriptedExpert,
    collect_demo,
    evaluate,
    goal_seeking_model,
    run_episode,
)
from .sim import Scenario, SocialForceParams
from .training import TrainingConfig, train


def load_config_file(path: str | None) -> dict:
    path = path or os.environ.get("CROWDIRL_CONFIG")
    if not path:
        return {}
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise SystemExit(f"config file {path} must hold a mapping")
    return data


def _merge(section: dict, overrides: dict) -> dict:
    out = dict(section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def build_scenario(config: dict, args: argparse.Namespace) -> Scenario:
    overrides = {
        "kind": getattr(args, "kind", None),
        "pedestrian_count": getattr(args, "pedestrians", None),
        "circle_radius": getattr(args, "radius", None),
        "seed": getattr(args, "seed", None),
    }
    return Scenario.from_dict(_merge(config.get("scenario", {}), overrides))


def build_runtime(config: dict, args: argparse.Namespace) -> RuntimeConfig:
    overrides = {"timeout": getattr(args, "timeout", None)}
    return RuntimeConfig.from_dict(_merge(config.get("runtime", {}), overrides))


def build_forces(config: dict) -> SocialForceParams:
    return SocialForceParams.from_dict(config.get("forces", {}))


def build_training(config: dict, args: argparse.Namespace) -> TrainingConfig:
    overrides = {
        "epochs": getattr(args, "epochs", None),
        "rank_weight": getattr(args, "rank_weight", None),
        "seed": getattr(args, "seed", None),
        "learning_rate": getattr(args, "learning_rate", None),
    }
    return TrainingConfig.from_dict(_merge(config.get("training", {}), overrides))


def _load_model(path: str | None):
    if path:
        return load_checkpoint(path)
    return goal_seeking_model()


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    scenario = build_scenario(config, args)
    runtime = build_runtime(config, args)
    forces = build_forces(config)
    model = _load_model(args.model)
    for k in range(args.episodes):
        seeded = Scenario.from_dict({**scenario.to_dict(), "seed": scenario.seed + k})
        result = run_episode(seeded, model, config=runtime, params=forces)
        print(json.dumps({"episode": k, "seed": seeded.seed, **result.to_dict()}, sort_keys=True))
    return 0


def cmd_collect(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    scenario = build_scenario(config, args)
    runtime = build_runtime(config, args)
    forces = build_forces(config)
    out = Path(args.out)
    if args.append and out.exists():
        archive = DemoArchive.load(out)
    else:
        archive = DemoArchive(scenario=scenario, config=runtime)
    for k in range(args.episodes):
        seed = scenario.seed + k
        seeded = Scenario.from_dict({**scenario.to_dict(), "seed": seed})
        expert = ScriptedExpert(p_noise=args.p_noise, seed=seed)
        demo = collect_demo(
            seeded,
            expert,
            config=runtime,
            params=forces,
            demo_id=f"{scenario.kind}-{seed}-p{args.p_noise}",
        )
        archive.append(demo)
        print(
            json.dumps(
                {
                    "demo_id": demo.id,
                    "steps": len(demo.robot_states),
                    "path_length": demo.trajectory_length,
                    "n_s": demo.n_s,
                    "epsilon_s": demo.epsilon_s,
                },
                sort_keys=True,
            )
        )
    archive.save(out)
    print(f"saved {len(archive.demos)} demos to {out}", file=sys.stderr)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    training = build_training(config, args)
    archive = DemoArchive.load(args.archive)
    demos = archive.training_demos()
    if len(demos) < 2:
        raise SystemExit(f"archive {args.archive} holds {len(demos)} usable demos; need >= 2")
    model, history = train(demos, training)
    save_checkpoint(model, args.out)
    stats_path = Path(args.stats) if args.stats else None
    lines = [json.dumps(h, sort_keys=True) for h in history]
    if stats_path:
        stats_path.write_text("\n".join(lines) + "\n")
    for line in lines if args.verbose else lines[-1:]:
        print(line)
    print(f"checkpoint written to {args.out}", file=sys.stderr)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    scenario = build_scenario(config, args)
    runtime = build_runtime(config, args)
    forces = build_forces(config)
    model = _load_model(args.model)
    held_out = None
    if args.held_out:
        held_out = DemoArchive.load(args.held_out).training_demos()
    report = evaluate(
        model, [scenario], episodes=args.episodes, config=runtime, params=forces, held_out=held_out
    )
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    overall = report["overall"]
    time_text = f"{overall['mean_time']:.2f}s" if overall["mean_time"] is not None else "n/a"
    print(
        f"success {overall['success_rate']:.0%}  time {time_text}  "
        f"invasions/m {overall['mean_invasion_rate']:.4f}  svcr {overall['mean_svcr']:.4f}",
        file=sys.stderr,
    )
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    archive = DemoArchive.load(args.archive)
    rows = sorted(archive.demos, key=lambda d: d.epsilon_s)
    print(f"{'demo':30s} {'n_s':>5s} {'l_R (m)':>9s} {'SVCR (1/m)':>11s} {'complete':>8s}")
    for demo in rows:
        print(
            f"{demo.id:30s} {demo.n_s:5d} {demo.trajectory_length:9.3f} "
            f"{demo.epsilon_s:11.4f} {str(demo.complete):>8s}"
        )
    return 0


def cmd_teleop(args: argparse.Namespace) -> int:
    from .teleop import serve

    config = load_config_file(args.config)
    scenario = build_scenario(config, args)
    runtime = build_runtime(config, args)
    model = load_checkpoint(args.model) if args.model else None
    serve(
        scenario,
        bind=args.bind,
        port=args.port,
        archive_path=args.archive,
        config=runtime,
        model=model,
    )
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file (or CROWDIRL_CONFIG env var)")
    parser.add_argument("--seed", type=int, help="scenario seed")
    parser.add_argument("--pedestrians", type=int, help="pedestrian count")
    parser.add_argument("--kind", choices=["circle_crossing", "corridor", "random_goals"])
    parser.add_argument("--radius", type=float, help="circle radius (m)")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="crowdirl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run headless episodes and print results")
    _add_common(p)
    p.add_argument("--model", help="reward checkpoint (default: built-in goal seeker)")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--timeout", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("collect", help="record scripted-expert demonstrations")
    _add_common(p)
    p.add_argument("--out", required=True, help="archive path to write")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--p-noise", type=float, default=0.0, dest="p_noise")
    p.add_argument("--append", action="store_true", help="append to an existing archive")
    p.add_argument("--timeout", type=float)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train a reward model on an archive")
    p.add_argument("--config", help="YAML config file (or CROWDIRL_CONFIG env var)")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--stats", help="write per-epoch stats (JSON lines)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--rank-weight", type=float, dest="rank_weight")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", action="store_true", help="print every epoch, not just the last")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the metrics report for a model")
    _add_common(p)
    p.add_argument("--model", help="reward checkpoint (default: built-in goal seeker)")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--held-out", dest="held_out", help="archive for pairwise accuracy")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--timeout", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", help="print the SVCR table for an archive")
    p.add_argument("--archive", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("teleop", help="serve the teleoperation bridge")
    _add_common(p)
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--archive", help="archive path for saved episodes")
    p.add_argument("--model", help="reward checkpoint for the overlay")
    p.set_defaults(func=cmd_teleop)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
