"""Command-line entry point.

Verbs: gen-data, train, evaluate, ablate, inspect-flow. Every run writes a
manifest (config snapshot, dataset content hash, seed, applied overrides) so
it can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, load_config
from .harness import build_dataset, dump_flow, evaluate, run_ablation
from .simulator import ScenarioConfig, generate_episode, read_dataset, \
    split_episodes, write_dataset
from .trainer import checkpoint_hash, load_system, train


def _default_out_root():
    return Path(os.environ.get("FLOWPLAN_OUT", "runs"))


def _dataset_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir, verb, config=None, overrides=None, dataset=None,
                    extra=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"verb": verb}
    if config is not None:
        manifest["config"] = config.to_dict()
        manifest["seed"] = config.train.seed
    if overrides:
        manifest["overrides"] = overrides
    if dataset is not None:
        manifest["dataset"] = str(dataset)
        manifest["dataset_sha256"] = _dataset_hash(dataset)
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def _load_config(args):
    config = load_config(args.config) if args.config else RunConfig()
    applied = apply_overrides(config, args.set or [])
    return config, applied


def _resolve_episodes(args, config):
    if args.dataset:
        return read_dataset(args.dataset), args.dataset
    episodes = build_dataset(config)
    return episodes, None


def cmd_gen_data(args):
    scenario = ScenarioConfig(name=args.scenario, ticks=args.ticks)
    episodes = []
    seed = args.seed
    while len(episodes) < args.episodes:
        try:
            episodes.append(generate_episode(seed, scenario))
        except Exception:
            pass
        seed += 1
    write_dataset(args.out, episodes)
    _write_manifest(Path(args.out).parent, "gen-data", dataset=args.out,
                    extra={"seed": args.seed, "episodes": args.episodes,
                           "scenario": args.scenario, "ticks": args.ticks})
    print(f"wrote {len(episodes)} episodes to {args.out}")
    return 0


def cmd_train(args):
    config, applied = _load_config(args)
    episodes, dataset_path = _resolve_episodes(args, config)
    tr, val, _ = split_episodes(episodes, config.data.split)
    out_dir = Path(args.out or _default_out_root() / "train")
    _write_manifest(out_dir, "train", config=config, overrides=applied,
                    dataset=dataset_path)
    ckpt, records = train(
        config, tr, val, out_dir=out_dir,
        log_callback=lambda r: print(json.dumps(r)),
    )
    print(f"checkpoint: {ckpt} (sha256 {checkpoint_hash(ckpt)[:16]})")
    return 0


def cmd_evaluate(args):
    system, config = load_system(args.checkpoint)
    if args.set:
        apply_overrides(config, args.set)
    episodes, dataset_path = _resolve_episodes(args, config)
    _, _, test = split_episodes(episodes, config.data.split)
    out_dir = Path(args.out or _default_out_root() / "evaluate")
    _write_manifest(out_dir, "evaluate", config=config, dataset=dataset_path,
                    extra={"checkpoint": str(args.checkpoint),
                           "checkpoint_sha256": checkpoint_hash(args.checkpoint)})
    report = evaluate(system, test or episodes, out_dir=out_dir)
    print(json.dumps(report, indent=2))
    return 0


def cmd_ablate(args):
    config, applied = _load_config(args)
    out_dir = Path(args.out or _default_out_root() / f"ablate-{args.sweep}")
    _write_manifest(out_dir, "ablate", config=config, overrides=applied,
                    extra={"sweep": args.sweep, "seeds": args.seeds})
    report = run_ablation(config, args.sweep, seeds=args.seeds, out_dir=out_dir)
    print((out_dir / "ablation.txt").read_text())
    if args.assert_directions:
        failures = _check_directions(args.sweep, report)
        for line in failures:
            print(f"ASSERTION FAILED: {line}", file=sys.stderr)
        return 1 if failures else 0
    return 0


def _check_directions(sweep, report):
    """Directional expectations mirroring the step/selection/world-model tables."""
    v = report["variants"]
    failures = []

    def mean(name, key):
        return v[name]["summary"][key]["mean"]

    try:
        if sweep == "steps" and mean("K5", "l2_avg") > mean("K1", "l2_avg"):
            failures.append("l2_avg(K=5) > l2_avg(K=1)")
        if sweep == "selection" and mean("flow_stability", "cr_avg") > mean("l2_only", "cr_avg"):
            failures.append("cr_avg(full criterion) > cr_avg(L2 only)")
        if sweep == "worldmodel" and mean("flow", "l2_avg") > mean("static", "l2_avg"):
            failures.append("l2_avg(flow) > l2_avg(static)")
    except KeyError as err:
        failures.append(f"missing variant result: {err}")
    return failures


def cmd_inspect_flow(args):
    system, config = load_system(args.checkpoint)
    if args.set:
        apply_overrides(config, args.set)
    episodes, _ = _resolve_episodes(args, config)
    index = {ep.id: ep for ep in episodes}
    episode = index.get(args.episode) or episodes[0]
    out = Path(args.out or _default_out_root() / "inspect-flow" / "flow.jsonl")
    dump_flow(system, episode, args.tick, config, out, mode_index=args.mode)
    print(f"wrote flow diagnostics for {episode.id} tick {args.tick} to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowplan",
        description="Flow-based latent world model for toy trajectory planning.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="generate a line-delimited JSON dataset")
    p.add_argument("--seed", type=int, default=1000, help="first episode seed")
    p.add_argument("--episodes", type=int, default=200, help="episode count")
    p.add_argument("--scenario", default="mixed",
                   choices=["mixed", "empty", "lead_brake"], help="scenario preset")
    p.add_argument("--ticks", type=int, default=16, help="ticks per episode")
    p.add_argument("--out", required=True, help="output dataset path (.jsonl)")
    p.set_defaults(func=cmd_gen_data)

    for verb, func, needs_ckpt in (
        ("train", cmd_train, False),
        ("evaluate", cmd_evaluate, True),
        ("ablate", cmd_ablate, False),
        ("inspect-flow", cmd_inspect_flow, True),
    ):
        p = sub.add_parser(verb, help=f"run the {verb} pipeline")
        if not needs_ckpt or verb == "train":
            p.add_argument("--config", help="run config file (.json or .toml)")
        if needs_ckpt:
            p.add_argument("--checkpoint", required=True, help="checkpoint file")
        p.add_argument("--dataset", help="dataset file from gen-data")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, recorded in the manifest")
        p.add_argument("--out", help="output directory")
        if verb == "ablate":
            p.add_argument("--sweep", required=True,
                           choices=["steps", "selection", "worldmodel"],
                           help="which ablation sweep to run")
            p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4],
                           help="training seeds shared across variants")
            p.add_argument("--assert", dest="assert_directions",
                           action="store_true",
                           help="exit 1 if a directional expectation fails")
        if verb == "inspect-flow":
            p.add_argument("--episode", help="episode id (default: first)")
            p.add_argument("--tick", type=int, default=0, help="tick to inspect")
            p.add_argument("--mode", type=int, default=None,
                           help="mode index (default: all modes)")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
