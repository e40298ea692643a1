"""Evaluation and ablation harness.

``evaluate`` runs the inference-only path (score-head argmax; the world model
is never invoked, enforced by an instrumentation counter) and aggregates
prefix-averaged L2, collision rate, and toy PDMS subscores. ``run_ablation``
trains config variants over shared seeds and reports mean +/- std tables
mirroring the step-count, selection-criterion, and world-model sweeps.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from pathlib import Path

import numpy as np

from .config import apply_overrides
from .metrics import (HORIZON_STEPS, PdmsSubscores, aggregate_plan_metrics,
                      collision_rate, l2_displacement, pdms)
from .selection import SelectionWeights, assess_modes, stability_score
from .simulator import (DT, HORIZON, ScenarioConfig, check_collision,
                        generate_episode, split_episodes, waypoints_to_world)
from .tensor import no_grad
from .trainer import DrivingSystem, load_system, train

COMFORT_ACCEL_BOUND = 10.0   # m/s^2
COMFORT_JERK_BOUND = 20.0    # m/s^3
TTC_BOUND = 1.0              # seconds


class InferenceLeakageError(AssertionError):
    """The world model was invoked on the inference path."""


# ----------------------------------------------------------------------
# per-run PDMS subscores (toy stand-ins for the closed-loop rule engine)

def _run_subscores(waypoints, episode, tick):
    first = check_collision(waypoints, episode, tick)
    nc = 1.0 if first is None else 0.0
    ttc = 1.0 if first is None or (first + 1) * DT > TTC_BOUND else 0.0

    world = waypoints_to_world(waypoints, episode.ego_states[tick])
    dac = float(np.mean(np.abs(world[:, 1]) <= episode.lane_bound))

    expert_world = waypoints_to_world(
        episode.expert_trajectory[tick], episode.ego_states[tick]
    )
    ego = episode.ego_states[tick]
    expert_disp = expert_world[-1] - (ego.x, ego.y)
    denom = float(np.dot(expert_disp, expert_disp))
    if denom < 1e-9:
        ep_score = 1.0
    else:
        pred_disp = world[-1] - (ego.x, ego.y)
        ep_score = float(np.clip(np.dot(pred_disp, expert_disp) / denom, 0.0, 1.0))

    disp = np.diff(np.vstack([[0.0, 0.0], waypoints]), axis=0)
    speeds = np.linalg.norm(disp, axis=-1) / DT
    accel = np.diff(speeds) / DT
    jerk = np.diff(accel) / DT
    comfort = float(
        np.max(np.abs(accel)) <= COMFORT_ACCEL_BOUND
        and np.max(np.abs(jerk)) <= COMFORT_JERK_BOUND
    )
    return nc, dac, ep_score, ttc, comfort


# ----------------------------------------------------------------------
# evaluation

def evaluate(system_or_path, episodes, out_dir=None, oracle=False):
    """Inference-only evaluation over all plannable ticks of each episode."""
    if isinstance(system_or_path, (str, Path)):
        system, _ = load_system(system_or_path)
    else:
        system = system_or_path

    counter_before = system.world_model.invocation_count
    l2_values, runs, rows = [], [], []
    sub_rows = []
    with no_grad():
        for episode in episodes:
            for t in range(episode.last_plannable_tick + 1):
                if oracle:
                    waypoints = episode.expert_trajectory[t]
                else:
                    waypoints = system.infer(episode, t).waypoints_array
                l2_at, l2_avg = l2_displacement(waypoints, episode.expert_trajectory[t])
                l2_values.append(l2_at)
                runs.append((waypoints, episode, t))
                sub_rows.append(_run_subscores(waypoints, episode, t))
                rows.append({"episode": episode.id, "tick": t, "l2_avg": l2_avg})

    if system.world_model.invocation_count != counter_before:
        raise InferenceLeakageError(
            "world model invoked "
            f"{system.world_model.invocation_count - counter_before} times "
            "during evaluation"
        )

    cr_at, cr_avg = collision_rate(runs)
    plan = aggregate_plan_metrics(l2_values, cr_at, cr_avg)
    subs = np.mean(np.asarray(sub_rows), axis=0)
    subscores = PdmsSubscores(*[float(v) for v in subs])
    report = {
        "n_runs": len(runs),
        "l2_at": plan.l2_at,
        "l2_avg": plan.l2_avg,
        "cr_at": plan.cr_at,
        "cr_avg": plan.cr_avg,
        "pdms_subscores": vars(subscores).copy(),
        "pdms": pdms(subscores),
        "flow_invocations": system.world_model.invocation_count - counter_before,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2))
        with (out_dir / "per_episode.csv").open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["episode", "tick", "l2_avg"])
            writer.writeheader()
            writer.writerows(rows)
    return report


def inference_latency(system, episodes, repeats=3):
    """Mean per-run wall-clock latency of the inference path, seconds."""
    samples = [(ep, t) for ep in episodes for t in range(ep.last_plannable_tick + 1)]
    best = math.inf
    with no_grad():
        for _ in range(repeats):
            start = time.perf_counter()
            for episode, t in samples:
                system.infer(episode, t)
            best = min(best, (time.perf_counter() - start) / len(samples))
    return best


# ----------------------------------------------------------------------
# dataset helper

def build_dataset(config, n_views=None, d_obs=None):
    """Generate the episode set named by the data section of a config."""
    scenario = ScenarioConfig(name=config.data.scenario, ticks=config.data.ticks)
    n_views = n_views or config.model.n_views
    d_obs = d_obs or config.model.d_obs
    episodes = []
    seed = config.data.base_seed
    while len(episodes) < config.data.episodes:
        try:
            episodes.append(generate_episode(seed, scenario, n_views, d_obs))
        except Exception:  # infeasible seed: skip deterministically
            pass
        seed += 1
    return episodes


# ----------------------------------------------------------------------
# ablation sweeps

SWEEPS = {
    "steps": {
        "K1": {"flow.K": 1},
        "K3": {"flow.K": 3},
        "K5": {"flow.K": 5},
        "K10": {"flow.K": 10},
    },
    "selection": {
        "none": {"selection.lambda_rec": 0.0, "selection.lambda_theta": 0.0,
                 "loss.lambda_score": 0.0},
        "l2_only": {"selection.lambda_rec": 0.0, "selection.lambda_theta": 0.0},
        "recons": {"selection.lambda_theta": 0.0},
        "flow_stability": {},
    },
    "worldmodel": {
        "static": {"world_model": "\"static\""},
        "flow": {"world_model": "\"flow\""},
    },
}


def _variant_config(base_config, deltas):
    cfg = copy.deepcopy(base_config)
    apply_overrides(cfg, [f"{k}={v}" for k, v in deltas.items()])
    return cfg


def run_ablation(base_config, sweep, seeds=(0, 1, 2, 3, 4), out_dir=None):
    """Train and evaluate every variant of a sweep over shared seeds.

    ``sweep`` is a sweep name from SWEEPS or a {variant: {dotted: value}}
    dict. Per-variant failures are recorded and the sweep continues.
    """
    variants = SWEEPS[sweep] if isinstance(sweep, str) else sweep
    results = {}
    for name, deltas in variants.items():
        per_seed, errors = [], []
        for seed in seeds:
            try:
                cfg = _variant_config(base_config, deltas)
                cfg.train.seed = int(seed)
                cfg.data.base_seed = base_config.data.base_seed + 10000 * int(seed)
                episodes = build_dataset(cfg)
                tr, val, test = split_episodes(episodes, cfg.data.split)
                run_dir = (Path(out_dir) / name / f"seed{seed}") if out_dir else (
                    Path("runs/ablation") / name / f"seed{seed}"
                )
                ckpt, _ = train(cfg, tr, val, out_dir=run_dir)
                system, _ = load_system(ckpt)
                report = evaluate(system, test)
                per_seed.append({
                    "seed": int(seed),
                    "l2_avg": report["l2_avg"],
                    "cr_avg": report["cr_avg"],
                    "pdms": report["pdms"],
                })
            except Exception as err:  # keep sweeping; report per variant
                errors.append({"seed": int(seed), "error": f"{type(err).__name__}: {err}"})
        summary = {}
        for key in ("l2_avg", "cr_avg", "pdms"):
            values = [r[key] for r in per_seed]
            if values:
                summary[key] = {"mean": float(np.mean(values)),
                                "std": float(np.std(values))}
        results[name] = {"per_seed": per_seed, "summary": summary, "errors": errors}

    report = {"sweep": sweep if isinstance(sweep, str) else "custom",
              "seeds": [int(s) for s in seeds],
              "variants": results}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.json").write_text(json.dumps(report, indent=2))
        (out_dir / "ablation.txt").write_text(format_ablation_table(report))
        with (out_dir / "ablation.csv").open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["variant", "seed", "l2_avg", "cr_avg", "pdms"])
            for name, res in results.items():
                for row in res["per_seed"]:
                    writer.writerow([name, row["seed"], row["l2_avg"],
                                     row["cr_avg"], row["pdms"]])
    return report


def format_ablation_table(report):
    lines = [f"sweep: {report['sweep']}   seeds: {report['seeds']}",
             f"{'variant':<16}{'L2 avg (m)':<20}{'CR avg (%)':<20}{'PDMS':<20}"]
    for name, res in report["variants"].items():
        if res["summary"]:
            cells = []
            for key in ("l2_avg", "cr_avg", "pdms"):
                s = res["summary"][key]
                cells.append(f"{s['mean']:.4f} ± {s['std']:.4f}")
            lines.append(f"{name:<16}" + "".join(f"{c:<20}" for c in cells))
        else:
            lines.append(f"{name:<16}FAILED: {res['errors']}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# diagnostics dumps

def dump_flow(system, episode, tick, config, path, mode_index=None):
    """Per-step velocity norms and consecutive angles, line-delimited JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    K = config.flow.K if config.world_model == "flow" else 1
    with no_grad(), path.open("w") as f:
        scene, trajectory_set = system.plan(episode, tick)
        z_t = system.world_latent(episode, tick, scene=scene)
        modes = range(len(trajectory_set.modes)) if mode_index is None else [mode_index]
        for n in modes:
            condition = system.world_model.fuse_condition(
                z_t, trajectory_set.modes[n],
                config.flow.lambda_z, config.flow.lambda_T,
            )
            _, velocities = system.world_model.integrate_future(z_t, condition, K)
            arrays = [v.ravel() for v in velocities.as_arrays()]
            norms = [float(np.linalg.norm(v)) for v in arrays]
            angles = []
            for prev, cur in zip(arrays, arrays[1:]):
                denom = np.linalg.norm(prev) * np.linalg.norm(cur)
                cosine = np.dot(prev, cur) / denom if denom > 0 else 1.0
                angles.append(float(np.arccos(np.clip(cosine, -1.0, 1.0))))
            f.write(json.dumps({
                "episode": episode.id, "tick": tick, "mode": n,
                "step_size": velocities.step_size,
                "velocity_norms": norms,
                "consecutive_angles": angles,
                "stability": stability_score(velocities),
            }) + "\n")


def dump_selection(system, episodes, config, path, max_samples=50):
    """Per-sample mode assessments and the chosen n*, line-delimited JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights = SelectionWeights(config.selection.lambda_rec,
                               config.selection.lambda_traj,
                               config.selection.lambda_theta)
    K = config.flow.K if config.world_model == "flow" else 1
    written = 0
    with no_grad(), path.open("w") as f:
        for episode in episodes:
            for t in range(episode.last_plannable_tick + 1):
                if written >= max_samples:
                    return
                scene, trajectory_set = system.plan(episode, t)
                z_t = system.world_latent(episode, t, scene=scene)
                z_next = system.world_latent(episode, t + 1)
                assessments, n_star = assess_modes(
                    trajectory_set, z_t, z_next, episode.expert_trajectory[t],
                    system.world_model, weights, K,
                    config.flow.lambda_z, config.flow.lambda_T,
                )
                f.write(json.dumps({
                    "episode": episode.id, "tick": t, "n_star": n_star,
                    "modes": [vars(a).copy() for a in assessments],
                }) + "\n")
                written += 1
