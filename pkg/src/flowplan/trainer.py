"""Joint training of planner, world-feature extractor, and world model.

Per step: plan multi-mode trajectories, extract current/next world latents,
pick the optimal mode n* with the stability-aware criterion, then optimize
the unified objective (trajectory L1 on n*, score cross-entropy against n*,
latent reconstruction on the n*-conditioned rollout, and the flow matching
loss). Fully seeded: identical config + dataset give identical checkpoints.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .losses import reconstruction_loss, score_loss, total_loss, trajectory_loss
from .nn import Module
from .optim import Adam, clip_global_norm
from .planner import Planner, select_output
from .selection import SelectionWeights, assess_modes
from .simulator import observe
from .tensor import ContractError, Tensor, no_grad
from .worldmodel import FlowModel, StaticWorldModel, WorldFeatureExtractor


class TrainingAbort(RuntimeError):
    """Training hit a non-finite loss; the last good checkpoint is retained."""


class DrivingSystem(Module):
    """Planner + world-feature extractor + (flow or static) world model."""

    def __init__(self, config, seed=None):
        self.config = config
        seed = config.train.seed if seed is None else seed
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 77])))
        self.planner = Planner(config.model, rng)
        self.extractor = WorldFeatureExtractor(config.model, rng)
        if config.world_model == "flow":
            self.world_model = FlowModel(config.model, rng)
        else:
            self.world_model = StaticWorldModel(config.model, rng)

    # config is not a parameter container; restrict recursion to submodules
    def named_parameters(self, prefix=""):
        for name in ("planner", "extractor", "world_model"):
            yield from getattr(self, name).named_parameters(prefix=f"{prefix}{name}.")

    def plan(self, episode, t):
        scene = self.planner.encode_scene(observe(episode, t))
        return scene, self.planner.decode_trajectories(scene, episode.command)

    def infer(self, episode, t):
        """Inference path: argmax-score mode only, no world-model involvement."""
        _, trajectory_set = self.plan(episode, t)
        return select_output(trajectory_set)

    def world_latent(self, episode, t, scene=None):
        if scene is None:
            scene = self.planner.encode_scene(observe(episode, t))
        return self.extractor(observe(episode, t), scene, timestep=t)


def _plannable_ticks(episode):
    return list(range(episode.last_plannable_tick + 1))


def training_step(system, episode, t, rng, config, selection_weights):
    """One sample's losses and the selected mode index."""
    flow_cfg, loss_cfg = config.flow, config.loss
    scene, trajectory_set = system.plan(episode, t)
    z_t = system.world_latent(episode, t, scene=scene)
    with no_grad():
        z_next = system.world_latent(episode, t + 1)
    gt = episode.expert_trajectory[t]

    K = flow_cfg.K if config.world_model == "flow" else 1
    assessments, n_star = assess_modes(
        trajectory_set, z_t, z_next, gt, system.world_model,
        selection_weights, K, flow_cfg.lambda_z, flow_cfg.lambda_T,
    )

    traj_l = trajectory_loss(trajectory_set, gt, n_star, loss_cfg.traj_all_modes)
    score_l = score_loss(trajectory_set, n_star)

    # reconstruction on the n*-conditioned rollout (waypoints detached so the
    # planner is supervised only through the trajectory and score losses)
    cond_star = system.world_model.fuse_condition(
        z_t, trajectory_set.modes[n_star].waypoints.detach(),
        flow_cfg.lambda_z, flow_cfg.lambda_T,
    )
    z_pred, _ = system.world_model.integrate_future(z_t, cond_star, K)
    rec_l = reconstruction_loss(z_pred, z_next)

    if config.world_model == "flow":
        # condition only on the mode nearest the executed (expert) trajectory:
        # the observed transition is the outcome of that action, and training
        # other modes against the same target would teach the field to ignore
        # its condition
        gt_nearest = int(np.argmin([a.traj_err for a in assessments]))
        condition = system.world_model.fuse_condition(
            z_t.z.detach(), trajectory_set.modes[gt_nearest].waypoints.detach(),
            flow_cfg.lambda_z, flow_cfg.lambda_T,
        )
        flow_l = system.world_model.flow_matching_loss(
            [(z_t, z_next, [condition])], rng,
            target_convention=flow_cfg.target_convention,
            alpha_policy=flow_cfg.alpha_policy,
            alpha_max=flow_cfg.alpha_max,
            alpha_value=flow_cfg.alpha_value,
        )
    else:
        flow_l = Tensor(0.0)

    return traj_l, score_l, rec_l, flow_l, n_star


def score_agreement(system, episodes, config, selection_weights, max_samples=80):
    """Fraction of validation samples where the score head's argmax equals n*."""
    hits = total = 0
    K = config.flow.K if config.world_model == "flow" else 1
    with no_grad():
        for episode in episodes:
            for t in _plannable_ticks(episode):
                if total >= max_samples:
                    break
                scene, trajectory_set = system.plan(episode, t)
                z_t = system.world_latent(episode, t, scene=scene)
                z_next = system.world_latent(episode, t + 1)
                _, n_star = assess_modes(
                    trajectory_set, z_t, z_next, episode.expert_trajectory[t],
                    system.world_model, selection_weights, K,
                    config.flow.lambda_z, config.flow.lambda_T,
                )
                predicted = int(np.argmax(trajectory_set.logits))
                hits += int(predicted == n_star)
                total += 1
    return hits / total if total else 0.0


def train(config, train_episodes, val_episodes=(), out_dir="runs/latest",
          log_callback=None):
    """Run the optimization loop; returns (checkpoint_path, metrics_records)."""
    if not train_episodes:
        raise ContractError("training requires a non-empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.json"
    metrics_path = out_dir / "metrics.jsonl"

    system = DrivingSystem(config)
    selection_weights = SelectionWeights(
        config.selection.lambda_rec,
        config.selection.lambda_traj,
        config.selection.lambda_theta,
    )
    optimizer = Adam(
        system.named_parameters(),
        lr=config.train.learning_rate,
        weight_decay=config.train.weight_decay,
    )
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([config.train.seed, 13]))
    )

    records = []
    metrics_path.write_text("")
    _save(system, optimizer, rng, config, ckpt_path)

    for epoch in range(config.train.epochs):
        sums = {"traj": 0.0, "score": 0.0, "rec": 0.0, "flow": 0.0, "total": 0.0}
        n_star_counts = np.zeros(config.model.n_modes, dtype=int)
        samples = []
        for episode in train_episodes:
            ticks = _plannable_ticks(episode)
            take = min(config.train.samples_per_episode, len(ticks))
            chosen = rng.choice(len(ticks), size=take, replace=False)
            samples.extend((episode, ticks[i]) for i in sorted(chosen))
        order = rng.permutation(len(samples))

        n_batches = 0
        for start in range(0, len(order), config.train.batch_size):
            batch_idx = order[start:start + config.train.batch_size]
            components = {"traj": [], "score": [], "rec": [], "flow": []}
            # any contract violation here means the optimization diverged
            # (non-finite latents or losses); abort, keeping the last good
            # checkpoint on disk
            try:
                for i in batch_idx:
                    episode, t = samples[i]
                    traj_l, score_l, rec_l, flow_l, n_star = training_step(
                        system, episode, t, rng, config, selection_weights
                    )
                    components["traj"].append(traj_l)
                    components["score"].append(score_l)
                    components["rec"].append(rec_l)
                    components["flow"].append(flow_l)
                    n_star_counts[n_star] += 1
                means = {k: _mean_tensor(v) for k, v in components.items()}
                loss = total_loss(means["traj"], means["score"], means["rec"],
                                  means["flow"], config.loss)
            except ContractError as err:
                raise TrainingAbort(
                    f"epoch {epoch}: {err}; last good checkpoint at {ckpt_path}"
                ) from err
            loss.backward()
            for p in system.parameters():
                if p.grad is None:  # branch unused this batch (e.g. other commands)
                    p.grad = np.zeros_like(p.data)
            clip_global_norm(system.parameters(), config.train.grad_clip)
            optimizer.step()
            optimizer.zero_grad()
            for key in sums:
                if key != "total":
                    sums[key] += means[key].item()
            sums["total"] += loss.item()
            n_batches += 1

        record = {
            "epoch": epoch,
            "traj_loss": sums["traj"] / n_batches,
            "score_loss": sums["score"] / n_batches,
            "rec_loss": sums["rec"] / n_batches,
            "flow_loss": sums["flow"] / n_batches,
            "total_loss": sums["total"] / n_batches,
            "n_star_histogram": n_star_counts.tolist(),
            "val_agreement": score_agreement(
                system, val_episodes, config, selection_weights
            ) if val_episodes else None,
        }
        records.append(record)
        with metrics_path.open("a") as f:
            f.write(json.dumps(record) + "\n")
        if log_callback:
            log_callback(record)
        _save(system, optimizer, rng, config, ckpt_path)

    return ckpt_path, records


def _mean_tensor(tensors):
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total * (1.0 / len(tensors))


def _save(system, optimizer, rng, config, path):
    save_checkpoint(
        path,
        system.state_dict(),
        optimizer_state=optimizer.state_dict(),
        rng_state=rng.bit_generator.state,
        meta={
            "config": config.to_dict(),
            "anchors": {cmd: arr.tolist() for cmd, arr in system.planner.anchors.items()},
        },
    )


def load_system(path):
    """Rebuild a DrivingSystem from a checkpoint file."""
    doc = load_checkpoint(path)
    if doc["meta"] is None or "config" not in doc["meta"]:
        raise KeyError(f"checkpoint {path} is missing its config metadata")
    config = RunConfig.from_dict(doc["meta"]["config"])
    system = DrivingSystem(config)
    system.load_state_dict(doc["params"])
    return system, config


def checkpoint_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
