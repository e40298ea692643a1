"""Multi-mode trajectory planner.

Scene queries aggregate multi-view observation features via cross-attention;
per-command trajectory queries attend to the scene queries and two MLP heads
emit waypoint residuals on top of analytic anchor templates plus one
confidence logit per mode. Inference picks the argmax-logit mode and never
touches the world model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import CrossAttentionBlock, Linear, MLP, Module
from .simulator import COMMANDS, DT, HORIZON
from .tensor import ContractError, ShapeError, Tensor, stack


@dataclass
class SceneQueries:
    queries: Tensor  # [n_queries, dim]


@dataclass
class TrajectoryMode:
    waypoints: Tensor  # [H, 2] ego frame, meters
    score_logit: Tensor  # scalar

    @property
    def waypoints_array(self):
        return self.waypoints.data


@dataclass
class TrajectorySet:
    modes: list
    command: str
    anchors: np.ndarray  # [n_modes, H, 2] pre-refinement templates

    @property
    def logits(self):
        return np.array([m.score_logit.item() for m in self.modes])


def make_anchor_templates(n_modes, speed=6.0):
    """Analytic per-command anchor templates: arcs at graded curvatures.

    Each command gets ``n_modes`` templates spanning its maneuver family,
    always including a slow and a stop-like option.
    """
    templates = {}
    for command in COMMANDS:
        if command == "straight":
            curvatures = np.linspace(-0.02, 0.02, n_modes - 1).tolist()
        elif command == "left":
            curvatures = np.linspace(0.01, 0.06, n_modes - 1).tolist()
        else:
            curvatures = np.linspace(-0.06, -0.01, n_modes - 1).tolist()
        rows = []
        for i, kappa in enumerate(curvatures):
            v = speed * (0.6 + 0.4 * i / max(len(curvatures) - 1, 1))
            rows.append(_arc_waypoints(kappa, v))
        rows.append(_arc_waypoints(0.0, speed * 0.15))  # near-stop template
        templates[command] = np.stack(rows)
    return templates


def _arc_waypoints(curvature, speed):
    pts = np.empty((HORIZON, 2))
    x = y = heading = 0.0
    for j in range(HORIZON):
        heading += curvature * speed * DT
        x += speed * DT * math.cos(heading)
        y += speed * DT * math.sin(heading)
        pts[j] = (x, y)
    return pts


class Planner(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        d, n_q = cfg.dim, cfg.n_queries
        self.scene_queries = Tensor(
            rng.normal(0.0, 0.2, size=(n_q, d)), requires_grad=True
        )
        self.view_proj = Linear(cfg.d_obs, d, rng)
        self.scene_block = CrossAttentionBlock(d, d, rng)
        self.mode_queries = {
            cmd: Tensor(rng.normal(0.0, 0.2, size=(cfg.n_modes, d)), requires_grad=True)
            for cmd in COMMANDS
        }
        self.decoder_blocks = [
            CrossAttentionBlock(d, d, rng) for _ in range(cfg.decoder_depth)
        ]
        self.traj_head = MLP([d, 2 * d, HORIZON * 2], rng)
        self.score_head = MLP([d, d, 1], rng)
        self.anchors = make_anchor_templates(cfg.n_modes)

    def encode_scene(self, observation_features):
        """Cross-attend the learnable scene queries over projected view features."""
        feats = np.asarray(observation_features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.cfg.d_obs:
            raise ShapeError(
                f"expected [{self.cfg.n_views} x {self.cfg.d_obs}] features, "
                f"got shape {feats.shape}"
            )
        context = self.view_proj(Tensor(feats))
        return SceneQueries(self.scene_block(self.scene_queries, context))

    def decode_trajectories(self, scene, command):
        if command not in COMMANDS:
            raise KeyError(f"unknown command '{command}', expected one of {COMMANDS}")
        q = self.mode_queries[command]
        for block in self.decoder_blocks:
            q = block(q, scene.queries)
        residuals = self.traj_head(q)  # [n_modes, H*2]
        logits = self.score_head(q)    # [n_modes, 1]
        anchors = self.anchors[command]
        modes = []
        for n in range(self.cfg.n_modes):
            raw = Tensor(anchors[n]) + residuals[n].reshape(HORIZON, 2)
            modes.append(
                TrajectoryMode(
                    waypoints=self._clamp_displacements(raw),
                    score_logit=logits[n, 0],
                )
            )
        return TrajectorySet(modes=modes, command=command, anchors=anchors.copy())

    def _clamp_displacements(self, waypoints):
        """Rescale each consecutive displacement to at most v_max * dt."""
        bound = self.cfg.v_max * DT
        prev = Tensor(np.zeros(2))
        out = []
        for j in range(HORIZON):
            d = waypoints[j] - prev
            norm = ((d * d).sum() + 1e-12) ** 0.5
            factor = bound / norm.maximum(bound)
            prev = prev + d * factor
            out.append(prev)
        return stack(out)


def select_output(trajectory_set):
    """Argmax-logit mode; ties resolve to the lowest index. Pure function."""
    if not trajectory_set.modes:
        raise ContractError("cannot select from an empty trajectory set")
    return trajectory_set.modes[int(np.argmax(trajectory_set.logits))]
