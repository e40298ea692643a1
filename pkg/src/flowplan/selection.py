"""Stability-aware multi-mode selection.

Each candidate mode is assessed by rolling the world model forward under that
mode's trajectory condition. The assessment combines trajectory error to the
ground truth, latent reconstruction error, and the angular stability of the
integration velocities into a single criterion; the argmin mode supervises
the planner's score head. Used at training time only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, no_grad

_CLAMP_TOL = 1e-12


@dataclass
class SelectionWeights:
    lambda_rec: float = 1.0
    lambda_traj: float = 1.0
    lambda_theta: float = 0.5

    def __post_init__(self):
        if min(self.lambda_rec, self.lambda_traj, self.lambda_theta) < 0:
            raise ContractError("selection weights must be non-negative")
        if self.lambda_rec == self.lambda_traj == self.lambda_theta == 0:
            raise ContractError("at least one selection weight must be positive")


@dataclass
class ModeAssessment:
    traj_err: float
    rec_err: float
    stability: float
    criterion: float


def stability_score(velocity_sequence):
    """Mean angular deviation between consecutive normalized velocities.

    Each velocity is flattened to a single vector before normalization. A
    single-step sequence scores 0 (no consecutive pair). Zero-norm steps
    carry the previous direction; angle terms without a defined pair are
    skipped and the mean renormalized.
    """
    flats = [v.ravel() for v in velocity_sequence.as_arrays()]
    if len(flats) < 2:
        return 0.0
    directions = []
    last = None
    for v in flats:
        norm = np.linalg.norm(v)
        if norm < _CLAMP_TOL:
            directions.append(last)
        else:
            last = v / norm
            directions.append(last)
    angles = []
    for prev, cur in zip(directions, directions[1:]):
        if prev is None or cur is None:
            continue
        dot = float(np.clip(np.dot(prev, cur), -1.0, 1.0))
        # acos amplifies 1-ulp normalization noise to ~1e-8 near dot=1, so
        # collinear steps would never score exactly zero without this snap
        angles.append(0.0 if dot >= 1.0 - 1e-12 else math.acos(dot))
    if not angles:
        return 0.0
    return float(np.mean(angles))


def mode_criterion(traj_err, rec_err, stability, weights):
    """Weighted sum of reconstruction, trajectory, and stability terms."""
    for name, value in (("traj_err", traj_err), ("rec_err", rec_err),
                        ("stability", stability)):
        if not np.isfinite(value) or value < 0:
            raise ContractError(f"{name} must be finite and non-negative, got {value}")
    return (weights.lambda_rec * rec_err
            + weights.lambda_traj * traj_err
            + weights.lambda_theta * stability)


def select_best_mode(assessments):
    """Index of the minimum criterion; ties resolve to the lowest index."""
    if not assessments:
        raise ContractError("cannot select from an empty assessment list")
    criteria = np.array([a.criterion for a in assessments])
    return int(np.argmin(criteria))


def trajectory_error(waypoints, gt_waypoints):
    """Mean per-waypoint Euclidean distance, meters."""
    diff = np.asarray(waypoints) - np.asarray(gt_waypoints)
    return float(np.mean(np.linalg.norm(diff, axis=-1)))


def assess_modes(trajectory_set, z_t, z_next_target, gt_waypoints, world_model,
                 weights, K, lambda_z=1.0, lambda_T=1.0):
    """Assess every mode by a conditioned rollout; returns assessments and n*.

    Runs without gradient recording: n* is a label, not a differentiable
    quantity. Modes are processed in index order so results are deterministic.
    """
    assessments = []
    target = z_next_target.z.data
    with no_grad():
        for mode in trajectory_set.modes:
            condition = world_model.fuse_condition(z_t, mode, lambda_z, lambda_T)
            z_pred, velocities = world_model.integrate_future(z_t, condition, K)
            rec_err = float(np.mean((z_pred.z.data - target) ** 2))
            traj_err = trajectory_error(mode.waypoints_array, gt_waypoints)
            stability = stability_score(velocities)
            assessments.append(
                ModeAssessment(
                    traj_err=traj_err,
                    rec_err=rec_err,
                    stability=stability,
                    criterion=mode_criterion(traj_err, rec_err, stability, weights),
                )
            )
    return assessments, select_best_mode(assessments)
