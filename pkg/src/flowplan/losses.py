"""Training losses: trajectory L1, score cross-entropy, latent reconstruction,
and their weighted combination."""

from __future__ import annotations

import numpy as np

from .nn import cross_entropy, l1, mse
from .tensor import ContractError, Tensor, stack


def trajectory_loss(trajectory_set, gt_waypoints, n_star, all_modes=False):
    """L1 waypoint loss, winner-take-all on mode n* (optionally all modes)."""
    gt = Tensor(np.asarray(gt_waypoints, dtype=np.float64))
    if all_modes:
        terms = [l1(m.waypoints, gt) for m in trajectory_set.modes]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total * (1.0 / len(terms))
    return l1(trajectory_set.modes[n_star].waypoints, gt)


def score_loss(trajectory_set, n_star):
    """Cross-entropy of the mode logits against the optimal-mode label."""
    logits = stack([m.score_logit for m in trajectory_set.modes])
    return cross_entropy(logits, n_star)


def reconstruction_loss(z_pred, z_target):
    """MSE between predicted and target world latents; the target is detached."""
    return mse(z_pred.z, z_target.z.detach())


def total_loss(traj_l, score_l, rec_l, flow_l, weights):
    """L = L_traj + lambda_score L_score + lambda_rec L_rec + lambda_flow L_flow."""
    for name, component in (("traj", traj_l), ("score", score_l),
                            ("rec", rec_l), ("flow", flow_l)):
        if not np.isfinite(component.data).all():
            raise ContractError(f"non-finite {name} loss component")
    return (traj_l
            + score_l * weights.lambda_score
            + rec_l * weights.lambda_rec
            + flow_l * weights.lambda_flow)
