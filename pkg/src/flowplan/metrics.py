"""Planning metrics: prefix-averaged L2 displacement, collision rate, and the
PDMS aggregate score.

L2 at horizon h is the mean of per-step Euclidean errors over all steps up to
h (1s -> steps 1-2, 2s -> steps 1-4, 3s -> all 6). Collision rate uses the
same prefix convention over the per-step fraction of runs that have collided
by that step (a run counts once it has hit anything).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulator import HORIZON, check_collision
from .tensor import ContractError

HORIZON_STEPS = {"1s": 2, "2s": 4, "3s": 6}


@dataclass
class PlanMetrics:
    l2_at: dict = field(default_factory=dict)      # horizon -> meters
    l2_avg: float = 0.0
    cr_at: dict = field(default_factory=dict)      # horizon -> percent
    cr_avg: float = 0.0


@dataclass
class PdmsSubscores:
    nc: float
    dac: float
    ep: float
    ttc: float
    comfort: float

    def __post_init__(self):
        for name in ("nc", "dac", "ep", "ttc", "comfort"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"PDMS subscore {name}={v} outside [0, 1]")


def per_step_errors(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape != (HORIZON, 2):
        raise ValueError(f"waypoint shape mismatch: {pred.shape} vs {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def l2_displacement(pred, gt):
    """Prefix-averaged displacement error at the 1s/2s/3s horizons."""
    errors = per_step_errors(pred, gt)
    l2_at = {h: float(errors[:n].mean()) for h, n in HORIZON_STEPS.items()}
    return l2_at, float(np.mean(list(l2_at.values())))


def collision_rate(runs):
    """Percent of runs collided, prefix-averaged per horizon.

    ``runs`` is a list of (waypoints, episode, tick). A run's first-collision
    step comes from the simulator's disc-overlap check; the per-step collided
    fraction is cumulative (count-once-per-run).
    """
    if not runs:
        raise ContractError("collision rate requires a non-empty run list")
    collided_by_step = np.zeros(HORIZON)
    for waypoints, episode, tick in runs:
        first = check_collision(waypoints, episode, tick)
        if first is not None:
            collided_by_step[first:] += 1.0
    fractions = collided_by_step / len(runs)
    cr_at = {h: float(fractions[:n].mean()) * 100.0 for h, n in HORIZON_STEPS.items()}
    return cr_at, float(np.mean(list(cr_at.values())))


def aggregate_plan_metrics(l2_values, cr_at, cr_avg):
    """Combine per-run L2 maps with collision rates into PlanMetrics."""
    l2_at = {
        h: float(np.mean([v[h] for v in l2_values])) for h in HORIZON_STEPS
    }
    return PlanMetrics(
        l2_at=l2_at,
        l2_avg=float(np.mean(list(l2_at.values()))),
        cr_at=cr_at,
        cr_avg=cr_avg,
    )


def pdms(subscores):
    """PDMS = NC * DAC * (5 (EP + TTC) + 2 C) / 12."""
    s = subscores
    return s.nc * s.dac * (5.0 * (s.ep + s.ttc) + 2.0 * s.comfort) / 12.0
