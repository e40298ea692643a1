"""Scikit-learn style estimator facade.

Wraps dataset handling, training, and inference behind fit/predict/score so
the planner composes with the wider ecosystem (cloning, grid search, and
pipelines via get_params/set_params).
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .harness import evaluate
from .simulator import Episode
from .trainer import load_system, train


def check_episodes(X):
    """Validate that X is a non-empty sequence of Episode objects."""
    if isinstance(X, Episode):
        X = [X]
    episodes = list(X)
    if not episodes:
        raise ValueError("expected a non-empty sequence of episodes")
    for item in episodes:
        if not isinstance(item, Episode):
            raise TypeError(
                f"expected Episode instances, got {type(item).__name__}"
            )
    return episodes


class FlowPlanRegressor(BaseEstimator):
    """Multi-mode trajectory planner trained with a flow-based world model.

    Parameters
    ----------
    n_modes : int
        Candidate trajectory modes per command.
    integration_steps : int
        Euler steps K used by the world-model rollout during training.
    target_convention : str
        Flow-matching target, "time_scaled" or "path_derivative".
    stability_weight : float
        Weight of the angular-stability term in the mode-selection criterion.
    world_model : str
        "flow" for the dynamic model, "static" for one-step regression.
    epochs, batch_size, learning_rate, seed
        Optimization settings.
    """

    def __init__(self, n_modes=6, integration_steps=5,
                 target_convention="path_derivative", stability_weight=0.5,
                 world_model="flow", epochs=6, batch_size=16,
                 learning_rate=1e-4, seed=0, work_dir=None):
        self.n_modes = n_modes
        self.integration_steps = integration_steps
        self.target_convention = target_convention
        self.stability_weight = stability_weight
        self.world_model = world_model
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.work_dir = work_dir

    def _build_config(self):
        config = RunConfig()
        config.model.n_modes = self.n_modes
        config.flow.K = self.integration_steps
        config.flow.target_convention = self.target_convention
        config.selection.lambda_theta = self.stability_weight
        config.world_model = self.world_model
        config.train.epochs = self.epochs
        config.train.batch_size = self.batch_size
        config.train.learning_rate = self.learning_rate
        config.train.seed = self.seed
        return config

    def fit(self, X, y=None):
        """Train on a sequence of episodes (expert trajectories are the targets)."""
        episodes = check_episodes(X)
        config = self._build_config()
        work_dir = Path(self.work_dir) if self.work_dir else Path(
            tempfile.mkdtemp(prefix="flowplan-")
        )
        ckpt, records = train(config, episodes, out_dir=work_dir)
        self.system_, self.config_ = load_system(ckpt)
        self.checkpoint_path_ = ckpt
        self.history_ = records
        self.is_fitted_ = True
        return self

    def predict(self, X):
        """Planned waypoints [n_samples, H, 2] for tick 0 of each episode."""
        check_is_fitted(self, "is_fitted_")
        episodes = check_episodes(X)
        return np.stack(
            [self.system_.infer(ep, 0).waypoints_array for ep in episodes]
        )

    def score(self, X, y=None):
        """Negative average L2 displacement error (higher is better)."""
        check_is_fitted(self, "is_fitted_")
        episodes = check_episodes(X)
        report = evaluate(self.system_, episodes)
        return -report["l2_avg"]
