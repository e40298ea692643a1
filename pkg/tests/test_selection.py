import math

import numpy as np
import pytest

from flowplan.config import ModelConfig
from flowplan.planner import Planner
from flowplan.selection import (ModeAssessment, SelectionWeights, assess_modes,
                                mode_criterion, select_best_mode,
                                stability_score, trajectory_error)
from flowplan.tensor import ContractError, Tensor
from flowplan.worldmodel import FlowModel, VelocitySequence, WorldLatent


def _seq(vectors):
    return VelocitySequence([Tensor(np.asarray(v, dtype=np.float64))
                             for v in vectors], 1.0 / len(vectors))


class TestStabilityScore:
    def test_single_step_is_zero(self):
        assert stability_score(_seq([[1.0, 0.0]])) == 0.0

    def test_parallel_steps_are_zero(self):
        # same direction at different magnitudes: every angle term is acos(1)
        assert stability_score(_seq([[2.0, 0.0], [0.5, 0.0], [7.0, 0.0]])) == 0.0

    def test_known_angles_average(self):
        # 0 deg then 45 deg then 90 deg headings: consecutive deviations are
        # pi/4 and pi/4, so the mean is pi/4 (hand-derived)
        seq = _seq([[1.0, 0.0],
                    [math.sqrt(0.5), math.sqrt(0.5)],
                    [0.0, 1.0]])
        assert stability_score(seq) == pytest.approx(math.pi / 4, rel=1e-12)

    def test_orthogonal_pair(self):
        assert stability_score(_seq([[3.0, 0.0], [0.0, 0.1]])) == pytest.approx(
            math.pi / 2, rel=1e-12)

    def test_opposite_pair(self):
        # acos is square-root sensitive near -1, so the tolerance is absolute
        assert stability_score(_seq([[1.0, 1.0], [-2.0, -2.0]])) == pytest.approx(
            math.pi, abs=1e-6)

    def test_magnitude_invariance(self):
        rng = np.random.default_rng(0)
        vecs = [rng.normal(size=5) for _ in range(4)]
        scales = [0.01, 3.0, 100.0, 0.5]
        base = stability_score(_seq(vecs))
        scaled = stability_score(_seq([s * v for s, v in zip(scales, vecs)]))
        assert scaled == pytest.approx(base, rel=1e-10)

    def test_zero_norm_step_carries_previous_direction(self):
        # middle step vanishes: it inherits the first direction, so the two
        # angle terms are acos(1)=0 and acos(0)=pi/2, mean pi/4
        seq = _seq([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        assert stability_score(seq) == pytest.approx(math.pi / 4, rel=1e-12)

    def test_all_zero_sequence_scores_zero(self):
        assert stability_score(_seq([[0.0, 0.0], [0.0, 0.0]])) == 0.0

    def test_matrix_velocities_are_flattened(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[0.0, 1.0], [0.0, 0.0]])
        seq = VelocitySequence([Tensor(a), Tensor(b)], 0.5)
        assert stability_score(seq) == pytest.approx(math.pi / 2, rel=1e-12)


class TestModeCriterion:
    def test_hand_computed_weighted_sum(self):
        w = SelectionWeights(lambda_rec=0.2, lambda_traj=0.3, lambda_theta=0.5)
        # 0.2 * 1 + 0.3 * 1 + 0.5 * 1 = 1.0
        assert mode_criterion(1.0, 1.0, 1.0, w) == pytest.approx(1.0, rel=1e-15)

    def test_default_weights(self):
        w = SelectionWeights()
        assert mode_criterion(2.0, 3.0, 4.0, w) == pytest.approx(
            1.0 * 3.0 + 1.0 * 2.0 + 0.5 * 4.0)

    def test_monotone_in_each_term(self):
        w = SelectionWeights()
        base = mode_criterion(1.0, 1.0, 1.0, w)
        assert mode_criterion(1.5, 1.0, 1.0, w) > base
        assert mode_criterion(1.0, 1.5, 1.0, w) > base
        assert mode_criterion(1.0, 1.0, 1.5, w) > base

    def test_rejects_bad_terms(self):
        w = SelectionWeights()
        with pytest.raises(ContractError, match="traj_err"):
            mode_criterion(-1.0, 0.0, 0.0, w)
        with pytest.raises(ContractError, match="stability"):
            mode_criterion(0.0, 0.0, float("nan"), w)

    def test_weight_validation(self):
        with pytest.raises(ContractError):
            SelectionWeights(lambda_rec=-0.1)
        with pytest.raises(ContractError):
            SelectionWeights(0.0, 0.0, 0.0)


class TestSelectBestMode:
    def _assessment(self, c):
        return ModeAssessment(traj_err=0.0, rec_err=0.0, stability=0.0, criterion=c)

    def test_argmin(self):
        assessments = [self._assessment(c) for c in (0.9, 0.2, 0.5)]
        assert select_best_mode(assessments) == 1

    def test_tie_breaks_low_index(self):
        assessments = [self._assessment(c) for c in (0.4, 0.4, 0.4)]
        assert select_best_mode(assessments) == 0

    def test_empty(self):
        with pytest.raises(ContractError):
            select_best_mode([])


def test_trajectory_error_closed_form():
    # every waypoint offset by (3, 4): each distance is 5, so the mean is 5
    gt = np.zeros((6, 2))
    pred = gt + np.array([3.0, 4.0])
    assert trajectory_error(pred, gt) == pytest.approx(5.0, rel=1e-15)
    assert trajectory_error(gt, gt) == 0.0


class TestAssessModes:
    def _setup(self, seed=0):
        cfg = ModelConfig()
        rng = np.random.Generator(np.random.PCG64(seed))
        planner = Planner(cfg, rng)
        model = FlowModel(cfg, np.random.Generator(np.random.PCG64(seed + 1)))
        feats = np.random.default_rng(seed + 2).normal(size=(cfg.n_views, cfg.d_obs))
        ts = planner.decode_trajectories(planner.encode_scene(feats), "straight")
        z_rng = np.random.default_rng(seed + 3)
        z_t = WorldLatent(Tensor(z_rng.normal(size=(cfg.n_queries, cfg.dim))))
        z_next = WorldLatent(Tensor(z_rng.normal(size=(cfg.n_queries, cfg.dim))))
        gt = z_rng.normal(size=(6, 2))
        return cfg, ts, z_t, z_next, gt, model

    def test_returns_one_assessment_per_mode_and_valid_index(self):
        cfg, ts, z_t, z_next, gt, model = self._setup()
        weights = SelectionWeights()
        assessments, n_star = assess_modes(ts, z_t, z_next, gt, model, weights, K=3)
        assert len(assessments) == cfg.n_modes
        assert 0 <= n_star < cfg.n_modes
        assert n_star == select_best_mode(assessments)
        for a in assessments:
            assert a.criterion == pytest.approx(
                mode_criterion(a.traj_err, a.rec_err, a.stability, weights))

    def test_runs_without_recording_gradients(self):
        _, ts, z_t, z_next, gt, model = self._setup(seed=5)
        before = {name: None if p.grad is None else p.grad.copy()
                  for name, p in model.named_parameters()}
        assess_modes(ts, z_t, z_next, gt, model, SelectionWeights(), K=2)
        for name, p in model.named_parameters():
            assert (p.grad is None) == (before[name] is None)

    def test_gt_matching_mode_wins_under_pure_trajectory_weighting(self):
        _, ts, z_t, z_next, _, model = self._setup(seed=7)
        weights = SelectionWeights(lambda_rec=0.0, lambda_traj=1.0,
                                   lambda_theta=0.0)
        # use mode 2's own waypoints as the ground truth: its error is 0
        gt = ts.modes[2].waypoints.data.copy()
        assessments, n_star = assess_modes(ts, z_t, z_next, gt, model, weights, K=2)
        assert n_star == 2
        assert assessments[2].traj_err == 0.0

    def test_deterministic(self):
        _, ts, z_t, z_next, gt, model = self._setup(seed=9)
        a1, n1 = assess_modes(ts, z_t, z_next, gt, model, SelectionWeights(), K=4)
        a2, n2 = assess_modes(ts, z_t, z_next, gt, model, SelectionWeights(), K=4)
        assert n1 == n2
        for x, y in zip(a1, a2):
            assert x == y
