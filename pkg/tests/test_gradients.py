"""Analytic-vs-finite-difference gradient checks for every learned block."""

import numpy as np
import pytest

from flowplan.config import ModelConfig
from flowplan.nn import CrossAttentionBlock, Linear, MLP, mse
from flowplan.tensor import Tensor
from flowplan.worldmodel import FlowModel, make_anchor, interpolate

from gradcheck import finite_diff_check


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@pytest.mark.parametrize("seed", range(40))
def test_linear_layer(seed):
    rng = _rng(seed)
    layer = Linear(3, 2, rng)
    x = Tensor(rng.normal(size=(4, 3)))
    finite_diff_check(lambda: (layer(x).tanh() ** 2).sum(), layer.parameters())


@pytest.mark.parametrize("seed", range(30))
def test_mlp(seed):
    rng = _rng(100 + seed)
    net = MLP([3, 4, 2], rng)
    x = Tensor(rng.normal(size=(2, 3)))
    target = Tensor(rng.normal(size=(2, 2)))
    finite_diff_check(lambda: mse(net(x), target), net.parameters())


@pytest.mark.parametrize("seed", range(20))
def test_cross_attention_block(seed):
    rng = _rng(200 + seed)
    block = CrossAttentionBlock(3, 4, rng)
    q = Tensor(rng.normal(size=(2, 3)))
    ctx = Tensor(rng.normal(size=(3, 4)))
    finite_diff_check(lambda: (block(q, ctx) ** 2).sum(), block.parameters())


@pytest.mark.parametrize("seed", range(10))
def test_velocity_network(seed):
    rng = _rng(300 + seed)
    cfg = ModelConfig(n_queries=2, dim=3, traj_emb_dim=3, flow_width=6,
                      flow_blocks=1, s_embed_dim=4)
    model = FlowModel(cfg, rng)
    x = Tensor(rng.normal(size=(2, 3)))
    waypoints = rng.normal(size=(6, 2))
    target = Tensor(rng.normal(size=(2, 3)))

    def loss_fn():
        cond = model.fuse_condition(x.detach(), waypoints)
        return mse(model.predict_velocity(x, 0.37, cond), target)

    finite_diff_check(loss_fn, model.parameters())


@pytest.mark.parametrize("seed", range(5))
def test_flow_matching_loss_gradient(seed):
    # end-to-end check through anchor construction and interpolation on a
    # small two-block field
    rng = _rng(400 + seed)
    cfg = ModelConfig(n_queries=2, dim=3, traj_emb_dim=3, flow_width=5,
                      flow_blocks=2, s_embed_dim=4)
    model = FlowModel(cfg, rng)
    z_t = Tensor(rng.normal(size=(2, 3)))
    z_next = Tensor(rng.normal(size=(2, 3)))
    waypoints = rng.normal(size=(6, 2))

    def loss_fn():
        cond = model.fuse_condition(z_t, waypoints)
        anchor = make_anchor(z_t, 0.3, seed)
        sample = interpolate(anchor, z_next, 0.42)
        return mse(model.predict_velocity(sample.x_s, sample.s, cond),
                   sample.target_velocity)

    finite_diff_check(loss_fn, model.parameters())
