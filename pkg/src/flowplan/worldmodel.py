"""Flow-based dynamic latent world model.

Extracts a fused world latent from multi-view features and scene queries,
then models the latent transition to the next driving timestep as a
trajectory-conditioned velocity field. Training regresses the field onto
interpolation-path targets between a noised anchor and the next latent;
rollout integrates the field from the current latent with a discrete Euler
solver, collecting the per-step velocities for stability scoring.

A static one-step next-latent regressor with the same surface serves as the
ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Linear, MLP, Module, SelfAttentionBlock, mse, sinusoidal_embedding
from .simulator import HORIZON
from .tensor import ContractError, ShapeError, Tensor, concat


@dataclass
class WorldLatent:
    z: Tensor  # [n_queries, dim]
    timestep: int = 0


@dataclass
class AnchorState:
    a: Tensor
    alpha: float
    noise_seed: int


@dataclass
class ConditionEmbedding:
    h: Tensor  # [dim + traj_emb_dim]
    lambda_z: float
    lambda_T: float


@dataclass
class FlowSample:
    x_s: Tensor
    s: float
    target_velocity: Tensor


@dataclass
class VelocitySequence:
    velocities: list  # K tensors shaped like z, in integration order
    step_size: float

    def __post_init__(self):
        if len(self.velocities) < 1:
            raise ContractError("velocity sequence must contain at least one step")

    def as_arrays(self):
        return [v.data for v in self.velocities]


class WorldFeatureExtractor(Module):
    """Per-view projection MLP + cross-attention fusion with the scene queries."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.view_mlp = MLP([cfg.d_obs, cfg.dim, cfg.dim], rng)
        self.fuse_block = _residual_cross_attention(cfg.dim, rng)

    def __call__(self, raw_latents, scene_queries, timestep=0):
        feats = np.asarray(raw_latents, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.cfg.n_views:
            raise ShapeError(
                f"expected {self.cfg.n_views} views of dim {self.cfg.d_obs}, "
                f"got shape {feats.shape}"
            )
        projected = self.view_mlp(Tensor(feats))
        fused = self.fuse_block(scene_queries.queries, projected)
        return WorldLatent(z=fused, timestep=timestep)


def _residual_cross_attention(dim, rng):
    from .nn import CrossAttentionBlock

    return CrossAttentionBlock(dim, dim, rng)


def make_anchor(z_t, alpha, seed):
    """Noised anchor: (1 - alpha) * z + alpha * eps with seeded Gaussian eps.

    Endpoints are exact: alpha=0 returns the latent, alpha=1 the noise draw.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    z = z_t.z if isinstance(z_t, WorldLatent) else z_t
    if alpha == 0.0:
        return AnchorState(a=z, alpha=alpha, noise_seed=seed)
    eps = np.random.Generator(np.random.PCG64(seed)).standard_normal(z.shape)
    if alpha == 1.0:
        return AnchorState(a=Tensor(eps), alpha=alpha, noise_seed=seed)
    return AnchorState(a=z * (1.0 - alpha) + Tensor(eps * alpha), alpha=alpha,
                       noise_seed=seed)


def interpolate(anchor, z_next, s, target_convention="path_derivative"):
    """Linear interpolation x_s = (1 - s) a + s z_next, with its velocity target.

    ``path_derivative`` (default) uses the anchor-to-target displacement,
    the true derivative of the interpolation path, which keeps the Euler
    rollout consistent for any step count; ``time_scaled`` scales it by
    (1 - s). Targets are detached.
    """
    if not 0.0 <= s <= 1.0:
        raise ContractError(f"flow timestep s must lie in [0, 1], got {s}")
    z = z_next.z if isinstance(z_next, WorldLatent) else z_next
    if anchor.a.shape != z.shape:
        raise ShapeError(f"anchor shape {anchor.a.shape} vs target shape {z.shape}")
    if s == 0.0:
        x_s = anchor.a
    elif s == 1.0:
        x_s = z
    else:
        x_s = anchor.a * (1.0 - s) + z * s
    displacement = z.data - anchor.a.data
    if target_convention == "time_scaled":
        target = (1.0 - s) * displacement
    elif target_convention == "path_derivative":
        target = displacement
    else:
        raise ValueError(f"unknown target convention '{target_convention}'")
    return FlowSample(x_s=x_s, s=s, target_velocity=Tensor(target))


class FlowModel(Module):
    """Transformer-based velocity field with trajectory conditioning.

    ``invocation_count`` increments on every velocity evaluation; the
    evaluation harness asserts it stays at zero during inference.
    """

    def __init__(self, cfg, rng):
        self.cfg = cfg
        w = cfg.flow_width
        self.traj_emb = MLP([HORIZON * 2, cfg.traj_emb_dim, cfg.traj_emb_dim], rng)
        self.x_proj = Linear(cfg.dim, w, rng)
        self.cond_proj = Linear(cfg.dim + cfg.traj_emb_dim, w, rng)
        self.s_proj = Linear(cfg.s_embed_dim, w, rng)
        self.blocks = [SelfAttentionBlock(w, w, rng) for _ in range(cfg.flow_blocks)]
        self.out_proj = Linear(w, cfg.dim, rng)
        self.invocation_count = 0

    # -- conditioning --------------------------------------------------
    def fuse_condition(self, z_raw, trajectory, lambda_z=1.0, lambda_T=1.0):
        """Concat([lambda_z * pooled latent, lambda_T * TrajEmb(waypoints)])."""
        if lambda_z <= 0 or lambda_T < 0:
            raise ContractError("condition weights must be positive")
        z = z_raw.z if isinstance(z_raw, WorldLatent) else z_raw
        pooled = z.mean(axis=0)  # mean over query tokens
        waypoints = trajectory.waypoints if hasattr(trajectory, "waypoints") else trajectory
        if not isinstance(waypoints, Tensor):
            waypoints = Tensor(np.asarray(waypoints, dtype=np.float64))
        emb = self.traj_emb(waypoints.reshape(1, HORIZON * 2))[0]
        h = concat([pooled * lambda_z, emb * lambda_T], axis=0)
        return ConditionEmbedding(h=h, lambda_z=lambda_z, lambda_T=lambda_T)

    # -- velocity field ------------------------------------------------
    def predict_velocity(self, x_s, s, condition):
        """v = F(x_s, s, h): latent tokens + flow-time embedding + condition token."""
        if not 0.0 <= s <= 1.0:
            raise ContractError(f"flow timestep s must lie in [0, 1], got {s}")
        self.invocation_count += 1
        x = x_s.z if isinstance(x_s, WorldLatent) else x_s
        n_q = x.shape[0]
        s_tok = self.s_proj(Tensor(sinusoidal_embedding(s, self.cfg.s_embed_dim)
                                   .reshape(1, -1)))
        cond_tok = self.cond_proj(condition.h.reshape(1, -1))
        tokens = concat([self.x_proj(x), cond_tok], axis=0) + s_tok
        for block in self.blocks:
            tokens = block(tokens)
        return self.out_proj(tokens[0:n_q])

    # -- training objective --------------------------------------------
    def flow_matching_loss(self, batch, rng, target_convention="path_derivative",
                           alpha_policy="uniform", alpha_max=0.5, alpha_value=0.25):
        """Mean squared velocity-regression error over a batch.

        Each batch item is (z_t, z_next, [condition, ...]). The flow time s,
        the anchor strength alpha, and the anchor noise are drawn fresh per
        (item, condition) pair. Latent inputs and targets are detached, so
        the loss is differentiable with respect to the flow parameters only.
        """
        if not batch:
            raise ContractError("flow matching loss requires a non-empty batch")
        terms = []
        for z_t, z_next, conditions in batch:
            z0 = (z_t.z if isinstance(z_t, WorldLatent) else z_t).detach()
            z1 = (z_next.z if isinstance(z_next, WorldLatent) else z_next).detach()
            for condition in conditions:
                s = float(rng.uniform(0.0, 1.0))
                if alpha_policy == "uniform":
                    alpha = float(rng.uniform(0.0, alpha_max))
                elif alpha_policy == "fixed":
                    alpha = alpha_value
                else:
                    raise ValueError(f"unknown alpha policy '{alpha_policy}'")
                noise_seed = int(rng.integers(0, 2 ** 31))
                anchor = make_anchor(z0, alpha, noise_seed)
                sample = interpolate(anchor, z1, s, target_convention)
                v = self.predict_velocity(sample.x_s, sample.s, condition)
                terms.append(mse(v, sample.target_velocity))
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total * (1.0 / len(terms))

    # -- rollout -------------------------------------------------------
    def integrate_future(self, z_t, condition, K):
        """Euler rollout z <- z + (1/K) F(z, k/K, h) from the current latent.

        Returns the predicted next-timestep latent and all K velocities.
        """
        if K < 1:
            raise ContractError(f"integration step count K must be >= 1, got {K}")
        z = z_t.z if isinstance(z_t, WorldLatent) else z_t
        ds = 1.0 / K
        velocities = []
        for k in range(K):
            v = self.predict_velocity(z, k * ds, condition)
            velocities.append(v)
            z = z + v * ds
        timestep = (z_t.timestep + 1) if isinstance(z_t, WorldLatent) else 0
        return WorldLatent(z=z, timestep=timestep), VelocitySequence(velocities, ds)


class StaticWorldModel(Module):
    """One-step next-latent regressor: the static world-model baseline.

    Shares the flow model's conditioning and rollout surface but predicts the
    next latent in a single pass; its velocity sequence has length one, so
    the stability score degenerates to zero.
    """

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self._field = FlowModel(cfg, rng)
        self.invocation_count = 0

    def named_parameters(self, prefix=""):
        yield from self._field.named_parameters(prefix=prefix + "_field.")

    def fuse_condition(self, z_raw, trajectory, lambda_z=1.0, lambda_T=1.0):
        return self._field.fuse_condition(z_raw, trajectory, lambda_z, lambda_T)

    def predict_velocity(self, x_s, s, condition):
        self.invocation_count += 1
        self._field.invocation_count = 0  # counted once at this surface
        return self._field.predict_velocity(x_s, s, condition)

    def flow_matching_loss(self, *args, **kwargs):
        raise ContractError("static world model has no flow matching objective")

    def integrate_future(self, z_t, condition, K):
        # K is accepted for interface parity but a single regression step is taken
        z = z_t.z if isinstance(z_t, WorldLatent) else z_t
        v = self.predict_velocity(z, 0.0, condition)
        timestep = (z_t.timestep + 1) if isinstance(z_t, WorldLatent) else 0
        return WorldLatent(z=z + v, timestep=timestep), VelocitySequence([v], 1.0)
