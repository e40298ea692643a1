"""Run configuration: a single nested dataclass, loadable from JSON or TOML.

The config file is the source of truth for a run; CLI ``--set key=value``
overrides use dotted paths and are recorded in the run manifest.
"""

from __future__ import annotations

import dataclasses
import json

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ModelConfig:
    n_queries: int = 4          # scene query tokens
    dim: int = 32               # query / world-latent width
    d_obs: int = 32             # observation feature width per view
    n_views: int = 2
    n_modes: int = 6
    decoder_depth: int = 1
    v_max: float = 20.0         # waypoint displacement clamp, m/s
    traj_emb_dim: int = 32
    flow_width: int = 64
    flow_blocks: int = 2
    s_embed_dim: int = 16


@dataclass
class FlowConfig:
    K: int = 5                              # Euler integration steps
    target_convention: str = "path_derivative"  # or "time_scaled"
    alpha_policy: str = "uniform"           # "uniform" in [0, alpha_max] or "fixed"
    alpha_max: float = 0.5
    alpha_value: float = 0.25
    lambda_z: float = 1.0
    lambda_T: float = 1.0


@dataclass
class SelectionConfig:
    lambda_rec: float = 1.0
    lambda_traj: float = 1.0
    lambda_theta: float = 0.5


@dataclass
class LossConfig:
    lambda_score: float = 0.5
    lambda_rec: float = 0.2
    lambda_flow: float = 0.1
    traj_all_modes: bool = False  # winner-take-all by default


@dataclass
class TrainSection:
    epochs: int = 6
    batch_size: int = 16
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    grad_clip: float = 5.0
    seed: int = 0
    samples_per_episode: int = 4  # plannable ticks drawn per episode per epoch


@dataclass
class DataConfig:
    scenario: str = "mixed"
    episodes: int = 200
    ticks: int = 16
    base_seed: int = 1000
    split: tuple = (0.7, 0.1, 0.2)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataConfig = field(default_factory=DataConfig)
    world_model: str = "flow"  # or "static" (one-step next-latent regressor)

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["data"]["split"] = list(doc["data"]["split"])
        return doc

    @classmethod
    def from_dict(cls, doc):
        cfg = cls()
        sections = {
            "model": ModelConfig,
            "flow": FlowConfig,
            "selection": SelectionConfig,
            "loss": LossConfig,
            "train": TrainSection,
            "data": DataConfig,
        }
        for name, section_cls in sections.items():
            if name in doc:
                known = {f.name for f in dataclasses.fields(section_cls)}
                unknown = set(doc[name]) - known
                if unknown:
                    raise KeyError(f"unknown config keys in [{name}]: {sorted(unknown)}")
                values = dict(doc[name])
                if name == "data" and "split" in values:
                    values["split"] = tuple(values["split"])
                setattr(cfg, name, section_cls(**values))
        if "world_model" in doc:
            if doc["world_model"] not in ("flow", "static"):
                raise ValueError(f"unknown world_model '{doc['world_model']}'")
            cfg.world_model = doc["world_model"]
        return cfg


def load_config(path):
    path = Path(path)
    if path.suffix == ".toml":
        doc = tomllib.loads(path.read_text())
    else:
        doc = json.loads(path.read_text())
    return RunConfig.from_dict(doc)


def _parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config, overrides):
    """Apply ``section.key=value`` overrides in place; returns the parsed pairs."""
    applied = {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override '{item}' is not of the form key=value")
        dotted, raw = item.split("=", 1)
        value = _parse_value(raw)
        parts = dotted.split(".")
        target = config
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise KeyError(f"unknown config section '{part}' in '{dotted}'")
            target = getattr(target, part)
        leaf = parts[-1]
        if not hasattr(target, leaf):
            raise KeyError(f"unknown config key '{dotted}'")
        current = getattr(target, leaf)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(target, leaf, value)
        applied[dotted] = value
    return applied
