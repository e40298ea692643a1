"""Deterministic 2D driving simulator.

Generates episodes with an ego vehicle on a straight multi-lane road, moving
obstacles, a collision-free expert trajectory, and per-timestep observation
feature vectors that stand in for camera-derived latents. Everything is a
pure function of the episode seed, so regenerating an episode reproduces it
bit-exactly.

Conventions:
    - world frame: x forward along the road, y lateral (left positive)
    - dt = 0.5 s between ticks, planning horizon H = 6 waypoints (3 s)
    - ego and obstacles are discs; collision = disc overlap
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

DT = 0.5
HORIZON = 6
COMMANDS = ("left", "right", "straight")
R_EGO = 1.0
LANE_WIDTH = 3.5
OBS_FEATURE_SEED = 20240601  # fixed basis for the observation projection
MAX_TRACKED_OBSTACLES = 4
STATE_DIM = 5 + 4 * MAX_TRACKED_OBSTACLES

_OBSTACLE_RADII = {"vehicle": 1.0, "pedestrian": 0.4, "static": 0.8}


class GenerationError(RuntimeError):
    """No collision-free expert path was found for this seed."""

    def __init__(self, seed, message):
        super().__init__(f"seed {seed}: {message}")
        self.seed = seed


class BoundsError(IndexError):
    """Tick index outside the valid episode range."""


def normalize_angle(a):
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass
class EgoState:
    x: float
    y: float
    heading: float
    speed: float


@dataclass
class Obstacle:
    trajectory: np.ndarray  # [ticks, 2]
    radius: float
    kind: str


@dataclass
class ScenarioConfig:
    name: str = "mixed"
    ticks: int = 16
    n_obstacles_min: int = 1
    n_obstacles_max: int = 3
    ego_speed_min: float = 4.0
    ego_speed_max: float = 9.0
    obstacle_speed_max: float = 7.0
    map_length: float = 150.0
    lane_bound: float = 1.5 * LANE_WIDTH  # drivable |y| limit for DAC
    max_retries: int = 30


@dataclass
class Episode:
    id: str
    seed: int
    ticks: int
    command: str
    ego_states: list  # EgoState per tick
    obstacles: list  # Obstacle
    expert_trajectory: np.ndarray  # [ticks, H, 2] ego-frame waypoints
    observation_features: np.ndarray  # [ticks, V, d_obs]
    lane_bound: float = 1.5 * LANE_WIDTH

    @property
    def last_plannable_tick(self):
        # check_collision needs obstacle positions up to t + H
        return self.ticks - HORIZON - 1

    def to_dict(self):
        return {
            "id": self.id,
            "seed": self.seed,
            "ticks": self.ticks,
            "command": self.command,
            "lane_bound": self.lane_bound,
            "ego_states": [[s.x, s.y, s.heading, s.speed] for s in self.ego_states],
            "obstacles": [
                {
                    "trajectory": o.trajectory.tolist(),
                    "radius": o.radius,
                    "kind": o.kind,
                }
                for o in self.obstacles
            ],
            "expert_trajectory": self.expert_trajectory.tolist(),
            "observation_features": self.observation_features.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            id=doc["id"],
            seed=doc["seed"],
            ticks=doc["ticks"],
            command=doc["command"],
            lane_bound=doc["lane_bound"],
            ego_states=[EgoState(*row) for row in doc["ego_states"]],
            obstacles=[
                Obstacle(
                    trajectory=np.asarray(o["trajectory"], dtype=np.float64),
                    radius=o["radius"],
                    kind=o["kind"],
                )
                for o in doc["obstacles"]
            ],
            expert_trajectory=np.asarray(doc["expert_trajectory"], dtype=np.float64),
            observation_features=np.asarray(
                doc["observation_features"], dtype=np.float64
            ),
        )


# ----------------------------------------------------------------------
# observation features

def _observation_basis(n_views, d_obs):
    rng = np.random.Generator(np.random.PCG64(OBS_FEATURE_SEED))
    scale = 0.5 / math.sqrt(STATE_DIM)
    weights = rng.normal(0.0, scale, size=(n_views, d_obs, STATE_DIM))
    biases = rng.normal(0.0, 0.1, size=(n_views, d_obs))
    return weights, biases


def _privileged_state(ego, obstacle_positions, obstacle_velocities, radii, command):
    """Smooth state vector; all-zero for an empty scene at rest on the centerline."""
    state = np.zeros(STATE_DIM)
    state[0] = ego.speed / 10.0
    state[1] = ego.y / 5.0
    state[2] = ego.heading
    if command == "left":
        state[3] = 1.0
    elif command == "right":
        state[4] = 1.0
    cos_h, sin_h = math.cos(ego.heading), math.sin(ego.heading)
    for i in range(min(len(obstacle_positions), MAX_TRACKED_OBSTACLES)):
        dx = obstacle_positions[i][0] - ego.x
        dy = obstacle_positions[i][1] - ego.y
        rx = cos_h * dx + sin_h * dy
        ry = -sin_h * dx + cos_h * dy
        w = 1.0 / (1.0 + (rx * rx + ry * ry) / 400.0)
        base = 5 + 4 * i
        state[base + 0] = rx * w / 10.0
        state[base + 1] = ry * w / 10.0
        state[base + 2] = obstacle_velocities[i][0] / 10.0
        state[base + 3] = obstacle_velocities[i][1] / 10.0
    return state


def compute_observation(ego, obstacles_at_t, obstacle_velocities, command,
                        n_views, d_obs):
    weights, biases = _observation_basis(n_views, d_obs)
    radii = None
    state = _privileged_state(ego, obstacles_at_t, obstacle_velocities, radii, command)
    return weights @ state + biases


def observe(episode, t):
    """Observation feature vectors (one per simulated view) at tick ``t``."""
    if not 0 <= t < episode.ticks:
        raise BoundsError(f"tick {t} outside [0, {episode.ticks})")
    return episode.observation_features[t]


# ----------------------------------------------------------------------
# episode generation

def _target_offset(command):
    return {"left": LANE_WIDTH, "right": -LANE_WIDTH, "straight": 0.0}[command]


def _rollout_ego(rng, scenario, command, total_ticks, lead=None):
    """Kinematic rollout of the expert policy.

    Heading is steered by a PD law toward the command's target lane; position
    advances by speed * dt along the updated heading, so per-tick displacement
    magnitude equals the arrival state's speed times dt exactly.
    """
    cruise = rng.uniform(scenario.ego_speed_min, scenario.ego_speed_max)
    speed0 = cruise * rng.uniform(0.7, 1.0)
    states = [EgoState(0.0, rng.uniform(-0.3, 0.3), 0.0, speed0)]
    target_y = _target_offset(command)
    accel_limit = 1.5
    for t in range(1, total_ticks):
        prev = states[-1]
        heading_des = max(-0.5, min(0.5, 0.35 * (target_y - prev.y) - 0.8 * prev.heading))
        heading = normalize_angle(prev.heading + max(-0.6, min(0.6, heading_des)) * DT * 2.0)
        v_des = cruise
        if lead is not None:
            lead_x = lead["positions"][t][0]
            gap = lead_x - prev.x
            if 0.0 < gap < 6.0 + 1.2 * prev.speed:
                v_des = min(v_des, lead["speeds"][t] * max(0.0, (gap - 4.0) / (2.0 + prev.speed)))
        dv = max(-2.0 * accel_limit * DT, min(accel_limit * DT, v_des - prev.speed))
        speed = max(0.0, prev.speed + dv)
        x = prev.x + speed * DT * math.cos(heading)
        y = prev.y + speed * DT * math.sin(heading)
        states.append(EgoState(x, y, heading, speed))
    return states


def _scripted_lead(rng, ego_speed_hint, total_ticks):
    """Lead vehicle ahead in the ego lane that brakes mid-episode."""
    x = rng.uniform(14.0, 20.0)
    speed = ego_speed_hint * rng.uniform(0.9, 1.1)
    positions, speeds = [], []
    for t in range(total_ticks):
        positions.append((x, 0.0))
        speeds.append(speed)
        if t >= 3:
            speed = max(1.0, speed - 2.0 * DT)
        x += speed * DT
    return {"positions": positions, "speeds": speeds}


def _sample_obstacle(rng, scenario, ego_states, total_ticks):
    kind = rng.choice(["vehicle", "pedestrian", "static"], p=[0.5, 0.2, 0.3])
    radius = _OBSTACLE_RADII[kind]
    if kind == "vehicle":
        lane = rng.choice([-LANE_WIDTH, LANE_WIDTH]) * rng.choice([1.0, 2.0])
        x0 = rng.uniform(-10.0, 60.0)
        vx = rng.uniform(-scenario.obstacle_speed_max, scenario.obstacle_speed_max)
        vy = 0.0
        y0 = lane
    elif kind == "pedestrian":
        x0 = rng.uniform(10.0, 70.0)
        y0 = rng.choice([-1.0, 1.0]) * rng.uniform(8.0, 14.0)
        vx = 0.0
        vy = -np.sign(y0) * rng.uniform(0.2, 1.0)
    else:
        x0 = rng.uniform(5.0, scenario.map_length)
        y0 = rng.choice([-1.0, 1.0]) * rng.uniform(6.0, 12.0)
        vx = vy = 0.0
    traj = np.empty((total_ticks, 2))
    for t in range(total_ticks):
        traj[t, 0] = x0 + vx * DT * t
        traj[t, 1] = y0 + vy * DT * t
    clearance = np.inf
    for t, s in enumerate(ego_states):
        d = math.hypot(traj[t, 0] - s.x, traj[t, 1] - s.y)
        clearance = min(clearance, d - (R_EGO + radius))
    return Obstacle(traj, radius, kind), clearance


def generate_episode(seed, scenario=None, n_views=2, d_obs=32):
    """Generate one deterministic episode from a seed and scenario config."""
    scenario = scenario or ScenarioConfig()
    rng = np.random.Generator(np.random.PCG64(seed))
    total_ticks = scenario.ticks + HORIZON  # hidden tail so every tick has waypoints

    command = COMMANDS[rng.integers(0, len(COMMANDS))]
    lead = None
    obstacles_full = []
    if scenario.name == "lead_brake":
        command = "straight"
        speed_hint = rng.uniform(scenario.ego_speed_min, scenario.ego_speed_max)
        lead = _scripted_lead(rng, speed_hint, total_ticks)
        ego_full = _rollout_ego(rng, scenario, command, total_ticks, lead=lead)
        lead_traj = np.asarray(lead["positions"], dtype=np.float64)
        obstacles_full.append(Obstacle(lead_traj, _OBSTACLE_RADII["vehicle"], "vehicle"))
    else:
        ego_full = _rollout_ego(rng, scenario, command, total_ticks)
        if scenario.name != "empty":
            n_obs = int(rng.integers(scenario.n_obstacles_min,
                                     scenario.n_obstacles_max + 1))
            for _ in range(n_obs):
                placed = False
                for _ in range(scenario.max_retries):
                    obstacle, clearance = _sample_obstacle(
                        rng, scenario, ego_full, total_ticks
                    )
                    if clearance > 0.5:
                        obstacles_full.append(obstacle)
                        placed = True
                        break
                if not placed:
                    raise GenerationError(
                        seed, "no collision-free obstacle placement found"
                    )

    # expert must clear every obstacle along the whole (extended) rollout
    for obstacle in obstacles_full:
        for t, s in enumerate(ego_full):
            d = math.hypot(obstacle.trajectory[t, 0] - s.x,
                           obstacle.trajectory[t, 1] - s.y)
            if d <= R_EGO + obstacle.radius:
                raise GenerationError(seed, "expert rollout collides with obstacle")

    ticks = scenario.ticks
    ego_states = ego_full[:ticks]
    obstacles = [
        Obstacle(o.trajectory[:ticks].copy(), o.radius, o.kind) for o in obstacles_full
    ]

    # ego-frame expert waypoints from the extended rollout
    expert = np.empty((ticks, HORIZON, 2))
    for t in range(ticks):
        origin = ego_full[t]
        cos_h, sin_h = math.cos(origin.heading), math.sin(origin.heading)
        for j in range(HORIZON):
            fut = ego_full[t + j + 1]
            dx, dy = fut.x - origin.x, fut.y - origin.y
            expert[t, j, 0] = cos_h * dx + sin_h * dy
            expert[t, j, 1] = -sin_h * dx + cos_h * dy

    features = np.empty((ticks, n_views, d_obs))
    for t in range(ticks):
        positions = [tuple(o.trajectory[t]) for o in obstacles_full]
        velocities = []
        for o in obstacles_full:
            if t + 1 < total_ticks:
                v = (o.trajectory[t + 1] - o.trajectory[t]) / DT
            else:
                v = np.zeros(2)
            velocities.append(tuple(v))
        features[t] = compute_observation(
            ego_full[t], positions, velocities, command, n_views, d_obs
        )

    return Episode(
        id=f"{scenario.name}-{seed}",
        seed=seed,
        ticks=ticks,
        command=command,
        ego_states=ego_states,
        obstacles=obstacles,
        expert_trajectory=expert,
        observation_features=features,
        lane_bound=scenario.lane_bound,
    )


# ----------------------------------------------------------------------
# collision checking

def waypoints_to_world(waypoints, ego):
    """Transform ego-frame waypoints to the world frame at an ego pose."""
    waypoints = np.asarray(waypoints, dtype=np.float64)
    cos_h, sin_h = math.cos(ego.heading), math.sin(ego.heading)
    out = np.empty_like(waypoints)
    out[:, 0] = ego.x + cos_h * waypoints[:, 0] - sin_h * waypoints[:, 1]
    out[:, 1] = ego.y + sin_h * waypoints[:, 0] + cos_h * waypoints[:, 1]
    return out


def check_collision(waypoints, episode, t, r_ego=R_EGO):
    """First waypoint index whose ego disc overlaps any obstacle disc, else None.

    Waypoint ``j`` corresponds to future tick ``t + j + 1``.
    """
    waypoints = np.asarray(waypoints, dtype=np.float64)
    if waypoints.shape != (HORIZON, 2):
        raise ValueError(f"expected {HORIZON} waypoints, got shape {waypoints.shape}")
    if t < 0 or t + HORIZON >= episode.ticks:
        raise BoundsError(
            f"tick {t} + horizon {HORIZON} exceeds episode length {episode.ticks}"
        )
    world = waypoints_to_world(waypoints, episode.ego_states[t])
    for j in range(HORIZON):
        tick = t + j + 1
        for obstacle in episode.obstacles:
            ox, oy = obstacle.trajectory[tick]
            if math.hypot(world[j, 0] - ox, world[j, 1] - oy) < r_ego + obstacle.radius:
                return j
    return None


# ----------------------------------------------------------------------
# dataset files

def write_dataset(path, episodes):
    """Write episodes as line-delimited JSON (one episode per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for ep in episodes:
            f.write(json.dumps(ep.to_dict()) + "\n")


def read_dataset(path):
    episodes = []
    with Path(path).open() as f:
        for line in f:
            line = line.strip()
            if line:
                episodes.append(Episode.from_dict(json.loads(line)))
    return episodes


def split_episodes(episodes, fractions=(0.7, 0.1, 0.2)):
    """Deterministic train/val/test split by seed order."""
    ordered = sorted(episodes, key=lambda e: e.seed)
    n = len(ordered)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return (
        ordered[:n_train],
        ordered[n_train:n_train + n_val],
        ordered[n_train + n_val:],
    )
