"""Scenarios, road geometry and the analytic crossing outcome.

Distances are measured along the vehicle's line of travel to the conflict
point (positive while approaching). The pedestrian walks laterally across
the road starting from the curb at ``y = 0``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

DT = 0.1  # s, one simulation step
WALK_SPEED = 1.31  # m/s
EYE_HEIGHT = 1.6  # m

# (v0 m/s, d0 m) of the constant-speed conditions
TABLE1 = (
    (6.94, 15.90),
    (13.89, 31.81),
    (6.94, 31.81),
    (13.89, 63.61),
    (6.94, 47.71),
    (13.89, 95.42),
)
TRAINING_TTA = 1.0  # s, extra training-only condition at both speeds
SPEEDS = (6.94, 13.89)


class Outcome(str, enum.Enum):
    SAFE_BEFORE = "SafeBefore"
    SAFE_AFTER = "SafeAfter"
    COLLISION = "Collision"
    TRUNCATED = "Truncated"


@dataclass(frozen=True)
class Scenario:
    id: int
    v0: float
    d0: float
    training_only: bool = False

    def __post_init__(self):
        if not (self.v0 > 0 and self.d0 > 0):
            raise ValueError(f"scenario {self.id}: v0 and d0 must be positive")

    @property
    def tau0(self) -> float:
        return self.d0 / self.v0


@dataclass(frozen=True)
class RoadGeometry:
    road_width: float = 5.85
    lane_count: int = 2
    vehicle_lane_center_offset: float = 5.85 / 4
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    walk_speed: float = WALK_SPEED
    eye_height: float = EYE_HEIGHT

    def __post_init__(self):
        lo, hi = self.band
        if not (0 <= lo and hi <= self.road_width and lo < hi):
            raise ValueError("vehicle lateral band must lie within the road")
        if self.walk_speed <= 0:
            raise ValueError("walk_speed must be positive")
        if self.eye_height <= 0 or self.vehicle_length <= 0:
            raise ValueError("eye_height and vehicle_length must be positive")

    @property
    def band(self) -> tuple[float, float]:
        """Lateral extent of the vehicle, measured from the pedestrian's curb."""
        half = self.vehicle_width / 2
        return self.vehicle_lane_center_offset - half, self.vehicle_lane_center_offset + half


@dataclass
class WorldState:
    t: float
    vehicle_front_distance: float
    vehicle_speed: float
    ped_progress: float = 0.0
    ped_moving: bool = False


def scenario_table() -> list[Scenario]:
    """The six experimental conditions (ids 1-6) plus the two 1 s training conditions."""
    out = [Scenario(i + 1, v0, d0) for i, (v0, d0) in enumerate(TABLE1)]
    for j, v0 in enumerate(SPEEDS):
        out.append(Scenario(len(TABLE1) + j + 1, v0, v0 * TRAINING_TTA, training_only=True))
    return out


def initial_state(s: Scenario) -> WorldState:
    return WorldState(0.0, s.d0, s.v0)


def vehicle_distance(s: Scenario, t: float) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    return s.d0 - s.v0 * t


def collision_window(s: Scenario, geometry: RoadGeometry) -> tuple[float, float]:
    """Closed interval of crossing-initiation times that lead to a collision."""
    lo, hi = geometry.band
    veh_in = s.tau0
    veh_out = s.tau0 + geometry.vehicle_length / s.v0
    return veh_in - hi / geometry.walk_speed, veh_out - lo / geometry.walk_speed


def crossing_outcome(s: Scenario, geometry: RoadGeometry, cit: float) -> tuple[Outcome, float]:
    """Outcome of starting to walk at ``cit`` and the clearance margin in seconds.

    The margin is the gap between the pedestrian's and the vehicle's occupancy
    intervals of the conflict zone; for a collision it is the overlap, negated.
    """
    if cit < 0:
        raise ValueError("cit must be non-negative")
    lo, hi = geometry.band
    ped_in, ped_out = cit + lo / geometry.walk_speed, cit + hi / geometry.walk_speed
    veh_in, veh_out = s.tau0, s.tau0 + geometry.vehicle_length / s.v0
    if ped_in <= veh_out and veh_in <= ped_out:
        return Outcome.COLLISION, -(min(ped_out, veh_out) - max(ped_in, veh_in))
    margin = veh_in - ped_out if ped_out < veh_in else ped_in - veh_out
    # labelled by decision time, not by passing order
    return (Outcome.SAFE_BEFORE if cit < s.tau0 else Outcome.SAFE_AFTER), margin


def euclidean_distance(ws: WorldState, geometry: RoadGeometry) -> float:
    return math.hypot(ws.vehicle_front_distance, geometry.vehicle_lane_center_offset - ws.ped_progress)


def advance(ws: WorldState, geometry: RoadGeometry, dt: float = DT) -> WorldState:
    """Constant-velocity step of both agents."""
    progress = ws.ped_progress
    if ws.ped_moving:
        progress = min(progress + geometry.walk_speed * dt, geometry.road_width)
    return replace(
        ws,
        t=ws.t + dt,
        vehicle_front_distance=ws.vehicle_front_distance - ws.vehicle_speed * dt,
        ped_progress=progress,
    )


# --- configuration file ------------------------------------------------------

@dataclass
class WorldConfig:
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    scenarios: list[Scenario] = field(default_factory=scenario_table)

    def by_id(self, sid: int) -> Scenario:
        for s in self.scenarios:
            if s.id == sid:
                return s
        raise KeyError(f"no scenario with id {sid}")

    def to_dict(self) -> dict:
        return {
            "geometry": asdict(self.geometry),
            "scenarios": [asdict(s) for s in self.scenarios],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        unknown = set(d) - {"geometry", "scenarios"}
        if unknown:
            raise ValueError(f"unknown world config keys: {sorted(unknown)}")
        geometry = RoadGeometry(**d.get("geometry", {}))
        if "scenarios" in d:
            scenarios = [Scenario(**s) for s in d["scenarios"]]
        else:
            scenarios = scenario_table()
        ids = [s.id for s in scenarios]
        if len(set(ids)) != len(ids):
            raise ValueError("scenario ids must be unique")
        return cls(geometry, scenarios)


def load_world_config(path: str | Path) -> WorldConfig:
    with open(path) as f:
        return WorldConfig.from_dict(json.load(f))


def match_scenario(scenarios: list[Scenario], v0: float, d0: float, tol: float = 1e-3) -> Scenario:
    for s in scenarios:
        if abs(s.v0 - v0) <= tol and abs(s.d0 - d0) <= tol:
            return s
    raise KeyError(f"no scenario matches v0={v0}, d0={d0}")


def _occupancy(s: Scenario, geometry: RoadGeometry, cit: float, t: np.ndarray):
    lo, hi = geometry.band
    front = s.d0 - s.v0 * t
    veh = (front <= 0) & (front >= -geometry.vehicle_length)
    y = np.where(t >= cit, (t - cit) * geometry.walk_speed, 0.0)
    ped = (y >= lo) & (y <= hi)
    return veh, ped


def brute_force_outcome(s: Scenario, geometry: RoadGeometry, cit: float,
                        step: float = 1e-3, refine: int = 1000) -> Outcome:
    """Reference outcome by stepping both agents on a fixed clock.

    Independent check of :func:`crossing_outcome`: only positions are used,
    each sample is a point-in-rectangle test. Steps in which either agent
    enters or leaves the conflict zone are re-sampled ``refine`` times finer,
    so overlaps down to ``step / refine`` are resolved.
    """
    end = max(cit + geometry.band[1] / geometry.walk_speed,
              s.tau0 + geometry.vehicle_length / s.v0) + 2 * step
    t = np.arange(0, int(math.ceil(end / step)) + 1) * step
    veh, ped = _occupancy(s, geometry, cit, t)
    if np.any(veh & ped):
        return Outcome.COLLISION
    flips = np.flatnonzero((np.diff(veh) != 0) | (np.diff(ped) != 0))
    for k in flips:
        tf = t[k] + np.arange(refine + 1) * (step / refine)
        vf, pf = _occupancy(s, geometry, cit, tf)
        if np.any(vf & pf):
            return Outcome.COLLISION
    return Outcome.SAFE_BEFORE if cit < s.tau0 else Outcome.SAFE_AFTER
