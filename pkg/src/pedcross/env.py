"""The crossing decision as a partially observable episode.

Each step the pedestrian either presses Go, which ends the episode with an
analytically computed outcome, or waits 0.1 s while the vehicle approaches
and the belief over it is updated.

:class:`BatchEnv` runs many independent episodes in lock-step with one RNG
stream each; :class:`CrossingEnv` is the single-episode interface built on it.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import perception as pc
from .world import DT, Outcome, RoadGeometry, Scenario

GO, NOT_GO = 0, 1
ACTION_NAMES = ("Go", "NotGo")

OBS_FIELDS = ("est_pos", "est_vel", "var_pos", "var_vel", "ego_pos", "ego_vel", "sigma_v")
POS_SCALE, VEL_SCALE = 100.0, 20.0
OBS_SCALE = np.array([POS_SCALE, VEL_SCALE, POS_SCALE ** 2, VEL_SCALE ** 2, POS_SCALE, VEL_SCALE, 1.0])


class Mode(str, enum.Enum):
    IDEAL = "ideal"
    NOISY = "noisy"
    CONDITIONED = "conditioned"

    @property
    def obs_dim(self) -> int:
        return 7 if self is Mode.CONDITIONED else 6


@dataclass
class EnvConfig:
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    dt: float = DT
    step_cost: float = 0.5
    crossing_reward: float = 200.0
    collision_penalty: float = 200.0
    max_steps: int = 300
    vel_prior_sd: float = pc.VEL_PRIOR_SD
    process_accel_sd: float = pc.PROCESS_ACCEL_SD
    meas_var_floor: float = pc.MEAS_VAR_FLOOR
    # where the filter evaluates the noise model: "measured" position or "true" one
    meas_var_source: str = "measured"

    def __post_init__(self):
        if self.meas_var_source not in ("measured", "true"):
            raise ValueError("meas_var_source must be 'measured' or 'true'")
        if self.max_steps < 1 or self.dt <= 0:
            raise ValueError("max_steps and dt must be positive")


@dataclass
class Observation:
    est_pos: float
    est_vel: float
    var_pos: float
    var_vel: float
    ego_pos: float
    ego_vel: float
    sigma_v: float | None = None

    def as_array(self) -> np.ndarray:
        vals = [getattr(self, f.name) for f in fields(self)]
        if self.sigma_v is None:
            vals = vals[:-1]
        return np.array(vals, dtype=float)

    @classmethod
    def from_array(cls, a) -> "Observation":
        return cls(*(float(x) for x in a))


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    outcome: Outcome | None = None
    cit: float | None = None


def normalize(o) -> np.ndarray:
    """Scale an observation (or a stack of observation rows) to order one."""
    a = o.as_array() if isinstance(o, Observation) else np.asarray(o, dtype=float)
    return a / OBS_SCALE[: a.shape[-1]]


def denormalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x * OBS_SCALE[: x.shape[-1]]


class BatchEnv:
    """``n`` independent episodes advanced together.

    Every episode owns one generator. Draw order per episode: first position
    noise, then the velocity prior, then one position noise per wait step.
    Ideal mode draws nothing.
    """

    def __init__(self, scenarios: Sequence[Scenario], sigmas, mode: Mode | str,
                 rngs: Sequence[np.random.Generator], config: EnvConfig | None = None):
        self.mode = Mode(mode)
        self.cfg = config or EnvConfig()
        n = len(scenarios)
        if len(rngs) != n:
            raise ValueError("need one generator per episode")
        self.n = n
        self.rngs = list(rngs)
        self.scenario_ids = np.array([s.id for s in scenarios])
        self.v0 = np.array([s.v0 for s in scenarios], dtype=float)
        self.d0 = np.array([s.d0 for s in scenarios], dtype=float)
        self.tau0 = self.d0 / self.v0
        self.sigma = np.broadcast_to(np.asarray(sigmas, dtype=float), (n,)).copy()
        if np.any(self.sigma < 0):
            raise ValueError("sigma_v must be non-negative")
        g = self.cfg.geometry
        self._lateral = g.vehicle_lane_center_offset  # pedestrian at the curb until Go
        self.k = np.zeros(n, dtype=np.int64)
        self.done = np.zeros(n, dtype=bool)
        self.outcome = np.full(n, None, dtype=object)
        self.cit = np.full(n, np.nan)
        self.total_reward = np.zeros(n)
        self.belief: pc.BeliefState | None = None

    # -- world ----------------------------------------------------------------
    @property
    def t(self) -> np.ndarray:
        return self.k * self.cfg.dt

    @property
    def front(self) -> np.ndarray:
        return self.d0 - self.v0 * self.t

    def _draw(self, idx) -> np.ndarray:
        return np.array([self.rngs[i].standard_normal() for i in idx])

    def _sense(self, idx) -> tuple[np.ndarray, np.ndarray]:
        g = self.cfg.geometry
        z = pc.sensed_position(self.front[idx], self._lateral, g.eye_height, self.sigma[idx], self._draw(idx))
        at = z if self.cfg.meas_var_source == "measured" else self.front[idx]
        r = pc.measurement_var(at, self._lateral, g.eye_height, self.sigma[idx], self.cfg.meas_var_floor)
        return z, r

    # -- episode --------------------------------------------------------------
    def reset(self) -> np.ndarray:
        idx = np.arange(self.n)
        if self.mode is not Mode.IDEAL:
            z, r = self._sense(idx)
            mean_vel = self.v0 + self.cfg.vel_prior_sd * self._draw(idx)
            self.belief = pc.initial_belief(z, mean_vel, self.cfg.vel_prior_sd ** 2, r)
        return self.observations()

    def observations(self) -> np.ndarray:
        if self.mode is Mode.IDEAL:
            zeros = np.zeros(self.n)
            cols = [self.front, self.v0, zeros, zeros]
        else:
            b = self.belief
            cols = [b.mean_pos, b.mean_vel, b.var_pos, b.var_vel]
        cols += [np.zeros(self.n), np.zeros(self.n)]  # pedestrian stands at the curb
        if self.mode is Mode.CONDITIONED:
            cols.append(self.sigma)
        return np.stack([np.asarray(c, dtype=float) for c in cols], axis=1)

    def outcomes_for(self, idx, cit) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized collision test, same rule as :func:`world.crossing_outcome`."""
        g = self.cfg.geometry
        lo, hi = g.band
        ped_in, ped_out = cit + lo / g.walk_speed, cit + hi / g.walk_speed
        veh_in = self.tau0[idx]
        veh_out = veh_in + g.vehicle_length / self.v0[idx]
        collided = (ped_in <= veh_out) & (veh_in <= ped_out)
        before = cit < veh_in
        return collided, before

    def step(self, actions) -> tuple[np.ndarray, np.ndarray]:
        """Apply one action per episode; finished episodes are left untouched.

        Returns per-episode rewards for this step and the done mask.
        """
        actions = np.broadcast_to(np.asarray(actions), (self.n,))
        active = ~self.done
        if not active.any():
            raise RuntimeError("all episodes are finished")
        cfg = self.cfg
        rewards = np.zeros(self.n)
        rewards[active] = -cfg.step_cost

        go = np.flatnonzero(active & (actions == GO))
        if go.size:
            cit = self.t[go]
            collided, before = self.outcomes_for(go, cit)
            rewards[go] += np.where(collided, -cfg.collision_penalty, cfg.crossing_reward)
            self.cit[go] = cit
            for i, c, bf in zip(go, collided, before):
                self.outcome[i] = Outcome.COLLISION if c else (Outcome.SAFE_BEFORE if bf else Outcome.SAFE_AFTER)
            self.done[go] = True
            self.k[go] += 1

        wait = np.flatnonzero(active & (actions != GO))
        if wait.size:
            self.k[wait] += 1
            if self.mode is not Mode.IDEAL:
                z, r = self._sense(wait)
                b = self.belief
                sub = pc.BeliefState(b.mean_pos[wait], b.mean_vel[wait], b.var_pos[wait],
                                     b.var_vel[wait], b.cov_pos_vel[wait])
                new = pc.kf_step(sub, z, r, cfg.dt, cfg.process_accel_sd)
                for name in ("mean_pos", "mean_vel", "var_pos", "var_vel", "cov_pos_vel"):
                    getattr(b, name)[wait] = getattr(new, name)
            capped = wait[self.k[wait] >= cfg.max_steps]
            self.done[capped] = True
            self.outcome[capped] = Outcome.TRUNCATED

        self.total_reward += rewards
        return rewards, self.done.copy()


class CrossingEnv:
    """Single-episode environment.

    >>> from pedcross.world import scenario_table
    >>> env = CrossingEnv()
    >>> env.reset(scenario_table()[0], mode="ideal").as_array()[:2]
    array([15.9 ,  6.94])
    """

    def __init__(self, config: EnvConfig | None = None, record: bool = False):
        self.cfg = config or EnvConfig()
        self.record = record
        self.trace: list[dict] = []
        self._batch: BatchEnv | None = None

    def reset(self, scenario: Scenario, params: pc.NoiseParams | None = None, mode: Mode | str = Mode.NOISY,
              seed=None, rng: np.random.Generator | None = None) -> Observation:
        params = params or pc.NoiseParams()
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.scenario = scenario
        self._batch = BatchEnv([scenario], params.sigma_v, mode, [rng], self.cfg)
        obs = self._batch.reset()[0]
        self.trace = []
        self._obs = Observation.from_array(obs)
        return self._obs

    @property
    def mode(self) -> Mode:
        return self._batch.mode

    @property
    def t(self) -> float:
        return float(self._batch.t[0])

    @property
    def done(self) -> bool:
        return bool(self._batch.done[0])

    def step(self, action: int) -> StepResult:
        if self._batch is None:
            raise RuntimeError("call reset() first")
        if self.done:
            raise RuntimeError("episode is finished; call reset()")
        b = self._batch
        row = dict(t=self.t, vehicle_front_distance=float(b.front[0]), vehicle_speed=float(b.v0[0]),
                   ped_progress=0.0)
        rewards, done = b.step(np.array([action]))
        obs = Observation.from_array(b.observations()[0])
        reward = float(rewards[0])
        if self.record:
            row.update({k: float(v) for k, v in zip(OBS_FIELDS, self._obs.as_array())})
            row.update(action=ACTION_NAMES[action], reward=reward)
            self.trace.append(row)
        self._obs = obs
        if not done[0]:
            return StepResult(obs, reward, False)
        outcome = b.outcome[0]
        # NaN cit marks a truncated episode
        return StepResult(obs, reward, True, outcome, float(b.cit[0]))

    def write_trace(self, path: str | Path) -> None:
        """Row-per-step CSV of the recorded episode."""
        cols = ["t", "vehicle_front_distance", "vehicle_speed", "ped_progress",
                *OBS_FIELDS[: self.mode.obs_dim], "action", "reward"]
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for row in self.trace:
                w.writerow(row)
