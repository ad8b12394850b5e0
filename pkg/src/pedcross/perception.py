"""Angular visual noise and the Kalman-filter belief over the vehicle.

The pedestrian judges distance from the angle below the horizon,
``arctan(h / d)``. Gaussian noise on that angle turns into a position noise
whose standard deviation grows with distance.

All belief arithmetic is elementwise, so a :class:`BeliefState` may hold
Python floats (one episode) or equally shaped arrays (a batch of episodes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import SPEEDS, RoadGeometry, WorldState

VEL_PRIOR_SD = float(np.std(SPEEDS))  # 3.475 m/s
PROCESS_ACCEL_SD = 0.1  # m/s^2
MEAS_VAR_FLOOR = 1e-4  # m^2
MIN_DISTANCE = 0.5  # m


@dataclass(frozen=True)
class NoiseParams:
    sigma_v: float = 0.0

    def __post_init__(self):
        if not self.sigma_v >= 0:
            raise ValueError("sigma_v must be non-negative")


@dataclass
class BeliefState:
    mean_pos: float
    mean_vel: float
    var_pos: float
    var_vel: float
    cov_pos_vel: float = 0.0

    @property
    def cov(self) -> np.ndarray:
        return np.array([[self.var_pos, self.cov_pos_vel], [self.cov_pos_vel, self.var_vel]])


def angular_noise_sd(d_l: float, d: float, h: float, sigma_v: float) -> float:
    """Position noise SD produced by angular noise ``sigma_v`` (radians).

    Raises ValueError when the perturbed angle reaches the vertical, where
    the formula stops describing a position on the ground.
    """
    if d <= 0 or h <= 0:
        raise ValueError("d and h must be positive")
    if sigma_v >= math.atan(d / h):
        raise ValueError(f"perturbed angle reaches pi/2 (d={d}, sigma_v={sigma_v})")
    return abs(d_l) * _sd_factor(h / d, math.tan(sigma_v))


def _sd_factor(x, t):
    # 1 - x / tan(atan(x) + s) rewritten with the tangent addition rule;
    # exact zero at s = 0 and no cancellation for small s
    return t * (1 + x * x) / (x + t)


def noise_sd(d_l, d, h: float, sigma_v, min_distance: float = MIN_DISTANCE):
    """Array version of :func:`angular_noise_sd` with the near-field guard.

    ``d`` is clamped to ``min_distance``; where the perturbed angle still
    reaches pi/2 the SD takes its limiting value ``|d_l|``.
    """
    d = np.maximum(d, min_distance)
    ok = sigma_v < np.arctan(d / h)  # perturbed angle below pi/2
    t = np.tan(np.where(ok, sigma_v, 0.0))
    return np.abs(d_l) * np.where(ok, _sd_factor(h / d, t), 1.0)


def sensed_position(true_pos, lateral, h: float, sigma_v, z):
    """Noisy longitudinal position given standard normal draw(s) ``z``.

    ``lateral`` is the sideways offset between pedestrian and vehicle lane.
    """
    sd = noise_sd(true_pos, np.hypot(true_pos, lateral), h, sigma_v)
    return true_pos + sd * z


def observe(ws: WorldState, geometry: RoadGeometry, params: NoiseParams, rng: np.random.Generator) -> float:
    lateral = geometry.vehicle_lane_center_offset - ws.ped_progress
    return float(sensed_position(ws.vehicle_front_distance, lateral, geometry.eye_height,
                                 params.sigma_v, rng.standard_normal()))


def measurement_var(measured_pos, lateral, h: float, sigma_v, floor: float = MEAS_VAR_FLOOR):
    """Variance the filter assigns to a measurement, judged from the measurement itself."""
    sd = noise_sd(measured_pos, np.hypot(measured_pos, lateral), h, sigma_v)
    return np.maximum(sd * sd, floor)


def initial_belief(first_obs, mean_vel, vel_var, first_obs_var) -> BeliefState:
    zero = np.zeros_like(first_obs) if np.ndim(first_obs) else 0.0
    return BeliefState(first_obs, mean_vel, first_obs_var, vel_var + zero, zero)


def kf_init(first_obs: float, true_vel: float, vel_prior_sd: float = VEL_PRIOR_SD,
            first_obs_var: float = MEAS_VAR_FLOOR, rng: np.random.Generator | None = None) -> BeliefState:
    """Initial belief: the first noisy position and a velocity drawn around the truth."""
    if vel_prior_sd <= 0:
        raise ValueError("vel_prior_sd must be positive")
    rng = np.random.default_rng() if rng is None else rng
    mean_vel = true_vel + vel_prior_sd * rng.standard_normal()
    return initial_belief(first_obs, mean_vel, vel_prior_sd ** 2, first_obs_var)


def kf_step(b: BeliefState, z, meas_var, dt: float, process_accel_sd: float = PROCESS_ACCEL_SD) -> BeliefState:
    """Constant-velocity predict followed by a scalar position update.

    Position is distance-to-conflict, so it shrinks by ``vel * dt``.
    """
    q = process_accel_sd ** 2
    # predict, F = [[1, -dt], [0, 1]], white acceleration noise
    pos = b.mean_pos - b.mean_vel * dt
    vel = b.mean_vel
    ppp = b.var_pos - 2 * dt * b.cov_pos_vel + dt * dt * b.var_vel + q * dt ** 4 / 4
    ppv = b.cov_pos_vel - dt * b.var_vel - q * dt ** 3 / 2
    pvv = b.var_vel + q * dt * dt
    # update
    s = ppp + meas_var
    k_pos = ppp / s
    k_vel = ppv / s
    innov = z - pos
    return BeliefState(
        mean_pos=pos + k_pos * innov,
        mean_vel=vel + k_vel * innov,
        var_pos=ppp * meas_var / s,
        var_vel=pvv - k_vel * ppv,
        cov_pos_vel=ppv * meas_var / s,
    )


def estimated_tta(b: BeliefState):
    """Believed time to arrival; NaN where the vehicle is not believed to approach."""
    if np.ndim(b.mean_vel) == 0:
        return b.mean_pos / b.mean_vel if b.mean_vel > 0 else math.nan
    vel = np.asarray(b.mean_vel)
    return np.where(vel > 0, np.asarray(b.mean_pos) / np.where(vel > 0, vel, 1.0), np.nan)
