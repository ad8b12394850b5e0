"""Double-DQN training of the crossing policy.

Three flavours share one loop: the ideal observer, one noisy model per
sigma_v, and a single model conditioned on sigma_v (sampled per episode from
a grid and appended to the observation).
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import GO, NOT_GO, BatchEnv, EnvConfig, Mode, normalize
from .qnet import QNetwork, train_step
from .world import Outcome, Scenario

log = logging.getLogger(__name__)


class TrainMode(str, enum.Enum):
    IDEAL = "ideal"
    PER_SIGMA = "per-sigma"
    CONDITIONED = "conditioned"

    @property
    def env_mode(self) -> Mode:
        return {TrainMode.IDEAL: Mode.IDEAL, TrainMode.PER_SIGMA: Mode.NOISY,
                TrainMode.CONDITIONED: Mode.CONDITIONED}[self]


def sigma_grid(start: float = 0.0, stop: float = 1.0, step: float = 0.002) -> list[float]:
    """Inclusive grid, rounded so that values print and compare cleanly."""
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


@dataclass
class TrainConfig:
    mode: TrainMode = TrainMode.IDEAL
    sigma_v: float = 0.0  # per-sigma mode only
    sigma_grid: list[float] = field(default_factory=sigma_grid)  # conditioned mode only
    gamma: float = 0.99
    lr: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_decrement: float = 1e-4
    epsilon_min: float = 0.001
    replay_capacity: int = 100_000
    batch_size: int = 64
    target_sync_interval: int = 1000
    max_episodes: int = 20_000
    hidden: tuple[int, ...] = (512, 256)
    dtype: str = "float32"
    grad_clip: float | None = None

    def __post_init__(self):
        self.mode = TrainMode(self.mode)
        self.hidden = tuple(self.hidden)
        self.sigma_grid = [float(s) for s in self.sigma_grid]
        errors = []
        if not 0 < self.gamma <= 1:
            errors.append("gamma must lie in (0, 1]")
        if not 0 <= self.epsilon_min <= self.epsilon_start <= 1:
            errors.append("need 0 <= epsilon_min <= epsilon_start <= 1")
        if self.epsilon_decrement < 0:
            errors.append("epsilon_decrement must be non-negative")
        if any(not 0 <= s <= 1 for s in self.sigma_grid) or not self.sigma_grid:
            errors.append("sigma_grid must be non-empty with values in [0, 1]")
        if not 0 <= self.sigma_v <= 1:
            errors.append("sigma_v must lie in [0, 1]")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            errors.append("need 1 <= batch_size <= replay_capacity")
        if self.target_sync_interval < 1 or self.max_episodes < 1:
            errors.append("target_sync_interval and max_episodes must be positive")
        if errors:
            raise ValueError("; ".join(errors))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpisodeStats:
    episode: int
    scenario_id: int
    sigma_v: float
    reward: float
    outcome: Outcome
    cit: float
    epsilon: float


@dataclass
class TrainResult:
    net: QNetwork
    log: list[EpisodeStats]
    converged: bool
    learn_steps: int
    config: TrainConfig


def epsilon_at(learn_step: int, cfg: TrainConfig) -> float:
    if learn_step < 0:
        raise ValueError("learn_step must be non-negative")
    # rounding keeps the floor reachable exactly despite binary fractions
    return max(cfg.epsilon_min, round(cfg.epsilon_start - cfg.epsilon_decrement * learn_step, 12))


def converged(history: Sequence[EpisodeStats], epsilon_now: float, epsilon_min: float = 0.001) -> bool:
    """Stopping rule: at most one collision in the last 100 episodes, exploration
    at its floor, and mean reward of the last 100 episodes within 1 of the 100 before."""
    if len(history) < 200:
        return False
    last = history[-100:]
    prev = history[-200:-100]
    if sum(h.outcome == Outcome.COLLISION for h in last) > 1:
        return False
    if epsilon_now != epsilon_min:
        return False
    diff = np.mean([h.reward for h in last]) - np.mean([h.reward for h in prev])
    return bool(abs(diff) < 1)


def greedy_action(q) -> np.ndarray:
    """Argmax over (Go, NotGo) with exact ties sent to NotGo."""
    q = np.asarray(q)
    return (q[..., NOT_GO] >= q[..., GO]).astype(np.int64)


def ddqn_targets(rewards, dones, next_x, gamma: float, online: QNetwork, target: QNetwork) -> np.ndarray:
    """r + gamma * Q_target(x', argmax_a Q_online(x', a)), or r at terminal steps."""
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    a_star = greedy_action(online.forward(next_x))
    q_next = target.forward(next_x)
    q_eval = np.take_along_axis(q_next, a_star[..., None], axis=-1)[..., 0]
    return np.where(dones, rewards, rewards + gamma * q_eval)


def ddqn_target(r: float, done: bool, next_obs, gamma: float, online_net: QNetwork, target_net: QNetwork) -> float:
    if done:
        return float(r)
    return float(ddqn_targets([r], [False], np.asarray(next_obs)[None], gamma, online_net, target_net)[0])


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, obs_dim: int, dtype=np.float32):
        self.capacity = capacity
        self.x = np.zeros((capacity, obs_dim), dtype)
        self.next_x = np.zeros((capacity, obs_dim), dtype)
        self.action = np.zeros(capacity, np.int64)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity, bool)
        self.size = 0
        self.head = 0  # next slot to write; also the oldest item once full
        self.count = 0  # total transitions ever pushed

    def __len__(self) -> int:
        return self.size

    def push(self, x, action: int, reward: float, next_x, done: bool) -> None:
        i = self.head
        self.x[i], self.action[i], self.reward[i], self.next_x[i], self.done[i] = x, action, reward, next_x, done
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.count += 1

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, n)
        return self.x[idx], self.action[idx], self.reward[idx], self.next_x[idx], self.done[idx]


def train(cfg: TrainConfig, scenarios: Sequence[Scenario], seed: int = 0,
          env_config: EnvConfig | None = None, progress_every: int = 0) -> TrainResult:
    """Train until :func:`converged` or ``cfg.max_episodes``.

    Scenarios are sampled uniformly per episode; in conditioned mode sigma_v
    is sampled uniformly from ``cfg.sigma_grid`` as well. One learning step
    follows every environment step once the buffer holds a full batch.
    """
    if not scenarios:
        raise ValueError("no training scenarios")
    if not any(s.training_only for s in scenarios):
        log.warning("training set lacks the short-gap training scenarios")
    env_mode = cfg.mode.env_mode
    root = np.random.SeedSequence(seed)
    init_ss, env_ss, agent_ss = root.spawn(3)
    rng = np.random.default_rng(agent_ss)
    env_rng = np.random.default_rng(env_ss)
    sigma_v = None if cfg.mode is not TrainMode.PER_SIGMA else cfg.sigma_v
    net = QNetwork(env_mode.obs_dim, cfg.hidden, dtype=cfg.dtype, rng=np.random.default_rng(init_ss),
                   mode=cfg.mode.value, sigma_v=sigma_v)
    target = net.copy()
    buf = ReplayBuffer(cfg.replay_capacity, env_mode.obs_dim, net.dtype)
    ecfg = env_config or EnvConfig()
    history: list[EpisodeStats] = []
    learn_steps = 0
    done_training = False

    for ep in range(cfg.max_episodes):
        s = scenarios[rng.integers(len(scenarios))]
        if cfg.mode is TrainMode.CONDITIONED:
            sig = cfg.sigma_grid[rng.integers(len(cfg.sigma_grid))]
        elif cfg.mode is TrainMode.PER_SIGMA:
            sig = cfg.sigma_v
        else:
            sig = 0.0
        env = BatchEnv([s], sig, env_mode, [env_rng], ecfg)
        x = normalize(env.reset()[0]).astype(net.dtype)
        while True:
            eps = epsilon_at(learn_steps, cfg)
            if rng.random() < eps:
                a = int(rng.integers(2))
            else:
                a = int(greedy_action(net.forward(x)))
            rewards, dones = env.step(np.array([a]))
            nx = normalize(env.observations()[0]).astype(net.dtype)
            terminal = bool(dones[0]) and env.outcome[0] is not Outcome.TRUNCATED
            buf.push(x, a, rewards[0], nx, terminal)
            x = nx
            if len(buf) >= cfg.batch_size:
                bx, ba, br, bnx, bd = buf.sample(cfg.batch_size, rng)
                y = ddqn_targets(br, bd, bnx, cfg.gamma, net, target)
                train_step(net, (bx, ba, y), cfg.lr, cfg.grad_clip)
                learn_steps += 1
                if learn_steps % cfg.target_sync_interval == 0:
                    target.load_params_from(net)
            if dones[0]:
                break
        history.append(EpisodeStats(ep, s.id, float(sig), float(env.total_reward[0]), env.outcome[0],
                                    float(env.cit[0]), epsilon_at(learn_steps, cfg)))
        if progress_every and (ep + 1) % progress_every == 0:
            last = history[-progress_every:]
            log.info("episode %d  learn steps %d  eps %.3f  mean reward %.2f  collisions %d",
                     ep + 1, learn_steps, history[-1].epsilon, np.mean([h.reward for h in last]),
                     sum(h.outcome == Outcome.COLLISION for h in last))
        if converged(history, epsilon_at(learn_steps, cfg), cfg.epsilon_min):
            done_training = True
            break

    if not done_training:
        log.warning("training stopped at max_episodes=%d without converging", cfg.max_episodes)
    return TrainResult(net, history, done_training, learn_steps, cfg)


LOG_COLUMNS = ("episode", "scenario_id", "sigma_v", "reward", "outcome", "cit", "epsilon")


def write_training_log(history: Sequence[EpisodeStats], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_COLUMNS)
        for h in history:
            cit = "" if math.isnan(h.cit) else repr(h.cit)
            w.writerow([h.episode, h.scenario_id, repr(h.sigma_v), repr(h.reward), h.outcome.value, cit,
                        repr(h.epsilon)])
