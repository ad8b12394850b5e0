"""Greedy rollouts and the behavioural summaries computed from them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from . import perception as pc
from .env import NOT_GO, BatchEnv, EnvConfig, Mode, normalize
from .qnet import QNetwork
from .trainer import greedy_action
from .world import Outcome, Scenario

NET_MODES = {"ideal": Mode.IDEAL, "per-sigma": Mode.NOISY, "noisy": Mode.NOISY,
             "conditioned": Mode.CONDITIONED}


@dataclass
class TrialRecord:
    scenario_id: int
    v0: float
    tau0: float
    sigma_v: float
    cit: float  # NaN for a truncated trial
    accepted: bool
    collided: bool
    source: str = "Model"
    participant_id: str | None = None

    @property
    def truncated(self) -> bool:
        return math.isnan(self.cit)


def env_mode_for(net: QNetwork, sigma_v: float | None) -> tuple[Mode, float]:
    """Resolve which observation mode and sigma_v a rollout of ``net`` should use."""
    mode = NET_MODES[net.mode]
    if mode is Mode.IDEAL:
        if sigma_v not in (None, 0, 0.0):
            raise ValueError("an ideal-observer network cannot be evaluated with sigma_v > 0")
        return mode, 0.0
    if mode is Mode.NOISY:
        if net.sigma_v is None:
            if sigma_v is None:
                raise ValueError("sigma_v required for this network")
            return mode, float(sigma_v)
        if sigma_v is not None and not math.isclose(sigma_v, net.sigma_v, abs_tol=1e-12):
            raise ValueError(f"network was trained at sigma_v={net.sigma_v}, requested {sigma_v}")
        return mode, float(net.sigma_v)
    if sigma_v is None:
        raise ValueError("a conditioned network needs sigma_v")
    return mode, float(sigma_v)


def episode_rngs(seed, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def rollout(net: QNetwork, scenario: Scenario, sigma_v: float | None, n: int, seed,
            env_config: EnvConfig | None = None) -> list[TrialRecord]:
    """``n`` greedy episodes, each with its own RNG substream of ``seed``."""
    mode, sig = env_mode_for(net, sigma_v)
    env = BatchEnv([scenario] * n, sig, mode, episode_rngs(seed, n), env_config)
    obs = env.reset()
    actions = np.full(n, NOT_GO)
    while not env.done.all():
        active = np.flatnonzero(~env.done)
        actions[active] = greedy_action(net.forward(normalize(obs[active])))
        env.step(actions)
        obs = env.observations()
    out = []
    for i in range(n):
        cit = float(env.cit[i])
        accepted = (not math.isnan(cit)) and cit < scenario.tau0
        out.append(TrialRecord(scenario.id, scenario.v0, scenario.tau0, sig, cit, accepted,
                               env.outcome[i] is Outcome.COLLISION))
    return out


@dataclass
class AcceptanceCell:
    scenario_id: int
    v0: float
    tau0: float
    n: int
    accepted: int
    rate: float
    lo: float
    hi: float


def binomial_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval."""
    if n <= 0:
        raise ValueError("n must be positive")
    z = stats.norm.ppf(0.5 + level / 2)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def gap_acceptance_rate(records: Iterable[TrialRecord]) -> dict[int, AcceptanceCell]:
    """Fraction of accepted gaps per scenario, keyed by scenario id."""
    groups: dict[int, list[TrialRecord]] = {}
    for r in records:
        groups.setdefault(r.scenario_id, []).append(r)
    out = {}
    for sid in sorted(groups):
        g = groups[sid]
        k = sum(r.accepted for r in g)
        lo, hi = binomial_interval(k, len(g))
        out[sid] = AcceptanceCell(sid, g[0].v0, g[0].tau0, len(g), k, k / len(g), lo, hi)
    return out


@dataclass
class CitCdf:
    points: list[tuple[float, float]]
    n_finite: int
    n_truncated: int

    def __call__(self, t):
        """Right-continuous evaluation."""
        if not self.points:
            return np.zeros_like(np.asarray(t, dtype=float))
        xs = np.array([p[0] for p in self.points])
        ps = np.array([p[1] for p in self.points])
        i = np.searchsorted(xs, t, side="right")
        return np.where(i > 0, ps[np.maximum(i - 1, 0)], 0.0)


def cit_cdf(records: Sequence[TrialRecord]) -> CitCdf:
    if not records:
        raise ValueError("no records")
    cits = np.sort([r.cit for r in records if not r.truncated])
    n = cits.size
    xs, counts = np.unique(cits, return_counts=True)
    points = [(float(x), float(c) / n) for x, c in zip(xs, np.cumsum(counts))]
    return CitCdf(points, n, len(records) - n)


@dataclass
class TtaStats:
    mean: float
    sd: float
    p5: float
    p95: float
    median: float
    n: int
    n_undefined: int
    samples: np.ndarray = field(repr=False)


def first_step_tta(sigma_v: float, scenario: Scenario, n: int, seed,
                   env_config: EnvConfig | None = None) -> np.ndarray:
    """Estimated TTA of the belief the first decision is made on (NaN if undefined)."""
    env = BatchEnv([scenario] * n, sigma_v, Mode.NOISY, episode_rngs(seed, n), env_config)
    env.reset()
    return pc.estimated_tta(env.belief)


def tta_dispersion(sigma_v: float, scenario: Scenario, n: int = 10_000, seed=0,
                   env_config: EnvConfig | None = None) -> TtaStats:
    """Spread of the first-step estimated TTA; undefined estimates are counted, not used."""
    if sigma_v < 0:
        raise ValueError("sigma_v must be non-negative")
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    tta = first_step_tta(sigma_v, scenario, n, seed, env_config)
    ok = tta[np.isfinite(tta)]
    p5, med, p95 = np.percentile(ok, [5, 50, 95])
    return TtaStats(float(ok.mean()), float(ok.std()), float(p5), float(p95), float(med),
                    int(ok.size), int(n - ok.size), tta)


def bootstrap_sd_ratio(a: np.ndarray, b: np.ndarray, n_boot: int = 2000, seed=0) -> np.ndarray:
    """Bootstrap replicates of sd(a) / sd(b) over finite samples."""
    a = a[np.isfinite(a)]
    b = b[np.isfinite(b)]
    rng = np.random.default_rng(seed)
    out = np.empty(n_boot)
    for i in range(0, n_boot, 100):
        m = min(100, n_boot - i)
        ra = a[rng.integers(0, a.size, (m, a.size))].std(axis=1)
        rb = b[rng.integers(0, b.size, (m, b.size))].std(axis=1)
        out[i:i + m] = ra / rb
    return out
