"""Fitting sigma_v to crossing-initiation times.

For every candidate sigma_v the model's CIT distribution in each scenario is
smoothed with a Gaussian KDE; a participant's log-likelihood is the sum of
the log densities at their observed CITs. Model variants are compared by AIC:

* LMD: one sigma_v for the whole dataset, separately trained models
* LMP: one sigma_v per participant, separately trained models
* LSP: one sigma_v per participant, a single sigma_v-conditioned model
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .evaluation import TrialRecord
from .world import Outcome, RoadGeometry, Scenario, crossing_outcome, match_scenario

BANDWIDTH_FLOOR = 0.05  # s
DENSITY_FLOOR = 1e-6
HUMAN_COLUMNS = ("participant_id", "v0_mps", "d0_m", "cit_s")

_SQRT_2PI = math.sqrt(2 * math.pi)


class DataError(ValueError):
    """Malformed behavioural data."""


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return BANDWIDTH_FLOOR
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    bw = 0.9 * min(sd, (q75 - q25) / 1.34) * x.size ** (-0.2)
    return max(float(bw), BANDWIDTH_FLOOR)


@dataclass
class CitPdf:
    scenario_id: int | None
    sigma_v: float | None
    bandwidth: float
    samples: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.samples.size == 0:
            return np.zeros_like(t)
        u = (t[..., None] - self.samples) / self.bandwidth
        return np.exp(-0.5 * u * u).sum(axis=-1) / (self.samples.size * self.bandwidth * _SQRT_2PI)


def kde_pdf(samples, bandwidth: float | None = None, scenario_id: int | None = None,
            sigma_v: float | None = None) -> CitPdf:
    """Gaussian KDE of finite CIT samples; Silverman bandwidth floored at 0.05 s."""
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    if bandwidth is None:
        bandwidth = silverman_bandwidth(x)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return CitPdf(scenario_id, sigma_v, float(bandwidth), x)


def participant_loglik(pdfs: Mapping[int, CitPdf], trials: Iterable[TrialRecord],
                       floor: float = DENSITY_FLOOR) -> float:
    total = 0.0
    for tr in trials:
        if tr.scenario_id not in pdfs:
            raise KeyError(f"no model density for scenario {tr.scenario_id}")
        total += math.log(max(float(pdfs[tr.scenario_id](tr.cit)), floor))
    return total


def aic(k: int, loglik: float) -> float:
    if k < 0:
        raise ValueError("k must be non-negative")
    return 2 * k - 2 * loglik


# --- model banks ---------------------------------------------------------------

@dataclass
class ModelBank:
    """Model CIT samples for every (sigma_v, scenario) cell."""

    cits: dict[float, dict[int, np.ndarray]] = field(default_factory=dict)
    kind: str = "per-sigma"
    _pdfs: dict = field(default_factory=dict, repr=False)

    @property
    def sigmas(self) -> list[float]:
        return sorted(self.cits)

    def add(self, sigma_v: float, scenario_id: int, cits) -> None:
        self.cits.setdefault(float(sigma_v), {})[int(scenario_id)] = np.asarray(cits, dtype=float)
        self._pdfs.pop(float(sigma_v), None)

    def pdfs(self, sigma_v: float) -> dict[int, CitPdf]:
        sigma_v = float(sigma_v)
        if sigma_v not in self.cits:
            raise KeyError(f"sigma_v={sigma_v} not in bank")
        if sigma_v not in self._pdfs:
            self._pdfs[sigma_v] = {sid: kde_pdf(c, scenario_id=sid, sigma_v=sigma_v)
                                   for sid, c in self.cits[sigma_v].items()}
        return self._pdfs[sigma_v]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("sigma_v", "scenario_id", "cit_s"))
            for sig in self.sigmas:
                for sid in sorted(self.cits[sig]):
                    for c in self.cits[sig][sid]:
                        w.writerow((repr(sig), sid, "" if math.isnan(c) else repr(float(c))))

    @classmethod
    def read_csv(cls, path: str | Path, kind: str = "per-sigma") -> "ModelBank":
        rows: dict[tuple[float, int], list[float]] = {}
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                key = (float(row["sigma_v"]), int(row["scenario_id"]))
                rows.setdefault(key, []).append(float(row["cit_s"]) if row["cit_s"] else math.nan)
        bank = cls(kind=kind)
        for (sig, sid), c in sorted(rows.items()):
            bank.add(sig, sid, c)
        return bank


def build_bank(cit_sampler: Callable[[float, Scenario, int, int], np.ndarray], sigmas: Sequence[float],
               scenarios: Sequence[Scenario], n: int = 1000, seed: int = 0, kind: str = "per-sigma") -> ModelBank:
    """Fill a bank by calling ``cit_sampler(sigma_v, scenario, n, seed)`` for every cell."""
    bank = ModelBank(kind=kind)
    for i, sig in enumerate(sigmas):
        for s in scenarios:
            bank.add(sig, s.id, cit_sampler(sig, s, n, seed * 100_003 + i * 101 + s.id))
    return bank


# --- fitting -------------------------------------------------------------------

@dataclass
class FitResult:
    participant_id: str | None
    best_sigma: float
    loglik: float
    grid: list[float]
    logliks: list[float]
    variant: str = "LMP"


def fit_sigma(trials: Sequence[TrialRecord], bank: ModelBank, grid: Sequence[float] | None = None,
              variant: str = "LMP") -> FitResult:
    """Maximum-likelihood sigma_v over ``grid``; ties go to the smaller value."""
    grid = sorted(bank.sigmas if grid is None else grid)
    if not grid:
        raise ValueError("empty sigma grid")
    lls = [participant_loglik(bank.pdfs(s), trials) for s in grid]
    best = 0
    for i, ll in enumerate(lls):
        if ll > lls[best]:
            best = i
    pids = {t.participant_id for t in trials}
    pid = pids.pop() if len(pids) == 1 else None
    return FitResult(pid, grid[best], lls[best], list(grid), lls, variant)


@dataclass
class VariantRow:
    variant: str
    k: int
    loglik: float
    aic: float
    best: bool = False


def by_participant(trials: Iterable[TrialRecord]) -> dict[str, list[TrialRecord]]:
    out: dict[str, list[TrialRecord]] = {}
    for t in trials:
        out.setdefault(t.participant_id, []).append(t)
    return dict(sorted(out.items()))


def compare_variants(trials: Sequence[TrialRecord], per_sigma_bank: ModelBank,
                     conditioned_bank: ModelBank | None = None,
                     grid: Sequence[float] | None = None) -> tuple[list[VariantRow], list[FitResult]]:
    """AIC table of LMD, LMP and (given a conditioned bank) LSP, plus all fits."""
    if any(t.participant_id is None for t in trials):
        raise ValueError("every trial needs a participant id")
    groups = by_participant(trials)
    fits = []
    pooled = fit_sigma(trials, per_sigma_bank, grid, "LMD")
    fits.append(pooled)
    rows = [VariantRow("LMD", 1, pooled.loglik, aic(1, pooled.loglik))]
    banks = [("LMP", per_sigma_bank)]
    if conditioned_bank is not None:
        banks.append(("LSP", conditioned_bank))
    for name, bank in banks:
        per = [fit_sigma(g, bank, grid, name) for g in groups.values()]
        fits.extend(per)
        ll = sum(f.loglik for f in per)
        rows.append(VariantRow(name, len(groups), ll, aic(len(groups), ll)))
    best = min(range(len(rows)), key=lambda i: rows[i].aic)
    rows[best].best = True
    return rows, fits


# --- behavioural data ----------------------------------------------------------

def read_human_csv(path: str | Path, scenarios: Sequence[Scenario],
                   geometry: RoadGeometry | None = None) -> list[TrialRecord]:
    """Parse ``participant_id,v0_mps,d0_m,cit_s`` rows into trial records."""
    geometry = geometry or RoadGeometry()
    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in HUMAN_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {c: header.index(c) for c in HUMAN_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                pid = row[col["participant_id"]].strip()
                v0 = float(row[col["v0_mps"]])
                d0 = float(row[col["d0_m"]])
                cit = float(row[col["cit_s"]])
            except (IndexError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: malformed row {row!r} ({e})") from None
            if not pid or not math.isfinite(cit) or cit < 0:
                raise DataError(f"{path}:{lineno}: need a participant id and a finite cit >= 0")
            try:
                s = match_scenario(scenarios, v0, d0)
            except KeyError as e:
                raise DataError(f"{path}:{lineno}: {e.args[0]}") from None
            collided = crossing_outcome(s, geometry, cit)[0] is Outcome.COLLISION
            out.append(TrialRecord(s.id, s.v0, s.tau0, math.nan, cit, cit < s.tau0, collided,
                                   source="Human", participant_id=pid))
    return out


def write_human_csv(trials: Sequence[TrialRecord], scenarios: Sequence[Scenario], path: str | Path) -> None:
    by_id = {s.id: s for s in scenarios}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HUMAN_COLUMNS)
        for t in trials:
            s = by_id[t.scenario_id]
            w.writerow((t.participant_id, s.v0, s.d0, repr(float(t.cit))))


def synthesize(cit_sampler: Callable[[float, Scenario, int, int], np.ndarray], sigmas: Sequence[float],
               scenarios: Sequence[Scenario], repeats: int = 1, seed: int = 0,
               participant_prefix: str = "P") -> list[TrialRecord]:
    """Synthetic participants, one per entry of ``sigmas``.

    Each participant does every scenario ``repeats`` times; a CIT is one model
    rollout drawn with a seed derived from ``seed``, participant and scenario.
    Truncated rollouts are redrawn.
    """
    out = []
    width = len(str(len(sigmas)))
    for p, sig in enumerate(sigmas):
        pid = f"{participant_prefix}{p + 1:0{width}d}"
        for s in scenarios:
            sub = np.random.SeedSequence([seed, p, s.id])
            cits: list[float] = []
            attempt = 0
            while len(cits) < repeats:
                draw = cit_sampler(sig, s, repeats, int(sub.generate_state(1, np.uint32)[0]) + attempt)
                cits.extend(c for c in draw if math.isfinite(c))
                attempt += 1
                if attempt > 50:
                    raise RuntimeError(f"model never crosses in scenario {s.id} at sigma_v={sig}")
            for c in cits[:repeats]:
                out.append(TrialRecord(s.id, s.v0, s.tau0, float(sig), float(c), c < s.tau0, False,
                                       source="Model", participant_id=pid))
    return out
