"""End-to-end acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Trained networks come from ``models.get_model`` (seed 0, cached on disk). A
cold cache trains five networks, which takes on the order of half an hour on
one core; later runs take a couple of minutes.
"""
import math
import time

import numpy as np
import pytest
from oracles import bayes_update, wilson
from test_qnet import gradient_error
from verdicts import verdict

import models
from pedcross import perception as pc
from pedcross.cli import NetSampler, main
from pedcross.evaluation import bootstrap_sd_ratio, first_step_tta, gap_acceptance_rate, rollout
from pedcross.fitting import build_bank, compare_variants, fit_sigma, kde_pdf, synthesize
from pedcross.trainer import EpisodeStats, converged, sigma_grid
from pedcross.world import Outcome, RoadGeometry, brute_force_outcome, crossing_outcome, scenario_table

pytestmark = pytest.mark.slow

TABLE = scenario_table()
EXPERIMENT = TABLE[:6]
NOISY = (0.05, 0.1, 0.2)
N = 1000


def test_c1_ideal_observer():
    net, header = models.get_model("ideal")
    bad = []
    for s in TABLE:
        recs = rollout(net, s, None, N, seed=[11, s.id])
        if s.training_only:
            if any(r.accepted or r.collided for r in recs):
                bad.append(f"scenario {s.id} crossed before the car")
        elif not all(r.cit == 0 and r.accepted and not r.collided for r in recs):
            bad.append(f"scenario {s.id} not a first-step safe crossing")
    within = header["converged"] and header["train_seconds"] < 600
    ok = not bad and within
    verdict(1, ok, f"train {header['train_seconds']} s, converged={header['converged']}; "
                   + ("; ".join(bad) or "all experimental gaps at step 0, none at tau0=1"))
    assert ok


@pytest.fixture(scope="module")
def acceptance():
    out = {}
    for sig in NOISY:
        net, _ = models.get_model(f"per-sigma-{sig}")
        for s in EXPERIMENT:
            cell = gap_acceptance_rate(rollout(net, s, sig, N, seed=[12, s.id]))[s.id]
            out[sig, s.v0, round(s.tau0, 2)] = cell
    return out


def test_c2_tta_monotonicity(acceptance):
    bad = []
    for sig in NOISY:
        for v0 in (6.94, 13.89):
            r = [acceptance[sig, v0, t].rate for t in (2.29, 4.58, 6.87)]
            if not r[2] >= r[1] >= r[0]:
                bad.append(f"sigma {sig} v0 {v0}: {r}")
    verdict(2, not bad, "; ".join(bad) or "acceptance non-decreasing in tau0 for every sigma and speed")
    assert not bad


def test_c3_speed_dependence(acceptance):
    parts, hits = [], []
    for sig in NOISY:
        slow, fast = acceptance[sig, 6.94, 4.58], acceptance[sig, 13.89, 4.58]
        assert (slow.lo, slow.hi) == pytest.approx(wilson(slow.accepted, slow.n))
        sep = fast.lo > slow.hi  # intervals disjoint, fast above slow
        hits.append(sep)
        parts.append(f"sigma {sig}: {slow.rate:.3f} [{slow.lo:.3f},{slow.hi:.3f}] vs "
                     f"{fast.rate:.3f} [{fast.lo:.3f},{fast.hi:.3f}]")
    verdict(3, any(hits), "; ".join(parts))
    assert any(hits)


def test_c4_tta_dispersion_mechanism():
    t0 = time.perf_counter()
    slow = first_step_tta(0.05, TABLE[2], 10_000, seed=[13, 3])
    fast = first_step_tta(0.05, TABLE[3], 10_000, seed=[13, 4])
    ratios = bootstrap_sd_ratio(slow, fast, 2000, seed=14)
    lo = float(np.quantile(ratios, 0.005))
    secs = time.perf_counter() - t0
    ok = lo > 1 and secs < 60
    verdict(4, ok, f"SD ratio 0.5% bootstrap quantile {lo:.2f}, {secs:.1f} s")
    assert ok


def test_c5_gradient_check():
    worst = max(gradient_error(seed) for seed in range(100))
    verdict(5, worst < 1e-4, f"worst relative error {worst:.2e} over 100 networks")
    assert worst < 1e-4


def test_c6_kalman_oracle():
    rng = np.random.default_rng(15)
    worst = 0.0
    for _ in range(1000):
        m = rng.uniform([-10, 0], [120, 20])
        sd = rng.uniform(0.05, 10, 2)
        rho = rng.uniform(-0.9, 0.9)
        cov = np.array([[sd[0] ** 2, rho * sd[0] * sd[1]], [rho * sd[0] * sd[1], sd[1] ** 2]])
        z, r = rng.uniform(-10, 120), rng.uniform(1e-3, 30)
        dt, q = rng.uniform(0.01, 0.5), rng.uniform(0, 2)
        b = pc.kf_step(pc.BeliefState(m[0], m[1], cov[0, 0], cov[1, 1], cov[0, 1]), z, r, dt, q)
        pm, pcov = bayes_update(m, cov, z, r, dt, q)
        got = np.array([b.mean_pos, b.mean_vel, b.var_pos, b.var_vel, b.cov_pos_vel])
        want = np.array([pm[0], pm[1], pcov[0, 0], pcov[1, 1], pcov[0, 1]])
        worst = max(worst, float(np.abs(got - want).max()))
    verdict(6, worst < 1e-10, f"worst absolute difference {worst:.1e} over 1000 cases")
    assert worst < 1e-10


def test_c7_collision_oracle():
    rng = np.random.default_rng(16)
    geo = RoadGeometry()
    disagree = 0
    for _ in range(10_000):
        s = TABLE[rng.integers(len(TABLE))]
        cit = float(rng.uniform(0, s.tau0 + 4))
        disagree += crossing_outcome(s, geo, cit)[0] is not brute_force_outcome(s, geo, cit)
    verdict(7, disagree == 0, f"{disagree} disagreements in 10000 pairs")
    assert disagree == 0


@pytest.fixture(scope="module")
def conditioned_bank():
    net, header = models.get_model("conditioned")
    sampler = NetSampler([(net, header)])
    grid = sigma_grid(0, 1, 0.05)
    return sampler, grid, build_bank(sampler, grid, EXPERIMENT, n=1000, seed=17, kind="conditioned")


def test_c8_fitting_recovery(conditioned_bank):
    sampler, grid, bank = conditioned_bank
    hits, misses = 0, []
    for rep in range(20):
        true = grid[np.random.default_rng(rep).integers(len(grid))]
        trials = synthesize(sampler, [true], EXPERIMENT, repeats=10, seed=1000 + rep)
        got = fit_sigma(trials, bank).best_sigma
        if abs(got - true) <= 0.05 + 1e-9:
            hits += 1
        else:
            misses.append(f"{true:.2f}->{got:.2f}")
    cohort = synthesize(sampler, grid[1:], EXPERIMENT, repeats=10, seed=2000)
    rows, _ = compare_variants(cohort, bank)
    by = {r.variant: r for r in rows}
    ok = hits >= 18 and by["LMP"].aic < by["LMD"].aic
    verdict(8, ok, f"recovered {hits}/20 (misses {', '.join(misses) or 'none'}); "
                   f"AIC LMD {by['LMD'].aic:.1f} vs LMP {by['LMP'].aic:.1f}")
    assert ok


def _history(collisions, prev_reward, last_reward):
    out = []
    for i in range(200):
        last = i >= 100
        hit = last and i - 100 < collisions
        out.append(EpisodeStats(i, 1, 0.0, last_reward if last else prev_reward,
                                Outcome.COLLISION if hit else Outcome.SAFE_BEFORE, 0.0, 0.001))
    return out


def test_c9_convergence_boundaries():
    cases = {
        "1 collision": (converged(_history(1, 199, 199), 0.001), True),
        "2 collisions": (converged(_history(2, 199, 199), 0.001), False),
        "eps at minimum": (converged(_history(0, 199, 199), 0.001), True),
        "eps above minimum": (converged(_history(0, 199, 199), 0.0011), False),
        "reward diff 0.99": (converged(_history(0, 198.0, 198.99), 0.001), True),
        "reward diff 1.01": (converged(_history(0, 198.0, 199.01), 0.001), False),
    }
    wrong = [k for k, (got, want) in cases.items() if got is not want]
    verdict(9, not wrong, ", ".join(wrong) or "6/6 boundary cases classified as specified")
    assert not wrong


def test_c10_determinism(tmp_path):
    train = ["train", "--mode", "per-sigma", "--sigma", "0.1", "--seed", "3", "--max-episodes", "30"]
    assert main([*train, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", str(tmp_path / "a/manifest.json"), "--out", str(tmp_path / "b")]) == 0
    ev = ["eval", "--checkpoint", str(tmp_path / "a/checkpoints"), "--sigma", "0.1", "--n", "300",
          "--tta-n", "2000", "--seed", "5"]
    assert main([*ev, "--out", str(tmp_path / "e1")]) == 0
    assert main(["eval", "--config", str(tmp_path / "e1/manifest.json"), "--out", str(tmp_path / "e2")]) == 0
    diffs = []
    for x, y in (("a", "b"), ("e1", "e2")):
        for f in sorted((tmp_path / x).rglob("*")):
            if f.is_file() and f.read_bytes() != (tmp_path / y / f.relative_to(tmp_path / x)).read_bytes():
                diffs.append(str(f.relative_to(tmp_path)))
    verdict(10, not diffs, ", ".join(diffs) or "train and eval replays byte-identical")
    assert not diffs


def test_c11_kde_normalization():
    rng = np.random.default_rng(18)
    sizes = [1, 2, 1000] + [int(round(math.exp(u))) for u in rng.uniform(0, math.log(1000), 37)]
    worst = 0.0
    for n in sizes:
        x = rng.gamma(rng.uniform(0.5, 5), rng.uniform(0.1, 3), n) * rng.choice([1, 10])
        pdf = kde_pdf(x)
        pad = 12 * pdf.bandwidth
        t = np.arange(x.min() - pad, x.max() + pad, pdf.bandwidth / 10)
        worst = max(worst, abs(np.trapezoid(pdf(t), t) - 1))
    verdict(11, worst <= 1e-3, f"worst |integral - 1| = {worst:.1e} over {len(sizes)} sample sets")
    assert worst <= 1e-3
