"""Recover each participant's visual noise from their crossing times.

A model bank holds simulated CITs per (sigma_v, scenario). A kernel density
estimate of each cell gives the likelihood of a participant's CITs, and the
best grid point is their fitted sigma_v. Here the participants are synthetic,
drawn from a trained sigma-conditioned network at known sigma_v values, so the
fit can be scored. The AIC table then compares one shared sigma_v against one
per participant.

Expect misses. A conditioned network trained for 20000 episodes changes its
behaviour only a little between neighbouring sigma_v values, and 60 trials
per participant often cannot tell them apart. Many CITs sit exactly at zero,
so bank cells with more zeros get a narrower kernel, which tends to pull fits
toward large sigma_v.

usage: python 06_fit_participants.py CONDITIONED_CHECKPOINT
       (make one with: pedcross train --mode conditioned --out runs/cond)
"""
import sys

from pedcross.cli import NetSampler
from pedcross.fitting import build_bank, compare_variants, fit_sigma, synthesize
from pedcross.qnet import load_checkpoint
from pedcross.trainer import sigma_grid
from pedcross.world import scenario_table

scen = scenario_table()[:6]
sampler = NetSampler([load_checkpoint(sys.argv[1])])
grid = sigma_grid(0, 1, 0.05)
bank = build_bank(sampler, grid, scen, n=500, seed=0, kind="conditioned")

truth = [0.05, 0.15, 0.3, 0.5, 0.8]
trials = synthesize(sampler, truth, scen, repeats=10, seed=1)
by_pid = {}
for t in trials:
    by_pid.setdefault(t.participant_id, []).append(t)
for true, (pid, ts) in zip(truth, sorted(by_pid.items())):
    f = fit_sigma(ts, bank)
    print(f"{pid}: true sigma_v {true:.2f}, fitted {f.best_sigma:.2f}, log-lik {f.loglik:.1f}")

rows, _ = compare_variants(trials, bank)
print("\nvariant  k   log-lik     AIC")
for r in rows:
    print(f"{r.variant:6s} {r.k:3d} {r.loglik:9.1f} {r.aic:8.1f}{'  <- best' if r.best else ''}")
