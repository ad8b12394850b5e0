"""Gap acceptance of an agent with noisy vision.

Trains one network at a fixed sigma_v (default 0.2) and prints the acceptance
table with 95% intervals. Longer gaps are taken more often, and at the same
gap a fast, far car tends to be accepted more often than a slow, near one.
Training takes several minutes on one core.

usage: python 05_noisy_observer.py [sigma_v] [seed]
"""
import logging
import sys

from pedcross.evaluation import gap_acceptance_rate, rollout
from pedcross.trainer import TrainConfig, train
from pedcross.world import scenario_table

sigma_v = float(sys.argv[1]) if len(sys.argv) > 1 else 0.2
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
logging.basicConfig(level=logging.INFO, format="%(message)s")
res = train(TrainConfig(mode="per-sigma", sigma_v=sigma_v), scenario_table(), seed=seed, progress_every=1000)
print(f"converged={res.converged} after {len(res.log)} episodes\n")

print(" v0     tau0  acceptance  95% interval    collisions")
for s in scenario_table()[:6]:
    recs = rollout(res.net, s, sigma_v, 1000, seed=[seed, s.id])
    c = gap_acceptance_rate(recs)[s.id]
    print(f"{s.v0:6.2f} {s.tau0:6.2f}  {c.rate:9.3f}  [{c.lo:.3f}, {c.hi:.3f}]  {sum(r.collided for r in recs):6d}")
