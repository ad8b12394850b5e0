"""Train an agent that sees the world exactly, then watch it cross.

With perfect knowledge every gap from the experiment is safe to take at once,
and the 1 s training gaps are not. Training stops at convergence, which takes
well under a minute of CPU time here.
"""
import logging

from pedcross.evaluation import gap_acceptance_rate, rollout
from pedcross.trainer import TrainConfig, train
from pedcross.world import scenario_table

logging.basicConfig(level=logging.INFO, format="%(message)s")
res = train(TrainConfig(mode="ideal"), scenario_table(), seed=0, progress_every=500)
print(f"converged={res.converged} after {len(res.log)} episodes\n")

for s in scenario_table():
    recs = rollout(res.net, s, None, 200, seed=s.id)
    cell = gap_acceptance_rate(recs)[s.id]
    cits = sorted({r.cit for r in recs})
    print(f"scenario {s.id} tau0 {s.tau0:4.2f}: acceptance {cell.rate:.2f}, "
          f"collisions {sum(r.collided for r in recs)}, CITs seen {cits[:4]}")
