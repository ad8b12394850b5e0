"""Why slow cars look more dangerous.

Two scenarios share the same 4.58 s gap but differ in speed. The slow car is
close and the fast car is far, so at the first decision the slow car's
position is known much better in metres. Divided by a smaller speed, though,
the spread in estimated time to arrival ends up larger for the slow car. This
needs no learning at all, only the perception model.
"""
import numpy as np

from pedcross.evaluation import bootstrap_sd_ratio, first_step_tta, tta_dispersion
from pedcross.world import scenario_table

table = scenario_table()
slow, fast = table[2], table[3]
for sigma_v in (0.01, 0.05, 0.1):
    print(f"sigma_v={sigma_v}")
    for s in (slow, fast):
        st = tta_dispersion(sigma_v, s, 10_000, seed=0)
        print(f"  v0 {s.v0:5.2f}: median {st.median:5.2f} s, 5-95% [{st.p5:5.2f}, {st.p95:5.2f}], "
              f"sd {st.sd:5.2f}, undefined {st.n_undefined}")

a = first_step_tta(0.05, slow, 10_000, seed=1)
b = first_step_tta(0.05, fast, 10_000, seed=2)
r = bootstrap_sd_ratio(a, b, 2000, seed=3)
print(f"\nSD(slow)/SD(fast) at sigma_v=0.05: median {np.median(r):.2f}, "
      f"99% interval [{np.quantile(r, 0.005):.2f}, {np.quantile(r, 0.995):.2f}]")
