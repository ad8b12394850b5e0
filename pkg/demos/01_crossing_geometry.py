"""Which crossing start times hit the car?

The pedestrian walks across at a fixed speed once it decides to go. The car
holds its speed. For every scenario we print the window of crossing
initiation times (CIT) that end in a collision, then probe a few CITs and
cross-check each label against a brute-force 1 ms simulation.
"""
from pedcross.world import RoadGeometry, brute_force_outcome, collision_window, crossing_outcome, scenario_table

geo = RoadGeometry()
print(f"conflict band {geo.band[0]:.4f}..{geo.band[1]:.4f} m, walk speed {geo.walk_speed} m/s\n")
print(" id   v0     d0    tau0   collision window (s)")
for s in scenario_table():
    lo, hi = collision_window(s, geo)
    tag = "  (training only)" if s.training_only else ""
    print(f"{s.id:3d} {s.v0:6.2f} {s.d0:6.2f} {s.tau0:6.2f}   [{max(lo, 0):5.2f}, {hi:5.2f}]{tag}")

s = scenario_table()[2]  # slow car, 4.58 s gap
print(f"\nscenario {s.id}: outcome and clearance margin by CIT")
for cit in (0.0, 2.0, 3.2, 4.0, 5.0, 6.0):
    out, margin = crossing_outcome(s, geo, cit)
    check = brute_force_outcome(s, geo, cit)
    print(f"  cit {cit:4.1f} s  {out.value:12s} margin {margin:+6.2f} s  brute force agrees: {check is out}")
