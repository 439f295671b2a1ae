"""
A week of occupancy-driven MPC
==============================

Seven tiled lab days (empty between 01:00 and 06:00) drive a first-order
zone model. We compare the fixed 70/75 degF thermostat with the supervisory
MPC, then degrade the occupancy signal with false negatives.
"""

from dataclasses import replace

from occtool.control import ControlConfig, savings, simulate
from occtool.synthetic import inject_false_negatives, week_scenario

occupancy, weather = week_scenario()
print(f"{len(occupancy)} five-minute intervals, {sum(iv.occupied for iv in occupancy)} occupied")

# %%
# Baseline against MPC with the default weights.

cfg = ControlConfig()
base = simulate(occupancy, weather, controller="baseline", cfg=cfg)
mpc = simulate(occupancy, weather, controller="mpc", cfg=cfg)
for res in (base, mpc):
    print(f"{res.controller:>8}: heat {res.e_heat:7.1f}  cool {res.e_cool:6.1f}  "
          f"total {res.e_total:7.1f}  mean PPD {res.mean_ppd:5.2f}")
print("savings vs baseline (%):", savings(base.e_total, mpc.e_total))

# %%
# The comfort term is in squared degrees while the energy term is scaled by
# the small input gain ``c``. Raising the energy weight shifts the trade-off.

for w in (0.5, 5.0, 50.0, 500.0):
    res = simulate(occupancy, weather, controller="mpc", cfg=replace(cfg, w_energy=w))
    print(f"w_energy {w:6.1f}: total {res.e_total:7.1f}  mean PPD {res.mean_ppd:5.2f}")

# %%
# False negatives: the controller thinks the room is empty when it is not.
# The plant (and the comfort bookkeeping) still sees the real occupants.

for frac in (0.0, 0.1, 0.3):
    seen = inject_false_negatives(occupancy, frac, seed=0)
    res = simulate(seen, weather, controller="mpc", cfg=cfg, true_occupancy=occupancy)
    print(f"{frac:.0%} missed intervals: mean PPD {res.mean_ppd:.3f}")
