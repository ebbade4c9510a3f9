"""
Efficiency against control Rabi frequency for a few two-photon detunings,
each point with its own control timing.  Writes one CSV per detuning into
./rabi_landscape/ (roughly 10 minutes on one core).

    python3 demos/rabi_landscape.py
"""
import os

import numpy as np

from vapormem.config import ExperimentConfig
from vapormem.sweep import SweepSpec, run_sweep

out = "rabi_landscape"
os.makedirs(out, exist_ok=True)
rabi = (50, 200, 400, 600, 800, 900, 1000, 1100, 1200)

for tp in (-130, -65, 0):
    spec = SweepSpec("rabi_peak", rabi, {"scheme.delta_twophoton_mhz": tp})
    rows = run_sweep(spec, ExperimentConfig(), os.path.join(out, f"tp_{tp}.csv"))
    eta = np.array([r.eta_internal for r in rows])
    best = int(np.argmax(eta))
    print(f"two-photon detuning {tp:5d} MHz")
    for r in rows:
        bar = "#" * int(round(400 * r.eta_internal))
        print(f"  {r.value:6.0f} MHz  {r.eta_internal:.4f}  {bar}")
    print(f"  maximum {eta[best]:.4f} at {rabi[best]} MHz\n")
