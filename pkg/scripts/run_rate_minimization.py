#!/usr/bin/env python3
"""Minimize the rare-event rate for an escape event and importance-sample the
same event with the optimal control as the Girsanov tilt.

Writes runs/rate/ (optimal control + convergence trace) and runs/rate_mc/
(the per-noise-level report with the consistency check against the rate)."""

import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from hydroldp.cli import main

CONFIG = """
grid.nx = 8
grid.ny = 8
grid.nz = 8
run.t = 0.25
run.dt = 0.01
run.eps_list = 0.4, 0.2, 0.1, 0.05
run.samples = 256
noise.n_modes = 6
noise.amplitude = 0.5
robin.alpha = 0.3
init.kind = harmonic
init.k1 = 0
init.k2 = 1
init.amplitude = 0.3
init.theta_amplitude = 0.2
event.kind = exceed_distance
event.delta = 0.35
event.norm = H
opt.residual_tol = 1e-3
seed = 7
out = runs/rate
"""


if __name__ == "__main__":
    runs = pathlib.Path("runs")
    runs.mkdir(exist_ok=True)
    path = runs / "rate.cfg"
    path.write_text(CONFIG)
    rc = main(["rate", "--config", str(path)])
    if rc != 0:
        sys.exit(rc)
    head = json.loads((runs / "rate" / "rate.ndjson").read_text().splitlines()[0])
    tilted = CONFIG + (
        f"\ntilt.control_file = {runs / 'rate' / 'optimal.control'}"
        f"\ntilt.rate = {head['rate']}\n"
    )
    path2 = runs / "rate_mc.cfg"
    path2.write_text(tilted)
    sys.exit(main(["mc-ldp", "--config", str(path2), "--out", "runs/rate_mc"]))
