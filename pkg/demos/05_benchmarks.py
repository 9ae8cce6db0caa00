"""Short versions of the unsteady benchmarks (a few steps each).

The full runs live behind the CLI:
    puflow run configs/turek_pu1.json
    puflow run configs/oscillating_cylinder.json
    puflow run configs/valve_pufem.json

Run:  python3 demos/05_benchmarks.py
"""
import tempfile

from puflow.run import run_scenario

with tempfile.TemporaryDirectory() as tmp:
    summary = run_scenario({"scenario": "turek", "mode": "pufem",
                            "h_bg": 0.03, "h_em": 0.02, "dt": 0.01},
                           tmp, steps=10, progress=None)
    print("channel cylinder, 10 steps: cd(final) %.3f, flux defect %.1e"
          % (summary["series"]["final_cd"],
             summary["flux_balance"]["relative"]))

with tempfile.TemporaryDirectory() as tmp:
    summary = run_scenario({"scenario": "valve", "mode": "pufem",
                            "h_bg": 0.001, "dt": 0.01}, tmp, steps=5,
                           progress=None)
    print("valve FSI, 5 steps: tip x %.4f mm, min quality %.3f"
          % (1e3 * summary["series"]["final_tip_x"],
             summary["min_quality"]))
