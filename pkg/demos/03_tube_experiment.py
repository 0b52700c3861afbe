"""Monte Carlo tube probabilities at desk scale.

Starts many replicas near the instanton, estimates how often the block
magnetizations stay in each target tube, both directly and under a tilted
proposal, and sets -gamma ln P against the discrete action.  Reports land in
demos/out/.
"""
import sys
from pathlib import Path

from kacldp import ExperimentConfig, emit_report, run_tube_experiment

here = Path(__file__).parent
cfg = ExperimentConfig.from_json(here / "configs" / "tube.json")
if len(sys.argv) > 1:
    cfg.replicas = int(sys.argv[1])
rec = run_tube_experiment(cfg)
print(f"{rec.constants['n_sites']} sites in {rec.constants['n_blocks']} blocks, Delta = {rec.constants['Delta']:.4f}")
print("target  action   direct hits  -g ln P (tilted)   slack")
for r in rec.estimates:
    print(f"{r['target']:6d}  {r['action']:.4f}  {r['hits']:11d}  {r['cost']:.4f} +- {r['cost_se']:.4f}  {r['slack']:.3g}")
print("checks:", rec.checks)
for p in emit_report(rec, "csv", here / "out", stem="tube"):
    print("wrote", p)
