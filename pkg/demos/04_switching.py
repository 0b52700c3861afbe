"""Does a front that moved also pay the free-energy price?

Among replicas whose front travelled eps^-1 R, counts how many also exceeded
(2n + 1) F(mbar) - delta in free energy, for the optimal n, at two values of
gamma.
"""
from pathlib import Path

from kacldp import ExperimentConfig
from kacldp.harness import switching_trend

cfg = ExperimentConfig.from_json(Path(__file__).parent / "configs" / "switching.json")
for row in switching_trend(cfg, [0.05, 0.02]):
    print(f"gamma {row['gamma']}: C in {row['n_C']} replicas, P(A|C) = {row['p_A_given_C']:.3f} "
          f"[{row['ci_low']:.3f}, {row['ci_high']:.3f}]")
