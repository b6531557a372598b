"""
Incremental design on the benchmark
===================================

Starting from a hand-tuned controller without anti-windup, the design loop
trains all controller gains on growing horizons t_k = k T / N using
initial states drawn from a shell around the initial certified ellipsoid,
and keeps whichever stage certifies the largest region.

This takes a couple of minutes. Pass a seed as the first argument.
"""

import logging
import sys

from awunfold import catalog
from awunfold.certify import ShapeRefSet
from awunfold.design import FIRST_THIRD_QUADRANTS, DesignConfig, run_design

logging.basicConfig(level=logging.INFO, format="%(message)s")
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

ref = ShapeRefSet.from_partial(catalog.REFERENCE_VERTICES, 4)
cfg = DesignConfig(T=20, N=20, J=10, beta=10, seed=seed, quadrant_mask=FIRST_THIRD_QUADRANTS)
report = run_design(catalog.benchmark_plant(), catalog.initial_controller(), ref, cfg)

print(f"\nalpha_0 = {report.alpha0:.4f}, alpha_max = {report.alpha_max:.3f} at stage {report.best_stage}")
print("reference sizes from conventional designs:")
for name, alpha in catalog.BASELINE_ALPHAS.items():
    print(f"  {name}: {alpha}")
print("best gains:")
for key, value in report.best_gains.to_dict().items():
    print(f"  {key} = {value}")
