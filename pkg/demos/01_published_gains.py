"""
Certifying the published controller
===================================

The benchmark plant is a two-state system with one unstable mode and two
saturated inputs. Here the final learned controller is loaded, the largest
certified ellipsoid is computed, and a trajectory starting on the border of
that ellipsoid is simulated with exact saturation.
"""

import numpy as np

from awunfold import catalog
from awunfold.certify import ShapeRefSet, certify, verify_certificate
from awunfold.design import evaluate_controller
from awunfold.model import assemble_closed_loop

plant = catalog.benchmark_plant()
gains = catalog.learned_controller()
sys = assemble_closed_loop(plant, gains)

# The size of an ellipsoid is measured by how far the reference direction
# (0.6, 0.4) in plant coordinates can be scaled before leaving it.
ref = ShapeRefSet.from_partial(catalog.REFERENCE_VERTICES, sys.dim)
cert = certify(sys, ref)
report = verify_certificate(sys, cert, ref)
print(f"certified alpha: {cert.alpha:.3f} (published value {catalog.LEARNED_ALPHA})")
print("independent checks:", report.checks)

# The published boundary state lies on the level set x^T P x = 1.
x0 = np.array(catalog.BOUNDARY_STATE)
print(f"V(x0) = {x0 @ cert.P @ x0:.4f}")

for T in (20.0, 40.0, 60.0):
    s = evaluate_controller(plant, gains, x0, T)
    print(f"T = {T:>4.0f}: |x(T)|/|x(0)| = {s.final_norm / s.initial_norm:.4f}, "
          f"max applied input {s.max_saturated_input:.3f}, "
          f"grid points with saturated command: {s.limit_violations}")
