"""
Smoothing the saturation for training
=====================================

Gradients of the unfolded loop need a differentiable input nonlinearity.
The smooth surrogate replaces the corners of the unit clamp by hyperbolic
arcs whose worst-case error is sqrt(zeta)/2, attained at u = +-1.
"""

import numpy as np

from awunfold.model import saturate, smooth_saturate

u = np.linspace(-5, 5, 100_001)
for zeta in (1e-2, 1e-4, 1e-6):
    err = np.abs(smooth_saturate(u, zeta) - saturate(u))
    print(f"zeta = {zeta:.0e}: max error {err.max():.3e} at u = {u[err.argmax()]:+.3f}, "
          f"bound sqrt(zeta)/2 = {np.sqrt(zeta) / 2:.3e}")
