"""Distributed, lumped and two-pole lumped frequency responses with a finite-difference cross-check."""

import numpy as np

from drillstab import LumpedParams, PhysicalParams, freq

phys, lp = PhysicalParams(), LumpedParams()
w = freq.default_grid()
dpm = freq.dpm_response(phys, w)
lpm = freq.lpm_response(lp, w)
lpm2 = freq.lpm2_response(lp, w)

print(f"DPM peaks (rad/s): {np.round(freq.resonance_peaks(dpm)[:5], 3)}")
print(f"DPM -180 deg crossings: {freq.phase_crossings(dpm)}")
print(f"LPM resonance: {freq.lpm_resonance(lp):.4f} rad/s, sqrt(k/I_b) = {np.sqrt(lp.k / lp.I_b):.4f}")
print(f"LPM2 poles: {np.round(freq.lpm2_truncation(lp).poles, 4)}")
sub = w[::40]
err = np.abs(freq.dpm_bvp(phys, sub) / freq.dpm_response(phys, sub).values - 1).max()
print(f"closed form vs finite differences: max relative error {err:.1e}")
