"""Certified decay rate against the projection order, next to the delay-free bound."""

from drillstab import PiGains, PhysicalParams, analysis, normalize

npar = normalize(PhysicalParams())
gains = PiGains(kp=1e-3, ki=10.0)

print(f"mu_max = {analysis.mu_max(npar, gains.kp):.5e}")
for N in range(7):
    rep = analysis.estimate_decay_rate(N, npar, gains)
    print(f"N={N}: certified mu = {rep.mu:.5e}  ({rep.iterations} bisection steps)")
