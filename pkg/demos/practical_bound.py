"""Practical-stability bound for the nonlinear bit torque, checked against a simulation."""

from drillstab import PiGains, PhysicalParams, TorqueModel, analysis, normalize, sim

npar = normalize(PhysicalParams())
gains = PiGains(kp=1e-3, ki=10.0)
torque = TorqueModel()

rep = analysis.practical_bound(5, npar, gains, 5.0, torque)
print(f"certified={rep.certified} tau0={rep.tau0:.5g} eps1={rep.eps1:.5g} X_bound={rep.X_bound:.5g}")

tr = sim.simulate(npar, gains, torque, sim.SimConfig(t_end=100.0, omega0=5.0, initial="doubled", mode="nonlinear"))
tail = tr.energy[tr.t >= 50.0].max()
print(f"simulated late energy max {tail:.3f} (inside bound: {tail <= rep.X_bound})")
