import json

import numpy as np
import pytest

from drillstab import lmi, sdp
from drillstab.params import PhysicalParams, PiGains, normalize

WHITE = PiGains(1e-3, 1e4)  # outside the certified region at N = 5


@pytest.mark.parametrize("N", range(9))
def test_dimensions(npar, gains, N):
    sm = lmi.build_structural(N, npar, gains)
    n = 2 * (N + 1)
    assert sm.L_N.shape == (n, n)
    assert sm.F_N.shape == (2 + n, 4 + n)
    assert sm.J_N.shape == (2, 4 + n)
    assert sm.M_N.shape == (n, 4 + n)
    assert sm.D_N.shape == (2 + n, 4 + n)
    assert sm.G_N.shape == sm.H_N.shape == (2, 4 + n)
    assert np.array_equal(sm.D_N, np.vstack([sm.J_N, sm.M_N]))
    prob = lmi.build_theorem1(N, npar, gains)
    assert prob.constraint("Theta").expr.shape == (4 + n, 4 + n)
    T0 = 7622.97
    p2 = lmi.build_theorem2(N, npar, gains, 5.0, T0, 7572.5, 12116.0, 0.01)
    assert p2.constraint("Xi").expr.shape == (6 + n, 6 + n)


def test_boundary_blocks(npar, gains):
    sm = lmi.build_structural(0, npar, gains)
    assert sm.G[0, 0] == pytest.approx(1 + npar.c * (npar.g_tilde + gains.kp), rel=1e-15)
    assert sm.G[0, 0] == pytest.approx(1.0049, abs=1e-4)
    assert np.allclose(sm.H, [[0, npar.c], [0, -npar.c]])
    assert np.allclose(sm.G_N[:, :2], [[0, npar.c * 10], [0, -npar.c * 10]])
    assert np.allclose(sm.H_N[:, :2], [[1, 0], [1, 0]])
    np0 = normalize(PhysicalParams(g=1e-300))
    sm0 = lmi.build_structural(0, np0, PiGains(0.0, 0.0))
    assert np.allclose(sm0.G, [[1, 0], [1, 0]])


def test_constraints_symmetric(npar, gains):
    rng = np.random.default_rng(1)
    for prob in (lmi.build_theorem1(2, npar, gains), lmi.build_corollary1(2, npar, gains, 1e-3),
                 lmi.build_theorem2(2, npar, gains, 5.0, 7622.97, 7572.5, 12116.0, 0.01)):
        vals = {k: rng.normal(size=v.size) for k, v in prob.variables.items()}
        for c in prob.constraints:
            M = c.expr.value(vals)
            assert np.array_equal(M, M.T), c.name


def test_corollary_at_zero_matches_theorem1(npar, gains):
    a = json.loads(lmi.build_theorem1(3, npar, gains).to_json())
    b = json.loads(lmi.build_corollary1(3, npar, gains, 0.0).to_json())
    assert a["constraints"] == b["constraints"] and a["variables"] == b["variables"]
    with pytest.raises(ValueError):
        lmi.build_corollary1(1, npar, gains, -1e-3)


def test_theorem1_feasible_and_white_region(npar, gains):
    assert sdp.solve_problem(lmi.build_theorem1(1, npar, gains)).feasible
    assert not sdp.solve_problem(lmi.build_theorem1(5, npar, WHITE)).feasible


def test_hierarchy_spot_check(npar):
    for g in (PiGains(1e-3, 10.0), PiGains(2e-3, 3.0), PiGains(5e-4, 16.0)):
        if sdp.solve_problem(lmi.build_theorem1(0, npar, g)).feasible:
            assert sdp.solve_problem(lmi.build_theorem1(1, npar, g)).feasible


def test_corollary_around_mu_max(npar, gains):
    assert sdp.solve_problem(lmi.build_corollary1(6, npar, gains, 7.7e-3)).feasible
    assert not sdp.solve_problem(lmi.build_corollary1(6, npar, gains, 8e-3)).feasible


def test_theorem2_reference_point(npar, gains, torque):
    c_b, T0 = torque.linearize(5.0)
    lo, hi = torque.sector_bounds()
    prob = lmi.build_theorem2(5, npar, gains, 5.0, T0, lo, hi, 0.0153, V_max=1e4)
    rep = sdp.solve_problem(prob)
    assert rep.feasible
    assert lmi.theorem2_vmax(prob, rep.values) == 1e4


def test_theorem2_rejects_bad_inputs(npar, gains):
    with pytest.raises(ValueError):
        lmi.build_theorem2(1, npar, gains, 5.0, 7600.0, 7572.5, 12116.0, -1.0)
    with pytest.raises(ValueError):
        lmi.build_theorem2(1, npar, gains, 5.0, 7600.0, 13000.0, 12116.0, 0.01)


def test_theorem2_linear_infeasible_implies_infeasible(npar, torque):
    c_b, T0 = torque.linearize(5.0)
    lo, hi = torque.sector_bounds()
    for tau0 in (1e-2, 1e-4):
        prob = lmi.build_theorem2(5, npar, WHITE, 5.0, T0, lo, hi, tau0)
        assert not sdp.solve_problem(prob).feasible


def test_congruence_scaling_is_exact(npar, gains, torque):
    """The scaled matrix, mapped back, equals the unscaled one at the unscaled multipliers."""
    c_b, T0 = torque.linearize(5.0)
    lo, hi = torque.sector_bounds()
    scaled = lmi.build_theorem2(2, npar, gains, 5.0, T0, lo, hi, 0.01, V_max=50.0)
    raw = lmi.build_theorem2(2, npar, gains, 5.0, T0, lo, hi, 0.01, V_max=50.0, scaled=False)
    rng = np.random.default_rng(3)
    vals = {k: v.matrix(rng.normal(size=v.size)) for k, v in scaled.variables.items()}
    sc = lmi.Theorem2Scaling(npar.alpha2, hi)
    t1, t2, t3 = sc.unscale_taus(vals["tau1"], vals["tau2"], vals["tau3"])
    raw_vals = dict(vals, tau1=t1, tau2=t2, tau3=t3)
    A = lmi.theorem2_matrix(scaled, vals)
    B = lmi.theorem2_matrix(raw, raw_vals, scaled_to_raw=False)
    assert np.allclose(A, B, rtol=1e-10, atol=1e-10 * np.abs(B).max())
