import dataclasses
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drillstab import analysis
from drillstab.analysis import SingularCaseError, epsilon1, kp_robustness_bound, mu_max
from drillstab.params import PiGains


def test_mu_max_closed_form(npar):
    assert mu_max(npar, 1e-3) == pytest.approx(7.73e-3, rel=5e-3)
    assert mu_max(npar, -npar.g_tilde) == 0.0
    for kp in (0.5, 1.0, 5.0):
        a = npar.c * (npar.g_tilde + kp)
        val = mu_max(npar, kp)
        assert (val < 0) == (abs(1 + a) < abs(1 - a))
    with pytest.raises(SingularCaseError):
        mu_max(dataclasses.replace(npar, g_tilde=0.0), 1.0 / npar.c)


def test_kp_robustness(npar):
    assert kp_robustness_bound(npar) == pytest.approx(2.1e-3, rel=1e-2)
    assert kp_robustness_bound(npar) == pytest.approx(npar.g_tilde)
    assert kp_robustness_bound(dataclasses.replace(npar, g_tilde=0.0)) == 0.0
    assert kp_robustness_bound(dataclasses.replace(npar, g_tilde=2.0 / npar.c)) == pytest.approx(1.0 / npar.c)


def test_decay_rate_small_order(npar, gains):
    r = analysis.estimate_decay_rate(2, npar, gains)
    assert r.certified
    assert 0 <= r.mu <= r.mu_max + analysis.DEFAULT_TOL
    assert r.mu == pytest.approx(7.31e-3, rel=3e-2)
    assert all(e["status"] in ("feasible", "infeasible", "numerical-failure") for e in r.log)
    with pytest.raises(ValueError):
        analysis.estimate_decay_rate(1, npar, gains, tol=0.0)


def test_decay_not_certified(npar):
    r = analysis.estimate_decay_rate(5, npar, PiGains(1e-3, 1e4))
    assert not r.certified and r.mu == 0.0
    assert r.message == "not certified stable at order 5"


def test_high_order_is_flagged(npar, gains, caplog):
    with caplog.at_level(logging.WARNING, logger="drillstab.analysis"):
        analysis._check_order(9)
    assert "accuracy" in caplog.text


def test_stability_map_cells(npar):
    m = analysis.stability_map(5, npar, [5e-4, 1e-3], [0.0, 10.0, 1e4])
    assert m.stable.shape == (2, 3)
    assert m.excluded[:, 0].all() and not m.stable[:, 0].any()
    assert m.stable[1, 1]
    assert not m.stable[:, 2].any()
    neg = analysis.stability_map(1, npar, [-0.01], [1.0])
    assert neg.status[0, 0] == "unstable: mu_max <= 0"
    with pytest.raises(ValueError):
        analysis.stability_map(1, npar, [1e-3, 1e-4], [1.0])
    with pytest.raises(ValueError):
        analysis.stability_map(1, npar, [1e-3], [1.0], fraction_of_mu_max=1.0)


def test_stability_map_parallel_matches_serial(npar):
    kp, ki = [5e-4, 1e-3, 2e-3], [1.0, 12.0]
    a = analysis.stability_map(2, npar, kp, ki, workers=1)
    b = analysis.stability_map(2, npar, kp, ki, workers=3)
    assert np.array_equal(a.status, b.status)


def test_stability_map_csv(npar, tmp_path):
    m = analysis.stability_map(1, npar, [1e-3], [0.0, 10.0])
    m.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "kp,ki,stable,status"
    assert len(lines) == 3


def _w(N):
    return analysis._w_matrix(N)


def test_epsilon1_examples():
    N = 2
    assert epsilon1(_w(N), np.eye(2), N) == pytest.approx(1.0)
    assert epsilon1(3 * _w(N), 5 * np.eye(2), N) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        epsilon1(-_w(N), np.eye(2), N)
    with pytest.raises(ValueError):
        epsilon1(np.eye(3), np.eye(2), N)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_epsilon1_matches_grid_search(N, seed):
    rng = np.random.default_rng(seed)
    n = 2 + 2 * (N + 1)
    A = rng.normal(size=(n, n))
    PS = A @ A.T + 0.1 * np.eye(n)
    B = rng.normal(size=(2, 2))
    S = B @ B.T + 0.1 * np.eye(2)
    eps = epsilon1(PS, S, N)
    W = _w(N)

    def ok(e):
        return np.linalg.eigvalsh(PS - e * W)[0] >= -1e-12 and np.linalg.eigvalsh(S - 0.5 * e * np.eye(2))[0] >= -1e-12

    grid = np.linspace(0, 2 * eps, 2001)
    best = max(e for e in grid if ok(e))
    assert best == pytest.approx(eps, abs=2 * eps / 2000)


def test_practical_bound_reference(npar, gains, torque):
    r = analysis.practical_bound(5, npar, gains, 5.0, torque)
    assert r.certified
    assert r.tau0 == pytest.approx(2 * mu_max(npar, 1e-3) * 0.99)
    assert r.X_bound > 0 and r.eps1 > 0
    assert r.X_bound == pytest.approx(np.sqrt(r.V_max / r.eps1))
    steps = [t["step"] for t in r.trace]
    assert steps[0] == 0 and steps[-1] == 4


def test_practical_bound_vmax_invariance(npar, gains, torque):
    ref = analysis.practical_bound(3, npar, gains, 5.0, torque)
    for V in (1e2, 1e6):
        r = analysis.practical_bound(3, npar, gains, 5.0, torque, V_max=V, tau0=ref.tau0)
        assert r.certified
        assert r.X_bound == pytest.approx(ref.X_bound, rel=2e-2)


def test_practical_bound_tau0_necessary(npar, gains, torque):
    r = analysis.practical_bound(3, npar, gains, 5.0, torque, tau0=2 * mu_max(npar, gains.kp))
    assert not r.certified
    with pytest.raises(ValueError):
        analysis.practical_bound(3, npar, gains, 5.0, torque, tau0=-1.0)


def test_practical_bound_white_region(npar, torque):
    r = analysis.practical_bound(5, npar, PiGains(1e-3, 1e4), 5.0, torque)
    assert not r.certified
    assert r.message.startswith("practical stability not certified")


def test_practical_bound_eps1_objective(npar, gains, torque):
    a = analysis.practical_bound(3, npar, gains, 5.0, torque)
    b = analysis.practical_bound(3, npar, gains, 5.0, torque, objective="eps1", tau0=a.tau0)
    assert b.certified
    # maximizing the full eps1 can only tighten the bound
    assert b.X_bound <= a.X_bound * (1 + 1e-3)
    with pytest.raises(ValueError):
        analysis.practical_bound(3, npar, gains, 5.0, torque, objective="trace")


def test_report_json(npar, gains, torque, tmp_path):
    r = analysis.practical_bound(2, npar, gains, 5.0, torque)
    analysis.write_json(r, tmp_path / "r.json")
    assert '"X_bound"' in (tmp_path / "r.json").read_text()
