import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from beamlab import geometry as G
from beamlab.errors import DegenerateMetricError, ParameterError

from _oracles import TRAP_R_STAR, christoffel_numeric


def test_metric_inverse_and_positivity():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.8, 0.8, (50, 2))
    for mid in ("euclidean:2", "conformal:exp-x1", "conformal:mild-disk", "conformal:gauss-bump"):
        m = G.get_metric(mid, 2)
        g = m.eval_g(x)
        assert np.all(np.linalg.eigvalsh(g) > 0)
        assert np.max(np.abs(m.eval_ginv(x) @ g - np.eye(2))) < 1e-12


def test_euclidean_derivatives_vanish():
    m = G.get_metric("euclidean:3")
    x = np.random.default_rng(1).normal(size=(7, 3))
    assert np.all(m.eval_dg(x) == 0)
    assert np.all(G.christoffel(m, x) == 0)


def test_christoffel_polar():
    m = G.get_metric("polar")
    gam = G.christoffel(m, np.array([2.0, 0.3]))
    assert gam[0, 1, 1] == pytest.approx(-2.0, abs=1e-10)
    assert gam[1, 0, 1] == pytest.approx(0.5, abs=1e-10)
    assert gam[1, 1, 0] == pytest.approx(0.5, abs=1e-10)


def test_christoffel_conformal_exp():
    gam = G.christoffel(G.get_metric("conformal:exp-x1", 2), np.zeros(2))
    assert gam[0, 0, 0] == pytest.approx(1.0, abs=1e-10)
    assert gam[0, 1, 1] == pytest.approx(-1.0, abs=1e-10)
    assert gam[1, 0, 1] == pytest.approx(1.0, abs=1e-10)


def test_christoffel_matches_symbolic_oracle():
    x1, x2 = sp.symbols("x1 x2", real=True)
    r2 = x1**2 + x2**2
    gsym = sp.exp(2 * (0.1 * sp.exp(-r2))) * sp.eye(2)
    pt = (0.3, -0.2)
    ref = christoffel_numeric(gsym, (x1, x2), pt)
    # same conformal factor through the symbolic metric path
    m = G.SymbolicMetric(gsym, (x1, x2))
    assert np.max(np.abs(G.christoffel(m, np.array(pt)) - ref)) < 1e-8


def test_degenerate_metric_raises():
    r, th = sp.symbols("r theta", real=True)
    m = G.SymbolicMetric(sp.diag(1, r**2), (r, th))
    with pytest.raises(DegenerateMetricError):
        G.christoffel(m, np.array([0.0, 0.0]))


def test_hamiltonian_values():
    e = G.get_metric("euclidean:2")
    assert G.hamiltonian(e, np.zeros(2), np.array([1.0, 0.0])) == pytest.approx(0.5)
    assert G.hamiltonian(e, np.zeros(2), np.zeros(2)) == 0.0
    four = G.SymbolicMetric(sp.Matrix([[4]]), (sp.Symbol("x"),))
    assert G.hamiltonian(four, np.zeros(1), np.ones(1)) == pytest.approx(0.125)


def test_chord_through_center():
    ray = G.hamiltonian_flow(G.get_metric("euclidean:2"), (np.array([-1.0, 0.0]), np.array([1.0, 0.0])), 1e-2, 5.0, G.get_domain("unit_ball:2"))
    assert ray.exit_time == pytest.approx(2.0, abs=1e-9)
    assert ray.exit_transversal
    assert np.max(np.abs(ray.x[:, 1])) < 1e-14


def test_exit_time_formula_unit_ball():
    rng = np.random.default_rng(4)
    th = rng.uniform(0, 2 * np.pi, 1000)
    x = np.stack([np.cos(th), np.sin(th)], -1) * (1 - 1e-12)
    b = rng.uniform(-np.pi / 2 + 0.05, np.pi / 2 - 0.05, 1000)
    nrm = -x / np.linalg.norm(x, axis=1, keepdims=True)
    tan = np.stack([-nrm[:, 1], nrm[:, 0]], -1)
    w = np.cos(b)[:, None] * nrm + np.sin(b)[:, None] * tan
    rays = G.flow_batch(G.get_metric("euclidean:2"), x, w, 5e-2, 3.0, G.get_domain("unit_ball:2"))
    err = max(abs(r.exit_time + 2 * np.dot(xi, wi)) for r, xi, wi in zip(rays, x, w))
    assert err <= 1e-8


def test_hamiltonian_conserved_smooth_metric():
    m = G.get_metric("conformal:gauss-bump", 2)
    x0 = np.array([-0.9, 0.1])
    p0 = G.unit_covector(m, x0, np.array([1.0, 0.2]))
    ray = G.hamiltonian_flow(m, (x0, p0), 1e-3, 3.0)
    H = G.hamiltonian(m, ray.x, ray.p)
    assert np.max(np.abs(H / H[0] - 1)) <= 1e-8
    assert H[0] == pytest.approx(0.5)


def test_hamiltonian_and_geodesic_routes_agree():
    m = G.get_metric("conformal:mild-disk", 2)
    x0 = np.array([-0.5, 0.2])
    p0 = G.unit_covector(m, x0, np.array([1.0, 0.3]))
    ray = G.hamiltonian_flow(m, (x0, p0), 1e-3, 1.0)
    v0 = m.eval_ginv(x0) @ p0
    geo = G.integrate_geodesic(m, x0, v0, 1e-3, 1.0)
    assert np.max(np.abs(geo - ray.x)) <= 1e-6


def test_boundary_conormal_normalized():
    m = G.get_metric("conformal:mild-disk", 2)
    dom = G.get_domain("unit_ball:2")
    pts, _ = dom.boundary_points(64)
    nu = dom.boundary_normal(pts, m)
    q = np.einsum("bi,bij,bj->b", nu, m.eval_ginv(pts), nu)
    assert np.max(np.abs(q - 1)) <= 1e-12


def test_nontrapping_ball_and_interval():
    rep = G.check_nontrapping(G.get_metric("euclidean:2"), G.get_domain("unit_ball:2"), 400, 5.0)
    assert rep.max_exit_time == pytest.approx(2.0, abs=1e-2)
    assert rep.all_transversal and rep.ok
    rep1 = G.check_nontrapping(G.get_metric("euclidean:1"), G.get_domain("interval"), 4, 5.0)
    assert rep1.max_exit_time == pytest.approx(1.0, abs=1e-9)


def test_trapping_fixture_detected():
    m = G.get_metric("conformal:radial-trap", 2)
    x0 = np.array([TRAP_R_STAR, 0.0])
    p0 = G.unit_covector(m, x0, np.array([0.0, 1.0]))
    ray = G.hamiltonian_flow(m, (x0, p0), 1e-2, 30.0, G.get_domain("unit_ball:2"))
    assert ray.trapped or ray.exit_time > 20
    # boundary-launched rays only dwell near the closed orbit, so a finite bound flags them
    rep = G.check_nontrapping(m, G.get_domain("unit_ball:2"), 900, 4.0)
    assert not rep.ok
    assert rep.violations[0]["reason"] == "no exit before T_max"
    mild = G.check_nontrapping(G.get_metric("conformal:mild-disk", 2), G.get_domain("unit_ball:2"), 900, 4.0)
    assert mild.ok


def test_fermi_frame_euclidean_constant():
    e = G.get_metric("euclidean:2")
    ray = G.hamiltonian_flow(e, (np.array([-0.9, 0.2]), np.array([1.0, 0.0])), 1e-2, 3.0, G.get_domain("unit_ball:2"))
    ch = G.fermi_frame(ray, e)
    assert np.max(np.abs(ch.frames - ch.frames[0])) < 1e-14
    assert ch.tube_radius > 0


def test_fermi_frame_gram_identity_conformal():
    m = G.get_metric("conformal:mild-disk", 2)
    x0 = np.array([-0.99, 0.1])
    p0 = G.unit_covector(m, x0, np.array([1.0, 0.4]))
    ray = G.hamiltonian_flow(m, (x0, p0), 1e-3, 4.0, G.get_domain("unit_ball:2"))
    ch = G.fermi_frame(ray, m)
    assert ch.gram_defect <= 1e-8
    assert ch.tube_radius > 0


def test_flow_rejects_outside_start():
    with pytest.raises(ParameterError):
        G.hamiltonian_flow(G.get_metric("euclidean:2"), (np.array([2.0, 0.0]), np.array([1.0, 0.0])), 1e-2, 1.0, G.get_domain("unit_ball:2"))


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0, 2 * np.pi))
def test_unit_covector_has_half_energy(a, b, th):
    m = G.get_metric("conformal:gauss-bump", 2)
    x = np.array([a, b])
    p = G.unit_covector(m, x, np.array([np.cos(th), np.sin(th)]))
    assert G.hamiltonian(m, x, p) == pytest.approx(0.5, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_christoffel_symmetric_lower_indices(a, b):
    gam = G.christoffel(G.get_metric("conformal:mild-disk", 2), np.array([a, b]))
    assert np.max(np.abs(gam - gam.transpose(0, 2, 1))) < 1e-14
