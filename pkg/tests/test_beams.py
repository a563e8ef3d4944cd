import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamlab import beams as B
from beamlab import geometry as G
from beamlab.errors import BranchError, ResolutionError, RiccatiBlowupError

from _oracles import fit_slope, free_particle

E1 = G.get_metric("euclidean:1")
E2 = G.get_metric("euclidean:2")
ZERO1 = B.HessianTriple(np.zeros((1, 1)), np.zeros((1, 1)), np.eye(1))


def test_hessian_triple_euclidean():
    tri = B.hessian_matrices(E2, np.array([0.3, -1.0]), np.array([0.2, 0.7]))
    assert np.all(tri.D == 0) and np.all(tri.B == 0)
    assert np.array_equal(tri.C, np.eye(2))


def test_hessian_triple_conformal_exp():
    # H = exp(-2x) p^2 / 2 at x = 0, p = 1
    tri = B.hessian_matrices(G.get_metric("conformal:exp-x1", 1), np.zeros(1), np.ones(1))
    assert tri.C[0, 0] == pytest.approx(1.0)
    assert tri.B[0, 0] == pytest.approx(-2.0)
    assert tri.D[0, 0] == pytest.approx(2.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(-2, 2), st.floats(-2, 2))
def test_hessian_symmetry(a, b, p1, p2):
    tri = B.hessian_matrices(G.get_metric("conformal:mild-disk", 2), np.array([a, b]), np.array([p1, p2]))
    assert np.max(np.abs(tri.C - tri.C.T)) == 0
    assert np.max(np.abs(tri.D - tri.D.T)) < 1e-12


def test_riccati_step_scalar_free():
    M = np.array([[1j]])
    for _ in range(1000):
        M = B.riccati_step(M, ZERO1, 1e-3)
    assert abs(M[0, 0] - (0.5 + 0.5j)) <= 1e-10


def test_riccati_step_diagonal_free_n2():
    tri = B.HessianTriple(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2))
    M = 1j * np.eye(2)
    for _ in range(500):
        M = B.riccati_step(M, tri, 2e-3)
    assert np.max(np.abs(M - (1 + 1j) / 2 * np.eye(2))) <= 1e-10


def test_riccati_zero_coefficients_constant():
    tri = B.HessianTriple(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    M0 = np.array([[0.3 + 1j, 0.1], [0.1, -0.2 + 2j]])
    assert np.array_equal(B.riccati_step(M0, tri, 0.1), M0)
    assert np.array_equal(B.y_step(np.eye(2), M0, tri, 0.1), np.eye(2))


def test_riccati_step_rejects_loss_of_positivity():
    with pytest.raises(RiccatiBlowupError):
        B.riccati_step(np.array([[-1j]]), ZERO1, 1e-3)


def test_y_step_and_lkk_scalar():
    M = np.array([[1j]])
    Y = np.eye(1, dtype=complex)
    for _ in range(1000):
        Y = B.y_step(Y, M, ZERO1, 1e-3)
        M = B.riccati_step(M, ZERO1, 1e-3)
    assert abs(Y[0, 0] - (1 + 1j)) <= 1e-10
    assert M[0, 0].imag * abs(Y[0, 0]) ** 2 == pytest.approx(1.0, abs=1e-10)


def test_amplitude_closed_form_and_identity():
    a = B.amplitude(1.0, np.array([[1 + 1j]]))
    assert abs(a - 1 / np.sqrt(1 + 1j)) < 1e-15
    assert abs(a) == pytest.approx(2**-0.25)
    assert B.amplitude(0.7 + 0.1j, np.eye(3)) == 0.7 + 0.1j


def test_amplitude_branch_followed_and_jumps_rejected():
    t = np.linspace(0, 20, 2001)
    Y = (1 + 1j * t)[:, None, None] ** 2  # arg det Y passes pi
    a = B.amplitude(1.0, Y)
    assert np.max(np.abs(a - 1 / (1 + 1j * t))) < 1e-12
    with pytest.raises(BranchError):
        B.amplitude(1.0, np.array([[[1.0]], [[-1.0 + 0.01j]]]))


def test_free_particle_bundle_matches_closed_form():
    M0 = np.array([[0.4 + 1.2j, 0.2 - 0.1j], [0.2 - 0.1j, -0.3 + 0.8j]])
    bb = B.propagate_beams(E2, [[0.1, 0.2]], [[1.0, 0.5]], M0[None], 1.0, 1e-3, 5.0)
    for i in range(0, len(bb.t), 250):
        M, Y, _ = free_particle(M0, 1.0, bb.t[i])
        assert np.max(np.abs(bb.M[i, 0] - M)) <= 1e-8
        assert np.max(np.abs(bb.Y[i, 0] - Y)) <= 1e-8
    assert np.allclose(bb.x[:, 0], np.array([0.1, 0.2]) + bb.t[:, None] * np.array([1.0, 0.5]), atol=1e-12)


def test_transport_equation_along_trajectory():
    m = G.get_metric("conformal:gauss-bump", 2)
    x0 = np.array([-0.6, 0.1])
    bb = B.propagate_beams(m, x0[None], G.unit_covector(m, x0, np.array([1.0, 0.2]))[None], None, 1.0, 1e-3, 1.0)
    dt = bb.t[1] - bb.t[0]
    a = bb.a[:, 0]
    worst = 0.0
    for i in range(10, len(bb.t) - 10, 97):
        da = (a[i - 2] - 8 * a[i - 1] + 8 * a[i + 1] - a[i + 2]) / (12 * dt)
        tri = B.hessian_matrices(m, bb.x[i, 0], bb.p[i, 0])
        worst = max(worst, abs(da + 0.5 * a[i] * np.trace(tri.C @ bb.M[i, 0] + tri.B)))
    assert worst <= 1e-8


def test_lkk_invariant_conformal_beam():
    m = G.get_metric("conformal:mild-disk", 2)
    x0 = np.array([-0.5, -0.2])
    bb = B.propagate_beams(m, x0[None], G.unit_covector(m, x0, np.array([1.0, 0.6]))[None], None, 1.0, 1e-3, 3.0, record=False)
    assert bb.lkk_drift[0] <= 1e-6 * 3.0
    assert bb.min_eig[0] > 0


def test_indefinite_start_rejected():
    with pytest.raises(RiccatiBlowupError):
        B.propagate_beams(E2, [[0.0, 0.0]], [[1.0, 0.0]], np.diag([1j, -0.5j])[None], 1.0, 1e-2, 1.0)


def test_propagate_beam_free_flight():
    bm = B.propagate_beam(E1, None, [0.2], [1.0], 2.0**-6, dt=1e-3, T=1.0)
    assert np.allclose(bm.x[:, 0], 0.2 + bm.t, atol=1e-13)
    assert np.isrealobj(bm.phase0)
    assert np.all(np.linalg.eigvalsh(bm.M.imag) > 0)
    assert abs(bm.a[-1] - 1 / np.sqrt(1 + 1j)) < 1e-8


def test_evaluate_beam_on_ray_cutoff_and_decay():
    h = 2.0**-6
    bm = B.propagate_beam(E1, None, [0.0], [1.0], h, dt=1e-3, T=1.0)
    t = 0.5
    i = bm.node(t)
    xt = bm.x[i]
    u = B.evaluate_beam(bm, t, xt[None])[0]
    assert abs(u) == pytest.approx(abs(bm.a[i]), rel=1e-12)
    assert u == pytest.approx(bm.a[i] * np.exp(1j * bm.phase0[i] / h), rel=1e-12)
    far = xt + bm.cutoff.outer_radius * np.array([1.0])
    assert B.evaluate_beam(bm, t, far[None])[0] == 0
    xs = xt + np.linspace(-0.4, 0.4, 201)[:, None]
    c = 0.5 * np.min(np.linalg.eigvalsh(bm.M[i].imag))
    bound = abs(bm.a[i]) * np.exp(-c * np.sum((xs - xt) ** 2, axis=-1) / h)
    assert np.all(np.abs(B.evaluate_beam(bm, t, xs)) <= bound * (1 + 1e-12))


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_phase_imaginary_part_lower_bound(d1, d2):
    bb = B.propagate_beams(G.get_metric("conformal:mild-disk", 2), [[0.0, 0.0]], [[1.0, 0.0]], None, 1.0, 1e-2, 1.0)
    M = bb.M[-1, 0]
    d = np.array([d1, d2])
    im_psi = 0.5 * d @ M.imag @ d
    assert im_psi >= 0.5 * np.min(np.linalg.eigvalsh(M.imag)) * (d @ d) - 1e-15


def test_residuals_vanish_on_ray():
    bm = B.propagate_beam(G.get_metric("conformal:quad-1d"), None, [0.0], [1.0], 2.0**-6, dt=1e-3, T=1.0, cutoff_radius=1.0)
    for t in (0.2, 0.5, 0.8):
        r_e, r_t = B.eikonal_transport_residuals(bm, t, bm.x[bm.node(t)][None])
        assert abs(r_e[0]) <= 1e-6 and abs(r_t[0]) <= 1e-6


def test_free_particle_eikonal_residual_small():
    bm = B.propagate_beam(E1, None, [0.0], [1.0], 2.0**-6, dt=1e-3, T=1.0)
    r_e, _ = B.eikonal_transport_residuals(bm, 0.5, np.array([[0.6]]))
    assert abs(r_e[0]) <= 1e-3


def test_residual_slopes_conformal():
    bm = B.propagate_beam(G.get_metric("conformal:quad-1d"), None, [0.0], [1.0], 2.0**-6, dt=1e-3, T=1.0, cutoff_radius=1.0)
    t = 0.5
    x = bm.x[bm.node(t)]
    ds = 2.0 ** -np.arange(2, 8)
    re, rt = [], []
    for d in ds:
        a, b = B.eikonal_transport_residuals(bm, t, (x + d)[None])
        re.append(abs(a[0]))
        rt.append(abs(b[0]))
    assert fit_slope(ds, re) >= 2.7
    assert fit_slope(ds, rt) >= 0.8


def test_schrodinger_residual_resolution_and_zero_beam():
    h = 2.0**-6
    bm = B.propagate_beam(E1, None, [0.0], [1.0], h, dt=1e-3, T=1.0)
    with pytest.raises(ResolutionError):
        B.schrodinger_residual_norm(bm, 0.5, G.tensor_grid(-1, 2, 50))
    zero = B.propagate_beam(E1, None, [0.0], [1.0], h, a0=0.0, dt=1e-3, T=1.0)
    grid = G.tensor_grid(-1, 2, int(3 / (np.sqrt(h) / 8)) + 2)
    assert B.schrodinger_residual_norm(zero, 0.5, grid) == 0.0


def test_cutoff_gradient_bound_over_h():
    vals = []
    for k in range(4, 12):
        h = 2.0**-k
        cut = B.make_cutoff(h, 1)
        r = np.linspace(0, 3 * cut.outer_radius, 4001)
        d1, _ = cut.chi_radial_derivatives(r)
        vals.append(np.max(np.abs(d1)) * np.sqrt(h))
    assert max(vals) < 2.0
    assert np.all(np.diff(vals) < 0)


def test_cutoff_shape():
    cut = B.make_cutoff(2.0**-8, 2)
    r0 = cut.inner_radius
    assert cut.chi(0.0) == 1 and cut.chi(r0) == 1
    assert cut.chi(2 * r0) == 0 and cut.chi(3 * r0) == 0
    assert 0 < cut.chi(1.5 * r0) < 1
