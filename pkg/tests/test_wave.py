import json

import numpy as np
import pytest

from beamlab import coefficients as C
from beamlab import geometry as G
from beamlab import wave as W
from beamlab.errors import BlowupError, CFLError, ParameterError, PreconditionError

from _oracles import fit_slope, mode_observability_ratio, standing_mode, standing_mode_trace_norm_sq
from _fixtures import family_1d

E1 = G.get_metric("euclidean", 1)
DOM = G.get_domain("interval")
ONE = C.get_fixture("constant")
SINE = lambda x: np.sin(np.pi * x[:, 0])


def test_standing_mode_and_trace():
    hist, tr = W.solve_wave(ONE, E1, DOM, SINE, None, 1.0, 400, 0.45)
    x = hist.grid.points[hist.grid.interior, 0]
    err = max(np.max(np.abs(u - standing_mode(x, t))) for t, u in zip(hist.t, hist.u))
    assert err <= 1e-3
    assert hist.energy_drift() <= 1e-3
    assert tr.norm_sq() == pytest.approx(standing_mode_trace_norm_sq(1.0), rel=0.02)
    assert hist.cfl <= 0.45 + 1e-12


def test_zero_data_stays_zero():
    hist, tr = W.solve_wave(ONE, E1, DOM, None, None, 0.5, 100)
    assert np.all(hist.u == 0) and np.all(tr.values == 0)


def test_cfl_and_boundary_guards():
    with pytest.raises(CFLError):
        W.solve_wave(ONE, E1, DOM, SINE, None, 1.0, 100, 0.9)
    with pytest.raises(PreconditionError):
        W.solve_wave(ONE, E1, DOM, lambda x: np.ones(len(x)), None, 1.0, 100)
    with pytest.raises(ParameterError):
        W.make_grid(G.get_metric("euclidean:2"), G.get_domain("unit_ball:2"), 20)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_field_raises():
    u0 = np.zeros(101)
    u0[50] = np.inf
    with pytest.raises(BlowupError):
        W.solve_wave(ONE, E1, DOM, u0, None, 0.2, 100)


def test_dtn_trace_matches_solver_trace():
    hist, tr = W.solve_wave(ONE, E1, DOM, SINE, None, 0.5, 100)
    again = W.dtn_trace(hist)
    assert np.allclose(again.values, tr.values, rtol=1e-12, atol=1e-14)


def test_d_alpha_on_eigenfunction():
    out = W.d_alpha_apply(ONE, E1, SINE, 1, domain=DOM, n_nodes=1000)
    x = np.linspace(0, 1, 1001)
    assert np.max(np.abs(out + np.pi**2 * np.sin(np.pi * x))) <= 1e-4
    same = W.d_alpha_apply(ONE, E1, SINE, 0, domain=DOM, n_nodes=1000)
    assert np.allclose(same, np.sin(np.pi * x), atol=1e-15)
    # alpha = 4 slows the wave: the operator scales by 1/4
    quarter = W.d_alpha_apply(ONE.scaled(4), E1, SINE, 1, domain=DOM, n_nodes=1000)
    assert np.allclose(quarter, out / 4, atol=1e-12)


def test_rectangle_energy_conserved():
    dom = G.get_domain("rectangle")
    u0 = lambda x: np.sin(np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1])
    hist, _ = W.solve_wave(ONE, G.get_metric("euclidean:2"), dom, u0, None, 0.5, 40)
    assert hist.energy_drift() <= 1e-2


def test_observability_constant_alpha_matches_modes():
    rep = W.observability_ratio(ONE, E1, DOM, 5, 4.0, 0, n_nodes=400, t_alpha=1.0)
    ref = np.array([mode_observability_ratio(4.0, k) for k in range(1, 6)])
    assert np.allclose(rep.r_k, ref, rtol=0.02)
    assert abs(rep.slope) < 0.02
    assert rep.T_ok and not rep.warnings
    data = json.loads(rep.to_json())
    assert data["ensemble"][0] == "mode-1" and data["T_gt_2T_alpha"]


def test_observability_short_time_warns():
    rep = W.observability_ratio(ONE, E1, DOM, 3, 1.5, 0, n_nodes=200, n_random=2, t_alpha=1.0)
    assert not rep.T_ok and rep.warnings
    assert len(rep.ratios) == 5 and np.all(rep.ratios > 0)


def test_trace_csv(tmp_path):
    _, tr = W.solve_wave(ONE, E1, DOM, SINE, None, 0.1, 50)
    tr.to_csv(tmp_path / "tr.csv")
    rows = (tmp_path / "tr.csv").read_text().splitlines()
    assert rows[0] == "t,node,value"
    assert len(rows) == 1 + len(tr.times) * 2


def test_quasimode_residual_of_exact_mode_vanishes():
    # h^{-1-eps} = pi^2 makes sin(pi x) an exact Helmholtz mode
    eps = 0.5
    h = np.pi ** (-2 / (1 + eps))
    z = np.linspace(0, 1, 4001)[:, None]
    tfs = W.default_test_functions(0.1, 0.9, 3)
    rep = W.quasimode_residual((z, np.sin(np.pi * z[:, 0])), ONE, E1, tfs, h=h, epsilon=eps)
    assert np.max(rep.residuals) <= 1e-6
    zero = W.quasimode_residual((z, np.zeros(len(z))), ONE, E1, tfs, h=h, epsilon=eps)
    assert np.all(zero.residuals == 0)


def test_test_function_laplacian_matches_finite_differences():
    tf = W.TestFunction(np.array([0.4]), 0.3)
    x = np.linspace(0.15, 0.65, 11)[:, None]
    d = 1e-4
    fd = (tf.value(x + d) - 2 * tf.value(x) + tf.value(x - d)) / d**2
    assert np.allclose(tf.laplacian(x, E1), fd, atol=1e-4)


def test_two_branch_ansatz_carries_data():
    phi0 = np.array([1.0, 2.0])
    phi1 = np.array([0.5, -1.0])
    value, rate = W.two_branch_ansatz(phi0, phi1, 3.0)
    assert np.array_equal(value(0.0), phi0)
    assert np.array_equal(rate(0.0), phi1)
    t, d = 0.7, 1e-6
    assert np.allclose((value(t + d) - value(t - d)) / (2 * d), rate(t), atol=1e-8)


def test_lifted_ansatz_zero_input_and_dimension_guard():
    fam = family_1d(2.0**-5)
    an = W.build_lifted_ansatz(fam, np.zeros(len(fam.nodes)), 1.0, 0.5, ONE)
    assert np.all(an.pi_applied == 0)
    assert an.omega == pytest.approx(2.0 ** (5 * 0.75))


def test_time_integrated_source_gains_inverse_frequency():
    f = lambda x: np.exp(-(((x[..., 0] - 0.5) / 0.25) ** 2))
    tfs = W.default_test_functions(0.1, 0.9, 3)
    for k in (5, 7):
        an = W.build_lifted_ansatz(family_1d(2.0**-k), f, 1.0, 0.5, ONE)
        r = W.wave_error_decomposition(an, ONE, E1, DOM, 1.0, tfs, n_nodes=400, f=f)
        assert 1.0 <= r.rhs_ratio / r.rhs_gain <= 2.0


@pytest.mark.xfail(reason="weak pairings of the error grow as h shrinks; recorded as an open gap", strict=False)
def test_error_pairings_decay_with_h():
    f = lambda x: np.exp(-(((x[..., 0] - 0.5) / 0.25) ** 2))
    tfs = W.default_test_functions(0.1, 0.9, 3)
    hs, pv = [], []
    for k in (5, 6, 7):
        h = 2.0**-k
        an = W.build_lifted_ansatz(family_1d(h), f, 1.0, 0.5, ONE)
        r = W.wave_error_decomposition(an, ONE, E1, DOM, 1.0, tfs, n_nodes=400, f=f)
        hs.append(h)
        pv.append(np.max(r.pairing_v))
    assert fit_slope(hs, pv) >= 0.0
