import numpy as np
import pytest

from beamlab import coefficients as C
from beamlab import geometry as G
from beamlab import superposition as S
from beamlab.errors import ParameterError, PreconditionError, ResolutionError

from _oracles import fit_slope
from _fixtures import family_1d

E1 = G.get_metric("euclidean", 1)
ONE = C.get_fixture("constant")


def smooth_f(z):
    return np.exp(-(((z[..., 0] - 0.25) / 0.3) ** 2))


@pytest.fixture(scope="module")
def fam8():
    return family_1d(2.0**-8)


def test_zero_phase_initialization():
    K = G.tensor_grid([-0.5, -0.5], [0.5, 0.5], [5, 5])
    F = S.build_family(G.get_metric("euclidean:2"), lambda z: np.ones(len(z)), lambda z: np.zeros(len(z)), K, 2.0**-6, 1e-2, 0.5)
    assert np.all(F.p[0] == 0)
    assert np.allclose(F.M[0], 1j * np.eye(2), atol=1e-6)
    assert np.allclose(F.x[0], F.nodes)


def test_linear_phase_shares_momentum_and_squeezing_is_isometric():
    xi = np.array([0.6, -0.8])
    K = G.tensor_grid([-0.5, -0.5], [0.5, 0.5], [7, 7])
    F = S.build_family(G.get_metric("euclidean:2"), lambda z: np.ones(len(z)), lambda z: z @ xi, K, 2.0**-6, 1e-2, 1.0)
    assert np.allclose(F.p, xi, atol=1e-8)
    c1, c2 = F.squeeze
    assert c1 == pytest.approx(1.0, abs=1e-8) and c2 == pytest.approx(1.0, abs=1e-8)


def test_squeezing_constants_conformal():
    K = G.tensor_grid([-0.4, -0.4], [0.4, 0.4], [6, 6])
    F = S.build_family(
        G.get_metric("conformal:mild-disk", 2), lambda z: np.ones(len(z)), lambda z: z[:, 0], K, 2.0**-6, 1e-2, 2.0
    )
    c1, c2 = F.squeeze
    assert 0 < c1 <= c2 < np.inf


def test_apply_Q_zero_input(fam8):
    assert np.all(S.apply_Q(fam8, lambda z: np.zeros(len(z)), 0.5, fam8.y_grid.points[::50]) == 0)


def test_apply_Q_is_normalized_superposition(fam8):
    y = fam8.y_grid.points[::97]
    ti = fam8.node_index(0.5)
    manual = S.beam_matrix(fam8, ti, y) @ (fam8.weights * smooth_f(fam8.nodes))
    q = S.apply_Q(fam8, smooth_f, 0.5, y)
    assert np.allclose(q, manual / np.sqrt(2 * np.pi * fam8.h), rtol=1e-12)


def test_Q_norm_ratio_trend():
    hs = 2.0 ** -np.arange(5, 10)
    dev = []
    for h in hs:
        F = family_1d(h)
        q = S.apply_Q(F, smooth_f, 0.5, F.y_grid.points)
        nq = np.sqrt(np.sum(np.abs(q) ** 2) * F.y_grid.cell_volume)
        nf = np.sqrt(np.sum(smooth_f(F.nodes) ** 2) * F.weights[0])
        dev.append(abs(nq / nf - 1))
    # the defect decays at least like sqrt(h)
    assert max(dev) < 0.2
    assert fit_slope(hs, dev) >= 0.3


def test_QstarQ_zero_and_resolution(fam8):
    assert np.all(S.apply_QstarQ(fam8, lambda z: np.zeros(len(z)), 0.5).values == 0)
    coarse = family_1d(2.0**-6)
    coarse.y_grid = G.tensor_grid(-1.6, 3.1, 40)
    with pytest.raises(ResolutionError):
        S.apply_QstarQ(coarse, smooth_f, 0.5)


def test_QstarQ_near_identity(fam8):
    out = S.apply_QstarQ(fam8, smooth_f, 0.5).values
    z = fam8.nodes
    sel = (z[:, 0] > -0.3) & (z[:, 0] < 0.8)
    # Q*Q smooths on the sqrt(h) scale, so the defect is O(h) for smooth input
    assert np.max(np.abs(out[sel] - smooth_f(z[sel]))) < 0.1
    assert np.max(np.abs(out.imag)) < 1e-10


def test_disjoint_support_sparsity(fam8):
    K = S.normal_kernel(fam8, 0.5)
    ti = fam8.node_index(0.5)
    x = fam8.x[ti, :, 0]
    far = np.abs(x[:, None] - x[None, :]) >= 4 * fam8.cutoff.inner_radius
    assert np.any(far)
    assert np.all(K[far] == 0)


def test_phase_bounds_positive(fam8):
    delta_fit, delta_eig = S.phase_lower_bound(fam8, 0.5)
    assert delta_fit > 0 and delta_eig > 0
    assert S.phase_gradient_bound(fam8, 0.5, n_pairs=40) > 0


def test_modified_constant_alpha_is_conjugated_normal_operator(fam8):
    c, eps = 1.7, 0.5
    ti = fam8.node_index(0.5)
    x = fam8.x[ti, :, 0]
    cst = C.get_fixture("constant").scaled(c)
    mod = S.apply_modified_normal(fam8, smooth_f, 0.5, eps, cst).values
    e = np.exp(1j * c * fam8.h**-eps * x)
    ref = e * (S.normal_kernel(fam8, 0.5) @ (np.conj(e) * smooth_f(fam8.x[ti])))
    assert np.allclose(mod, ref, rtol=1e-12, atol=1e-14)


def test_modified_epsilon_range(fam8):
    for eps in (0.0, 1.0):
        with pytest.raises(ParameterError):
            S.apply_modified_normal(fam8, smooth_f, 0.5, eps, ONE)


def test_concentration_flat_for_constant_not_for_sign_indefinite(fam8):
    wide = lambda x: np.exp(-(((x[..., 0] - 0.25) / 1.0) ** 2))
    interior = (fam8.nodes[:, 0] > -0.5) & (fam8.nodes[:, 0] < 0.8)
    assert S.concentration_check(fam8, wide, 0.5, 0.5, ONE, interior).flat
    # z alpha(z) = z / (1 + z^2) decreases for |z| > 1, which the node set covers
    assert not S.concentration_check(fam8, wide, 0.5, 0.5, C.get_fixture("lorentz"), interior).flat


def test_stationary_phase_decay_cases():
    grid = G.tensor_grid(-1, 1, 4001)
    bump = lambda x: np.where(np.abs(x[:, 0]) < 1, np.exp(-1 / np.clip(1 - x[:, 0] ** 2, 1e-300, None)), 0.0)
    rep = S.stationary_phase_decay(lambda x: x[:, 0], bump, lambda x: np.ones(len(x)), [4, 8, 16, 32, 64, 128, 256], grid)
    assert rep.order >= 4
    zero = S.stationary_phase_decay(lambda x: x[:, 0], lambda x: np.zeros(len(x)), bump, [4, 8], grid)
    assert np.all(zero.values == 0)
    with pytest.raises(PreconditionError):
        S.stationary_phase_decay(lambda x: x[:, 0] ** 2, bump, lambda x: np.ones(len(x)), [4, 8], grid)


def test_sample_csv(tmp_path, fam8):
    s = S.apply_QstarQ(fam8, smooth_f, 0.5)
    s.to_csv(tmp_path / "q.csv")
    rows = (tmp_path / "q.csv").read_text().splitlines()
    assert rows[0] == "z1,re,im" and len(rows) == len(fam8.nodes) + 1
