"""Superpositions of Gaussian beams over a compact set of launch points.

``Q_t w(y) = (2 pi h)^{-n/2} sum_z w(z) U_z(t, y) dz`` with beams launched at
``(z, grad Phi(z))`` and initial phase the quadratic Taylor expansion of Phi.
With this normalization ``Q_t^* Q_t`` is close to the identity.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .beams import make_cutoff, propagate_beams
from .errors import BeamlabError, ParameterError, PreconditionError, ResolutionError


def _fd_grad(fun, z, step=1e-5):
    n = z.shape[-1]
    return np.stack([(fun(z + step * e) - fun(z - step * e)) / (2 * step) for e in np.eye(n)], axis=-1)


def _fd_hess(fun, z, step=1e-4):
    n = z.shape[-1]
    return np.stack([(_fd_grad(fun, z + step * e) - _fd_grad(fun, z - step * e)) / (2 * step) for e in np.eye(n)], axis=-1)


@dataclass(eq=False)
class BeamFamily:
    metric: object
    nodes: np.ndarray  # (N, n)
    weights: np.ndarray  # (N,)
    amp0: np.ndarray  # A(z)
    h: float
    cutoff: object
    t: np.ndarray
    x: np.ndarray  # (m, N, n)
    p: np.ndarray
    M: np.ndarray
    a: np.ndarray  # amplitude including the half-density factor
    phase0: np.ndarray
    y_grid: object
    squeeze: tuple = (np.nan, np.nan)
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.nodes.shape[1]

    def node_index(self, t, tol=1e-9):
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > tol:
            raise ParameterError(f"t={t} is not a family time node")
        return i


def build_family(
    metric,
    A,
    Phi,
    K_grid,
    h,
    dt,
    T,
    Phi_grad=None,
    Phi_hess=None,
    y_grid=None,
    cutoff_exponent=None,
    cutoff_radius=None,
    n_pairs=400,
    seed=0,
):
    """Propagate one beam per node of ``K_grid`` (a :class:`TensorGrid`)."""
    z = K_grid.points
    n = z.shape[1]
    w = np.full(len(z), K_grid.cell_volume)
    grad = Phi_grad(z) if Phi_grad is not None else _fd_grad(Phi, z)
    hess = Phi_hess(z) if Phi_hess is not None else _fd_hess(Phi, z)
    M0 = hess + 1j * np.eye(n)
    a0 = np.asarray(A(z), dtype=complex) * np.ones(len(z))
    try:
        b = propagate_beams(metric, z, grad, M0, a0, dt, T, record=True, phase0=Phi(z))
    except BeamlabError as exc:
        raise type(exc)(f"family node failed: {exc}") from exc
    detg = np.linalg.det(metric.eval_g(b.x))
    rho = (detg / detg[0]) ** -0.25
    cut = make_cutoff(h, n, cutoff_exponent, cutoff_radius, None, T)
    fam = BeamFamily(metric, z, w, a0, h, cut, b.t, b.x, b.p, b.M, b.a * rho, b.phase0, y_grid)
    fam.squeeze = squeezing_constants(fam, n_pairs, seed)
    return fam


def squeezing_constants(family, n_pairs=400, seed=0):
    """``(c1, c2)`` with ``c1|z-z'| <= |x-x'| + |p-p'| <= c2|z-z'|`` over sampled pairs and times."""
    N = len(family.nodes)
    if N < 2:
        return (np.nan, np.nan)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, N, n_pairs)
    j = rng.integers(0, N, n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    dz = np.linalg.norm(family.nodes[i] - family.nodes[j], axis=-1)
    dx = np.linalg.norm(family.x[:, i] - family.x[:, j], axis=-1)
    dp = np.linalg.norm(family.p[:, i] - family.p[:, j], axis=-1)
    r = (dx + dp) / dz
    return float(np.min(r)), float(np.max(r))


def _check_grid(family, grid):
    if grid is None:
        raise ParameterError("family has no y grid")
    if grid.spacing > np.sqrt(family.h) / 8 + 1e-15:
        raise ResolutionError(f"y grid spacing {grid.spacing:.3g} exceeds sqrt(h)/8")


def beam_matrix(family, ti, y):
    """``G[y, z] = U_z(t_i, y)`` for every node (cutoffs included)."""
    y = np.asarray(y, dtype=float)
    x = family.x[ti]
    p = family.p[ti]
    M = family.M[ti]
    d = y[:, None, :] - x[None, :, :]
    psi = family.phase0[ti][None, :] + np.einsum("yzi,zi->yz", d, p) + 0.5 * np.einsum("yzi,zij,yzj->yz", d, M, d)
    chi = family.cutoff.chi(np.linalg.norm(d, axis=-1))
    out = np.zeros(chi.shape, dtype=complex)
    on = chi > 0
    out[on] = (chi * family.a[ti][None, :])[on] * np.exp(1j * psi[on] / family.h)
    return out


def apply_Q(family, w, t, y):
    """``Q_t w`` at points ``y``; ``w`` is a callable on nodes or an array of node values."""
    ti = family.node_index(t)
    wv = w(family.nodes) if callable(w) else np.asarray(w)
    G = beam_matrix(family, ti, np.atleast_2d(y))
    return (2 * np.pi * family.h) ** (-family.dim / 2) * (G @ (family.weights * wv))


@dataclass
class NormalOperatorSample:
    t: float
    z_grid: np.ndarray
    values: np.ndarray
    epsilon: float | None
    h: float
    kind: str = "QstarQ"
    direction: np.ndarray | None = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            n = self.z_grid.shape[1]
            wr.writerow([f"z{i + 1}" for i in range(n)] + ["re", "im"])
            for z, v in zip(self.z_grid, self.values):
                wr.writerow([repr(float(c)) for c in z] + [repr(float(v.real)), repr(float(v.imag))])


def normal_kernel(family, t):
    """Matrix of ``Q_t^* Q_t`` acting on node values (node weights included)."""
    _check_grid(family, family.y_grid)
    ti = family.node_index(t)
    G = beam_matrix(family, ti, family.y_grid.points)
    K = (2 * np.pi * family.h) ** (-family.dim) * family.y_grid.cell_volume * (G.conj().T @ G)
    return K * family.weights[None, :]


def apply_QstarQ(family, f, t):
    fv = f(family.nodes) if callable(f) else np.asarray(f)
    vals = normal_kernel(family, t) @ fv
    return NormalOperatorSample(t, family.nodes, vals, None, family.h)


def modified_phase(family, ti, alpha, direction):
    """``u . alpha(z) x(t, z)`` per node."""
    a = alpha.eval(family.nodes) if hasattr(alpha, "eval") else np.asarray(alpha(family.nodes))
    return a * (family.x[ti] @ direction)


def apply_modified_normal(family, f, t, epsilon, alpha, direction_u=None, transport=True):
    """Modified normal operator with phase ``exp(i h^-eps (Theta(z) - Theta(z')))``.

    With ``transport`` the input is ``f(x(t, z'))`` so that the output
    concentrates on ``f`` along the flow.
    """
    if not 0 < epsilon < 1:
        raise ParameterError("epsilon must lie in (0, 1)")
    n = family.dim
    u = np.ones(n) / np.sqrt(n) if direction_u is None else np.asarray(direction_u, dtype=float)
    u = u / np.linalg.norm(u)
    ti = family.node_index(t)
    pts = family.x[ti] if transport else family.nodes
    fv = f(pts) if callable(f) else np.asarray(f)
    th = modified_phase(family, ti, alpha, u)
    e = np.exp(1j * family.h**-epsilon * th)
    vals = e * (normal_kernel(family, t) @ (np.conj(e) * fv))
    return NormalOperatorSample(t, family.nodes, vals, epsilon, family.h, "modified", u)


def concentration_constant(family, t, epsilon, alpha, direction_u=None, node=None):
    """Modified operator applied to ``f = 1`` at one node (the kernel mass)."""
    one = lambda x: np.ones(len(x))
    vals = apply_modified_normal(family, one, t, epsilon, alpha, direction_u).values
    i = len(family.nodes) // 2 if node is None else node
    return vals[i]


@dataclass
class ConcentrationReport:
    factors: np.ndarray  # output / (C f(x(t,z))) per interior node
    spread: float
    flat: bool

    def to_json(self):
        return json.dumps({"spread": self.spread, "flat": self.flat, "factors": np.abs(self.factors).tolist()})


def concentration_check(family, f, t, epsilon, alpha, interior, direction_u=None, tol=0.2):
    """Ratio of the modified output to ``f`` along the flow over ``interior`` nodes."""
    ti = family.node_index(t)
    out = apply_modified_normal(family, f, t, epsilon, alpha, direction_u).values
    ref = f(family.x[ti])
    C = concentration_constant(family, t, epsilon, alpha, direction_u, node=int(np.flatnonzero(interior)[len(np.flatnonzero(interior)) // 2]))
    sel = interior & (np.abs(ref) > 0.1 * np.max(np.abs(ref)))
    fac = np.abs(out[sel] / (C * ref[sel]))
    spread = float(np.max(fac) / np.min(fac) - 1)
    return ConcentrationReport(fac, spread, spread <= tol)


# ---------------------------------------------------------------------------
# phase diagnostics
# ---------------------------------------------------------------------------


def _psi(family, ti, y, idx):
    d = y - family.x[ti, idx]
    return (
        family.phase0[ti, idx]
        + np.einsum("...i,...i->...", d, family.p[ti, idx])
        + 0.5 * np.einsum("...i,...ij,...j->...", d, family.M[ti, idx], d)
    )


def phase_lower_bound(family, t, n_samples=2000, spread=None, seed=0):
    """Fitted ``delta`` in ``Im psi~ >= delta |y - m|^2 + delta/4 |x - x'|^2``."""
    ti = family.node_index(t)
    rng = np.random.default_rng(seed)
    N = len(family.nodes)
    i = rng.integers(0, N, n_samples)
    j = rng.integers(0, N, n_samples)
    s = 2 * np.sqrt(family.h) if spread is None else spread
    mid = 0.5 * (family.x[ti, i] + family.x[ti, j])
    y = mid + rng.normal(scale=s, size=mid.shape)
    im = (_psi(family, ti, y, j) - np.conj(_psi(family, ti, y, i))).imag
    denom = np.sum((y - mid) ** 2, axis=-1) + 0.25 * np.sum((family.x[ti, i] - family.x[ti, j]) ** 2, axis=-1)
    ok = denom > 1e-14
    delta_fit = float(np.min(im[ok] / denom[ok]))
    delta_eig = float(np.min(np.linalg.eigvalsh(family.M[ti].imag)))
    return delta_fit, delta_eig


def phase_gradient_bound(family, t, n_pairs=200, seed=0):
    """Fitted ``C`` in ``inf_y |grad_y psi~| >= C |z - z'|`` over pairs and the y grid."""
    ti = family.node_index(t)
    rng = np.random.default_rng(seed)
    N = len(family.nodes)
    y = family.y_grid.points
    best = np.inf
    for _ in range(n_pairs):
        i, j = rng.integers(0, N, 2)
        if i == j:
            continue
        gi = family.p[ti, i] + (y - family.x[ti, i]) @ family.M[ti, i]
        gj = family.p[ti, j] + (y - family.x[ti, j]) @ family.M[ti, j]
        g = np.linalg.norm(gj - np.conj(gi), axis=-1)
        best = min(best, float(np.min(g)) / float(np.linalg.norm(family.nodes[i] - family.nodes[j])))
    return best


# ---------------------------------------------------------------------------
# non-stationary phase
# ---------------------------------------------------------------------------


@dataclass
class DecayReport:
    lambdas: np.ndarray
    values: np.ndarray
    order: float
    min_grad: float


def stationary_phase_decay(phi, a, v, lambda_list, grid, floor=1e-13):
    """``I(lambda) = int exp(-pi i lambda phi) a v`` and its fitted decay order."""
    x = grid.points
    amp = a(x) * v(x)
    supp = np.abs(amp) > 1e-14
    g = _fd_grad(phi, x[supp]) if np.any(supp) else np.zeros((0, x.shape[1]))
    min_grad = float(np.min(np.linalg.norm(g, axis=-1))) if len(g) else np.inf
    if min_grad < 1e-6:
        raise PreconditionError("phase gradient vanishes on the support")
    ph = phi(x)
    lam = np.asarray(lambda_list, dtype=float)
    vals = np.array([np.sum(np.exp(-1j * np.pi * l * ph) * amp) * grid.cell_volume for l in lam])
    mag = np.abs(vals)
    use = mag > floor
    if np.sum(use) >= 2:
        order = -float(np.polyfit(np.log(lam[use]), np.log(mag[use]), 1)[0])
    else:
        order = np.inf
    return DecayReport(lam, vals, order, min_grad)
