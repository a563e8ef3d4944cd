"""Finite-difference wave solver, boundary traces, observability ratios and
the lifted beam Ansatz with its quasimode and error diagnostics.

The equation is ``alpha u_tt = Delta_g u`` with Dirichlet data.  Space is a
divergence-form (finite-volume) Laplace-Beltrami operator on a tensor grid,
time is leapfrog.  Discrete norms share the energy's quadrature weights.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import eigsh

from .coefficients import CoefficientField, modulus_kappa, travel_time
from .errors import BlowupError, CFLError, ParameterError, PreconditionError
from .geometry import TensorGrid, hamiltonian_flow, integrate_along_ray
from .superposition import apply_modified_normal, concentration_constant

CFL_MAX = 0.5


# ---------------------------------------------------------------------------
# grid and operators
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class WaveGrid:
    """Node grid including the boundary, with the discrete operators attached."""

    domain: object
    axes: tuple
    interior: np.ndarray  # flat full-grid indices of unknowns
    stiffness: sp.csr_matrix  # full-grid L, u.L.u = int sqrt(g) g^kk (d_k u)^2
    weight: np.ndarray  # full-grid sqrt(g) * cell volume
    bnd_index: np.ndarray  # boundary nodes carrying a trace
    bnd_inner: np.ndarray  # (nb, 2) first and second inward neighbours
    bnd_coef: np.ndarray  # outward g-unit normal factor / (2 dx)
    bnd_weight: np.ndarray  # boundary measure per trace node

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def dim(self):
        return len(self.axes)

    @property
    def spacing(self):
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def points(self):
        return TensorGrid(self.axes).points

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def boundary_points(self):
        return self.points[self.bnd_index]

    def restrict(self, full):
        return np.asarray(full)[self.interior]

    def extend(self, inner):
        inner = np.asarray(inner)
        out = np.zeros((int(np.prod(self.shape)),) + inner.shape[1:], dtype=inner.dtype)
        out[self.interior] = inner
        return out


def make_grid(metric, domain, n_nodes):
    """Tensor grid with ``n_nodes`` intervals per axis on an interval or rectangle."""
    if domain.kind not in ("interval", "rectangle"):
        raise ParameterError(f"wave solves need an interval or rectangle, got {domain.kind}")
    n = domain.dim
    counts = np.broadcast_to(np.atleast_1d(n_nodes), (n,))
    axes = tuple(np.linspace(lo, hi, int(c) + 1) for lo, hi, c in zip(domain.lo, domain.hi, counts))
    shape = tuple(len(a) for a in axes)
    pts = TensorGrid(axes).points
    dx = np.array([a[1] - a[0] for a in axes])
    vol = float(np.prod(dx))
    ginv = metric.eval_ginv(pts)
    off = ginv - np.einsum("...ii->...i", ginv)[..., None] * np.eye(n)
    if np.max(np.abs(off)) > 1e-12 * max(1.0, np.max(np.abs(ginv))):
        raise ParameterError("grid operator needs a diagonal inverse metric")
    weight = metric.sqrt_det(pts) * vol

    idx = np.arange(pts.shape[0]).reshape(shape)
    L = sp.csr_matrix((pts.shape[0], pts.shape[0]))
    for k in range(n):
        a = np.take(idx, np.arange(shape[k] - 1), axis=k).ravel()
        b = np.take(idx, np.arange(1, shape[k]), axis=k).ravel()
        mid = 0.5 * (pts[a] + pts[b])
        c = metric.sqrt_det(mid) * metric.eval_ginv(mid)[..., k, k] * vol / dx[k] ** 2
        D = sp.csr_matrix(
            (np.concatenate([-np.ones(len(a)), np.ones(len(a))]), (np.tile(np.arange(len(a)), 2), np.concatenate([a, b]))),
            shape=(len(a), pts.shape[0]),
        )
        L = L + D.T @ sp.diags(c) @ D
    on_edge = np.zeros(shape, dtype=bool)
    for k in range(n):
        sl = [slice(None)] * n
        sl[k] = 0
        on_edge[tuple(sl)] = True
        sl[k] = -1
        on_edge[tuple(sl)] = True
    interior = idx[~on_edge]

    # trace nodes: boundary nodes that are not corners, with their inward neighbours
    b_index, b_inner, b_coef, b_w = [], [], [], []
    for k in range(n):
        for side in (0, -1):
            sl = [slice(1, -1)] * n
            sl[k] = side
            face = idx[tuple(sl)].ravel()
            step = int(np.prod(shape[k + 1 :])) * (1 if side == 0 else -1)
            inner = np.stack([face + step, face + 2 * step], axis=-1)
            fp = pts[face]
            gkk = metric.eval_ginv(fp)[..., k, k]
            if n == 1:
                w = np.ones(len(face))
            else:
                g = metric.eval_g(fp)
                w = np.ones(len(face))
                for j in range(n):
                    if j != k:
                        w = w * np.sqrt(g[..., j, j]) * dx[j]
            b_index.append(face)
            b_inner.append(inner)
            # d_nu u = g^kk nu_k d_k u with nu_k = sign / sqrt(g^kk); the one-sided
            # difference flips sign with the side, so both faces share one factor
            b_coef.append(-np.sqrt(gkk) / (2 * dx[k]))
            b_w.append(w)
    return WaveGrid(
        domain,
        axes,
        interior,
        L.tocsr(),
        weight,
        np.concatenate(b_index),
        np.concatenate(b_inner),
        np.concatenate(b_coef),
        np.concatenate(b_w),
    )


def _alpha_values(alpha, pts):
    if isinstance(alpha, CoefficientField):
        return alpha.eval(pts)
    if callable(alpha):
        return np.asarray(alpha(pts), dtype=float)
    return np.broadcast_to(np.asarray(alpha, dtype=float), pts.shape[:-1]).copy()


@dataclass(eq=False)
class WaveOperator:
    grid: WaveGrid
    alpha_full: np.ndarray
    L: sp.csr_matrix  # interior block
    A: np.ndarray  # interior mass alpha sqrt(g) dV
    B: np.ndarray  # interior sqrt(g) dV (no alpha)

    def laplacian_full(self, full):
        """``Delta_g`` at interior nodes from full-grid values (boundary values used as given)."""
        return -(self.grid.stiffness @ full)[self.grid.interior] / _col(self.B, full)

    def d_alpha(self, inner):
        return -(self.L @ inner) / _col(self.A, inner)

    def energy(self, u, v):
        return 0.5 * (_quad(v, self.A) + _quad_L(u, self.L))

    def h1_sq(self, u):
        return _quad_L(u, self.L)

    def l2_sq(self, u, weighted=True):
        return _quad(u, self.A if weighted else self.B)


def _col(w, like):
    return w if np.ndim(like) == 1 else w[:, None]


def _quad(u, w):
    return np.real(np.sum(np.conj(u) * _col(w, u) * u, axis=0))


def _quad_L(u, L):
    return np.real(np.sum(np.conj(u) * (L @ u), axis=0))


def wave_operator(alpha, metric, grid):
    a = _alpha_values(alpha, grid.points)
    if np.any(a <= 0):
        raise ParameterError("alpha must be positive (hyperbolicity)")
    L = grid.stiffness[grid.interior][:, grid.interior].tocsr()
    B = grid.weight[grid.interior]
    return WaveOperator(grid, a, L, a[grid.interior] * B, B)


def cfl_number(op, metric, dt):
    pts = op.grid.points
    ginv = np.einsum("...ii->...i", metric.eval_ginv(pts))
    c2 = ginv / op.alpha_full[:, None]
    return float(dt * np.sqrt(np.max(np.sum(c2 / op.grid.spacing**2, axis=-1))))


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BoundaryTrace:
    times: np.ndarray
    nodes: np.ndarray  # boundary node coordinates
    values: np.ndarray  # (n_t, n_b[, batch])
    weights: np.ndarray  # boundary measure

    def norm_sq(self):
        """``||d_nu u||^2`` over ``(0, T) x boundary`` by the trapezoid rule in time."""
        w = self.weights if self.values.ndim == 2 else self.weights[:, None]
        per_t = np.sum(w * np.abs(self.values) ** 2, axis=1)
        return trapezoid(per_t, x=self.times, axis=0)

    def time_derivative(self, m):
        vals = self.values
        for _ in range(m):
            vals = np.gradient(vals, self.times, axis=0, edge_order=2)
        return BoundaryTrace(self.times, self.nodes, vals, self.weights)

    def to_csv(self, path, column=0):
        vals = self.values if self.values.ndim == 2 else self.values[..., column]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "node", "value"])
            for t, row in zip(self.times, vals):
                for j, v in enumerate(row):
                    w.writerow([repr(float(t)), j, repr(float(np.real(v)))])


@dataclass(eq=False)
class WaveField:
    grid: WaveGrid
    t: np.ndarray  # stored times
    u: np.ndarray  # stored interior values (n_store, n_int[, batch])
    v: np.ndarray
    cfl: float
    dt: float
    alpha: object
    energy: np.ndarray  # at every step
    op: WaveOperator

    def full(self, i):
        return self.grid.extend(self.u[i])

    def energy_drift(self):
        e0 = self.energy[0]
        return np.max(np.abs(self.energy - e0) / np.where(e0 > 0, e0, 1.0), axis=0)


def _sample(data, grid, dtype=float):
    if data is None:
        return np.zeros(int(np.prod(grid.shape)))
    if callable(data):
        return np.asarray(data(grid.points))
    return np.asarray(data)


def solve_wave(
    alpha,
    metric,
    domain,
    u0,
    u1=None,
    T=1.0,
    grid=1000,
    cfl=0.45,
    source=None,
    store_every=1,
    boundary_tol=1e-10,
):
    """Leapfrog solve of ``alpha u_tt = Delta_g u + k``; returns ``(WaveField, BoundaryTrace)``.

    ``u0``/``u1`` are callables on points or full-grid arrays (a trailing batch
    axis is allowed).  ``source(t)`` returns full-grid (or interior) values of ``k``.
    """
    if cfl > CFL_MAX:
        raise CFLError(f"cfl {cfl} exceeds {CFL_MAX}")
    g = grid if isinstance(grid, WaveGrid) else make_grid(metric, domain, grid)
    op = wave_operator(alpha, metric, g)
    U0 = _sample(u0, g)
    U1 = _sample(u1, g)
    bmask = np.ones(U0.shape[0], dtype=bool)
    bmask[g.interior] = False
    if np.max(np.abs(U0[bmask]), initial=0.0) > boundary_tol:
        raise PreconditionError("u0 must vanish on the boundary")
    dt0 = cfl_number(op, metric, 1.0)
    n_steps = int(np.ceil(T * dt0 / cfl))
    dt = T / n_steps
    cfl_eff = cfl_number(op, metric, dt)

    u = g.restrict(U0)
    v0 = g.restrict(U1)
    if U1.ndim < U0.ndim:
        v0 = np.broadcast_to(v0[:, None], u.shape)
    cplx = np.iscomplexobj(u) or np.iscomplexobj(v0)
    S = None
    if source is not None:
        cplx = cplx or np.iscomplexobj(source(0.0))

        def S(t):
            k = np.asarray(source(t))
            k = g.restrict(k) if k.shape[0] != len(g.interior) else k
            return _col(op.B, k) * k

    dtype = complex if cplx else float
    u = u.astype(dtype)
    v0 = v0.astype(dtype)
    Acol = _col(op.A, u)

    def accel(w, t):
        r = -(op.L @ w)
        if S is not None:
            r = r + S(t)
        return r / Acol

    bi = np.searchsorted(g.interior, g.bnd_inner)  # inner neighbours in interior numbering
    if not np.array_equal(g.interior[bi], g.bnd_inner):
        raise ParameterError("trace stencil leaves the interior")
    coef = _col(g.bnd_coef, u)

    def trace(w):
        return coef * (4 * w[bi[:, 0]] - w[bi[:, 1]])

    tr = np.empty((n_steps + 1, len(g.bnd_index)) + u.shape[1:], dtype=dtype)
    energy = np.empty((n_steps + 1,) + u.shape[1:])
    n_store = n_steps // store_every + 1
    hist_u = np.empty((n_store,) + u.shape, dtype=dtype)
    hist_v = np.empty_like(hist_u)
    hist_t = np.empty(n_store)

    prev = u
    cur = u + dt * v0 + 0.5 * dt * dt * accel(u, 0.0)
    energy[0] = op.energy(u, v0)
    tr[0] = trace(u)
    hist_u[0], hist_v[0], hist_t[0] = u, v0, 0.0
    for n in range(1, n_steps + 1):
        nxt = 2 * cur - prev + dt * dt * accel(cur, n * dt)
        vel = (nxt - prev) / (2 * dt)
        energy[n] = op.energy(cur, vel)
        tr[n] = trace(cur)
        if n % store_every == 0:
            j = n // store_every
            hist_u[j], hist_v[j], hist_t[j] = cur, vel, n * dt
        if n % 256 == 0 and not np.all(np.isfinite(cur)):
            raise BlowupError(n, f"non-finite wave field at step {n}")
        prev, cur = cur, nxt
    if not np.all(np.isfinite(hist_u[-1])):
        raise BlowupError(n_steps, "non-finite wave field")
    times = np.arange(n_steps + 1) * dt
    field_ = WaveField(g, hist_t, hist_u, hist_v, cfl_eff, dt, alpha, energy, op)
    return field_, BoundaryTrace(times, g.boundary_points, tr, g.bnd_weight)


def dtn_trace(history):
    """Boundary trace recomputed from a stored history (every stored step)."""
    g = history.grid
    bi = np.searchsorted(g.interior, g.bnd_inner)
    coef = g.bnd_coef if history.u.ndim == 2 else g.bnd_coef[:, None]
    vals = np.stack([coef * (4 * u[bi[:, 0]] - u[bi[:, 1]]) for u in history.u])
    return BoundaryTrace(history.t, g.boundary_points, vals, g.bnd_weight)


def d_alpha_apply(alpha, metric, f, k, grid=None, domain=None, n_nodes=1000):
    """``k``-fold ``f -> alpha^{-1} Delta_g f`` on a grid (Dirichlet); full-grid in, full-grid out."""
    g = grid if grid is not None else make_grid(metric, domain, n_nodes)
    op = wave_operator(alpha, metric, g)
    F = _sample(f, g)
    if k == 0:
        return F.copy()
    inner = g.restrict(F)
    for _ in range(k):
        inner = op.d_alpha(inner)
    return g.extend(inner)


# ---------------------------------------------------------------------------
# observability
# ---------------------------------------------------------------------------


@dataclass
class ObservabilityReport:
    ensemble: list  # initial data ids
    sizes: np.ndarray  # ||u0||_{H^1_0}^2 + ||u1||_{L^2}^2
    ratios: np.ndarray
    k: np.ndarray  # ladder indices of the eigenmode members
    r_k: np.ndarray
    slope: float
    m: int
    T: float
    T_alpha: float
    warnings: list = field(default_factory=list)

    @property
    def min_ratio(self):
        return float(np.min(self.ratios))

    @property
    def median_ratio(self):
        return float(np.median(self.ratios))

    @property
    def T_ok(self):
        return self.T > 2 * self.T_alpha

    def to_json(self):
        return json.dumps(
            {
                "ensemble": self.ensemble,
                "sizes": self.sizes.tolist(),
                "ratios": self.ratios.tolist(),
                "k": self.k.tolist(),
                "r_k": self.r_k.tolist(),
                "slope": self.slope,
                "min_ratio": self.min_ratio,
                "median_ratio": self.median_ratio,
                "m": self.m,
                "T": self.T,
                "T_alpha": self.T_alpha,
                "T_gt_2T_alpha": bool(self.T_ok),
                "warnings": self.warnings,
            },
            indent=2,
        )


def eigenmodes(op, K):
    """Lowest ``K`` generalized eigenpairs of ``L phi = lambda A phi`` (interior values)."""
    if op.grid.dim == 1:
        s = 1 / np.sqrt(op.A)
        Ld = op.L.diagonal()
        Lo = op.L.diagonal(1)
        d = Ld * s * s
        e = Lo * s[:-1] * s[1:]
        lam, w = eigh_tridiagonal(d, e, select="i", select_range=(0, K - 1))
        phi = w * s[:, None]
    else:
        lam, phi = eigsh(op.L, k=K, M=sp.diags(op.A), sigma=0, which="LM")
        order = np.argsort(lam)
        lam, phi = lam[order], phi[:, order]
    return lam, phi


def observability_ratio(
    alpha,
    metric,
    domain,
    ensemble=40,
    T=4.0,
    m=0,
    n_nodes=1000,
    cfl=0.45,
    n_random=0,
    seed=0,
    t_alpha=None,
    t_alpha_refine=2000,
):
    """Boundary-trace to initial-energy ratios over an eigenmode ladder plus random draws.

    ``ensemble`` is the ladder length ``K`` (modes ``k = 1..K``, ``u1 = 0``).
    """
    warnings = []
    if t_alpha is None:
        t_alpha = travel_time(alpha, metric, domain, 4, dt=1e-2, refine=t_alpha_refine)
    if not T > 2 * t_alpha:
        warnings.append(f"T = {T} <= 2 T_alpha = {2 * t_alpha:.4g}")
    g = make_grid(metric, domain, n_nodes)
    op = wave_operator(alpha, metric, g)
    K = int(ensemble)
    lam, phi = eigenmodes(op, K)
    ids = [f"mode-{k}" for k in range(1, K + 1)]
    U0 = phi
    if n_random:
        rng = np.random.default_rng(seed)
        c = rng.normal(size=(K, n_random)) / np.arange(1, K + 1)[:, None]
        U0 = np.concatenate([phi, phi @ c], axis=1)
        ids += [f"random-{j}" for j in range(n_random)]
    full0 = np.stack([g.extend(U0[:, j]) for j in range(U0.shape[1])], axis=-1)
    _, trace = solve_wave(alpha, metric, domain, full0, None, T, g, cfl, store_every=10**9)
    num = trace.time_derivative(m).norm_sq()
    sizes = op.h1_sq(U0)  # u1 = 0
    ratios = num / sizes
    ks = np.arange(1, K + 1)
    slope = float(np.polyfit(np.log(ks), np.log(ratios[:K]), 1)[0])
    return ObservabilityReport(ids, sizes, ratios, ks, ratios[:K], slope, m, T, float(t_alpha), warnings)


# ---------------------------------------------------------------------------
# lifted Ansatz and its diagnostics
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LiftedAnsatz:
    z: np.ndarray  # (N, n) node positions
    phi: np.ndarray  # profile on nodes
    h: float
    epsilon: float
    pi_applied: np.ndarray
    concentration: complex  # kernel mass C of the modified operator
    times: np.ndarray
    family: object = None

    @property
    def omega(self):
        return self.h ** (-0.5 - self.epsilon / 2)

    def time_factor(self, t):
        return np.exp(1j * self.omega * np.asarray(t))

    def value(self, t):
        return self.time_factor(t) * self.pi_applied

    def normalized(self):
        """Profile divided by the concentration constant (the X-ray-type average)."""
        return self.pi_applied / self.concentration


def _unit(n):
    return np.ones(n) / np.sqrt(n)


def build_lifted_ansatz(family, f, T=None, epsilon=0.5, alpha=None, direction_u=None, pi_op=None):
    """``phi = int_0^T Q~*Q~ f(s, .) ds`` (trapezoid in ``s``), then ``Pi`` applied.

    In one dimension ``Pi`` is the identity; otherwise a callable ``pi_op`` is required.
    """
    n = family.dim
    if alpha is None:
        alpha = CoefficientField(lambda x: np.ones(x.shape[:-1]), "lipschitz", (1.0, 1.0), "constant", dim=n)
    T = family.t[-1] if T is None else T
    sel = family.t <= T + 1e-12
    times = family.t[sel]
    u = _unit(n) if direction_u is None else direction_u
    if callable(f) or np.any(f):
        vals = np.array([apply_modified_normal(family, f, t, epsilon, alpha, u).values for t in times])
        phi = trapezoid(vals, x=times, axis=0)
    else:
        phi = np.zeros(len(family.nodes), dtype=complex)
    if pi_op is not None:
        pi = pi_op(phi)
    elif n == 1:
        pi = phi.copy()
    else:
        raise PreconditionError("Pi needs an explicit operator in dimension > 1")
    mid = len(family.nodes) // 2
    C = concentration_constant(family, times[len(times) // 2], epsilon, alpha, u, node=mid)
    return LiftedAnsatz(family.nodes.copy(), phi, family.h, epsilon, pi, complex(C), times, family)


def lifted_xray_reference(ansatz, f, metric, T=None, dt=1e-2):
    """Per-node geodesic X-ray ``int_0^T f(gamma_z(s)) ds`` traced from each node's initial covector."""
    fam = ansatz.family
    T = ansatz.times[-1] if T is None else T
    out = np.empty(len(fam.nodes))
    for i, (z, p) in enumerate(zip(fam.nodes, fam.p[0])):
        ray = hamiltonian_flow(metric, (z, p), dt, T)
        out[i] = integrate_along_ray(ray, metric, lambda t, xs: f(xs))
    return out


@dataclass
class TestFunction:
    """Smooth compactly supported bump ``exp(1 - 1/(1 - q))``, ``q = |x - c|^2 / r^2``."""

    center: np.ndarray
    radius: float

    def _q(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return d, np.sum(d * d, axis=-1) / self.radius**2

    def value(self, x):
        _, q = self._q(x)
        out = np.zeros_like(q)
        on = q < 1
        out[on] = np.exp(1 - 1 / (1 - q[on]))
        return out

    def grad_hess(self, x):
        d, q = self._q(x)
        n = d.shape[-1]
        F = self.value(x)
        on = q < 1
        s = np.where(on, 1 - q, 1.0)
        F1 = np.where(on, -F / s**2, 0.0)
        F2 = np.where(on, F / s**4 - 2 * F / s**3, 0.0)
        gq = 2 * d / self.radius**2
        grad = F1[..., None] * gq
        hess = F2[..., None, None] * gq[..., :, None] * gq[..., None, :] + F1[..., None, None] * (2 / self.radius**2) * np.eye(n)
        return grad, hess

    def laplacian(self, x, metric):
        """``Delta_g`` of the bump: ``g^ij d_ij F + b^j d_j F``."""
        grad, hess = self.grad_hess(x)
        ginv = metric.eval_ginv(x)
        dginv = metric.eval_dginv(x)  # [..., k, i, j]
        b = np.einsum("...iij->...j", dginv) + np.einsum("...ij,...i->...j", ginv, metric.dlog_sqrt_det(x))
        return np.einsum("...ij,...ij->...", ginv, hess) + np.einsum("...j,...j->...", b, grad)


def default_test_functions(lo, hi, count=3):
    c = np.linspace(lo, hi, count + 2)[1:-1]
    r = 0.5 * (hi - lo) / (count + 1) * 1.8
    return [TestFunction(np.array([ci]), r) for ci in c]


def sobolev_norm(f, z, order=1):
    """``H^order`` norm of a callable on a uniform one-dimensional node set."""
    x = z[:, 0]
    v = f(z)
    total = v**2
    d = v
    for _ in range(order):
        d = np.gradient(d, x, edge_order=2)
        total = total + d**2
    return float(np.sqrt(trapezoid(total, x=x)))


@dataclass
class QuasimodeReport:
    residuals: np.ndarray  # |<Delta phi + h^{-1-eps} alpha phi, test>| per test function
    normalized: np.ndarray  # divided by ||f||_{H^1}
    budget: float  # h^{-1-eps} kappa(h) h^{-n(1-eps)/2}
    ratio: np.ndarray  # normalized / budget
    h: float
    epsilon: float


def quasimode_residual(profile, alpha, metric, test_functions, h=None, epsilon=None, f=None, kappa_class=None):
    """Helmholtz pairing ``<Delta_g phi + h^{-1-eps} alpha phi, test>`` in weak form.

    ``profile`` is a :class:`LiftedAnsatz` or a pair ``(z, phi)`` on a uniform
    one-dimensional node set; the Laplacian is moved onto the test functions.
    """
    if isinstance(profile, LiftedAnsatz):
        z, phi = profile.z, profile.pi_applied
        h = profile.h if h is None else h
        epsilon = profile.epsilon if epsilon is None else epsilon
    else:
        z, phi = profile
    z = np.asarray(z, dtype=float)
    x = z[:, 0]
    vol = metric.sqrt_det(z)
    a = _alpha_values(alpha, z)
    k2 = h ** (-1 - epsilon)
    res = []
    for tf in test_functions:
        integrand = phi * (tf.laplacian(z, metric) + k2 * a * tf.value(z)) * vol
        res.append(abs(trapezoid(integrand, x=x)))
    res = np.array(res)
    norm = sobolev_norm(f, z, 1) if f is not None else 1.0
    normalized = res / norm if norm > 0 else res * 0
    n = z.shape[1]
    cls = kappa_class or getattr(alpha, "declared_class", "lipschitz")
    kap = modulus_kappa(cls, h, getattr(alpha, "exponent", None) or 0.5)
    budget = k2 * kap * h ** (-n * (1 - epsilon) / 2)
    return QuasimodeReport(res, normalized, float(budget), normalized / budget, h, epsilon)


def _profile_on_grid(ansatz, grid):
    x = grid.points[:, 0]
    zx = ansatz.z[:, 0]
    p = ansatz.pi_applied
    return np.interp(x, zx, p.real) + 1j * np.interp(x, zx, p.imag)


@dataclass
class ErrorReport:
    pairing_v: np.ndarray
    pairing_grad_v: np.ndarray
    contract_h1: float
    contract_h2: float
    rhs_ratio: float  # ||int_0^t k ds|| / ||k||
    rhs_gain: float  # h^{(1+eps)/2}
    h: float


def _time_window(t, T, margin=0.1):
    """Smooth bump in ``t`` vanishing near 0 and T."""
    s = (np.asarray(t) - margin * T) / ((1 - 2 * margin) * T)
    out = np.zeros_like(s)
    on = (s > 0) & (s < 1)
    out[on] = np.exp(1 - 1 / (1 - (2 * s[on] - 1) ** 2))
    return out


def wave_error_decomposition(ansatz, alpha, metric, domain, T, test_functions, n_nodes=1000, cfl=0.45, f=None):
    """Solve ``box v = box(Pi U_h)`` with zero data and measure weak pairings of ``v``."""
    g = make_grid(metric, domain, n_nodes)
    op = wave_operator(alpha, metric, g)
    prof = _profile_on_grid(ansatz, g)
    w = ansatz.omega
    k0 = -_alpha_values(alpha, g.points)[g.interior] * w * w * g.restrict(prof) - op.laplacian_full(prof)
    if not np.any(k0):
        k0 = k0.astype(complex)

    def src(t):
        return -np.exp(1j * w * t) * k0  # v = u - Pi U_h solves box v = -box(Pi U_h)

    hist, _ = solve_wave(alpha, metric, domain, np.zeros(len(g.points), dtype=complex), None, T, g, cfl, source=src)
    x = g.points[g.interior]
    chi = _time_window(hist.t, T)
    vol = op.B
    pv, pg = [], []
    for tf in test_functions:
        spatial = tf.value(x) * vol
        pv.append(abs(trapezoid(chi * (hist.u @ spatial), x=hist.t)))
        grads = []
        for u in hist.u:
            full = g.extend(u)
            grads.append(np.gradient(full.reshape(g.shape), *g.axes, edge_order=2)[0].ravel()[g.interior] if g.dim > 1 else np.gradient(full, g.axes[0], edge_order=2)[g.interior])
        pg.append(abs(trapezoid(chi * (np.array(grads) @ spatial), x=hist.t)))
    n = g.dim
    h, eps = ansatz.h, ansatz.epsilon
    cls = getattr(alpha, "declared_class", "lipschitz")
    kap = modulus_kappa(cls, h, getattr(alpha, "exponent", None) or 0.5)
    z = ansatz.z
    base = h ** (-0.5 - eps / 2) * h ** (-n * (1 - eps) / 2) * kap
    c1 = base * (sobolev_norm(f, z, 1) if f is not None else 1.0)
    c2 = base * (sobolev_norm(f, z, 2) if f is not None else 1.0)
    # time-integrated source gains a factor 1/omega
    ts = np.linspace(0, T, max(int(40 * w * T), 2000))
    ksq = np.sum(np.abs(k0) ** 2 * vol)
    e = np.exp(1j * w * ts)
    k1 = cumulative_trapezoid(e, ts, initial=0)
    num = np.sqrt(trapezoid(np.abs(k1) ** 2, x=ts) * ksq)
    den = np.sqrt(trapezoid(np.abs(e) ** 2, x=ts) * ksq)
    ratio = float(num / den) if den > 0 else 0.0
    return ErrorReport(np.array(pv), np.array(pg), float(c1), float(c2), ratio, h ** ((1 + eps) / 2), h)


@dataclass
class IntegralObservabilityReport:
    lower: float  # h^{n(1-eps)/2} |int int d_nu(Pi U_h) test|
    target: float  # ||d_nu f||^2 on the cylinder (time-windowed)
    budget: float  # h^{-1/2-eps/2} kappa(h) ||f||_{H^2}^2
    budget_h1: float
    upper: float  # h^{-n(1-eps)/2} ||d_nu u|| ||test||
    lower_ok: bool
    upper_ok: bool


def integral_observability_constant(ansatz, f, alpha, metric, domain, T, n_nodes=1000, cfl=0.45, history=None):
    """Lower pairing of the Ansatz trace against a mollified ``d_nu f`` and the solver upper bound."""
    g = make_grid(metric, domain, n_nodes)
    prof = _profile_on_grid(ansatz, g)
    bi = g.bnd_inner
    dnu_ans = g.bnd_coef * (4 * prof[bi[:, 0]] - prof[bi[:, 1]] - 3 * prof[g.bnd_index])
    fv = f(g.points)
    dnu_f = g.bnd_coef * (4 * fv[bi[:, 0]] - fv[bi[:, 1]] - 3 * fv[g.bnd_index])
    ts = np.linspace(0, T, 4001)
    chi = _time_window(ts, T, 0.02)
    n = g.dim
    h, eps = ansatz.h, ansatz.epsilon
    pair_t = ansatz.time_factor(ts) * np.sum(g.bnd_weight * dnu_ans * dnu_f)
    lower = h ** (n * (1 - eps) / 2) * abs(trapezoid(chi * pair_t, x=ts))
    target = float(trapezoid(chi, x=ts) * np.sum(g.bnd_weight * dnu_f**2))
    cls = getattr(alpha, "declared_class", "lipschitz")
    kap = modulus_kappa(cls, h, getattr(alpha, "exponent", None) or 0.5)
    z = ansatz.z
    budget = h ** (-0.5 - eps / 2) * kap * sobolev_norm(f, z, 2) ** 2
    budget_h1 = h ** (-0.5 - eps / 2) * kap * sobolev_norm(f, z, 1) ** 2
    if history is None:
        u0 = fv.copy()
        u0[g.bnd_index] = 0.0
        bm = np.ones(len(u0), dtype=bool)
        bm[g.interior] = False
        u0[bm] = 0.0
        _, trace = solve_wave(alpha, metric, domain, u0, None, T, g, cfl, store_every=10**9)
    else:
        trace = history
    test_norm = np.sqrt(trapezoid(chi**2, x=ts) * np.sum(g.bnd_weight * dnu_f**2))
    upper = h ** (-n * (1 - eps) / 2) * np.sqrt(trace.norm_sq()) * test_norm
    return IntegralObservabilityReport(
        float(lower),
        target,
        float(budget),
        float(budget_h1),
        float(upper),
        bool(abs(lower - target) <= budget),
        bool(lower <= upper),
    )


def two_branch_ansatz(phi0, phi1, omega):
    """Cosine/sine combination carrying ``(u0, u1)``; returns ``(value(t), d/dt value(t))``."""

    def value(t):
        return np.cos(omega * t) * phi0 + np.sin(omega * t) / omega * phi1

    def rate(t):
        return -omega * np.sin(omega * t) * phi0 + np.cos(omega * t) * phi1

    return value, rate
