"""Riemannian metrics, Hamiltonian/geodesic flow and Fermi frames along rays.

All metric evaluations are batched: a position array of shape ``(..., n)``
returns tensors of shape ``(..., n, n)`` (and ``(..., n, n, n)`` for first
derivatives, indexed ``[..., k, i, j] = d_k g_ij``).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.interpolate import CubicHermiteSpline

from .errors import ChartError, DegenerateMetricError, IntegrationError, ParameterError

FD_STEP = 1e-5
TRANSVERSAL_TOL = 1e-3


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


class MetricField:
    """A metric ``g_ij(x)`` given by callables.

    ``dg`` and ``d2g`` are optional analytic derivatives; when missing they are
    replaced by central differences (step ``FD_STEP`` for ``dg`` and ``1e-4``
    for ``d2g``).  Inverse-metric derivatives are derived from them.
    """

    def __init__(self, dim, g, dg=None, d2g=None, smoothness_order=3, name="metric"):
        self.dim = int(dim)
        self._g = g
        self._dg = dg
        self._d2g = d2g
        self.smoothness_order = smoothness_order
        self.name = name

    def eval_g(self, x):
        return self._g(np.asarray(x, dtype=float))

    def eval_ginv(self, x):
        return np.linalg.inv(self.eval_g(x))

    def eval_dg(self, x):
        x = np.asarray(x, dtype=float)
        if self._dg is not None:
            return self._dg(x)
        return _central_diff(self.eval_g, x, FD_STEP)

    def eval_d2g(self, x):
        x = np.asarray(x, dtype=float)
        if self._d2g is not None:
            return self._d2g(x)
        return _central_diff(self.eval_dg, x, 1e-4)

    def eval_dginv(self, x):
        ginv = self.eval_ginv(x)
        dg = self.eval_dg(x)
        return -np.einsum("...ia,...kab,...bj->...kij", ginv, dg, ginv)

    def eval_d2ginv(self, x):
        ginv = self.eval_ginv(x)
        dg = self.eval_dg(x)
        d2g = self.eval_d2g(x)
        gdg = np.einsum("...ia,...kab->...kib", ginv, dg)  # ginv @ dg_k
        out = -np.einsum("...kla,...aj->...klij", np.einsum("...ia,...klab->...klib", ginv, d2g), ginv)
        term = np.einsum("...kia,...lab->...klib", gdg, gdg)
        out = out + np.einsum("...klia,...aj->...klij", term, ginv)
        out = out + np.einsum("...klia,...aj->...klij", np.swapaxes(term, -3, -4), ginv)
        return out

    def sqrt_det(self, x):
        return np.sqrt(np.linalg.det(self.eval_g(x)))

    def dlog_sqrt_det(self, x):
        """Gradient of ``log sqrt(det g)``."""
        ginv = self.eval_ginv(x)
        dg = self.eval_dg(x)
        return 0.5 * np.einsum("...ij,...kji->...k", ginv, dg)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, dim={self.dim})"


def _central_diff(fun, x, step):
    n = x.shape[-1]
    parts = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        parts.append((fun(x + e) - fun(x - e)) / (2 * step))
    return np.stack(parts, axis=-(parts[0].ndim - x.ndim + 2))


class EuclideanMetric(MetricField):
    def __init__(self, dim):
        super().__init__(dim, None, smoothness_order=10**6, name=f"euclidean:{dim}")

    def eval_g(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()

    eval_ginv = eval_g

    def eval_dg(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    eval_dginv = eval_dg

    def eval_d2g(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim,) * 4)

    eval_d2ginv = eval_d2g

    def sqrt_det(self, x):
        return np.ones(np.asarray(x).shape[:-1])

    def dlog_sqrt_det(self, x):
        return np.zeros(np.asarray(x, dtype=float).shape)


class ConformalMetric(MetricField):
    """``g = exp(2 phi(x)) * Id`` with analytic derivatives of ``phi``.

    ``phi``, ``grad`` and ``hess`` map ``(..., n)`` positions to ``(...)``,
    ``(..., n)`` and ``(..., n, n)`` arrays.
    """

    def __init__(self, dim, phi, grad, hess, name="conformal", smoothness_order=10**6):
        super().__init__(dim, None, smoothness_order=smoothness_order, name=name)
        self.phi = phi
        self.grad = grad
        self.hess = hess

    def _eye(self, x):
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim))

    def eval_g(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(2 * self.phi(x))[..., None, None] * self._eye(x)

    def eval_ginv(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-2 * self.phi(x))[..., None, None] * self._eye(x)

    def eval_dg(self, x):
        x = np.asarray(x, dtype=float)
        s = 2 * np.exp(2 * self.phi(x))[..., None] * self.grad(x)
        return s[..., :, None, None] * self._eye(x)[..., None, :, :]

    def eval_dginv(self, x):
        x = np.asarray(x, dtype=float)
        s = -2 * np.exp(-2 * self.phi(x))[..., None] * self.grad(x)
        return s[..., :, None, None] * self._eye(x)[..., None, :, :]

    def eval_d2g(self, x):
        x = np.asarray(x, dtype=float)
        gr = self.grad(x)
        s = np.exp(2 * self.phi(x))[..., None, None] * (4 * gr[..., :, None] * gr[..., None, :] + 2 * self.hess(x))
        return s[..., None, None] * self._eye(x)[..., None, None, :, :]

    def eval_d2ginv(self, x):
        x = np.asarray(x, dtype=float)
        gr = self.grad(x)
        s = np.exp(-2 * self.phi(x))[..., None, None] * (4 * gr[..., :, None] * gr[..., None, :] - 2 * self.hess(x))
        return s[..., None, None] * self._eye(x)[..., None, None, :, :]

    def sqrt_det(self, x):
        return np.exp(self.dim * self.phi(np.asarray(x, dtype=float)))

    def dlog_sqrt_det(self, x):
        return self.dim * self.grad(np.asarray(x, dtype=float))


class SymbolicMetric(MetricField):
    """Metric from a sympy matrix; derivatives are exact (lambdified)."""

    def __init__(self, matrix, symbols, name="symbolic"):
        matrix = sp.Matrix(matrix)
        n = len(symbols)
        if matrix.shape != (n, n):
            raise ParameterError("metric matrix must be n x n")
        self.matrix = matrix
        self.symbols = tuple(symbols)
        self._fg = [[sp.lambdify(symbols, matrix[i, j], "numpy") for j in range(n)] for i in range(n)]
        self._fdg = [
            [[sp.lambdify(symbols, sp.diff(matrix[i, j], symbols[k]), "numpy") for j in range(n)] for i in range(n)]
            for k in range(n)
        ]
        self._fd2g = [
            [
                [[sp.lambdify(symbols, sp.diff(matrix[i, j], symbols[k], symbols[l]), "numpy") for j in range(n)] for i in range(n)]
                for l in range(n)
            ]
            for k in range(n)
        ]
        super().__init__(n, self._eval_table, dg=self._eval_dtable, d2g=self._eval_d2table, name=name)

    @staticmethod
    def _fill(table, x):
        cols = [x[..., k] for k in range(x.shape[-1])]
        shape = x.shape[:-1]

        def rec(t):
            if callable(t):
                return np.broadcast_to(np.asarray(t(*cols), dtype=float), shape)
            return np.stack([rec(s) for s in t], axis=len(shape))

        return rec(table)

    def _eval_table(self, x):
        return self._fill(self._fg, x)

    def _eval_dtable(self, x):
        return self._fill(self._fdg, x)

    def _eval_d2table(self, x):
        return self._fill(self._fd2g, x)


class FourierConformalMetric(ConformalMetric):
    """Batch of random conformal metrics ``phi_b(x) = sum_k a_bk sin(w_bk . x + c_bk)``.

    Row ``b`` of a ``(B, n)`` position array is evaluated with metric ``b``.
    """

    def __init__(self, amps, waves, phases, name="fourier-conformal"):
        self.amps = np.asarray(amps, dtype=float)
        self.waves = np.asarray(waves, dtype=float)
        self.phases = np.asarray(phases, dtype=float)
        super().__init__(self.waves.shape[-1], self._phi, self._grad, self._hess, name=name)

    def _arg(self, x):
        return np.einsum("...kn,...n->...k", self.waves, x) + self.phases

    def _phi(self, x):
        return np.sum(self.amps * np.sin(self._arg(x)), axis=-1)

    def _grad(self, x):
        return np.einsum("...k,...kn->...n", self.amps * np.cos(self._arg(x)), self.waves)

    def _hess(self, x):
        return -np.einsum("...k,...kn,...km->...nm", self.amps * np.sin(self._arg(x)), self.waves, self.waves)


def random_conformal_metrics(rng, batch, dim, n_modes=3, amplitude=0.2, max_wave=2.0):
    """Draw ``batch`` smooth conformal metrics (one per row)."""
    amps = rng.uniform(-amplitude, amplitude, size=(batch, n_modes)) / n_modes
    waves = rng.uniform(-max_wave, max_wave, size=(batch, n_modes, dim))
    phases = rng.uniform(0, 2 * np.pi, size=(batch, n_modes))
    return FourierConformalMetric(amps, waves, phases)


# named conformal factors: phi, grad, hess
def _radial(f, df, d2f):
    """Conformal factor depending on r^2 only: phi = f(r2)."""

    def phi(x):
        return f(np.sum(x * x, axis=-1))

    def grad(x):
        return 2 * df(np.sum(x * x, axis=-1))[..., None] * x

    def hess(x):
        r2 = np.sum(x * x, axis=-1)
        eye = np.broadcast_to(np.eye(x.shape[-1]), x.shape[:-1] + (x.shape[-1],) * 2)
        return 2 * df(r2)[..., None, None] * eye + 4 * d2f(r2)[..., None, None] * x[..., :, None] * x[..., None, :]

    return phi, grad, hess


def _exp_x1(dim):
    def phi(x):
        return x[..., 0]

    def grad(x):
        out = np.zeros_like(x)
        out[..., 0] = 1.0
        return out

    def hess(x):
        return np.zeros(x.shape + (x.shape[-1],))

    return ConformalMetric(dim, phi, grad, hess, name="conformal:exp-x1")


def _quad_1d(beta=0.2):
    # g = (1 + beta x^2)^-2, wave speed c(x) = 1 + beta x^2
    def phi(x):
        return -np.log1p(beta * x[..., 0] ** 2)

    def grad(x):
        return (-2 * beta * x[..., 0] / (1 + beta * x[..., 0] ** 2))[..., None]

    def hess(x):
        u = beta * x[..., 0] ** 2
        return (-2 * beta * (1 - u) / (1 + u) ** 2)[..., None, None]

    m = ConformalMetric(1, phi, grad, hess, name="conformal:quad-1d")
    m.beta = beta
    return m


_CONFORMAL_RADIAL = {
    # mild simple disk: phi = 0.1 exp(-r^2)
    "mild-disk": (
        lambda r2: 0.1 * np.exp(-r2),
        lambda r2: -0.1 * np.exp(-r2),
        lambda r2: 0.1 * np.exp(-r2),
    ),
    # smooth bump used for randomized-free regression tests
    "gauss-bump": (
        lambda r2: 0.3 * np.exp(-2 * r2),
        lambda r2: -0.6 * np.exp(-2 * r2),
        lambda r2: 1.2 * np.exp(-2 * r2),
    ),
    # exp(phi) = 1 + 4 exp(-r^2 / 0.09): r * exp(phi) has an interior local
    # maximum below its boundary value, so an unstable closed geodesic is
    # reachable from the boundary
    "radial-trap": (
        lambda r2: np.log1p(4 * np.exp(-r2 / 0.09)),
        lambda r2: -(4 * np.exp(-r2 / 0.09)) / (0.09 * (1 + 4 * np.exp(-r2 / 0.09))),
        lambda r2: (4 * np.exp(-r2 / 0.09)) / (0.09**2 * (1 + 4 * np.exp(-r2 / 0.09)) ** 2),
    ),
}


def get_metric(metric_id, dim=None):
    """Resolve a metric id: ``euclidean[:n]``, ``polar``, ``conformal:<name>``."""
    kind, _, arg = metric_id.partition(":")
    if kind == "euclidean":
        return EuclideanMetric(int(arg) if arg else (dim or 2))
    if kind == "polar":
        r, th = sp.symbols("r theta", real=True)
        return SymbolicMetric(sp.diag(1, r**2), (r, th), name="polar")
    if kind == "conformal":
        if arg == "exp-x1":
            return _exp_x1(dim or 2)
        if arg == "quad-1d":
            return _quad_1d()
        if arg in _CONFORMAL_RADIAL:
            phi, grad, hess = _radial(*_CONFORMAL_RADIAL[arg])
            return ConformalMetric(dim or 2, phi, grad, hess, name=metric_id)
    raise KeyError(f"unknown metric id {metric_id!r}")


METRIC_IDS = ["euclidean", "polar"] + [f"conformal:{k}" for k in ["exp-x1", "quad-1d", *_CONFORMAL_RADIAL]]


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    kind: str  # interval | unit_ball | rectangle
    dim: int
    lo: tuple = ()
    hi: tuple = ()

    def boundary_distance(self, x):
        """Signed Euclidean distance to the boundary, negative inside."""
        x = np.asarray(x, dtype=float)
        if self.kind == "unit_ball":
            return np.linalg.norm(x, axis=-1) - 1.0
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.max(np.maximum(lo - x, x - hi), axis=-1)

    def inside(self, x):
        return self.boundary_distance(x) < 0

    def euclidean_normal(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "unit_ball":
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        d = np.concatenate([lo - x, x - hi], axis=-1)
        k = np.argmax(d, axis=-1)
        out = np.zeros_like(x)
        n = self.dim
        idx = np.indices(k.shape)
        sign = np.where(k < n, -1.0, 1.0)
        out[(*idx, k % n)] = sign
        return out

    def boundary_normal(self, x, metric):
        """Outward unit conormal with ``g^{kl} nu_k nu_l = 1``."""
        nu = self.euclidean_normal(x)
        ginv = metric.eval_ginv(x)
        norm = np.sqrt(np.einsum("...i,...ij,...j->...", nu, ginv, nu))
        return nu / norm[..., None]

    def boundary_points(self, count):
        """Deterministic boundary sample and arc-length weights."""
        if self.kind == "interval":
            return np.array([[self.lo[0]], [self.hi[0]]]), np.ones(2)
        if self.kind == "unit_ball" and self.dim == 2:
            th = 2 * np.pi * (np.arange(count) + 0.5) / count
            return np.stack([np.cos(th), np.sin(th)], axis=-1), np.full(count, 2 * np.pi / count)
        if self.kind == "rectangle" and self.dim == 2:
            per = max(count // 4, 1)
            (a0, a1), (b0, b1) = self.lo, self.hi
            s = (np.arange(per) + 0.5) / per
            pts = np.concatenate(
                [
                    np.stack([a0 + s * (b0 - a0), np.full(per, a1)], -1),
                    np.stack([np.full(per, b0), a1 + s * (b1 - a1)], -1),
                    np.stack([b0 - s * (b0 - a0), np.full(per, b1)], -1),
                    np.stack([np.full(per, a0), b1 - s * (b1 - a1)], -1),
                ]
            )
            w = np.concatenate([np.full(per, (b0 - a0) / per), np.full(per, (b1 - a1) / per)] * 2)
            return pts, w
        raise ParameterError(f"boundary sampling not available for {self.kind} in dim {self.dim}")


def get_domain(domain_id):
    kind, _, arg = domain_id.partition(":")
    if kind == "interval":
        lo, hi = (float(v) for v in arg.split(",")) if arg else (0.0, 1.0)
        return DomainSpec("interval", 1, (lo,), (hi,))
    if kind == "unit_ball":
        return DomainSpec("unit_ball", int(arg) if arg else 2)
    if kind == "rectangle":
        return DomainSpec("rectangle", 2, (0.0, 0.0), (1.0, 1.0))
    raise KeyError(f"unknown domain id {domain_id!r}")


DOMAIN_IDS = ["interval", "unit_ball:2", "unit_ball:3", "rectangle"]


# ---------------------------------------------------------------------------
# Christoffel symbols, Hamiltonian
# ---------------------------------------------------------------------------


def _check_metric(g):
    eig = np.linalg.eigvalsh(g)
    if not np.all(np.isfinite(eig)) or np.any(eig <= 1e-14):
        raise DegenerateMetricError("metric is singular or not positive definite")


def christoffel(metric, x):
    """``Gamma[..., d, a, b]`` = Christoffel symbol of the second kind."""
    x = np.asarray(x, dtype=float)
    g = metric.eval_g(x)
    _check_metric(g)
    ginv = np.linalg.inv(g)
    dg = metric.eval_dg(x)
    # lowered: [eta, a, b] = d_a g_eta b + d_b g_a eta - d_eta g_ab
    low = np.einsum("...aeb->...eab", dg) + np.einsum("...bae->...eab", dg) - dg
    return 0.5 * np.einsum("...de,...eab->...dab", ginv, low)


def riemann(metric, x, step=1e-4):
    """``R[..., a, b, c, d] = R^a_{bcd}`` from differenced Christoffel symbols."""
    x = np.asarray(x, dtype=float)
    gam = christoffel(metric, x)
    dgam = _central_diff(lambda y: christoffel(metric, y), x, step)  # [..., c, a, d, b]
    r = np.einsum("...cadb->...abcd", dgam) - np.einsum("...dacb->...abcd", dgam)
    r = r + np.einsum("...ace,...edb->...abcd", gam, gam) - np.einsum("...ade,...ecb->...abcd", gam, gam)
    return r


def hamiltonian(metric, x, p):
    """``H = 1/2 g^{ij}(x) p_i p_j``."""
    p = np.asarray(p, dtype=float)
    return 0.5 * np.einsum("...i,...ij,...j->...", p, metric.eval_ginv(x), p)


def hamilton_rhs(metric, x, p):
    xdot = np.einsum("...ij,...j->...i", metric.eval_ginv(x), p)
    pdot = -0.5 * np.einsum("...i,...kij,...j->...k", p, metric.eval_dginv(x), p)
    return xdot, pdot


def _rk4(metric, x, p, dt):
    dt = np.asarray(dt, dtype=float)
    if dt.ndim:
        dt = dt[..., None]
    k1x, k1p = hamilton_rhs(metric, x, p)
    k2x, k2p = hamilton_rhs(metric, x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)
    k3x, k3p = hamilton_rhs(metric, x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)
    k4x, k4p = hamilton_rhs(metric, x + dt * k3x, p + dt * k3p)
    return (
        x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
        p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p),
    )


# ---------------------------------------------------------------------------
# rays
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    p: np.ndarray


@dataclass(frozen=True, eq=False)
class Ray:
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    dt: float
    exit_time: float | None
    exit_transversal: bool
    trapped: bool = False
    metric_name: str = ""

    @property
    def samples(self):
        return [(t, PhasePoint(x, p)) for t, x, p in zip(self.t, self.x, self.p)]

    @property
    def dim(self):
        return self.x.shape[1]

    def to_csv(self, path):
        n = self.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)])
            for t, x, p in zip(self.t, self.x, self.p):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in p])


def flow_batch(metric, x0, p0, dt, T, domain=None, transversal_tol=TRANSVERSAL_TOL):
    """Integrate many rays at once; returns a list of :class:`Ray`."""
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    p = np.atleast_2d(np.asarray(p0, dtype=float)).copy()
    nb, n = x.shape
    nsteps = int(np.ceil(T / dt - 1e-9))
    xs = np.full((nsteps + 2, nb, n), np.nan)
    ps = np.full((nsteps + 2, nb, n), np.nan)
    xs[0], ps[0] = x, p
    nsamp = np.ones(nb, dtype=int)
    exit_time = np.full(nb, np.nan)
    transversal = np.zeros(nb, dtype=bool)
    active = np.ones(nb, dtype=bool)
    if domain is not None and np.any(domain.boundary_distance(x) > 1e-9):
        raise ParameterError("ray start lies outside the domain")
    for k in range(nsteps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        step = min(dt, T - k * dt)
        xn, pn = _rk4(metric, x[idx], p[idx], step)
        if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(pn))):
            raise IntegrationError(f"non-finite state at step {k}")
        crossed = np.zeros(idx.size, dtype=bool)
        if domain is not None:
            crossed = domain.boundary_distance(xn) > 0
        stay = idx[~crossed]
        x[stay], p[stay] = xn[~crossed], pn[~crossed]
        xs[k + 1, stay], ps[k + 1, stay] = x[stay], p[stay]
        nsamp[stay] += 1
        if np.any(crossed):
            out = idx[crossed]
            s = _bisect_exit(metric, domain, x[out], p[out], step)
            xe, pe = _rk4(metric, x[out], p[out], s)
            exit_time[out] = k * dt + s
            xs[k + 1, out], ps[k + 1, out] = xe, pe
            nsamp[out] += 1
            active[out] = False
            nu = domain.boundary_normal(xe, metric)
            xdot, _ = hamilton_rhs(metric, xe, pe)
            speed = np.sqrt(2 * hamiltonian(metric, xe, pe))
            transversal[out] = np.abs(np.einsum("bi,bi->b", nu, xdot)) / speed >= transversal_tol
    rays = []
    for b in range(nb):
        m = nsamp[b]
        t = np.arange(m) * dt
        if not np.isnan(exit_time[b]):
            t[-1] = exit_time[b]
        else:
            t[-1] = min(t[-1], T)
        rays.append(
            Ray(
                t=t,
                x=xs[:m, b].copy(),
                p=ps[:m, b].copy(),
                dt=dt,
                exit_time=None if np.isnan(exit_time[b]) else float(exit_time[b]),
                exit_transversal=bool(transversal[b]),
                trapped=domain is not None and bool(active[b]),
                metric_name=metric.name,
            )
        )
    return rays


def _bisect_exit(metric, domain, x, p, step, tol=1e-12):
    lo = np.zeros(x.shape[0])
    hi = np.full(x.shape[0], step)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        xm, _ = _rk4(metric, x, p, mid)
        out = domain.boundary_distance(xm) > 0
        hi = np.where(out, mid, hi)
        lo = np.where(out, lo, mid)
    return 0.5 * (lo + hi)


def hamiltonian_flow(metric, start, dt, T, domain=None):
    """RK4 Hamiltonian flow from ``start`` (a :class:`PhasePoint` or ``(x, p)``)."""
    x0, p0 = (start.x, start.p) if isinstance(start, PhasePoint) else start
    return flow_batch(metric, np.atleast_1d(x0)[None], np.atleast_1d(p0)[None], dt, T, domain)[0]


def integrate_geodesic(metric, x0, v0, dt, T):
    """Second-order geodesic equation ``x'' + Gamma(x', x') = 0`` by RK4.

    Independent of the Hamiltonian route; used as a cross-check.
    """
    x = np.asarray(x0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()

    def rhs(x, v):
        return v, -np.einsum("...dab,...a,...b->...d", christoffel(metric, x), v, v)

    out = [x.copy()]
    for _ in range(int(round(T / dt))):
        k1 = rhs(x, v)
        k2 = rhs(x + 0.5 * dt * k1[0], v + 0.5 * dt * k1[1])
        k3 = rhs(x + 0.5 * dt * k2[0], v + 0.5 * dt * k2[1])
        k4 = rhs(x + dt * k3[0], v + dt * k3[1])
        x = x + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v = v + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out.append(x.copy())
    return np.array(out)


def unit_covector(metric, x, direction):
    """Covector ``p = g(x) w`` for the g-unit vector ``w`` along ``direction``."""
    g = metric.eval_g(x)
    w = np.asarray(direction, dtype=float)
    w = w / np.sqrt(np.einsum("...i,...ij,...j->...", w, g, w))[..., None]
    return np.einsum("...ij,...j->...i", g, w)


def inward_entries(domain, metric, n_points, n_dirs):
    """Stratified sample of the inward sphere bundle over the boundary.

    Returns ``(x, p, weights, mu)``: boundary points, unit covectors, the
    product of arc-length and angle weights, and ``mu = |<w, nu>|``.
    """
    if domain.kind == "interval":
        x = np.array([[domain.lo[0]], [domain.hi[0]]])
        p = unit_covector(metric, x, np.array([[1.0], [-1.0]]))
        return x, p, np.ones(2), np.ones(2)
    if domain.dim != 2:
        raise ParameterError("inward sampling implemented for dim 1 and 2")
    pts, wpts = domain.boundary_points(n_points)
    beta = -np.pi / 2 + np.pi * (np.arange(n_dirs) + 0.5) / n_dirs
    nrm = -domain.euclidean_normal(pts)
    tan = np.stack([-nrm[:, 1], nrm[:, 0]], axis=-1)
    d = np.cos(beta)[None, :, None] * nrm[:, None, :] + np.sin(beta)[None, :, None] * tan[:, None, :]
    xb = np.repeat(pts, n_dirs, axis=0)
    d = d.reshape(-1, 2)
    p = unit_covector(metric, xb, d)
    nu = domain.boundary_normal(xb, metric)
    ginv = metric.eval_ginv(xb)
    w = np.einsum("bij,bj->bi", ginv, p)
    mu = np.abs(np.einsum("bi,bi->b", w, nu))
    weights = np.repeat(wpts, n_dirs) * (np.pi / n_dirs)
    return xb, p, weights, mu


@dataclass
class NontrappingReport:
    max_exit_time: float
    all_transversal: bool
    violations: list = field(default_factory=list)
    n_rays: int = 0

    @property
    def ok(self):
        return not self.violations


def check_nontrapping(metric, domain, n_samples, T_max, dt=1e-2):
    """Trace ``n_samples`` inward rays and report exit-time / transversality violations."""
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    n_pts = max(int(np.sqrt(n_samples)), 1)
    n_dirs = max(n_samples // n_pts, 1) | 1  # odd: includes the normal direction
    x, p, _, _ = inward_entries(domain, metric, n_pts, n_dirs)
    rays = flow_batch(metric, x, p, dt, T_max, domain)
    viol = []
    tmax = 0.0
    for r in rays:
        if r.trapped:
            viol.append({"x": r.x[0].tolist(), "p": r.p[0].tolist(), "reason": "no exit before T_max"})
            continue
        tmax = max(tmax, r.exit_time)
        if not r.exit_transversal:
            viol.append({"x": r.x[0].tolist(), "p": r.p[0].tolist(), "reason": "tangential exit", "exit_time": r.exit_time})
    return NontrappingReport(
        max_exit_time=tmax,
        all_transversal=all(r.exit_transversal for r in rays if not r.trapped),
        violations=viol,
        n_rays=len(rays),
    )


# ---------------------------------------------------------------------------
# Fermi frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FermiChart:
    ray: Ray
    frames: np.ndarray  # (m, n-1, n) vectors E_2..E_n per sample
    frame_rates: np.ndarray  # dE/dt per sample
    tube_radius: float
    breakpoints: np.ndarray
    overlap: float
    gram_defect: float
    self_intersections: tuple = ()

    @property
    def chart_intervals(self):
        tau = self.breakpoints[-1]
        return [
            (max(0.0, a - self.overlap), min(tau, b + self.overlap))
            for a, b in zip(self.breakpoints[:-1], self.breakpoints[1:])
        ]

    def _splines(self, metric):
        ray = self.ray
        xdot, _ = hamilton_rhs(metric, ray.x, ray.p)
        t = _strictly_increasing(ray.t)
        sx = CubicHermiteSpline(t, ray.x, xdot, axis=0)
        sE = CubicHermiteSpline(t, self.frames, self.frame_rates, axis=0)
        return sx, sE

    def fermi_map(self, metric, r, xprime, n_steps=32):
        """``F(r, x') = exp_{gamma(r)}(sum_j x'_j E_j(r))`` for scalar ``r``."""
        sx, sE = self._cached_splines(metric)
        base = sx(r)
        v = np.einsum("...j,jn->...n", np.asarray(xprime, dtype=float), sE(r))
        xs = integrate_geodesic(metric, np.broadcast_to(base, v.shape), v, 1.0 / n_steps, 1.0)
        return xs[-1]

    def _cached_splines(self, metric):
        key = ("_spl", id(metric))
        cache = self.__dict__.setdefault("_cache", {})
        if key not in cache:
            cache[key] = self._splines(metric)
        return cache[key]

    def pulled_back_metric(self, metric, r, xprime, step=1e-4):
        """Metric of the Fermi chart at ``(r, x')`` via central differences of F."""
        n = self.ray.dim
        coords = np.concatenate([[r], np.asarray(xprime, dtype=float)])

        def F(c):
            return self.fermi_map(metric, c[0], c[1:])

        cols = []
        for a in range(n):
            e = np.zeros(n)
            e[a] = step
            cols.append((F(coords + e) - F(coords - e)) / (2 * step))
        J = np.stack(cols, axis=-1)
        return J.T @ metric.eval_g(F(coords)) @ J


def _strictly_increasing(t):
    t = np.array(t, dtype=float)
    if len(t) > 1 and t[-1] <= t[-2]:
        t[-1] = t[-2] + 1e-12
    return t


def tube_radius(metric, xs, cap=0.5, c=0.5):
    """Heuristic ``min(cap, c / sqrt(1 + |R|))`` over the given points."""
    if metric.dim < 2 or isinstance(metric, EuclideanMetric):
        return float(cap)
    r = riemann(metric, xs)
    norm = np.sqrt(np.sum(r**2, axis=(-1, -2, -3, -4)))
    return float(min(cap, c / np.sqrt(1 + np.max(norm))))


def _transport_rhs(metric, x, p, E):
    xdot = np.einsum("...ij,...j->...i", metric.eval_ginv(x), p)
    gam = christoffel(metric, x)
    return -np.einsum("...kab,...a,...jb->...jk", gam, xdot, E)


def _orthonormal_complement(metric, x, p):
    g = metric.eval_g(x)
    t = np.linalg.solve(g, p)
    t = t / np.sqrt(t @ g @ t)
    basis = [t]
    for e in np.eye(len(x)):
        v = e - sum((b @ g @ e) * b for b in basis)
        nv = np.sqrt(v @ g @ v)
        if nv > 1e-6:
            basis.append(v / nv)
        if len(basis) == len(x):
            break
    return np.array(basis[1:])


def _segment_self_intersections(ray):
    x = ray.x
    if x.shape[1] != 2 or len(x) < 4:
        return []
    a = x[:-1]
    b = x[1:]
    hits = []
    for i in range(len(a)):
        j = np.arange(i + 2, len(a))
        if j.size == 0:
            break
        d1 = b[i] - a[i]
        d2 = b[j] - a[j]
        den = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
        ok = np.abs(den) > 1e-15
        w = a[j] - a[i]
        s = np.where(ok, (w[:, 0] * d2[:, 1] - w[:, 1] * d2[:, 0]) / np.where(ok, den, 1), -1)
        u = np.where(ok, (w[:, 0] * d1[1] - w[:, 1] * d1[0]) / np.where(ok, den, 1), -1)
        m = ok & (s >= 0) & (s <= 1) & (u >= 0) & (u <= 1)
        for jj in j[m]:
            hits.append(float(ray.t[jj]))
    return sorted(set(hits))


def fermi_frame(ray, metric, cap=0.5):
    """Parallel-transport an orthonormal normal frame along ``ray``."""
    if len(ray.t) < 2:
        raise ParameterError("ray needs at least two samples")
    n = ray.dim
    m = len(ray.t)
    x, p = ray.x[0][None].copy(), ray.p[0][None].copy()
    E = _orthonormal_complement(metric, ray.x[0], ray.p[0])[None]
    frames = np.zeros((m, n - 1, n))
    rates = np.zeros((m, n - 1, n))
    frames[0] = E[0]
    for k in range(1, m):
        h = ray.t[k] - ray.t[k - 1]
        k1e = _transport_rhs(metric, x, p, E)
        k1x, k1p = hamilton_rhs(metric, x, p)
        x2, p2 = x + 0.5 * h * k1x, p + 0.5 * h * k1p
        k2e = _transport_rhs(metric, x2, p2, E + 0.5 * h * k1e)
        k2x, k2p = hamilton_rhs(metric, x2, p2)
        x3, p3 = x + 0.5 * h * k2x, p + 0.5 * h * k2p
        k3e = _transport_rhs(metric, x3, p3, E + 0.5 * h * k2e)
        k3x, k3p = hamilton_rhs(metric, x3, p3)
        x4, p4 = x + h * k3x, p + h * k3p
        k4e = _transport_rhs(metric, x4, p4, E + h * k3e)
        k4x, k4p = hamilton_rhs(metric, x4, p4)
        E = E + h / 6 * (k1e + 2 * k2e + 2 * k3e + k4e)
        x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        p = p + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        frames[k] = E[0]
    for k in range(m):
        rates[k] = _transport_rhs(metric, ray.x[k][None], ray.p[k][None], frames[k][None])[0]

    g = metric.eval_g(ray.x)
    xdot, _ = hamilton_rhs(metric, ray.x, ray.p)
    speed0 = np.sqrt(xdot[0] @ g[0] @ xdot[0])
    basis = np.concatenate([(xdot / speed0)[:, None, :], frames], axis=1)
    gram = np.einsum("kai,kij,kbj->kab", basis, g, basis)
    det = np.linalg.det(gram)
    if np.min(det) < 0.5:
        raise ChartError("parallel frame degenerated; use a smaller dt")
    defect = float(np.max(np.abs(gram - np.eye(n))))

    eps1 = tube_radius(metric, ray.x[:: max(1, m // 50)], cap=cap)
    tau = float(ray.t[-1])
    nseg = max(1, int(np.ceil(tau / (2 * eps1))))
    bps = set(np.linspace(0, tau, nseg + 1).tolist())
    crossings = _segment_self_intersections(ray)
    bps.update(crossings)
    bps = np.array(sorted(bps))
    overlap = 0.25 * float(np.min(np.diff(bps))) if len(bps) > 1 else 0.0
    overlap = min(overlap, eps1 / 4)
    return FermiChart(
        ray=ray,
        frames=frames,
        frame_rates=rates,
        tube_radius=eps1,
        breakpoints=bps,
        overlap=overlap,
        gram_defect=defect,
        self_intersections=tuple(crossings),
    )


# ---------------------------------------------------------------------------
# quadrature grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Uniform tensor-product grid; ``points`` has shape ``(N, n)``."""

    axes: tuple

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def dim(self):
        return len(self.axes)

    @property
    def spacing(self):
        return max(float(a[1] - a[0]) for a in self.axes)

    @property
    def cell_volume(self):
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    @property
    def points(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dim)


def tensor_grid(lo, hi, counts):
    lo, hi, counts = np.atleast_1d(lo), np.atleast_1d(hi), np.atleast_1d(counts)
    return TensorGrid(tuple(np.linspace(a, b, int(c)) for a, b, c in zip(lo, hi, counts)))


def integrate_along_ray(ray, metric, func, refine=1):
    """Simpson integral of ``func(t, x)`` over a ray in its time parameter.

    ``refine > 1`` resamples the (smooth) ray with cubic Hermite
    interpolation so rough integrands are sampled more densely than ``dt``.
    """
    from scipy.integrate import simpson

    t, xs = ray.t, ray.x
    if len(t) < 2:
        return 0.0
    if refine > 1:
        xdot, _ = hamilton_rhs(metric, ray.x, ray.p)
        tt = _strictly_increasing(t)
        t = np.linspace(0.0, tt[-1], refine * (len(tt) - 1) + 1)
        xs = CubicHermiteSpline(tt, ray.x, xdot, axis=0)(t)
    return float(simpson(func(t, xs), x=t))
