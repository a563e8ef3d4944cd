"""Gaussian beams along Hamiltonian rays.

A beam carries the ray ``(x, p)``, the complex phase Hessian ``M``, the
deformation matrix ``Y`` and the amplitude ``a = a0 / sqrt(det Y)``.  The
semiclassical operator is ``P_h = -i h d_t - 1/2 h^2 Lap_g``; the beam phase
solves ``psi_t + H(x, grad psi) = 0`` to third order at the ray.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BranchError,
    IntegrationError,
    ParameterError,
    ResolutionError,
    RiccatiBlowupError,
    SingularYError,
)

BRANCH_JUMP = np.pi / 2


# ---------------------------------------------------------------------------
# Hessians of H and the matrix ODEs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HessianTriple:
    D: np.ndarray  # H_xx
    B: np.ndarray  # H_xp, rows indexed by x
    C: np.ndarray  # H_pp = g^{-1}


def hessian_matrices(metric, x, p):
    """Second derivatives of ``H = 1/2 g^{ij} p_i p_j`` at ``(x, p)``."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    C = metric.eval_ginv(x)
    B = np.einsum("...kij,...j->...ki", metric.eval_dginv(x), p)
    D = 0.5 * np.einsum("...i,...klij,...j->...kl", p, metric.eval_d2ginv(x), p)
    return HessianTriple(D, B, C)


def _T(A):
    return np.swapaxes(A, -1, -2)


def riccati_rhs(M, tri):
    """``dM/dt = -(D + B M + M B^T + M C M)``."""
    return -(tri.D + tri.B @ M + M @ _T(tri.B) + M @ tri.C @ M)


def y_rhs(Y, M, tri):
    """``dY/dt = C M Y + B^T Y``."""
    return tri.C @ M @ Y + _T(tri.B) @ Y


def _min_eig_im(M):
    return np.linalg.eigvalsh(0.5 * (M.imag + _T(M.imag)))[..., 0]


def riccati_step(M, triple, dt):
    """One RK4 step of the Riccati equation with coefficients frozen over the step."""
    M = np.asarray(M, dtype=complex)
    k1 = riccati_rhs(M, triple)
    k2 = riccati_rhs(M + 0.5 * dt * k1, triple)
    k3 = riccati_rhs(M + 0.5 * dt * k2, triple)
    k4 = riccati_rhs(M + dt * k3, triple)
    out = M + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    out = 0.5 * (out + _T(out))
    if np.any(_min_eig_im(out) <= 0) or not np.all(np.isfinite(out)):
        raise RiccatiBlowupError("Im M lost positive definiteness")
    return out


def y_step(Y, M, triple, dt):
    """One RK4 step of ``dY/dt = C M Y + B^T Y``; ``M`` is co-evolved over the stages."""
    Y = np.asarray(Y, dtype=complex)
    M = np.asarray(M, dtype=complex)
    km1 = riccati_rhs(M, triple)
    ky1 = y_rhs(Y, M, triple)
    M2 = M + 0.5 * dt * km1
    km2 = riccati_rhs(M2, triple)
    ky2 = y_rhs(Y + 0.5 * dt * ky1, M2, triple)
    M3 = M + 0.5 * dt * km2
    km3 = riccati_rhs(M3, triple)
    ky3 = y_rhs(Y + 0.5 * dt * ky2, M3, triple)
    M4 = M + dt * km3
    ky4 = y_rhs(Y + dt * ky3, M4, triple)
    out = Y + dt / 6 * (ky1 + 2 * ky2 + 2 * ky3 + ky4)
    if np.any(np.abs(np.linalg.det(out)) < 1e-300):
        raise SingularYError("det Y underflowed")
    return out


def amplitude(a0, Y):
    """``a0 / sqrt(det Y)`` for one matrix or a time-ordered stack (branch unwrapped)."""
    Y = np.asarray(Y, dtype=complex)
    det = np.linalg.det(Y)
    if np.any(np.abs(det) < 1e-300):
        raise SingularYError("det Y vanished")
    if det.ndim == 0:
        return a0 / np.sqrt(det)
    ang = np.angle(det)
    jumps = np.angle(det[1:] / det[:-1])
    if np.any(np.abs(jumps) > BRANCH_JUMP):
        raise BranchError("arg det Y jumps between samples; reduce the step")
    arg = ang[0] + np.concatenate([[0.0], np.cumsum(jumps)], axis=0)
    return a0 * np.exp(-0.5 * (np.log(np.abs(det)) + 1j * arg))


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10 - 15 * u + 6 * u**2)


def _smoothstep_d1(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 30 * u**2 * (1 - u) ** 2, 0.0)


def _smoothstep_d2(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 60 * u * (1 - u) * (1 - 2 * u), 0.0)


def default_cutoff_exponent(dim):
    # radius h^(1/n) sits inside the sqrt(h) beam width for n <= 2
    return 1.0 / dim if dim >= 3 else 0.25


@dataclass(frozen=True)
class CutoffSpec:
    h: float
    dim: int
    inner_radius: float
    outer_radius: float
    breakpoints: tuple = (0.0, np.inf)
    transition: float = 0.0

    @property
    def time_windows(self):
        return list(zip(self.breakpoints[:-1], self.breakpoints[1:]))

    # spatial bump, radial in the Euclidean chart distance
    def chi(self, r):
        u = (np.asarray(r) - self.inner_radius) / (self.outer_radius - self.inner_radius)
        return 1.0 - _smoothstep(u)

    def chi_radial_derivatives(self, r):
        w = self.outer_radius - self.inner_radius
        u = (np.asarray(r) - self.inner_radius) / w
        return -_smoothstep_d1(u) / w, -_smoothstep_d2(u) / w**2

    def chi_grad_hess(self, delta):
        """Value, gradient and Hessian of ``chi(|delta|)``."""
        r = np.linalg.norm(delta, axis=-1)
        d1, d2 = self.chi_radial_derivatives(r)
        rs = np.where(r > 0, r, 1.0)
        e = delta / rs[..., None]
        n = delta.shape[-1]
        grad = d1[..., None] * e
        eye = np.eye(n)
        hess = d2[..., None, None] * e[..., :, None] * e[..., None, :] + (d1 / rs)[..., None, None] * (
            eye - e[..., :, None] * e[..., None, :]
        )
        return self.chi(r), grad, hess

    # time windows: smooth partition of unity over the chart intervals
    def window(self, l, t):
        t = np.asarray(t, dtype=float)
        bps = self.breakpoints
        w = self.transition
        out = np.ones_like(t)
        if l > 0 and w > 0:
            out = out * _smoothstep((t - bps[l] + w) / (2 * w))
        elif l > 0:
            out = out * (t >= bps[l])
        if l < len(bps) - 2 and w > 0:
            out = out * (1 - _smoothstep((t - bps[l + 1] + w) / (2 * w)))
        elif l < len(bps) - 2:
            out = out * (t < bps[l + 1])
        return out

    def window_derivative(self, l, t, eps=1e-6):
        return (self.window(l, t + eps) - self.window(l, t - eps)) / (2 * eps)

    def chi_time(self, t):
        return sum(self.window(l, t) for l in range(len(self.breakpoints) - 1))


def make_cutoff(h, dim, exponent=None, radius=None, chart=None, T=None):
    """Cutoff with inner radius ``h^exponent`` (or a fixed ``radius``)."""
    if not 0 < h < 1:
        raise ParameterError("h must lie in (0, 1)")
    r0 = float(radius) if radius is not None else h ** (exponent if exponent is not None else default_cutoff_exponent(dim))
    if chart is not None:
        bps = tuple(float(b) for b in chart.breakpoints)
        w = float(chart.overlap)
    else:
        bps = (0.0, float(T) if T is not None else np.inf)
        w = 0.0
    return CutoffSpec(h, dim, r0, 2 * r0, bps, w)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


def _beam_rhs(metric, x, p, M, Y):
    ginv = metric.eval_ginv(x)
    dginv = metric.eval_dginv(x)
    d2ginv = metric.eval_d2ginv(x)
    xdot = np.einsum("...ij,...j->...i", ginv, p)
    pdot = -0.5 * np.einsum("...i,...kij,...j->...k", p, dginv, p)
    tri = HessianTriple(
        0.5 * np.einsum("...i,...klij,...j->...kl", p, d2ginv, p),
        np.einsum("...kij,...j->...ki", dginv, p),
        ginv,
    )
    return xdot, pdot, riccati_rhs(M, tri), y_rhs(Y, M, tri), 0.5 * np.einsum("...i,...i->...", p, xdot)


@dataclass(eq=False)
class BeamBundle:
    """Arrays indexed ``[time, beam, ...]`` (or ``[beam, ...]`` final-only)."""

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    M: np.ndarray
    Y: np.ndarray
    a: np.ndarray
    phase0: np.ndarray
    min_eig: np.ndarray  # per beam, min over steps of min eig Im M
    lkk_drift: np.ndarray  # per beam, max relative drift of det(Im M)|det Y|^2
    recorded: bool = True


def propagate_beams(metric, z, eta, M0=None, a0=1.0, dt=1e-3, T=1.0, record=True, phase0=0.0):
    """Jointly integrate ``(x, p, M, Y, phase0)`` for a batch of beams with RK4."""
    x = np.atleast_2d(np.asarray(z, dtype=float)).copy()
    p = np.atleast_2d(np.asarray(eta, dtype=float)).copy()
    nb, n = x.shape
    if M0 is None:
        M = np.broadcast_to(1j * np.eye(n), (nb, n, n)).astype(complex)
    else:
        M = np.broadcast_to(np.asarray(M0, dtype=complex), (nb, n, n)).copy()
    M = 0.5 * (M + _T(M))
    me = _min_eig_im(M)
    if np.any(me <= 0):
        raise RiccatiBlowupError(f"Im M(0) not positive definite for beam {int(np.argmin(me))}")
    Y = np.broadcast_to(np.eye(n, dtype=complex), (nb, n, n)).copy()
    phi = np.broadcast_to(np.asarray(phase0, dtype=float), (nb,)).copy()
    a0 = np.broadcast_to(np.asarray(a0, dtype=complex), (nb,))
    nsteps = max(1, int(np.ceil(T / dt - 1e-9)))
    h = T / nsteps
    ts = np.linspace(0.0, T, nsteps + 1)

    lkk0 = np.linalg.det(M.imag) * np.abs(np.linalg.det(Y)) ** 2
    drift = np.zeros(nb)
    min_eig = me.copy()
    det_prev = np.ones(nb, dtype=complex)
    arg = np.zeros(nb)
    logabs = np.zeros(nb)
    if record:
        X = np.empty((nsteps + 1, nb, n))
        P = np.empty_like(X)
        MM = np.empty((nsteps + 1, nb, n, n), dtype=complex)
        YY = np.empty_like(MM)
        PH = np.empty((nsteps + 1, nb))
        ARG = np.empty((nsteps + 1, nb))
        LOG = np.empty((nsteps + 1, nb))
        X[0], P[0], MM[0], YY[0], PH[0], ARG[0], LOG[0] = x, p, M, Y, phi, arg, logabs

    for k in range(1, nsteps + 1):
        k1 = _beam_rhs(metric, x, p, M, Y)
        k2 = _beam_rhs(metric, x + 0.5 * h * k1[0], p + 0.5 * h * k1[1], M + 0.5 * h * k1[2], Y + 0.5 * h * k1[3])
        k3 = _beam_rhs(metric, x + 0.5 * h * k2[0], p + 0.5 * h * k2[1], M + 0.5 * h * k2[2], Y + 0.5 * h * k2[3])
        k4 = _beam_rhs(metric, x + h * k3[0], p + h * k3[1], M + h * k3[2], Y + h * k3[3])
        x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        M = M + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        Y = Y + h / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        phi = phi + h / 6 * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4])
        M = 0.5 * (M + _T(M))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(M)) and np.all(np.isfinite(Y))):
            raise IntegrationError(f"non-finite beam state at step {k}")
        me = _min_eig_im(M)
        if np.any(me <= 0):
            raise RiccatiBlowupError(f"Im M lost positivity at step {k} (beam {int(np.argmin(me))})")
        min_eig = np.minimum(min_eig, me)
        det = np.linalg.det(Y)
        if np.any(np.abs(det) < 1e-300):
            raise SingularYError(f"det Y vanished at step {k}")
        jump = np.angle(det / det_prev)
        if np.any(np.abs(jump) > BRANCH_JUMP):
            raise BranchError(f"arg det Y jumped by {np.max(np.abs(jump)):.3f} at step {k}; reduce dt")
        arg = arg + jump
        logabs = np.log(np.abs(det))
        det_prev = det
        lkk = np.linalg.det(M.imag) * np.abs(det) ** 2
        drift = np.maximum(drift, np.abs(lkk / lkk0 - 1))
        if record:
            X[k], P[k], MM[k], YY[k], PH[k], ARG[k], LOG[k] = x, p, M, Y, phi, arg, logabs

    if record:
        amp = a0[None, :] * np.exp(-0.5 * (LOG + 1j * ARG))
        return BeamBundle(ts, X, P, MM, YY, amp, PH, min_eig, drift, True)
    amp = a0 * np.exp(-0.5 * (logabs + 1j * arg))
    return BeamBundle(ts, x, p, M, Y, amp, phi, min_eig, drift, False)


@dataclass(frozen=True)
class BeamState:
    t: float
    x: np.ndarray
    p: np.ndarray
    M: np.ndarray
    Y: np.ndarray
    a: complex
    phase0: float


@dataclass(eq=False)
class Beam:
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    M: np.ndarray
    Y: np.ndarray
    a: np.ndarray
    phase0: np.ndarray
    h: float
    cutoff: CutoffSpec
    metric: object
    chart: object = None
    rho: np.ndarray = field(default=None)  # half-density factor (det g(x(t)) / det g(z))^(-1/4)
    xdot: np.ndarray = field(default=None)
    pdot: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rho is None:
            dg = np.linalg.det(self.metric.eval_g(self.x))
            self.rho = (dg / dg[0]) ** -0.25
        if self.xdot is None:
            from .geometry import hamilton_rhs

            self.xdot, self.pdot = hamilton_rhs(self.metric, self.x, self.p)

    @property
    def dim(self):
        return self.x.shape[-1]

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    @property
    def states(self):
        return [self.state(i) for i in range(len(self.t))]

    def state(self, i):
        return BeamState(float(self.t[i]), self.x[i], self.p[i], self.M[i], self.Y[i], complex(self.a[i]), float(self.phase0[i]))

    @property
    def amplitude_full(self):
        return self.a * self.rho

    def lkk(self):
        return np.linalg.det(self.M.imag) * np.abs(np.linalg.det(self.Y)) ** 2

    def node(self, t, tol=1e-9):
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > tol:
            raise ParameterError(f"t={t} is not a beam node")
        return i

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for i in range(len(self.t)):
                fh.write(
                    json.dumps(
                        {
                            "t": float(self.t[i]),
                            "x": self.x[i].tolist(),
                            "p": self.p[i].tolist(),
                            "M_re": self.M[i].real.tolist(),
                            "M_im": self.M[i].imag.tolist(),
                            "Y_re": self.Y[i].real.tolist(),
                            "Y_im": self.Y[i].imag.tolist(),
                            "a_re": float(self.a[i].real),
                            "a_im": float(self.a[i].imag),
                        }
                    )
                    + "\n"
                )


def bundle_beam(bundle, b, h, cutoff, metric, chart=None):
    """Single :class:`Beam` view of column ``b`` of a recorded bundle."""
    return Beam(
        bundle.t,
        bundle.x[:, b],
        bundle.p[:, b],
        bundle.M[:, b],
        bundle.Y[:, b],
        bundle.a[:, b],
        bundle.phase0[:, b],
        h,
        cutoff,
        metric,
        chart,
    )


def propagate_beam(
    metric, chart, z, eta, h, a0=1.0, dt=1e-3, T=None, M0=None, cutoff_exponent=None, cutoff_radius=None
):
    """Beam launched at ``(z, eta)``; runs to the chart's exit time unless ``T`` is given."""
    if T is None:
        if chart is None or chart.ray.exit_time is None:
            raise ParameterError("need T or a chart on an exiting ray")
        T = chart.ray.exit_time
    z = np.atleast_1d(np.asarray(z, dtype=float))
    bundle = propagate_beams(metric, z[None], np.atleast_1d(eta)[None], None if M0 is None else np.asarray(M0)[None], a0, dt, T)
    cut = make_cutoff(h, len(z), cutoff_exponent, cutoff_radius, chart, T)
    return bundle_beam(bundle, 0, h, cut, metric, chart)


# ---------------------------------------------------------------------------
# evaluation and residuals
# ---------------------------------------------------------------------------


def _hermite(y0, y1, d0, d1, s, h):
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


def beam_state_at(beam, t):
    """(x, p, M, A, phase0) at time t; Hermite for the ray and phase, linear for M and A."""
    tt = beam.t
    if t < tt[0] - 1e-12 or t > tt[-1] + 1e-12:
        raise ParameterError("t outside beam time range")
    i = int(np.clip(np.searchsorted(tt, t) - 1, 0, len(tt) - 2))
    dt = tt[i + 1] - tt[i]
    s = (t - tt[i]) / dt
    A = beam.amplitude_full
    if s < 1e-12 or s > 1 - 1e-12:
        j = i if s < 0.5 else i + 1
        return beam.x[j], beam.p[j], beam.M[j], A[j], beam.phase0[j]
    x = _hermite(beam.x[i], beam.x[i + 1], beam.xdot[i], beam.xdot[i + 1], s, dt)
    p = _hermite(beam.p[i], beam.p[i + 1], beam.pdot[i], beam.pdot[i + 1], s, dt)
    Hi = 0.5 * beam.p[i] @ beam.xdot[i]
    Hj = 0.5 * beam.p[i + 1] @ beam.xdot[i + 1]
    ph = _hermite(beam.phase0[i], beam.phase0[i + 1], Hi, Hj, s, dt)
    M = (1 - s) * beam.M[i] + s * beam.M[i + 1]
    a = (1 - s) * A[i] + s * A[i + 1]
    return x, p, M, a, ph


def _phase(delta, p, M, ph):
    return ph + delta @ p + 0.5 * np.einsum("...i,ij,...j->...", delta, M, delta)


def evaluate_beam(beam, t, x):
    """``U(t, x)``; ``x`` has shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    xt, pt, Mt, At, ph = beam_state_at(beam, t)
    delta = x - xt
    r = np.linalg.norm(delta, axis=-1)
    chi = beam.cutoff.chi(r) * beam.cutoff.chi_time(t)
    psi = _phase(delta, pt, Mt, ph)
    out = np.zeros(r.shape, dtype=complex)
    on = chi > 0
    out[on] = chi[on] * At * np.exp(1j * psi[on] / beam.h)
    return out


_FD_C = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FD_F = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


def _node_rate(arr, i, dt):
    """Fourth-order finite-difference time derivative of ``arr`` at node ``i``."""
    m = len(arr)
    if m < 5:
        raise ParameterError("need at least five beam states for time derivatives")
    if 2 <= i <= m - 3:
        return np.tensordot(_FD_C, arr[i - 2 : i + 3], axes=1) / dt
    if i < 2:
        return np.tensordot(_FD_F, arr[i : i + 5], axes=1) / dt if i == 0 else (
            np.tensordot(np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0, arr[i - 1 : i + 4], axes=1) / dt
        )
    if i == m - 1:
        return -np.tensordot(_FD_F, arr[i - 4 : i + 1][::-1], axes=1) / dt
    return -np.tensordot(np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0, arr[i - 3 : i + 2][::-1], axes=1) / dt


def _lb_first_order(metric, x):
    """``b^j`` with ``Lap_g F = g^{ij} F_ij + b^j F_j``."""
    ginv = metric.eval_ginv(x)
    div = np.einsum("...iij->...j", metric.eval_dginv(x))
    return ginv, div + np.einsum("...ij,...i->...j", ginv, metric.dlog_sqrt_det(x))


def _phase_pieces(beam, i, x):
    dt = beam.dt
    xt, pt, Mt, ph = beam.x[i], beam.p[i], beam.M[i], beam.phase0[i]
    xr = _node_rate(beam.x, i, dt)
    pr = _node_rate(beam.p, i, dt)
    Mr = _node_rate(beam.M, i, dt)
    phr = _node_rate(beam.phase0, i, dt)
    A = beam.amplitude_full
    Ar = _node_rate(A, i, dt)
    delta = x - xt
    psi = _phase(delta, pt, Mt, ph)
    psi_t = phr - xr @ pt + delta @ pr - np.einsum("...i,ij,j->...", delta, Mt, xr) + 0.5 * np.einsum(
        "...i,ij,...j->...", delta, Mr, delta
    )
    grad = pt + delta @ Mt
    ginv, b = _lb_first_order(beam.metric, x)
    Hval = 0.5 * np.einsum("...i,...ij,...j->...", grad, ginv, grad)
    lap = np.einsum("...ij,ij->...", ginv, Mt) + np.einsum("...j,...j->...", b, grad)
    return dict(delta=delta, psi=psi, psi_t=psi_t, grad=grad, ginv=ginv, b=b, H=Hval, lap=lap, A=A[i], A_t=Ar, xr=xr)


def eikonal_transport_residuals(beam, t, x):
    """``(r_eik, r_trans)`` at node time ``t`` and points ``x``."""
    i = beam.node(t)
    q = _phase_pieces(beam, i, np.asarray(x, dtype=float))
    r_eik = q["psi_t"] + q["H"]
    r_trans = q["A_t"] + 0.5 * q["lap"] * q["A"]
    return r_eik, r_trans


def schrodinger_residual(beam, t, points):
    """Pointwise ``P_h U`` at node time ``t`` (analytic in space, differenced in time)."""
    i = beam.node(t)
    h = beam.h
    q = _phase_pieces(beam, i, np.asarray(points, dtype=float))
    chi, gchi, hchi = beam.cutoff.chi_grad_hess(q["delta"])
    win = beam.cutoff.chi_time(t)
    win_t = sum(beam.cutoff.window_derivative(l, t) for l in range(len(beam.cutoff.breakpoints) - 1))
    A, A_t = q["A"], q["A_t"]
    w = A * chi * win
    chi_t = -gchi @ q["xr"]
    w_t = A_t * chi * win + A * chi_t * win + A * chi * win_t
    gw = A * win * gchi
    lap_w = A * win * (np.einsum("...ij,...ij->...", q["ginv"], hchi) + np.einsum("...j,...j->...", q["b"], gchi))
    cross = np.einsum("...i,...ij,...j->...", gw, q["ginv"], q["grad"])
    body = w * (q["psi_t"] + q["H"]) - 1j * h * (w_t + cross + 0.5 * w * q["lap"]) - 0.5 * h**2 * lap_w
    return body * np.exp(1j * q["psi"] / h)


def schrodinger_residual_norm(beam, t, grid):
    """``||P_h U(t)||_{L^2(dvol_g)}`` on a tensor grid resolving ``sqrt(h)``."""
    if grid.spacing > np.sqrt(beam.h) / 8 + 1e-15:
        raise ResolutionError(f"grid spacing {grid.spacing:.3g} exceeds sqrt(h)/8 = {np.sqrt(beam.h) / 8:.3g}")
    pts = grid.points
    r = schrodinger_residual(beam, t, pts)
    vol = beam.metric.sqrt_det(pts) * grid.cell_volume
    return float(np.sqrt(np.sum(np.abs(r) ** 2 * vol)))
