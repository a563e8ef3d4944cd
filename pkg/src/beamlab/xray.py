"""X-ray transforms: Euclidean parallel geometry, geodesic rays, adjoints,
Riesz potentials, filtered reconstruction and Sobolev norms of sinograms.

Parallel-geometry convention (n = 2): direction ``theta = (cos a, sin a)``,
``theta_perp = (-sin a, cos a)`` and ``Pf(a, s) = int f(s theta_perp + t theta) dt``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ParameterError, PreconditionError, TrappedRayError
from .geometry import flow_batch, hamiltonian_flow, inward_entries, integrate_along_ray, unit_covector

SUPPORT_TOL = 1e-12


@dataclass(eq=False)
class Sinogram:
    geometry: str  # parallel_euclidean | boundary_fan
    thetas: np.ndarray  # angles (parallel) or entry points (fan)
    offsets: np.ndarray  # offsets (parallel) or entry covectors (fan)
    values: np.ndarray
    weights: np.ndarray | None = None  # mu * d sigma * d omega for fan data
    mu: np.ndarray | None = None
    support_warning: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def ds(self):
        return float(self.offsets[1] - self.offsets[0])

    @property
    def dtheta(self):
        return 2 * np.pi / len(self.thetas)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "s", "value"])
            for i, a in enumerate(self.thetas):
                for j, s in enumerate(self.offsets):
                    w.writerow([repr(float(a)), repr(float(s)), repr(float(self.values[i, j]))])


def write_grid(path, arr):
    """Binary grid: one text header line with the dims, then float64 row-major values."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write((" ".join(str(d) for d in arr.shape) + "\n").encode())
        fh.write(arr.tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        dims = tuple(int(v) for v in fh.readline().split())
        return np.frombuffer(fh.read(), dtype="<f8").reshape(dims).copy()


def angle_grid(n_theta):
    """Uniform directions over the full circle ``[0, 2 pi)``."""
    return 2 * np.pi * np.arange(n_theta) / n_theta


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------


def _smooth_blob(x, c, ax, ang=0.0):
    ca, sa = np.cos(ang), np.sin(ang)
    d = x - np.asarray(c)
    u = (ca * d[..., 0] + sa * d[..., 1]) / ax[0]
    v = (-sa * d[..., 0] + ca * d[..., 1]) / ax[1]
    r2 = u * u + v * v
    return np.where(r2 < 1, (1 - r2) ** 4, 0.0)


PHANTOMS = {
    "gauss": lambda x: np.exp(-np.sum(x * x, axis=-1) / (2 * 0.13**2)),
    "disk": lambda x: (np.sum(x * x, axis=-1) <= 0.6**2).astype(float),
    "shepp-like-smooth": lambda x: (
        _smooth_blob(x, (0, 0), (0.69, 0.92))
        - 0.8 * _smooth_blob(x, (0, -0.02), (0.62, 0.87))
        + 0.3 * _smooth_blob(x, (0.22, 0), (0.16, 0.41), -0.3)
        + 0.3 * _smooth_blob(x, (-0.22, 0), (0.11, 0.31), 0.3)
        + 0.4 * _smooth_blob(x, (0, 0.35), (0.21, 0.25))
    ),
}


def get_phantom(name):
    try:
        return PHANTOMS[name]
    except KeyError:
        raise KeyError(f"unknown phantom {name!r}") from None


def gaussian_phantom(sigma, center=(0.0, 0.0)):
    c = np.asarray(center, dtype=float)
    return lambda x: np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * sigma**2))


def random_bandlimited_phantom(rng, n_modes=6, max_freq=6.0):
    """Random trigonometric polynomial times a smooth window vanishing outside the unit disk."""
    k = rng.uniform(-max_freq, max_freq, size=(n_modes, 2))
    amp = rng.normal(size=n_modes)
    ph = rng.uniform(0, 2 * np.pi, n_modes)

    def f(x):
        r2 = np.sum(x * x, axis=-1)
        win = np.where(r2 < 0.81, (1 - r2 / 0.81) ** 4, 0.0)
        return win * np.sum(amp * np.cos(x @ k.T + ph), axis=-1)

    return f


def sample_on_grid(f, n, half_width=1.0):
    ax = np.linspace(-half_width, half_width, n, endpoint=False) + half_width / n
    X, Yg = np.meshgrid(ax, ax, indexing="ij")
    return ax, f(np.stack([X, Yg], axis=-1))


# ---------------------------------------------------------------------------
# forward transforms
# ---------------------------------------------------------------------------


def xray_forward_euclid(f, theta_grid, offset_grid, n_steps=2048, support_radius=1.0, batch=16):
    """Line integrals of a callable ``f`` by composite Simpson along each line."""
    thetas = np.asarray(theta_grid, dtype=float)
    offs = np.asarray(offset_grid, dtype=float)
    if n_steps % 2:
        n_steps += 1
    t = np.linspace(-support_radius, support_radius, n_steps + 1)
    wts = np.ones(n_steps + 1)
    wts[1:-1:2] = 4
    wts[2:-1:2] = 2
    wts *= (t[1] - t[0]) / 3
    vals = np.empty((len(thetas), len(offs)))
    warn = False
    for i, a in enumerate(thetas):
        th = np.array([np.cos(a), np.sin(a)])
        pe = np.array([-np.sin(a), np.cos(a)])
        for j0 in range(0, len(offs), batch):
            s = offs[j0 : j0 + batch]
            pts = s[:, None, None] * pe + t[None, :, None] * th
            fv = f(pts)
            vals[i, j0 : j0 + batch] = fv @ wts
            if not warn:
                outside = np.sum(pts * pts, axis=-1) > 1.0
                warn = bool(np.any(np.abs(fv[outside]) > SUPPORT_TOL))
    return Sinogram("parallel_euclidean", thetas, offs, vals, support_warning=warn)


def line_integral(f, x0, theta, n_steps=2048, half_length=1.0):
    """``int f(x0 + t theta) dt`` over ``|t| <= half_length`` in any dimension (Simpson)."""
    x0 = np.asarray(x0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    theta = theta / np.linalg.norm(theta, axis=-1, keepdims=True)
    if n_steps % 2:
        n_steps += 1
    t = np.linspace(-half_length, half_length, n_steps + 1)
    wts = np.ones(n_steps + 1)
    wts[1:-1:2] = 4
    wts[2:-1:2] = 2
    wts *= (t[1] - t[0]) / 3
    pts = x0[..., None, :] + t[:, None] * theta[..., None, :]
    return f(pts) @ wts


def xray_forward_geodesic(f, metric, entry, domain, dt=1e-3, T_max=100.0, time_dependent=False, refine=1):
    """``int_0^tau f(s, gamma(s)) ds`` along the unit-speed geodesic from ``entry = (x, omega)``."""
    x0, omega = (np.asarray(v, dtype=float) for v in entry)
    p0 = unit_covector(metric, x0, omega)
    ray = hamiltonian_flow(metric, (x0, p0), dt, T_max, domain)
    if ray.trapped:
        raise TrappedRayError("geodesic did not exit")
    if time_dependent:
        return integrate_along_ray(ray, metric, lambda t, xs: f(t, xs), refine)
    return integrate_along_ray(ray, metric, lambda t, xs: f(xs), refine)


def boundary_fan_sinogram(f, metric, domain, n_points, n_dirs, dt=1e-2, refine=1):
    """Geodesic X-ray data over a stratified sample of the inward boundary bundle."""
    x, p, w, mu = inward_entries(domain, metric, n_points, n_dirs)
    rays = flow_batch(metric, x, p, dt, 100.0, domain)
    if any(r.trapped for r in rays):
        raise TrappedRayError("trapped geodesic in fan sample")
    vals = np.array([integrate_along_ray(r, metric, lambda t, xs: f(xs), refine) for r in rays])
    sino = Sinogram("boundary_fan", x, p, vals, weights=w * mu, mu=mu)
    sino.meta["rays"] = rays
    return sino


# ---------------------------------------------------------------------------
# adjoint, Riesz potentials, reconstruction
# ---------------------------------------------------------------------------


def adjoint_P(sino, points):
    """``P^* g(x) = int_{S^1} g(theta, x . theta_perp) d theta`` at ``points (..., 2)``."""
    if sino.geometry != "parallel_euclidean":
        raise ParameterError("adjoint_P needs parallel geometry")
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape[:-1])
    for a, row in zip(sino.thetas, sino.values):
        s = -np.sin(a) * pts[..., 0] + np.cos(a) * pts[..., 1]
        out += np.interp(s, sino.offsets, row, left=0.0, right=0.0)
    return out * sino.dtheta


@dataclass(frozen=True)
class RieszFilter:
    order: float
    spacing: tuple
    shape: tuple

    def multiplier(self):
        freqs = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(n, d) for n, d in zip(self.shape, self.spacing)], indexing="ij")
        xi = np.sqrt(sum(k * k for k in freqs))
        out = np.zeros_like(xi)
        nz = xi > 0
        out[nz] = xi[nz] ** (-self.order)
        return out


def riesz_apply(order, u, spacing=None, dim=None):
    """Fourier multiplier ``|xi|^-order`` on a periodic grid; zero frequency set to 0.

    ``order`` may be a number (then ``spacing`` is required) or a :class:`RieszFilter`.
    """
    u = np.asarray(u)
    if isinstance(order, RieszFilter):
        spacing, dim, order = order.spacing, len(order.shape), order.order
    n = u.ndim if dim is None else dim
    if order >= n:
        raise ParameterError(f"Riesz order {order} must be below the dimension {n}")
    if order == 0:
        return u.copy()
    axes = tuple(range(u.ndim - n, u.ndim))
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (n,))
    filt = RieszFilter(order, tuple(spacing), tuple(u.shape[a] for a in axes)).multiplier()
    out = np.fft.ifftn(np.fft.fftn(u, axes=axes) * filt, axes=axes)
    return out.real if np.isrealobj(u) else out


def _filter_offsets(values, ds, order, pad=4):
    """Apply ``|sigma|^-order`` along the offset axis with zero padding."""
    if order == 0:
        return values
    n = values.shape[-1]
    N = int(2 ** np.ceil(np.log2(pad * n)))
    buf = np.zeros(values.shape[:-1] + (N,))
    buf[..., :n] = values
    # |sigma| has no finite value at 0 for negative order: kept at 0
    out = riesz_apply(order, buf, ds, dim=1)
    return out[..., :n]


def _ramlak(values, ds, pad=4):
    """Band-limited ramp filter (spatial Ram-Lak kernel), avoiding the periodic DC defect."""
    n = values.shape[-1]
    N = int(2 ** np.ceil(np.log2(pad * n)))
    k = np.arange(N)
    k = np.where(k <= N // 2, k, k - N)
    ker = np.zeros(N)
    ker[0] = 1 / (4 * ds * ds)
    odd = k % 2 == 1
    ker[odd] = -1 / (np.pi**2 * k[odd] ** 2 * ds * ds)
    H = np.fft.fft(ker).real * ds * 2 * np.pi  # |sigma| (angular frequency) in the continuous limit
    buf = np.zeros(values.shape[:-1] + (N,))
    buf[..., :n] = values
    return np.fft.ifft(np.fft.fft(buf, axis=-1) * H, axis=-1).real[..., :n]


def _gauss_sino(mass, sigma, offsets):
    return mass * np.exp(-offsets**2 / (2 * sigma**2)) / np.sqrt(2 * np.pi * sigma**2)


def _reconstruct_raw(sino, alpha_exp, n_grid, pad_factor, ref_sigma=0.25):
    if sino.geometry != "parallel_euclidean":
        raise ParameterError("reconstruction needs parallel geometry")
    if alpha_exp >= 2:
        raise ParameterError("alpha_exp must be below the dimension 2")
    ds = sino.ds
    vals = sino.values
    mass = 0.0
    if alpha_exp != 0:
        # the backprojection decays like |x|^-alpha; a Gaussian of equal mass is split off
        # and restored exactly so the periodic Riesz step only sees a fast-decaying remainder
        mass = float(np.mean(np.sum(vals, axis=1) * ds))
        vals = vals - _gauss_sino(mass, ref_sigma, sino.offsets)[None, :]
    order = alpha_exp - 1  # X^(alpha-1) on offsets
    g = _ramlak(vals, ds) if order == -1 else _filter_offsets(vals, ds, order)
    filtered = Sinogram(sino.geometry, sino.thetas, sino.offsets, g)
    half = 1.0 if alpha_exp == 0 else pad_factor
    m = int(round(n_grid * half))
    ax = (np.arange(m) + 0.5) * (2 * half / m) - half
    X, Yg = np.meshgrid(ax, ax, indexing="ij")
    bp = adjoint_P(filtered, np.stack([X, Yg], axis=-1))
    h = ax[1] - ax[0]
    norm = 1.0 / (2 * np.pi * 2 * np.pi)  # |S^1|^-1 (2 pi)^-1
    if alpha_exp != 0:
        bp = riesz_apply(-alpha_exp, bp, h)
        lo = (m - n_grid) // 2
        bp = bp[lo : lo + n_grid, lo : lo + n_grid]
        ax = ax[lo : lo + n_grid]
        X, Yg = np.meshgrid(ax, ax, indexing="ij")
        # the formula maps the reference Gaussian G to G / pi before calibration
        bp = bp + mass / (np.pi * norm) * np.exp(-(X**2 + Yg**2) / (2 * ref_sigma**2)) / (2 * np.pi * ref_sigma**2)
    return ax, bp * norm


@lru_cache(maxsize=None)
def calibration_constant(alpha_exp, n_grid=256, n_theta=360, sigma=0.13):
    """Global scalar fixing the net transform convention, measured on a Gaussian phantom."""
    f = gaussian_phantom(sigma)
    offs = offset_grid(n_grid)
    sino = xray_forward_euclid(f, angle_grid(n_theta), offs, n_steps=512)
    ax, raw = _reconstruct_raw(sino, alpha_exp, n_grid, 2.0)
    X, Yg = np.meshgrid(ax, ax, indexing="ij")
    ref = f(np.stack([X, Yg], axis=-1))
    return float(np.sum(raw * ref) / np.sum(raw * raw))


def offset_grid(n_grid, half_width=1.0):
    """Offsets matching an ``n_grid`` image on ``[-1, 1]^2``."""
    return np.linspace(-half_width, half_width, n_grid + 1)


def reconstruct(sino, alpha_exp=0.0, n_grid=256, pad_factor=2.0, calibration=None):
    """``f = c X^-alpha P^* X^(alpha-1) g`` on an ``n_grid^2`` image of ``[-1, 1]^2``."""
    ax, raw = _reconstruct_raw(sino, alpha_exp, n_grid, pad_factor)
    c = calibration_constant(float(alpha_exp), n_grid, len(sino.thetas)) if calibration is None else calibration
    return ax, c * raw


def sinogram_sobolev_norm(sino, alpha0, pad=4):
    """``(int int (1 + eta^2)^alpha0 |g^(theta, eta)|^2 d eta d theta)^(1/2)`` (unitary 1-D FT)."""
    ds = sino.ds
    n = sino.values.shape[-1]
    N = int(2 ** np.ceil(np.log2(pad * n)))
    G = np.fft.fft(sino.values, n=N, axis=-1) * ds / np.sqrt(2 * np.pi)
    eta = 2 * np.pi * np.fft.fftfreq(N, ds)
    deta = 2 * np.pi / (N * ds)
    w = (1 + eta**2) ** alpha0
    return float(np.sqrt(np.sum(w * np.abs(G) ** 2) * deta * sino.dtheta))


def sinogram_l2(sino):
    return float(np.sqrt(np.sum(sino.values**2) * sino.ds * sino.dtheta))


# ---------------------------------------------------------------------------
# normal operator on simple manifolds
# ---------------------------------------------------------------------------

SIMPLE_FIXTURES = {("euclidean:2", "unit_ball"), ("conformal:mild-disk", "unit_ball")}


@dataclass
class NormalOperatorReport:
    axis: np.ndarray
    values: np.ndarray  # I^* I f on the grid
    ratio: float  # ||I^* I f||_{H^1} / ||f||_{L^2}
    h1: float
    l2: float


def backproject_fan(sino, axis, smooth=1.0):
    """``I^* g`` from fan data by depositing along traced rays, then Gaussian smoothing."""
    rays = sino.meta["rays"]
    n = len(axis)
    h = axis[1] - axis[0]
    lo = axis[0]
    acc = np.zeros((n, n))
    for r, g, w in zip(rays, sino.values, sino.weights):
        if len(r.t) < 2:
            continue
        ds = np.gradient(r.t)
        ds[0] *= 0.5 if len(r.t) > 2 else 1.0
        ds[-1] *= 0.5 if len(r.t) > 2 else 1.0
        _splat(acc, (r.x - lo) / h, g * w * ds)
    acc /= h * h
    return gaussian_filter(acc, smooth, mode="constant") if smooth else acc


def _splat(acc, idx, vals):
    i0 = np.floor(idx).astype(int)
    fr = idx - i0
    n = acc.shape[0]
    for di in (0, 1):
        for dj in (0, 1):
            wgt = (fr[:, 0] if di else 1 - fr[:, 0]) * (fr[:, 1] if dj else 1 - fr[:, 1])
            ii, jj = i0[:, 0] + di, i0[:, 1] + dj
            ok = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
            np.add.at(acc, (ii[ok], jj[ok]), wgt[ok] * vals[ok])


def h1_norm(u, h, mask=None):
    gx, gy = np.gradient(u, h)
    m = np.ones_like(u, dtype=bool) if mask is None else mask
    return float(np.sqrt(np.sum((u**2 + gx**2 + gy**2)[m]) * h * h))


def normal_operator_manifold(metric, f, domain, n_points=96, n_dirs=97, n_grid=96, dt=1e-2):
    """``I^* I f`` on a simple disk and the stability ratio ``||I^*If||_{H^1} / ||f||_{L^2}``."""
    if (metric.name, domain.kind) not in SIMPLE_FIXTURES:
        raise PreconditionError(f"{metric.name} on {domain.kind} is not a declared simple fixture")
    sino = boundary_fan_sinogram(f, metric, domain, n_points, n_dirs, dt)
    axis = (np.arange(n_grid) + 0.5) * (2.0 / n_grid) - 1.0
    u = backproject_fan(sino, axis)
    X, Yg = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([X, Yg], axis=-1)
    inside = domain.inside(pts)
    h = axis[1] - axis[0]
    fv = f(pts)
    vol = metric.sqrt_det(pts)
    l2 = float(np.sqrt(np.sum((fv**2 * vol)[inside]) * h * h))
    h1 = h1_norm(np.where(inside, u, 0.0), h, inside)
    return NormalOperatorReport(axis, u, h1 / l2 if l2 > 0 else 0.0, h1, l2)
