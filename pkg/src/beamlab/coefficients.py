"""Coefficient fields alpha(x), regularity seminorms and difference surrogates."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, PreconditionError, TrappedRayError
from .geometry import flow_batch, integrate_along_ray, inward_entries

CLASS_ALIASES = {
    "L": "lipschitz",
    "lipschitz": "lipschitz",
    "Z": "zygmund",
    "zygmund": "zygmund",
    "LL": "log_lipschitz",
    "log_lipschitz": "log_lipschitz",
    "LZ": "log_zygmund",
    "log_zygmund": "log_zygmund",
    "holder": "holder",
}
SECOND_DIFFERENCE = {"zygmund", "log_zygmund"}


def _canon(cls):
    try:
        return CLASS_ALIASES[cls]
    except KeyError:
        raise ParameterError(f"unknown regularity class {cls!r}") from None


def modulus_kappa(cls, y, exponent=0.5):
    """Continuity modulus for a regularity class, valid for ``0 < y < 1``."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or np.any(y >= 1):
        raise ParameterError("modulus defined only for 0 < y < 1")
    c = _canon(cls)
    if c in ("lipschitz", "zygmund"):
        return y.copy() if y.ndim else float(y)
    if c == "holder":
        return y**exponent
    return y * np.log1p(1.0 / y)


# ---------------------------------------------------------------------------
# fields and fixtures
# ---------------------------------------------------------------------------


class CoefficientField:
    """Scalar field ``alpha(x)`` on positions of shape ``(..., n)``."""

    def __init__(self, func, declared_class, bounds=None, name="alpha", dim=1, exponent=None):
        self._func = func
        self.declared_class = declared_class
        self.bounds = bounds
        self.name = name
        self.dim = dim
        self.exponent = exponent

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self._func(x), dtype=float)

    __call__ = eval

    def eval_1d(self, s):
        """Evaluate a 1-D field on a plain array of abscissae."""
        return self.eval(np.asarray(s, dtype=float)[..., None])

    def scaled(self, c):
        lo_hi = None if self.bounds is None else tuple(sorted((c * self.bounds[0], c * self.bounds[1])))
        return CoefficientField(lambda x: c * self._func(x), self.declared_class, lo_hi, f"{c}*{self.name}", self.dim)

    def check_hyperbolic(self, samples):
        """Raise unless ``0 < alpha_* <= alpha <= alpha^*`` on the samples."""
        v = self.eval(samples)
        lo, hi = self.bounds if self.bounds is not None else (0.0, np.inf)
        if not (np.min(v) > 0 and lo > 0 and np.min(v) >= lo - 1e-12 and np.max(v) <= hi + 1e-12):
            raise PreconditionError(f"{self.name}: strict hyperbolicity fails (range {np.min(v)}..{np.max(v)})")
        return float(np.min(v)), float(np.max(v))

    def __repr__(self):
        return f"CoefficientField({self.name!r}, class={self.declared_class!r})"


def from_1d(func, declared_class, bounds=None, name="alpha", exponent=None):
    """Wrap a function of one real variable as a 1-D field."""
    return CoefficientField(lambda x: func(x[..., 0]), declared_class, bounds, name, 1, exponent)


def weierstrass(s, terms=16):
    """Zygmund (not Lipschitz) function ``sum_j 2^-j cos(2^j pi s)``."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    for j in range(1, terms + 1):
        out += 2.0**-j * np.cos(2.0**j * np.pi * s)
    return out


def xlog(s):
    """Even extension of ``s log(1/|s|)``; log-Lipschitz, not Lipschitz."""
    a = np.abs(np.asarray(s, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > 0, -a * np.log(np.where(a > 0, a, 1.0)), 0.0)


def _first(x):
    return x[..., 0]


FIXTURES = {
    "constant": lambda: CoefficientField(lambda x: np.ones(x.shape[:-1]), "lipschitz", (1.0, 1.0), "constant"),
    "bump": lambda: CoefficientField(
        lambda x: 1.0 + 0.5 * np.exp(-np.sum((x - 0.5) ** 2, axis=-1) / 0.02), "lipschitz", (1.0, 1.5), "bump"
    ),
    "hat": lambda: CoefficientField(
        lambda x: 1.0 + 0.5 * np.maximum(0.0, 1 - 4 * np.abs(_first(x) - 0.5)), "lipschitz", (1.0, 1.5), "hat"
    ),
    "weierstrass": lambda: CoefficientField(
        lambda x: 1.5 + 0.5 * weierstrass(_first(x)), "zygmund", (1.0, 2.0), "weierstrass"
    ),
    "loglip": lambda: CoefficientField(
        lambda x: 1.0 + xlog(_first(x) - 0.5), "log_lipschitz", (1.0, 1.0 + np.exp(-1)), "loglip"
    ),
    "holder": lambda: CoefficientField(
        lambda x: 1.0 + 0.5 * np.sqrt(np.abs(_first(x) - 0.5)), "holder", (1.0, 1.5), "holder", exponent=0.5
    ),
    "sine": lambda: CoefficientField(
        lambda x: 1.0 + 0.1 * np.sin(4 * _first(x)), "lipschitz", (0.9, 1.1), "sine"
    ),
    "lorentz": lambda: CoefficientField(
        lambda x: 1.0 / (1.0 + _first(x) ** 2), "lipschitz", (0.01, 1.0), "lorentz"
    ),
}


def get_fixture(name):
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown coefficient fixture {name!r}") from None


# ---------------------------------------------------------------------------
# seminorms
# ---------------------------------------------------------------------------


@dataclass
class ModulusReport:
    class_tested: str
    seminorm_estimate: float
    sample_count: int
    max_violating_pair: tuple

    def to_json(self):
        x, y = self.max_violating_pair
        return json.dumps(
            {
                "class": self.class_tested,
                "estimate": self.seminorm_estimate,
                "samples": self.sample_count,
                "worst_pair": [np.atleast_1d(x).tolist(), np.atleast_1d(y).tolist()],
            }
        )


@dataclass(frozen=True)
class PairSamples:
    base: np.ndarray  # (N, n)
    disp: np.ndarray  # (K, n), 0 < |y| < 1
    lo: tuple | None = None
    hi: tuple | None = None


def dyadic_samples(lo, hi, n_base, k_min, k_max, dim=1):
    """Uniform base grid crossed with axis displacements ``2^-k``, ``k_min <= k <= k_max``."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
    axes = [np.linspace(a, b, n_base) for a, b in zip(lo, hi)]
    base = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    mags = 2.0 ** -np.arange(k_min, k_max + 1)
    disp = np.concatenate([np.eye(dim)[j] * mags[:, None] for j in range(dim)])
    return PairSamples(base, disp, tuple(lo), tuple(hi))


def seminorm(field, cls, samples, exponent=0.5):
    """Sampled supremum of the difference quotient for ``cls`` (a lower bound)."""
    c = _canon(cls)
    f = field.eval if isinstance(field, CoefficientField) else field
    if samples.base.size == 0 or samples.disp.size == 0:
        raise ParameterError("empty sample set")
    y = samples.disp
    ny = np.linalg.norm(y, axis=-1)
    if np.any(ny <= 0) or np.any(ny >= 1):
        raise ParameterError("displacements must satisfy 0 < |y| < 1")
    x = samples.base[:, None, :]
    second = c in SECOND_DIFFERENCE
    fx = f(x)
    if second:
        num = np.abs(f(x + y) + f(x - y) - 2 * fx)
    else:
        num = np.abs(f(x + y) - fx)
    valid = np.ones(num.shape, dtype=bool)
    if samples.lo is not None:
        lo, hi = np.asarray(samples.lo), np.asarray(samples.hi)
        pts = [x + y, x - y] if second else [x + y]
        for q in pts:
            valid &= np.all((q >= lo - 1e-15) & (q <= hi + 1e-15), axis=-1)
    q = np.where(valid, num / modulus_kappa(c, ny, exponent)[None, :], -np.inf)
    i, k = np.unravel_index(np.argmax(q), q.shape)
    est = float(q[i, k]) if np.isfinite(q[i, k]) else 0.0
    return ModulusReport(c, max(est, 0.0), int(np.sum(valid)), (samples.base[i].copy(), y[k].copy()))


def lipschitz_seminorm(field, samples):
    return seminorm(field, "lipschitz", samples)


def zygmund_seminorm(field, samples):
    return seminorm(field, "zygmund", samples)


def log_lipschitz_seminorm(field, samples):
    return seminorm(field, "log_lipschitz", samples)


def log_zygmund_seminorm(field, samples):
    return seminorm(field, "log_zygmund", samples)


# ---------------------------------------------------------------------------
# difference surrogates and checks
# ---------------------------------------------------------------------------


def fd_gradient(field, x, h):
    """Forward-difference gradient ``(alpha(x + h e_j) - alpha(x)) / h``."""
    if not 0 < h < 1:
        raise ParameterError("need 0 < h < 1")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    f0 = field.eval(x)
    return np.stack([(field.eval(x + h * np.eye(n)[j]) - f0) / h for j in range(n)], axis=-1)


def fd_laplacian(field, x, h):
    """Second-difference Laplacian ``sum_j (alpha(x+he_j) + alpha(x-he_j) - 2 alpha(x)) / h^2``."""
    if not 0 < h < 1:
        raise ParameterError("need 0 < h < 1")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    f0 = field.eval(x)
    e = np.eye(n) * h
    return sum(field.eval(x + e[j]) + field.eval(x - e[j]) - 2 * f0 for j in range(n)) / h**2


@dataclass
class MonotonicityReport:
    alpha0_estimate: float
    holds: bool
    worst_point: np.ndarray


def monotonicity_check(field, metric, samples, h=1e-4):
    """Infimum of the diagonal of ``g^{-1} d(x_j alpha)`` by forward differences."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n = x.shape[-1]
    base = x * field.eval(x)[..., None]  # x_j alpha(x)
    d = np.zeros(x.shape[:-1] + (n, n))
    for k in range(n):
        xs = x + h * np.eye(n)[k]
        d[..., :, k] = (xs * field.eval(xs)[..., None] - base) / h
    ginv = metric.eval_ginv(x)
    diag = np.einsum("...jk,...jk->...j", ginv, d)
    vals = np.min(diag, axis=-1)
    i = int(np.argmin(vals))
    a0 = float(vals[i])
    return MonotonicityReport(a0, a0 > 0, x[i].copy())


def travel_time(field, metric, domain, n_rays, dt=1e-2, T_max=100.0, refine=1):
    """Max over sampled geodesics of ``int sqrt(alpha) ds`` (Simpson along samples).

    ``refine > 1`` resamples each (smooth) ray by Hermite interpolation so that
    rough coefficients are sampled more densely than the integration step.
    """
    n_pts = max(int(np.sqrt(n_rays)), 1)
    n_dirs = max(n_rays // n_pts, 1) | 1
    x, p, _, _ = inward_entries(domain, metric, n_pts, n_dirs)
    rays = flow_batch(metric, x, p, dt, T_max, domain)
    best = 0.0
    for r in rays:
        if r.trapped:
            raise TrappedRayError(f"ray from {r.x[0]} did not exit before {T_max}")
        # t is arc length up to the constant speed |xdot|_g
        speed = np.sqrt(np.einsum("i,ij,j->", r.p[0], metric.eval_ginv(r.x[0]), r.p[0]))
        val = integrate_along_ray(r, metric, lambda t, xs: np.sqrt(field.eval(xs)), refine)
        best = max(best, speed * val)
    return best
