"""Command-line experiment runner.

    beamlab run <config.json> [--serial | --workers N] [--no-assert]
    beamlab validate <config.json>
    beamlab list-fixtures

Outputs go to ``$BEAMLAB_OUTPUT_ROOT/<output_dir>`` (root defaults to the
current directory).  Exit codes: 0 pass, 1 assertion failure, 2 configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import beams, coefficients, geometry, superposition, svg, wave, xray
from .errors import BeamlabError, ConfigError

OUTPUT_ROOT_ENV = "BEAMLAB_OUTPUT_ROOT"
EXPERIMENTS = ("trace", "beam", "superpose", "xray", "wave", "observability", "sweep")
SWEEP_TARGETS = ("beam-residual", "eikonal-residual", "rhs-gain")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _pos(v):
    return isinstance(v, (int, float)) and v > 0


def _unit_interval(v):
    return isinstance(v, (int, float)) and 0 < v < 1


def _int_pos(v):
    return isinstance(v, int) and v > 0


def _vec(v):
    return isinstance(v, list) and all(isinstance(c, (int, float)) for c in v) and len(v) > 0


# experiment -> param -> (default, validator, description)
PARAMS = {
    "trace": {
        "x0": ([0.0, -0.99], _vec, "start point"),
        "direction": ([0.0, 1.0], _vec, "initial velocity direction"),
        "dt": (1e-2, _pos, "RK4 step"),
        "T": (10.0, _pos, "max flow time"),
        "n_samples": (64, _int_pos, "rays for the non-trapping check"),
        "T_max": (20.0, _pos, "non-trapping exit-time bound"),
    },
    "beam": {
        "z": ([0.0], _vec, "launch point"),
        "eta": ([1.0], _vec, "launch covector"),
        "h": (2.0**-6, _unit_interval, "semiclassical parameter"),
        "dt": (1e-3, _pos, "step"),
        "T": (1.0, _pos, "final time"),
        "cutoff_radius": (None, lambda v: v is None or _pos(v), "fixed cutoff radius"),
    },
    "superpose": {
        "h": (2.0**-7, _unit_interval, "semiclassical parameter"),
        "epsilon": (0.5, _unit_interval, "modified-phase exponent"),
        "T": (1.0, _pos, "final time"),
        "dt": (1e-2, _pos, "step"),
        "t": (0.5, lambda v: isinstance(v, (int, float)) and v >= 0, "evaluation time (a multiple of dt)"),
        "width": ("delta", lambda v: v == "delta" or _pos(v), "input width, or 'delta' for h^((1-eps)/2)"),
        "cutoff_radius": (0.5, _pos, "fixed cutoff radius"),
    },
    "xray": {
        "n_grid": (256, _int_pos, "image size"),
        "n_theta": (360, _int_pos, "directions"),
        "alpha_exp": (0.0, lambda v: isinstance(v, (int, float)) and 0 <= v < 2, "Riesz exponent"),
        "n_steps": (512, _int_pos, "Simpson steps per line"),
        "tol": (0.05, _pos, "roundtrip tolerance"),
    },
    "wave": {
        "n_nodes": (1000, _int_pos, "intervals per axis"),
        "T": (2.0, _pos, "final time"),
        "cfl": (0.45, _pos, "Courant number"),
        "mode": (1, _int_pos, "initial standing mode sin(k pi x)"),
        "drift_tol": (1e-3, _pos, "energy drift bound"),
    },
    "observability": {
        "T": (4.0, _pos, "observation time"),
        "m": (0, lambda v: isinstance(v, int) and v >= 0, "time-derivative order"),
        "K": (40, _int_pos, "eigenmode ladder length"),
        "n_nodes": (1000, _int_pos, "intervals"),
        "cfl": (0.45, _pos, "Courant number"),
        "n_random": (0, lambda v: isinstance(v, int) and v >= 0, "random band-limited members"),
        "slope_min": (-0.1, lambda v: isinstance(v, (int, float)), "lower bound on the log-log slope"),
    },
    "sweep": {
        "target": ("beam-residual", lambda v: v in SWEEP_TARGETS, "quantity swept over h"),
        "h_exponents": ([4, 5, 6, 7, 8, 9, 10], lambda v: isinstance(v, list) and len(v) >= 2, "h = 2^-k"),
        "expected_slope": (None, lambda v: v is None or isinstance(v, (int, float)), "asserted slope"),
        "slope_tol": (0.15, _pos, "slope tolerance"),
    },
}

FIXTURE_KEYS = {
    "trace": ("metric", "domain"),
    "beam": ("metric",),
    "superpose": ("metric", "alpha"),
    "xray": ("phantom",),
    "wave": ("metric", "domain", "alpha"),
    "observability": ("metric", "domain", "alpha"),
    "sweep": ("metric",),
}

DEFAULT_FIXTURES = {
    "trace": {"metric": "euclidean:2", "domain": "unit_ball:2"},
    "beam": {"metric": "euclidean:1"},
    "superpose": {"metric": "euclidean:1", "alpha": "constant"},
    "xray": {"phantom": "gauss"},
    "wave": {"metric": "euclidean:1", "domain": "interval", "alpha": "constant"},
    "observability": {"metric": "euclidean:1", "domain": "interval", "alpha": "weierstrass"},
    "sweep": {"metric": "conformal:quad-1d"},
}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    output_dir: str = ""
    fixtures: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    check: bool = True

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"experiment", "seed", "output_dir", "fixtures", "params", "check"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        exp = d.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed must be an integer")
        fx = dict(DEFAULT_FIXTURES[exp])
        fx.update(d.get("fixtures", {}))
        spec = PARAMS[exp]
        given = d.get("params", {})
        bad = set(given) - set(spec)
        if bad:
            raise ConfigError(f"unknown params for {exp}: {sorted(bad)}")
        params = {k: given.get(k, v[0]) for k, v in spec.items()}
        for k, (_, ok, desc) in spec.items():
            if not ok(params[k]):
                raise ConfigError(f"invalid {k}={params[k]!r} ({desc})")
        return cls(exp, seed, d.get("output_dir") or exp, fx, params, bool(d.get("check", True)))

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self):
        return asdict(self)


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float
    outputs: list
    checks: dict
    status: str  # pass | assertion-failure | config-error | numerical-failure
    error: str | None = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @property
    def exit_code(self):
        return {"pass": EXIT_OK, "assertion-failure": EXIT_ASSERT, "config-error": EXIT_CONFIG}.get(self.status, EXIT_NUMERIC)


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


def resolve_fixtures(cfg):
    out = {}
    fx = cfg.fixtures
    unknown = set(fx) - {"metric", "domain", "alpha", "phantom"}
    if unknown:
        raise ConfigError(f"unknown fixture keys: {sorted(unknown)}")
    for key in FIXTURE_KEYS[cfg.experiment]:
        if fx.get(key) is None:
            raise ConfigError(f"missing fixture {key}")
    try:
        for key, name in fx.items():
            if key == "metric":
                out[key] = geometry.get_metric(name)
            elif key == "domain":
                out[key] = geometry.get_domain(name)
            elif key == "alpha":
                out[key] = coefficients.get_fixture(name)
            elif key == "phantom":
                out[key] = xray.get_phantom(name)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]) if exc.args else str(exc)) from exc
    return out


def list_fixtures():
    return {
        "metrics": list(geometry.METRIC_IDS),
        "domains": list(geometry.DOMAIN_IDS),
        "alpha": sorted(coefficients.FIXTURES),
        "phantoms": sorted(xray.PHANTOMS),
        "experiments": list(EXPERIMENTS),
        "sweep_targets": list(SWEEP_TARGETS),
    }


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate(cfg):
    """Static diagnostics: ``[{"level": "error"|"warning", "message": ...}]``."""
    if not isinstance(cfg, ExperimentConfig):
        try:
            cfg = ExperimentConfig.from_dict(cfg)
        except ConfigError as exc:
            return [{"level": "error", "message": str(exc)}]
    diags = []
    try:
        fx = resolve_fixtures(cfg)
    except ConfigError as exc:
        return [{"level": "error", "message": str(exc)}]
    p = cfg.params
    if "cfl" in p and p["cfl"] > wave.CFL_MAX:
        diags.append({"level": "error", "message": f"cfl {p['cfl']} exceeds {wave.CFL_MAX}"})
    if "metric" in fx and "domain" in fx and fx["metric"].dim != fx["domain"].dim:
        diags.append({"level": "error", "message": "metric and domain dimensions differ"})
        return diags
    if cfg.experiment in ("wave", "observability") and fx["domain"].kind not in ("interval", "rectangle"):
        diags.append({"level": "error", "message": "wave solves need an interval or rectangle domain"})
    if cfg.experiment in ("superpose",) and fx["metric"].dim != 1:
        diags.append({"level": "error", "message": "superpose runs in one dimension"})
    if cfg.experiment in ("beam",):
        n = fx["metric"].dim
        if len(p["z"]) != n or len(p["eta"]) != n:
            diags.append({"level": "error", "message": "z and eta must match the metric dimension"})
    if cfg.experiment == "trace" and (len(p["x0"]) != fx["metric"].dim or len(p["direction"]) != fx["metric"].dim):
        diags.append({"level": "error", "message": "x0 and direction must match the metric dimension"})
    if any(d["level"] == "error" for d in diags):
        return diags
    if "domain" in fx and fx["domain"].kind != "interval":
        try:
            rep = geometry.check_nontrapping(fx["metric"], fx["domain"], 16, 50.0, dt=2e-2)
            if not rep.ok:
                diags.append({"level": "warning", "message": f"non-trapping spot check found {len(rep.violations)} violation(s)"})
        except BeamlabError as exc:
            diags.append({"level": "warning", "message": f"non-trapping spot check failed: {exc}"})
    if "alpha" in fx and "domain" in fx and "T" in p:
        T = p["T"]
        try:
            ta = coefficients.travel_time(fx["alpha"], fx["metric"], fx["domain"], 16, dt=1e-2, refine=200)
            if not T > 2 * ta:
                diags.append({"level": "warning", "message": f"T <= 2T_alpha (T = {T:g}, 2T_alpha = {2 * ta:.4g})"})
        except BeamlabError as exc:
            diags.append({"level": "warning", "message": f"travel time unavailable: {exc}"})
    return diags


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def _exp_trace(cfg, fx, out):
    p = cfg.params
    m, dom = fx["metric"], fx["domain"]
    x0 = np.array(p["x0"], dtype=float)
    p0 = geometry.unit_covector(m, x0, np.array(p["direction"], dtype=float))
    ray = geometry.hamiltonian_flow(m, (x0, p0), p["dt"], p["T"], dom)
    ray.to_csv(out("ray.csv"))
    rep = geometry.check_nontrapping(m, dom, p["n_samples"], p["T_max"], p["dt"])
    _dump(
        out("nontrapping.json"),
        {
            "max_exit_time": rep.max_exit_time,
            "all_transversal": rep.all_transversal,
            "violations": rep.violations,
            "n_rays": rep.n_rays,
            "ray_exit_time": ray.exit_time,
        },
    )
    if ray.dim >= 2:
        svg.line_plot(out("ray.svg"), [("ray", ray.x[:, 0], ray.x[:, 1])], "ray", "x1", "x2")
    else:
        svg.line_plot(out("ray.svg"), [("ray", ray.t, ray.x[:, 0])], "ray", "t", "x")
    return {"nontrapping": rep.ok}


def _exp_beam(cfg, fx, out):
    p = cfg.params
    m = fx["metric"]
    b = beams.propagate_beam(m, None, p["z"], p["eta"], p["h"], dt=p["dt"], T=p["T"], cutoff_radius=p["cutoff_radius"])
    b.to_jsonl(out("beam.jsonl"))
    lkk = b.lkk()
    drift = float(np.max(np.abs(lkk / lkk[0] - 1)))
    res = []
    for t in b.t[2:-2 : max(1, (len(b.t) - 4) // 8)]:
        off = np.sqrt(p["h"]) * np.linspace(-1, 1, 9)[:, None] * np.ones(b.dim)
        xs = beams.beam_state_at(b, t)[0] + off
        r_e, r_t = beams.eikonal_transport_residuals(b, t, xs)
        res.append({"t": float(t), "eikonal": float(np.max(np.abs(r_e))), "transport": float(np.max(np.abs(r_t)))})
    _dump(out("residuals.json"), {"lkk_drift": drift, "residuals": res})
    svg.line_plot(out("amplitude.svg"), [("|a|", b.t, np.abs(b.a))], "beam amplitude", "t", "|a|")
    return {"lkk_drift": drift <= 1e-5}


def _family_1d(metric, h, dt, T, radius):
    d = np.sqrt(h) / 8
    K = geometry.tensor_grid(-1.0, 1.5, int(2.5 / d) + 2)
    Y = geometry.tensor_grid(-1.6, 3.1, int(4.7 / d) + 2)
    return superposition.build_family(
        metric,
        lambda z: np.ones(len(z)),
        lambda z: z[:, 0],
        K,
        h,
        dt,
        T,
        Phi_grad=lambda z: np.ones_like(z),
        Phi_hess=lambda z: np.zeros((len(z), 1, 1)),
        y_grid=Y,
        cutoff_radius=radius,
    )


def _exp_superpose(cfg, fx, out):
    p = cfg.params
    h, eps = p["h"], p["epsilon"]
    w = h ** ((1 - eps) / 2) if p["width"] == "delta" else p["width"]

    def f(x):
        return np.exp(-(((x[..., 0] - 0.5) / w) ** 2)) / (w * np.sqrt(np.pi))

    fam = _family_1d(fx["metric"], h, p["dt"], p["T"], p["cutoff_radius"])
    t = fam.t[fam.node_index(p["t"], tol=0.5 * p["dt"])]
    sample = superposition.apply_modified_normal(fam, f, t, eps, fx["alpha"])
    sample.to_csv(out("normal_operator.csv"))
    z = fam.nodes[:, 0]
    interior = (z > -0.4) & (z < 0.9)
    rep = superposition.concentration_check(fam, f, t, eps, fx["alpha"], interior)
    C = superposition.concentration_constant(fam, t, eps, fx["alpha"])
    peak = float(h ** ((1 - eps) / 2) * np.max(np.abs(sample.values)))
    _dump(out("concentration.json"), {"spread": rep.spread, "flat": rep.flat, "C": [C.real, C.imag], "normalized_peak": peak})
    svg.line_plot(out("profile.svg"), [("|Q~*Q~ f|", z, np.abs(sample.values))], "modified normal operator", "z", "|value|")
    return {"concentration_flat": rep.flat}


def _exp_xray(cfg, fx, out):
    p = cfg.params
    f = fx["phantom"]
    th = xray.angle_grid(p["n_theta"])
    offs = xray.offset_grid(p["n_grid"])
    sino = xray.xray_forward_euclid(f, th, offs, n_steps=p["n_steps"])
    sino.to_csv(out("sinogram.csv"))
    ax, rec = xray.reconstruct(sino, p["alpha_exp"], n_grid=p["n_grid"])
    X, Yg = np.meshgrid(ax, ax, indexing="ij")
    ref = f(np.stack([X, Yg], axis=-1))
    err = float(np.linalg.norm(rec - ref) / np.linalg.norm(ref))
    xray.write_grid(out("reconstruction.grid"), rec)
    svg.heatmap(out("sinogram.svg"), sino.values, "sinogram")
    svg.heatmap(out("reconstruction.svg"), rec.T[::-1], "reconstruction")
    _dump(
        out("roundtrip.json"),
        {
            "relative_l2_error": err,
            "calibration": xray.calibration_constant(float(p["alpha_exp"]), p["n_grid"], p["n_theta"]),
            "support_warning": sino.support_warning,
        },
    )
    return {"roundtrip": err <= p["tol"]}


def _exp_wave(cfg, fx, out):
    p = cfg.params
    dom = fx["domain"]
    k = p["mode"]

    def u0(x):
        v = np.ones(x.shape[:-1])
        for j in range(x.shape[-1]):
            s = (x[..., j] - dom.lo[j]) / (dom.hi[j] - dom.lo[j])
            v = v * np.sin(k * np.pi * s)
        grid_b = np.zeros_like(v, dtype=bool)
        for j in range(x.shape[-1]):
            grid_b |= np.isclose(x[..., j], dom.lo[j]) | np.isclose(x[..., j], dom.hi[j])
        return np.where(grid_b, 0.0, v)

    hist, tr = wave.solve_wave(fx["alpha"], fx["metric"], dom, u0, None, p["T"], p["n_nodes"], p["cfl"], store_every=10**9)
    tr.to_csv(out("trace.csv"))
    drift = float(hist.energy_drift())
    _dump(out("energy.json"), {"drift": drift, "E0": float(hist.energy[0]), "cfl": hist.cfl, "dt": hist.dt, "trace_norm_sq": float(tr.norm_sq())})
    svg.line_plot(out("trace.svg"), [("d_nu u, first node", tr.times, tr.values[:, 0])], "boundary trace", "t", "d_nu u")
    return {"energy_drift": drift <= p["drift_tol"]}


def _exp_observability(cfg, fx, out):
    p = cfg.params
    rep = wave.observability_ratio(
        fx["alpha"], fx["metric"], fx["domain"], p["K"], p["T"], p["m"], p["n_nodes"], p["cfl"], p["n_random"], cfg.seed
    )
    with open(out("observability.json"), "w") as fh:
        fh.write(rep.to_json())
    svg.line_plot(out("ratio_vs_k.svg"), [("r(k)", rep.k, rep.r_k)], "observability ratio", "k", "r(k)", loglog=True)
    checks = {"min_ratio_positive": rep.min_ratio > 0}
    if p["m"] == 0:
        checks["slope"] = rep.slope >= p["slope_min"]
    return checks


def _sweep_point(args):
    target, metric_id, k = args
    h = 2.0**-k
    m = geometry.get_metric(metric_id)
    if target == "beam-residual":
        from scipy.integrate import simpson

        b = beams.propagate_beam(m, None, np.zeros(m.dim), np.eye(m.dim)[0], h, dt=1e-3, T=1.0, cutoff_radius=1.0)
        d = np.sqrt(h) / 8
        grid = geometry.tensor_grid(-2.0, 4.0, int(6.0 / d) + 2)
        idx = np.arange(0, len(b.t), 20)
        vals = np.array([beams.schrodinger_residual_norm(b, b.t[i], grid) ** 2 for i in idx]) / h**2
        return float(simpson(vals, x=b.t[idx]))
    if target == "eikonal-residual":
        b = beams.propagate_beam(m, None, np.zeros(m.dim), np.eye(m.dim)[0], h, dt=1e-3, T=1.0, cutoff_radius=1.0)
        t = b.t[len(b.t) // 2]
        xs = beams.beam_state_at(b, t)[0] + np.sqrt(h) * np.eye(m.dim)[0]
        r_e, _ = beams.eikonal_transport_residuals(b, t, xs[None])
        return float(np.max(np.abs(r_e)))
    # rhs-gain: || int_0^t e^{i w s} ds || / || e^{i w s} || on [0, 1], w = h^{-3/4}
    from scipy.integrate import cumulative_trapezoid, trapezoid

    w = h**-0.75
    ts = np.linspace(0, 1, max(int(40 * w), 2000))
    e = np.exp(1j * w * ts)
    k1 = cumulative_trapezoid(e, ts, initial=0)
    return float(np.sqrt(trapezoid(np.abs(k1) ** 2, x=ts) / trapezoid(np.abs(e) ** 2, x=ts)))


def _exp_sweep(cfg, fx, out, workers=1):
    p = cfg.params
    ks = list(p["h_exponents"])
    jobs = [(p["target"], cfg.fixtures["metric"], k) for k in ks]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            vals = list(ex.map(_sweep_point, jobs))
    else:
        vals = [_sweep_point(j) for j in jobs]
    hs = 2.0 ** -np.array(ks, dtype=float)
    slope = float(np.polyfit(np.log(hs), np.log(vals), 1)[0])
    _dump(out("slope.json"), {"target": p["target"], "h": hs.tolist(), "values": vals, "slope": slope})
    svg.line_plot(out("slope.svg"), [(p["target"], hs, vals)], f"{p['target']} (slope {slope:.3f})", "h", "value", loglog=True)
    if p["expected_slope"] is None:
        return {}
    return {"slope": abs(slope - p["expected_slope"]) <= p["slope_tol"]}


RUNNERS = {
    "trace": _exp_trace,
    "beam": _exp_beam,
    "superpose": _exp_superpose,
    "xray": _exp_xray,
    "wave": _exp_wave,
    "observability": _exp_observability,
    "sweep": _exp_sweep,
}


def output_root():
    return os.environ.get(OUTPUT_ROOT_ENV, os.getcwd())


def run(cfg, serial=True, workers=1, check=None):
    """Run one experiment; the manifest is written even when the run fails."""
    t0 = time.perf_counter()
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_dict(cfg)
    outdir = os.path.join(output_root(), cfg.output_dir)
    os.makedirs(outdir, exist_ok=True)
    written = []

    def out(name):
        written.append(name)
        return os.path.join(outdir, name)

    np.random.seed(cfg.seed)
    checks, status, error = {}, "pass", None
    try:
        diags = [d for d in validate(cfg) if d["level"] == "error"]
        if diags:
            raise ConfigError("; ".join(d["message"] for d in diags))
        fx = resolve_fixtures(cfg)
        runner = RUNNERS[cfg.experiment]
        if cfg.experiment == "sweep":
            checks = runner(cfg, fx, out, 1 if serial else workers)
        else:
            checks = runner(cfg, fx, out)
        do_check = cfg.check if check is None else check
        if do_check and not all(checks.values()):
            status = "assertion-failure"
    except ConfigError as exc:
        status, error = "config-error", str(exc)
    except (BeamlabError, FloatingPointError, np.linalg.LinAlgError) as exc:
        status, error = "numerical-failure", f"{type(exc).__name__}: {exc}"
    manifest = RunManifest(
        cfg.to_dict(), __version__, time.perf_counter() - t0, sorted(written) + ["manifest.json"], checks, status, error
    )
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        fh.write(manifest.to_json())
    return manifest


def main(argv=None):
    ap = argparse.ArgumentParser(prog="beamlab", description="Gaussian beam, X-ray and wave observability experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--serial", action="store_true", help="force sequential execution")
    g.add_argument("--workers", type=int, default=1, help="processes for sweep points")
    r.add_argument("--no-assert", action="store_true", help="record checks without failing on them")
    v = sub.add_parser("validate", help="static checks of a config")
    v.add_argument("config")
    sub.add_parser("list-fixtures", help="print fixture ids")
    args = ap.parse_args(argv)

    if args.cmd == "list-fixtures":
        print(json.dumps(list_fixtures(), indent=2))
        return EXIT_OK
    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.cmd == "validate":
        diags = validate(cfg)
        print(json.dumps(diags, indent=2))
        return EXIT_CONFIG if any(d["level"] == "error" for d in diags) else EXIT_OK
    manifest = run(cfg, serial=args.serial or args.workers <= 1, workers=args.workers, check=False if args.no_assert else None)
    print(json.dumps({"status": manifest.status, "checks": manifest.checks, "error": manifest.error}, sort_keys=True))
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
