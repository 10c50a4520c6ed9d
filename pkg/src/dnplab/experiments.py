"""JSON-configured experiments writing CSV/JSON artifacts plus a manifest.

Config keys shared by the PDE kinds:

    kind        one of KINDS
    mesh        {"subdivisions": int} or {"file": path}
    p, m        exponents
    gamma, potential, epsilon, dirichlet, base, test, direction
                number, expression string over x1, x2, or per-node list
    solver      {"grad_tol": float, "max_newton": int}
    sanity_p2   allow p = 2
    seed        integer for randomized checks

Kind-specific keys are listed in ``REQUIRED`` and ``OPTIONAL``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (
    DEFAULT_LAMBDAS,
    correction_convergence,
    fit_expansion,
    leading_integral,
    regime_for,
    scaling_sweep,
)
from .cgo import build_frame, plane_wave_residual
from .discretization import MeshError, make_unit_square_mesh, read_mesh
from .dtn import dtn_pair, dtn_pair_magnitude
from .elliptic import EllipticProblem, SolverError, SolverSettings, solve
from .expressions import Expression, ExpressionError, nodal
from .linearization import linearize_at, linearized_dtn
from .parabolic import (
    ParabolicProblem,
    TimeGrid,
    alpha,
    comparison_defect,
    separated_lateral,
    separated_solution,
    step_implicit,
)

KINDS = (
    "elliptic_solve",
    "dtn_sweep",
    "asymptotics",
    "linearize_check",
    "cgo_check",
    "parabolic_run",
    "comparison_check",
)

_PDE = ("mesh", "p", "m", "gamma")
REQUIRED = {
    "elliptic_solve": _PDE + ("potential", "dirichlet"),
    "dtn_sweep": _PDE + ("potential", "dirichlet", "tests"),
    "asymptotics": _PDE + ("potential", "base", "test"),
    "linearize_check": _PDE + ("potential", "dirichlet", "direction", "test"),
    "cgo_check": ("p", "n", "xi", "t"),
    "parabolic_run": _PDE + ("epsilon", "dirichlet"),
    "comparison_check": _PDE + ("epsilon", "dirichlet"),
}
OPTIONAL = {
    "elliptic_solve": (),
    "dtn_sweep": ("scales",),
    "asymptotics": ("lambdas",),
    "linearize_check": ("taus",),
    "cgo_check": ("gamma", "samples", "m"),
    "parabolic_run": ("steps", "T"),
    "comparison_check": ("pairs", "steps", "T"),
}
COMMON = ("kind", "solver", "sanity_p2", "seed", "output")

PROPERTY = {
    "elliptic_solve": ("unique energy minimizer; maximum principle", "relative gradient <= grad_tol"),
    "dtn_sweep": ("weak DtN pairing, independent of the test extension", "|zero - harmonic| <= 10 grad_tol * scale"),
    "asymptotics": ("leading and correction terms of the DtN expansion", "exponent and coefficient within 5%"),
    "linearize_check": ("first-order consistency of the linearized DtN", "error-halving ratio in [1.6, 2.4]"),
    "cgo_check": ("anisotropic null condition of CGO vectors", "relative residual <= 1e-13"),
    "parabolic_run": ("separated solutions t^alpha w; implicit Euler convergence", "error-halving ratio in [1.6, 2.4]"),
    "comparison_check": ("comparison principle: int eps (u1^m - u2^m)_+ nonincreasing", "increase <= 1e-8 * scale"),
}

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("config error: " + "; ".join(self.errors))


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_coeff(errors, val, label):
    if _is_number(val) or (isinstance(val, list) and all(_is_number(v) for v in val)):
        return
    if isinstance(val, str):
        try:
            Expression(val)
        except ExpressionError as exc:
            errors.append(f"{label}: {exc}")
        return
    errors.append(f"{label}: expected a number, expression string or list of numbers")


def validate(config: dict, sanity_p2: bool = False) -> list:
    """Every problem found in ``config``, as ``"field.path: message"`` strings."""
    errors = []
    if not isinstance(config, dict):
        return ["<root>: config must be a JSON object"]
    kind = config.get("kind")
    if kind is None:
        return ["kind: missing required field"]
    if kind not in KINDS:
        return [f"kind: unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}"]
    allowed = set(REQUIRED[kind]) | set(OPTIONAL[kind]) | set(COMMON)
    for key in REQUIRED[kind]:
        if key not in config:
            errors.append(f"{key}: missing required field")
    for key in sorted(set(config) - allowed):
        errors.append(f"{key}: unknown field for kind {kind!r}")

    sanity = bool(config.get("sanity_p2", False)) or sanity_p2
    p, m = config.get("p"), config.get("m")
    if "p" in config:
        if not _is_number(p):
            errors.append("p: expected a number")
        elif not p > 1:
            errors.append("p: must satisfy p ∈ (1,∞)\\{2}")
        elif p == 2 and not sanity:
            errors.append("p: p = 2 is outside p ∈ (1,∞)\\{2}; pass --sanity-p2 for sanity runs")
    if "m" in config:
        if not _is_number(m):
            errors.append("m: expected a number")
        elif not m > 0:
            errors.append("m: must be positive")
    if _is_number(p) and _is_number(m) and p > 1 and m > 0:
        if kind in ("parabolic_run", "comparison_check") and not m > p - 1:
            errors.append(f"m: the parabolic reduction needs the hypothesis m > p-1 (m={m}, p={p})")
        if kind == "asymptotics" and m == p - 1:
            errors.append("m: the borderline case m = p-1 is excluded")

    if "mesh" in config:
        mesh = config["mesh"]
        if not isinstance(mesh, dict):
            errors.append("mesh: expected an object")
        elif "subdivisions" in mesh:
            n = mesh["subdivisions"]
            if not isinstance(n, int) or isinstance(n, bool) or n < 1:
                errors.append("mesh.subdivisions: expected a positive integer")
        elif "file" in mesh:
            if not isinstance(mesh["file"], str):
                errors.append("mesh.file: expected a path string")
        else:
            errors.append("mesh: needs 'subdivisions' or 'file'")

    for key in ("gamma", "potential", "epsilon", "dirichlet", "base", "test", "direction"):
        if key in config and not (kind == "cgo_check" and key == "gamma"):
            _check_coeff(errors, config[key], key)
    if kind == "cgo_check" and "gamma" in config and not (_is_number(config["gamma"]) and config["gamma"] > 0):
        errors.append("gamma: cgo_check needs a positive constant gamma")

    if "tests" in config:
        tests = config["tests"]
        if not isinstance(tests, list):
            errors.append("tests: expected a list")
        else:
            for i, t in enumerate(tests):
                _check_coeff(errors, t, f"tests[{i}]")

    def _positive_list(key, below_one=False, integer=False):
        if key not in config:
            return
        val = config[key]
        if integer and isinstance(val, int) and not isinstance(val, bool):
            val = [val]
        if not isinstance(val, list) or not val:
            errors.append(f"{key}: expected a non-empty list")
            return
        for i, x in enumerate(val):
            if integer:
                if not isinstance(x, int) or isinstance(x, bool) or x < 1:
                    errors.append(f"{key}[{i}]: expected a positive integer")
            elif not _is_number(x) or not x > 0 or (below_one and not x < 1):
                errors.append(f"{key}[{i}]: expected a number in {'(0, 1)' if below_one else '(0, inf)'}")

    _positive_list("lambdas", below_one=True)
    _positive_list("taus")
    _positive_list("scales")
    _positive_list("steps", integer=True)
    if "lambdas" in config and isinstance(config["lambdas"], list) and len(config["lambdas"]) < 4:
        errors.append("lambdas: the exponent fit needs at least 4 values")

    if kind == "cgo_check":
        n = config.get("n")
        if "n" in config and (not isinstance(n, int) or isinstance(n, bool) or n < 3):
            errors.append("n: expected an integer >= 3")
        xi = config.get("xi")
        if "xi" in config:
            if not isinstance(xi, list) or not all(_is_number(x) for x in xi):
                errors.append("xi: expected a list of numbers")
            elif isinstance(n, int) and len(xi) != n:
                errors.append(f"xi: expected {n} components")
        if "t" in config and not (_is_number(config["t"]) and config["t"] > 0):
            errors.append("t: expected a positive number")
        if "samples" in config and not (isinstance(config["samples"], int) and config["samples"] >= 1):
            errors.append("samples: expected a positive integer")
    for key in ("T",):
        if key in config and not (_is_number(config[key]) and config[key] > 0):
            errors.append(f"{key}: expected a positive number")
    if "pairs" in config and not (isinstance(config["pairs"], int) and config["pairs"] >= 1):
        errors.append("pairs: expected a positive integer")
    if "seed" in config and not (isinstance(config["seed"], int) and not isinstance(config["seed"], bool)):
        errors.append("seed: expected an integer")

    solver = config.get("solver", {})
    if not isinstance(solver, dict):
        errors.append("solver: expected an object")
    else:
        for key in sorted(set(solver) - {"grad_tol", "max_newton"}):
            errors.append(f"solver.{key}: unknown solver setting")
        if "grad_tol" in solver and not (_is_number(solver["grad_tol"]) and solver["grad_tol"] > 0):
            errors.append("solver.grad_tol: expected a positive number")
        if "max_newton" in solver and not (isinstance(solver["max_newton"], int) and solver["max_newton"] >= 1):
            errors.append("solver.max_newton: expected a positive integer")
    return errors


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"<file>: cannot read {path}: {exc.strerror}"]) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: invalid JSON at line {exc.lineno}: {exc.msg}"]) from None


def build_hash() -> str:
    """sha256 over the package sources: identifies the build in manifests."""
    h = hashlib.sha256(__version__.encode())
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


@dataclass
class RunResult:
    status: int
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    message: str = ""


def _settings(cfg, default_tol=1e-10):
    s = cfg.get("solver", {})
    return SolverSettings(grad_tol=s.get("grad_tol", default_tol), max_newton=s.get("max_newton", 60))


def _mesh(cfg, base_dir):
    spec = cfg["mesh"]
    if "subdivisions" in spec:
        return make_unit_square_mesh(spec["subdivisions"])
    path = Path(spec["file"])
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return read_mesh(path)


def _csv_text(header: dict, columns, rows) -> str:
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}: {v}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for row in rows:
        wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


# experiment kinds -------------------------------------------------------

def _elliptic(cfg, mesh, settings, rng):
    prob = EllipticProblem(
        mesh, nodal(mesh, cfg["gamma"]), nodal(mesh, cfg["potential"]), cfg["p"], cfg["m"],
        mesh.trace(nodal(mesh, cfg["dirichlet"])),
    )
    sol = solve(prob, settings)
    gmax = float(np.max(np.abs(prob.dirichlet)))
    summary = {
        "energy": sol.final_energy,
        "iterations": sol.iterations,
        "relative_gradient": sol.achieved_grad_norm,
        "max_abs_w": float(np.max(np.abs(sol.w))),
        "max_abs_g": gmax,
        "maximum_principle_holds": bool(np.max(np.abs(sol.w)) <= gmax + 1e-8),
        "min_w": float(np.min(sol.w)),
    }
    rows = [(i, float(x), float(y), float(w)) for i, ((x, y), w) in enumerate(zip(mesh.nodes, sol.w))]
    return summary, {"solution.csv": (["node", "x1", "x2", "w"], rows)}


def _dtn_sweep(cfg, mesh, settings, rng):
    base = EllipticProblem(
        mesh, nodal(mesh, cfg["gamma"]), nodal(mesh, cfg["potential"]), cfg["p"], cfg["m"],
        mesh.trace(nodal(mesh, cfg["dirichlet"])),
    )
    tests = [mesh.trace(nodal(mesh, t)) for t in cfg["tests"]]
    rows, worst = [], 0.0
    for lam in cfg.get("scales", [1.0]):
        prob = base.with_dirichlet(lam * base.dirichlet)
        sol = solve(prob, settings)
        for j, h in enumerate(tests):
            zero = dtn_pair(prob, sol, h, "zero_interior")
            harm = dtn_pair(prob, sol, h, "harmonic")
            scale = max(dtn_pair_magnitude(prob, sol, h), 1e-300)
            gap = abs(zero - harm) / scale
            worst = max(worst, gap)
            rows.append((float(lam), j, zero, harm, gap))
    summary = {"max_relative_extension_gap": worst, "extension_independent": worst <= 10 * settings.grad_tol}
    return summary, {"pairings.csv": (["scale", "test", "pairing", "pairing_harmonic", "relative_gap"], rows)}


def _asymptotics(cfg, mesh, settings, rng):
    p, m = cfg["p"], cfg["m"]
    gamma = nodal(mesh, cfg["gamma"])
    V = nodal(mesh, cfg["potential"])
    v, omega = nodal(mesh, cfg["base"]), nodal(mesh, cfg["test"])
    lambdas = cfg.get("lambdas", list(DEFAULT_LAMBDAS))
    tol = cfg.get("solver", {}).get("grad_tol", 1e-13)
    sweep = scaling_sweep(mesh, gamma, V, p, m, v, omega, lambdas, settings=SolverSettings(grad_tol=tol))
    if sweep.failures:
        raise SolverError("solver failed for lambda values " + ", ".join(map(repr, sweep.failures)),
                          [{"lambda": k, "error": e} for k, e in sweep.failures.items()])
    L = leading_integral(mesh, gamma, sweep.v, omega, p)
    fit = fit_expansion(sweep, L)
    conv = correction_convergence(sweep)
    expected = m if sweep.regime == "small_data" else -m
    summary = {
        "regime": regime_for(m, p),
        "analytic_leading": L,
        "leading_exponent_fitted": fit.leading_exponent_fitted,
        "leading_exponent_expected": sweep.sign * (p - 1),
        "correction_detected": fit.detected,
        "note": fit.note,
        "correction_exponent_fitted": None if not fit.detected else fit.correction_exponent_fitted,
        "correction_exponent_expected": expected,
        "correction_coeff_fitted": fit.correction_coeff,
        "correction_coeff_direct": fit.direct_correction,
        "R_error_floor": conv.floor,
        "R_errors_monotone_until_floor": conv.monotone_until_floor(),
    }
    rows = list(zip(sweep.lambdas, sweep.pairings, fit.remainders, conv.value_errors, conv.gradient_errors))
    return summary, {"sweep.csv": (["lambda", "pairing", "remainder", "R_error_val", "R_error_grad"], rows)}


def _linearize(cfg, mesh, settings, rng):
    prob = EllipticProblem(
        mesh, nodal(mesh, cfg["gamma"]), nodal(mesh, cfg["potential"]), cfg["p"], cfg["m"],
        mesh.trace(nodal(mesh, cfg["dirichlet"])),
    )
    f = mesh.trace(nodal(mesh, cfg["direction"]))
    h = mesh.trace(nodal(mesh, cfg["test"]))
    tight = SolverSettings(grad_tol=min(settings.grad_tol, 1e-13), max_newton=settings.max_newton)
    s0 = solve(prob, tight)
    lin = linearize_at(prob, s0)
    target = linearized_dtn(lin, f, h)
    base_val = dtn_pair(prob, s0, h)
    scale = float(np.max(np.abs(prob.dirichlet)))
    rows, errs = [], []
    for tau in cfg.get("taus", [1e-2, 5e-3, 2.5e-3, 1.25e-3]):
        step = tau * scale
        pt = prob.with_dirichlet(prob.dirichlet + step * f)
        q = (dtn_pair(pt, solve(pt, tight), h) - base_val) / step
        errs.append(abs(q - target))
        rows.append([float(tau), q, target, errs[-1], math.nan])
    for k in range(1, len(rows)):
        rows[k][4] = errs[k - 1] / errs[k] if errs[k] > 0 else math.inf
    ratios = [r[4] for r in rows[1:]]
    summary = {
        "linearized_pairing": target,
        "halving_ratios": ratios,
        "first_order": all(1.6 <= r <= 2.4 for r in ratios),
    }
    return summary, {"linearization.csv": (["tau", "fd_quotient", "linearized", "error", "halving_ratio"], rows)}


def _cgo(cfg, mesh, settings, rng):
    frame = build_frame(cfg["n"], cfg["p"], cfg["xi"], cfg["t"])
    gamma = float(cfg.get("gamma", 1.0))
    pts = rng.uniform(-1.0, 1.0, size=(cfg.get("samples", 16), cfg["n"]))
    res = plane_wave_residual(gamma, cfg["p"], frame, pts)
    bound = float(np.max(np.abs(np.exp(pts @ frame.zeta_plus)))) * float(np.vdot(frame.zeta_plus, frame.zeta_plus).real) * math.sqrt(gamma)
    inv = {k: float(v) for k, v in frame.invariant_residuals().items()}
    summary = {
        "s": frame.s,
        "mu": frame.mu,
        "eta": frame.eta,
        "xi": frame.xi,
        "t": frame.t,
        "zeta_plus": {"re": frame.zeta_plus.real, "im": frame.zeta_plus.imag},
        "zeta_minus": {"re": frame.zeta_minus.real, "im": frame.zeta_minus.imag},
        "null_form_residual": max(inv["null_plus"], inv["null_minus"]),
        "invariants": inv,
        "plane_wave_residual": res,
        "plane_wave_relative": res / bound,
        "passed": max(inv.values()) <= 1e-13,
    }
    return summary, {}


def _parabolic(cfg, mesh, settings, rng):
    p, m = cfg["p"], cfg["m"]
    g = mesh.trace(nodal(mesh, cfg["dirichlet"]))
    T = cfg.get("T", 1.0)
    prob = ParabolicProblem(mesh, nodal(mesh, cfg["epsilon"]), nodal(mesh, cfg["gamma"]), p, m,
                            separated_lateral(g, m, p), T)
    sep = separated_solution(prob, g, settings)
    exact = sep.at(T)
    steps = cfg.get("steps", [8, 16, 32])
    steps = [steps] if isinstance(steps, int) else steps
    rows, errs = [], []
    for n in steps:
        snaps = step_implicit(prob, TimeGrid(n, T), settings)
        err = float(np.sqrt(mesh.lumped_mass @ (snaps[-1] - exact) ** 2))
        errs.append(err)
        rows.append([n, T / n, err, math.nan])
    for k in range(1, len(rows)):
        rows[k][3] = errs[k - 1] / errs[k] if errs[k] > 0 else math.inf
    summary = {"alpha": alpha(m, p), "errors": errs, "halving_ratios": [r[3] for r in rows[1:]]}
    final = [(i, float(a), float(b)) for i, (a, b) in enumerate(zip(snaps[-1], exact))]
    return summary, {
        "convergence.csv": (["steps", "dt", "l2_error", "halving_ratio"], rows),
        "final_snapshot.csv": (["node", "u", "separated"], final),
    }


def _comparison(cfg, mesh, settings, rng):
    p, m = cfg["p"], cfg["m"]
    g = mesh.trace(nodal(mesh, cfg["dirichlet"]))
    eps, gamma = nodal(mesh, cfg["epsilon"]), nodal(mesh, cfg["gamma"])
    T = cfg.get("T", 1.0)
    steps = cfg.get("steps", 16)
    steps = steps[0] if isinstance(steps, list) else steps
    grid = TimeGrid(steps, T)
    rows, worst = [], 0.0
    for k in range(cfg.get("pairs", 5)):
        lo = g * rng.uniform(0.3, 0.9, size=g.shape)
        hi = g * rng.uniform(1.0, 1.5, size=g.shape)
        # lateral data ordered, initial states not: the defect starts positive
        bump = 0.5 * float(np.max(g)) * np.sin(np.pi * mesh.nodes[:, 0]) * np.sin(np.pi * mesh.nodes[:, 1])
        u1 = bump + rng.uniform(0.0, 0.5, size=mesh.n_nodes)
        u1[mesh.boundary_nodes] = 0.0
        r1 = step_implicit(ParabolicProblem(mesh, eps, gamma, p, m, separated_lateral(lo, m, p), T), grid,
                           settings, initial=u1)
        r2 = step_implicit(ParabolicProblem(mesh, eps, gamma, p, m, separated_lateral(hi, m, p), T), grid,
                           settings, initial=np.zeros(mesh.n_nodes))
        d = comparison_defect(r1, r2, eps, m, mesh)
        scale = max(float(d[0]), float(mesh.lumped_mass @ (eps * np.maximum(r2[-1], 0.0) ** m)))
        worst = max(worst, float(np.max(np.diff(d), initial=0.0)) / scale)
        rows += [(k, float(t), float(x)) for t, x in zip(grid.times, d)]
    summary = {"max_relative_increase": worst, "nonincreasing": worst <= 1e-8}
    return summary, {"defects.csv": (["pair", "time", "defect"], rows)}


_RUNNERS = {
    "elliptic_solve": _elliptic,
    "dtn_sweep": _dtn_sweep,
    "asymptotics": _asymptotics,
    "linearize_check": _linearize,
    "cgo_check": _cgo,
    "parabolic_run": _parabolic,
    "comparison_check": _comparison,
}


def run(config: dict, out_dir, seed: int | None = None, sanity_p2: bool = False, base_dir=None) -> RunResult:
    """Run one experiment; writes ``<kind>.json``, CSV tables and ``manifest.json`` into ``out_dir``."""
    errors = validate(config, sanity_p2=sanity_p2)
    if errors:
        return RunResult(EXIT_CONFIG, message="config error: " + "; ".join(errors))
    cfg = dict(config)
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    kind = cfg["kind"]
    rng = np.random.default_rng(cfg["seed"])
    try:
        mesh = _mesh(cfg, base_dir) if "mesh" in cfg else None
        settings = _settings(cfg)
        summary, tables = _RUNNERS[kind](cfg, mesh, settings, rng)
    except (MeshError, ExpressionError, OSError) as exc:
        return RunResult(EXIT_CONFIG, message=f"config error: {exc}")
    except SolverError as exc:
        diag = "\n".join(json.dumps(d, sort_keys=True, default=_json_default) for d in exc.diagnostics[-20:])
        return RunResult(EXIT_SOLVER, message=f"solver failure in {kind}: {exc}\n{diag}")
    except ValueError as exc:
        return RunResult(EXIT_CONFIG, message=f"config error: {exc}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prop, tol = PROPERTY[kind]
    header = {"kind": kind, "property": prop, "tolerance": tol}
    files = []
    for name, (cols, rows) in tables.items():
        (out / name).write_text(_csv_text(header, cols, rows))
        files.append(name)
    result_name = f"{kind}.json"
    (out / result_name).write_text(_dumps({**header, "summary": summary}))
    files.append(result_name)
    manifest = {
        **header,
        "config": cfg,
        "version": __version__,
        "build_hash": build_hash(),
        "files": sorted(files),
    }
    (out / "manifest.json").write_text(_dumps(manifest))
    return RunResult(EXIT_OK, sorted(files) + ["manifest.json"], summary)
