"""Command-line entry point: ``cmclab <command> --config <path> [--out dir] [--seed n]``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure, 4 IO error.
"""
from __future__ import annotations

import argparse
import json
from importlib import metadata
import logging
import platform
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .barriers import BarrierSearchError, barrier_json, build_lower_barrier, build_upper_barrier
from .convergence import convergence_study, default_manufactured, radial_study
from .estimates import (boundary_gradient_audit, height_gradient_estimates,
                        interior_gradient_audit, jacobi_check_nu)
from .foliation import build_foliation, halfspace_experiment, numeric_derivative
from .geometry import DomainError, ModelParams
from .graph import GRID_DUMP_COLUMNS, AnnularGrid, grid_dump_rows
from .io import dumps, sha256_file, sha256_text, write_csv, write_json, write_tsv
from .sister import (SurfaceError, band_max, extract_surface_data, flat_chart, flat_chart_curvature,
                     potential_identity_residual, sister, surface_dump_columns,
                     surface_dump_rows)
from .solver import (RadiiSchedule, SolverConfig, SolverError, newton_solve_dirichlet,
                     radial_ode_oracle)

log = logging.getLogger("cmclab")

COMMANDS = ("solve", "barrier", "foliate", "derivative", "sister", "audit", "halfspace",
            "convergence")
SCHEMA_VERSION = "cmclab/1"

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4

_DEC = {"type": "string", "pattern": r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$"}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "schema": {"const": SCHEMA_VERSION},
    "command": {"enum": list(COMMANDS)},
    "seed": {"type": "integer", "minimum": 0},
    "params": _obj({"kappa": _DEC, "tau": _DEC, "h0": _DEC}, ["tau"]),
    "grid": _obj({"rho_min": _DEC, "rho_max": _DEC, "n_rho": {"type": "integer", "minimum": 3},
                  "n_theta": {"type": "integer", "minimum": 8}},
                 ["rho_min", "rho_max", "n_rho", "n_theta"]),
    "solver": _obj({"newton_tol": _DEC, "max_newton": {"type": "integer", "minimum": 1},
                    "continuation_steps": {"type": "integer", "minimum": 1},
                    "max_bisections": {"type": "integer", "minimum": 0}}),
    "boundary": _obj({"type": {"enum": ["radial"]}, "inner_cos": _DEC, "outer_sin2": _DEC}),
    "schedule": _obj({"radii": {"type": "array", "items": _DEC, "minItems": 2},
                      "d_rho": _DEC, "n_theta": {"type": "integer", "minimum": 8},
                      "lifts": {"type": "integer", "minimum": 3}, "delta": _DEC,
                      "t_bar": _DEC, "eps": {"type": "array", "items": _DEC, "minItems": 2}},
                     ["radii", "d_rho", "n_theta"]),
    "barrier": _obj({"rho0": _DEC, "rho1": _DEC, "M": _DEC, "tau": _DEC,
                     "f": {"type": "array", "items": _DEC, "minItems": 8},
                     "n_rho": {"type": "integer", "minimum": 3},
                     "direction": {"enum": ["above", "below"]}},
                    ["rho0", "rho1", "M", "tau", "f", "direction"]),
    "competitor": _obj({"type": {"enum": ["translate", "bump"]}, "t0": _DEC, "amplitude": _DEC,
                        "well_oriented": {"type": "boolean"}}, ["type", "t0"]),
    "audit": _obj({"center": {"type": "array", "items": _DEC, "minItems": 2, "maxItems": 2},
                   "R": _DEC, "samples": {"type": "integer", "minimum": 1}}),
    "convergence": _obj({"oracle": {"enum": ["radial", "manufactured"]},
                         "levels": {"type": "integer", "minimum": 1}}, ["oracle", "levels"]),
}, ["schema", "command"])

REQUIRED_SECTIONS = {
    "solve": ("params", "grid"),
    "barrier": ("barrier",),
    "foliate": ("params", "schedule"),
    "derivative": ("params", "schedule"),
    "sister": ("params", "grid"),
    "audit": ("params", "grid"),
    "halfspace": ("params", "schedule", "competitor"),
    "convergence": ("params", "grid", "convergence"),
}


class ConfigError(ValueError):
    pass


def load_config(path, command: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    validate_config(cfg, command)
    return cfg


def validate_config(cfg, command: str):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config schema error at {list(e.absolute_path)}: {e.message}") from e
    if cfg["command"] != command:
        raise ConfigError(f"config is for {cfg['command']!r}, invoked as {command!r}")
    missing = [s for s in REQUIRED_SECTIONS[command] if s not in cfg]
    if missing:
        raise ConfigError(f"command {command!r} needs sections {missing}")
    if command == "convergence" and cfg["convergence"]["levels"] < 3:
        raise ConfigError("a convergence study needs at least 3 refinement levels")


# ---------------------------------------------------------------------------
# config decoding


def _f(x, default=None):
    return default if x is None else float(x)


def params_of(cfg) -> ModelParams:
    p = cfg["params"]
    return ModelParams(_f(p.get("kappa"), -1.0), float(p["tau"]), _f(p.get("h0"), 0.5))


def grid_of(cfg) -> AnnularGrid:
    g = cfg["grid"]
    return AnnularGrid(float(g["rho_min"]), float(g["rho_max"]), g["n_rho"], g["n_theta"])


def solver_of(cfg) -> SolverConfig:
    s = cfg.get("solver", {})
    kw = {}
    if "newton_tol" in s:
        kw["newton_tol"] = float(s["newton_tol"])
    for k in ("max_newton", "continuation_steps", "max_bisections"):
        if k in s:
            kw[k] = s[k]
    return SolverConfig(**kw)


def schedule_of(cfg) -> RadiiSchedule:
    s = cfg["schedule"]
    return RadiiSchedule(tuple(float(r) for r in s["radii"]), float(s["d_rho"]), s["n_theta"])


def radial_sigma(params: ModelParams, rho_max: float):
    prof = radial_ode_oracle(params, (0.0, rho_max + 0.5))
    return prof, (lambda R, T: prof(R) + 0 * np.asarray(T))


def solve_radial(cfg, params, grid, config):
    prof, _ = radial_sigma(params, grid.rho_max)
    b = cfg.get("boundary", {})
    a_in, a_out = _f(b.get("inner_cos"), 0.0), _f(b.get("outer_sin2"), 0.0)
    exact = prof(grid.rho)
    inner = exact[0] + a_in * np.cos(grid.theta)
    outer = exact[-1] + a_out * np.sin(2 * grid.theta)
    s, rep = newton_solve_dirichlet(grid, inner, outer, params, config)
    err = float(np.max(np.abs(s.values - exact[:, None]))) if a_in == a_out == 0 else None
    return s, rep, err


# ---------------------------------------------------------------------------
# commands; each returns the list of files written


def cmd_solve(cfg, out: Path, rng):
    params, grid, config = params_of(cfg), grid_of(cfg), solver_of(cfg)
    s, rep, err = solve_radial(cfg, params, grid, config)
    files = [write_csv(out / "solution.csv", GRID_DUMP_COLUMNS, grid_dump_rows(s))]
    body = rep.to_dict()
    body["linf_error_vs_oracle"] = err
    files.append(write_json(out / "report.json", body))
    return files


def cmd_barrier(cfg, out: Path, rng):
    b = cfg["barrier"]
    f = np.array([float(v) for v in b["f"]])
    rho0, rho1 = float(b["rho0"]), float(b["rho1"])
    grid = AnnularGrid(rho1, rho0, b.get("n_rho", 41), len(f))
    build = build_upper_barrier if b["direction"] == "above" else build_lower_barrier
    res = build(f, rho0, rho1, float(b["M"]), float(b["tau"]), grid)
    body = barrier_json(res)
    body["certificates"] = [c.to_dict() for c in res.certificates]
    return [write_json(out / "barrier.json", body)]


def _family(cfg):
    params = params_of(cfg)
    sch = schedule_of(cfg)
    s = cfg["schedule"]
    _, sigma = radial_sigma(params, sch.radii[-1])
    delta = _f(s.get("delta"), 0.1)
    fam = build_foliation(sigma, delta, sch, s.get("lifts", 5), params, solver_of(cfg))
    return fam


def cmd_foliate(cfg, out: Path, rng):
    fam = _family(cfg)
    sol_dir = out / "solutions"
    sol_dir.mkdir(exist_ok=True)
    files = []
    for (j, n), u in sorted(fam.solutions.items()):
        files.append(write_csv(sol_dir / f"u_t{j}_n{n}.csv", GRID_DUMP_COLUMNS, grid_dump_rows(u)))
    last = len(fam.lifts) - 1
    gaps = [(n, fam.a1_gap[(last, n)]) for n in fam.n_values if (last, n) in fam.a1_gap]
    files.append(write_tsv(out / "gaps.tsv", ("n", "gap"), gaps))
    body = {"lifts": fam.lifts, "sandwich_ok": fam.sandwich_ok,
            "audits": [a.__dict__ for a in fam.audits],
            "failures": {f"{j},{n}": m for (j, n), m in sorted(fam.failures.items())},
            "a1_gap": [[j, n, g] for (j, n), g in sorted(fam.a1_gap.items())]}
    files.append(write_json(out / "foliation.json", body))
    if fam.failures:
        raise SolverError(f"{len(fam.failures)} continuation solves failed")
    return files


def cmd_derivative(cfg, out: Path, rng):
    fam = _family(cfg)
    s = cfg["schedule"]
    eps = tuple(float(e) for e in s.get("eps", ("0.04", "0.02", "0.01", "0.005")))
    t_bar = _f(s.get("t_bar"), fam.lifts[len(fam.lifts) // 2])
    d = numeric_derivative(fam, t_bar, eps)
    body = {k: v for k, v in d.__dict__.items() if k != "fields"}
    body["residual_decreasing"] = d.residual_decreasing()
    body["limit_consistent"] = d.limit_consistent()
    return [write_tsv(out / "residuals.tsv", ("eps", "residual"), d.residual_series()),
            write_json(out / "derivative.json", body)]


def cmd_sister(cfg, out: Path, rng):
    params, grid, config = params_of(cfg), grid_of(cfg), solver_of(cfg)
    s, rep, _ = solve_radial(cfg, params, grid, config)
    data = extract_surface_data(s)
    sis = sister(data)
    chart = flat_chart(sis)
    K = flat_chart_curvature(chart, s)
    n = cfg.get("audit", {}).get("samples", 100000)
    # random symmetric S with tr S = 1 in an orthonormal gauge
    a, b = rng.normal(size=n), rng.normal(size=n)
    S_hat = np.stack([np.stack([0.5 + a, b], -1), np.stack([b, 0.5 - a], -1)], -2)
    nu = rng.uniform(0.0, 1.0, size=n)
    taus = rng.uniform(-2.0, 2.0, size=n)
    ident = float(np.max(np.abs(potential_identity_residual(S_hat, nu, taus))))
    # boundary rows use one-sided differences; the band excludes them
    inset = 0.2 * (grid.rho_max - grid.rho_min)
    body = {"trace_S_max_dev": float(np.max(np.abs(data.trace_S[1:-1] - 2 * params.h0))),
            "T_norm_identity": float(np.max(np.abs(data.T_norm2() + data.nu**2 - 1))),
            "flat_curvature_max": float(np.nanmax(np.abs(K))),
            "nu_jacobi_residual_max": float(np.nanmax(np.abs(jacobi_check_nu(s)))),
            "nu_jacobi_residual_sister_max":
                float(np.nanmax(np.abs(jacobi_check_nu(s, via_sister=True)))),
            "interior_inset": inset,
            "trace_S_interior_dev": band_max(data.trace_S - 2 * params.h0, grid, inset),
            "flat_curvature_interior_max": band_max(K, grid, inset),
            "potential_identity_samples": n, "potential_identity_max_residual": ident,
            "theta": params.theta, "tau_prime": params.tau_prime}
    return [write_csv(out / "surface.csv", surface_dump_columns(True),
                      surface_dump_rows(data, sis)),
            write_json(out / "sister.json", body)]


def cmd_audit(cfg, out: Path, rng):
    params, grid, config = params_of(cfg), grid_of(cfg), solver_of(cfg)
    s, rep, _ = solve_radial(cfg, params, grid, config)
    a = cfg.get("audit", {})
    mid = 0.5 * (grid.rho_min + grid.rho_max)
    center = tuple(float(c) for c in a.get("center", (repr(mid), "1.0")))
    R = _f(a.get("R"), 1.0)
    reports = [boundary_gradient_audit(s), interior_gradient_audit(s, center, R),
               height_gradient_estimates(s, center)]
    return [write_json(out / "estimates.json", [r.to_dict() for r in reports])]


def cmd_halfspace(cfg, out: Path, rng):
    params = params_of(cfg)
    sch = schedule_of(cfg)
    prof, sigma = radial_sigma(params, sch.radii[-1])
    c = cfg["competitor"]
    t0 = float(c["t0"])
    if c["type"] == "translate":
        comp = t0
    else:
        amp = _f(c.get("amplitude"), 0.1)
        mid = 0.5 * (sch.radii[0] + sch.radii[-1])
        comp = (lambda R, T: prof(R) + t0 + amp * np.exp(-10 * (R - mid) ** 2) * (1 + np.cos(T)))
    delta = _f(cfg["schedule"].get("delta"), 0.1)
    rep = halfspace_experiment(sigma, comp, delta, sch, params, solver_of(cfg),
                               well_oriented=c.get("well_oriented", True))
    return [write_tsv(out / "gaps.tsv", ("n", "gap"), rep.gaps),
            write_json(out / "halfspace.json", rep.to_dict())]


def cmd_convergence(cfg, out: Path, rng):
    params, grid, config = params_of(cfg), grid_of(cfg), solver_of(cfg)
    c = cfg["convergence"]
    kw = dict(rho_range=(grid.rho_min, grid.rho_max), n_rho=grid.n_rho, n_theta=grid.n_theta,
              levels=c["levels"], config=config)
    if c["oracle"] == "radial":
        rows, _ = radial_study(params, **kw)
    else:
        sig, rhs = default_manufactured(params.tau)
        rows, _ = convergence_study(params, sig, rhs=rhs, **kw)
    table = [(r.d_rho, r.error, r.order) for r in rows]
    return [write_tsv(out / "convergence.tsv", ("d_rho", "linf_error", "order"), table),
            write_json(out / "convergence.json", [r.__dict__ for r in rows])]


HANDLERS = {"solve": cmd_solve, "barrier": cmd_barrier, "foliate": cmd_foliate,
            "derivative": cmd_derivative, "sister": cmd_sister, "audit": cmd_audit,
            "halfspace": cmd_halfspace, "convergence": cmd_convergence}


def run(cfg: dict, command: str, out: Path, seed: int | None = None) -> dict:
    """Execute one command and write its outputs plus manifest.json into ``out``."""
    validate_config(cfg, command)
    seed = cfg.get("seed", 0) if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    with np.errstate(over="raise", invalid="ignore", divide="ignore"):
        HANDLERS[command](cfg, out, rng)
    wall = time.perf_counter() - t0
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "seed": seed,
        "config_sha256": sha256_text(dumps(cfg)),
        "versions": {"cmclab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "jsonschema": metadata.version("jsonschema"), "python": platform.python_version()},
        "wall_time_seconds": {command: wall},
        "files": [{"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p)}
                  for p in files],
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cmclab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default="cmclab_out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="seed for randomized audits")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.command)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    if args.seed is not None and args.seed < 0:
        print("config error: seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run(cfg, args.command, out, args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, BarrierSearchError, SurfaceError, DomainError, FloatingPointError,
            np.linalg.LinAlgError) as e:
        report = {"error": type(e).__name__, "message": str(e)}
        sr = getattr(e, "report", None)
        if sr is not None and hasattr(sr, "to_dict"):
            report["solve_report"] = sr.to_dict()
        print(f"numerical failure: {e}", file=sys.stderr)
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "failure.json", report)
        except OSError:
            pass
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"{args.command}: wrote {len(manifest['files'])} files to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
