"""Experiment configuration, pipeline orchestration and report emission."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (
    bmo_estimate,
    class_membership,
    exp_moment,
    pstar_from_bmo,
    stochastic_exponential,
    uniqueness_probe,
    z_growth_report,
)
from .engine import (
    ModelSpec,
    PathBundle,
    bernoulli_bundle,
    make_grid,
    sample_brownian,
    simulate_forward,
    simulate_tangent,
)
from .errors import InvalidArgument, ReportIncomplete, SchemaViolation
from .generators import GeneratorSpec, TruncationSpec, grad_z, prefix_at
from .registry import resolve
from .serialization import (
    _atomic_write,
    canonical_json,
    save_brownian,
    save_bundle,
    save_solution,
)
from .solvers import (
    TreeIndicatorBasis,
    polynomial_basis,
    solve_cole_hopf,
    solve_decomposed_additive,
    solve_decomposed_malliavin,
    solve_linear,
    solve_lsmc,
    solve_tree_exact,
)

_CONSTANT_DEFAULTS = {"K_y": 0.0, "K_z": 1.0, "K_g": 0.0, "K_h": 0.0,
                      "M_z": 0.0, "r": None, "C_f": 0.0, "M_xi": 0.0}

_SECTION_DEFAULTS = {
    "model": {"mode": "F1", "x0": [0.0],
              "drift": {"name": "zero", "params": {}},
              "sigma": {"name": "constant", "params": {}}},
    "generator": {"f": {"name": "zero", "params": {}},
                  "g": {"name": "zero", "params": {}},
                  "h": {"name": "zero", "params": {}},
                  "xi": {"name": "zero", "params": {}},
                  "constants": _CONSTANT_DEFAULTS},
    "sampling": {"paths": 1000, "kind": "gaussian", "tangent": False},
    "solvers": [],
    "diagnostics": [],
}

_SOLVER_IDS = {"lsmc", "tree", "cole_hopf", "linear",
               "decomposed_additive", "decomposed_malliavin"}
_DIAG_IDS = {"z_growth", "exp_moment", "stochastic_exponential",
             "bmo_pstar", "uniqueness", "class_membership"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config with all defaults materialized."""

    data: dict

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.data).encode()).hexdigest()

    def __getitem__(self, key):
        return self.data[key]


def _merge_defaults(base: dict, defaults: dict) -> dict:
    out = dict(defaults)
    for k, v in base.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge_defaults(v, out[k])
        else:
            out[k] = v
    return out


def validate_config(raw: dict) -> ExperimentConfig:
    """Schema-check a raw config dict and fill defaults explicitly."""
    if not isinstance(raw, dict):
        raise SchemaViolation("<root>", "config must be a JSON object")
    cfg = {}
    for section, defaults in _SECTION_DEFAULTS.items():
        value = raw.get(section, defaults)
        if isinstance(defaults, dict):
            if not isinstance(value, dict):
                raise SchemaViolation(section, "must be an object")
            cfg[section] = _merge_defaults(value, defaults)
        else:
            if not isinstance(value, list):
                raise SchemaViolation(section, "must be a list")
            cfg[section] = value
    if "grid" not in raw:
        raise SchemaViolation("grid", "section is required")
    grid = raw["grid"]
    if not isinstance(grid, dict) or "T" not in grid or "steps" not in grid:
        raise SchemaViolation("grid", "must carry T and steps")
    if not (isinstance(grid["T"], (int, float)) and grid["T"] > 0):
        raise SchemaViolation("grid.T", "must be a positive number")
    if not (isinstance(grid["steps"], int) and grid["steps"] >= 1):
        raise SchemaViolation("grid.steps", "must be a positive integer")
    cfg["grid"] = {"T": float(grid["T"]), "steps": grid["steps"]}

    sampling = cfg["sampling"]
    if "seed" not in sampling:
        raise SchemaViolation("sampling.seed", "seed is required (no implicit entropy)")
    if not isinstance(sampling["seed"], int):
        raise SchemaViolation("sampling.seed", "must be an integer")
    if sampling["kind"] not in ("gaussian", "bernoulli"):
        raise SchemaViolation("sampling.kind", "must be 'gaussian' or 'bernoulli'")
    if not (isinstance(sampling["paths"], int) and sampling["paths"] >= 1):
        raise SchemaViolation("sampling.paths", "must be a positive integer")

    model = cfg["model"]
    if model["mode"] not in ("F1", "F2"):
        raise SchemaViolation("model.mode", "must be 'F1' or 'F2'")

    consts = cfg["generator"]["constants"]
    r = consts.get("r")
    if r is not None and not (isinstance(r, (int, float)) and 0.0 <= r < 1.0):
        raise SchemaViolation("generator.constants.r", "r must lie in [0,1)")
    for name in ("K_y", "K_z", "K_g", "K_h", "M_z", "C_f", "M_xi"):
        v = consts[name]
        if not (isinstance(v, (int, float)) and np.isfinite(v) and v >= 0):
            raise SchemaViolation(f"generator.constants.{name}",
                                  "must be finite and nonnegative")

    # registry names must exist (resolve with params to fail early)
    resolve("drift", model["drift"]["name"], model["drift"].get("params"))
    sigma_params = dict(model["sigma"].get("params") or {})
    if model["sigma"]["name"] == "constant":
        sigma_params["mode"] = model["mode"]
    resolve("sigma", model["sigma"]["name"],
            {k: v for k, v in sigma_params.items() if k != "mode"}
            if model["sigma"]["name"] != "constant" else sigma_params)
    for kind in ("f", "g", "h", "xi"):
        entry = cfg["generator"][kind]
        resolve(kind, entry["name"], entry.get("params"))

    for i, sv in enumerate(cfg["solvers"]):
        if not isinstance(sv, dict) or "id" not in sv:
            raise SchemaViolation(f"solvers[{i}]", "must be an object with an id")
        if sv["id"] not in _SOLVER_IDS:
            raise SchemaViolation(f"solvers[{i}].id",
                                  f"unknown solver '{sv['id']}'; "
                                  f"available: {', '.join(sorted(_SOLVER_IDS))}")
        sv.setdefault("name", sv["id"])
        sv.setdefault("options", {})
    names = [sv["name"] for sv in cfg["solvers"]]
    if len(names) != len(set(names)):
        raise SchemaViolation("solvers", "solver names must be unique")
    for i, dg in enumerate(cfg["diagnostics"]):
        if not isinstance(dg, dict) or "id" not in dg:
            raise SchemaViolation(f"diagnostics[{i}]", "must be an object with an id")
        if dg["id"] not in _DIAG_IDS:
            raise SchemaViolation(f"diagnostics[{i}].id",
                                  f"unknown diagnostic '{dg['id']}'; "
                                  f"available: {', '.join(sorted(_DIAG_IDS))}")
        dg.setdefault("name", dg["id"])
        dg.setdefault("options", {})
    return ExperimentConfig(cfg)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise InvalidArgument(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InvalidArgument(
            f"config parse error at line {e.lineno} column {e.colno}: {e.msg}")
    return validate_config(raw)


def build_model(cfg: ExperimentConfig) -> ModelSpec:
    m = cfg["model"]
    drift, drift_jac = resolve("drift", m["drift"]["name"], m["drift"].get("params"))
    sigma_name = m["sigma"]["name"]
    params = dict(m["sigma"].get("params") or {})
    if sigma_name == "constant":
        params["mode"] = m["mode"]
    sigma, sigma_jac = resolve("sigma", sigma_name, params)
    dim = len(m["x0"])
    drift_fn = lambda x: drift(np.atleast_2d(x))
    return ModelSpec(x0=np.asarray(m["x0"], float), drift=drift_fn, sigma=sigma,
                     mode=m["mode"], drift_jac=drift_jac, sigma_jac=sigma_jac)


def build_generator(cfg: ExperimentConfig) -> GeneratorSpec:
    g_section = cfg["generator"]
    f = resolve("f", g_section["f"]["name"], g_section["f"].get("params"))
    g, grad_g = resolve("g", g_section["g"]["name"], g_section["g"].get("params"))
    h = resolve("h", g_section["h"]["name"], g_section["h"].get("params"))
    xi = resolve("xi", g_section["xi"]["name"], g_section["xi"].get("params"))
    c = g_section["constants"]
    return GeneratorSpec(f=f, g=g, grad_z_g=grad_g, h=h, xi=xi,
                         K_y=c["K_y"], K_z=c["K_z"], K_g=c["K_g"],
                         K_h=c["K_h"], M_z=c["M_z"], r=c["r"],
                         C_f=c["C_f"], M_xi=c["M_xi"])


def _build_basis(options: dict, paths: PathBundle):
    kind = options.get("basis", "poly")
    if kind == "tree":
        depth = paths.grid.n_steps
        return TreeIndicatorBasis(depth)
    return polynomial_basis(degree=options.get("basis_degree", 3),
                            dim=paths.dim,
                            include_sup=options.get("basis_include_sup", True))


def _terminal_of_x(spec: GeneratorSpec, T: float):
    """Reduce xi + h to a function of the terminal state (Cole-Hopf oracle).

    Valid only for terminal-reading functionals; path-dependent h would
    silently read a one-node path, so the harness restricts cole_hopf configs
    to terminal functionals.
    """
    def terminal(x: np.ndarray) -> np.ndarray:
        states = np.asarray(x, float).reshape(-1, 1, 1)
        times = np.array([T])
        out = np.zeros(states.shape[0])
        if spec.xi is not None:
            out = out + spec.xi(times, states, 0)
        if spec.h is not None:
            out = out + spec.h(times, states, 0)
        return out
    return terminal


def _run_solver(sv: dict, spec, model, paths, noise, cfg) -> object:
    sid = sv["id"]
    opt = sv["options"]
    trunc_level = opt.get("trunc_level", 16)
    trunc = None if trunc_level is None else TruncationSpec(float(trunc_level))
    budget = opt.get("picard_budget", 20)
    tol = opt.get("tol", 1e-9)
    if sid == "lsmc":
        return solve_lsmc(spec, trunc, paths, noise, _build_basis(opt, paths),
                          picard_budget=budget, tol=tol)
    if sid == "tree":
        return solve_tree_exact(spec, paths.grid.n_steps, paths.grid.horizon,
                                bundle=(paths, noise),
                                picard_budget=budget, tol=tol)
    if sid == "cole_hopf":
        terminal = _terminal_of_x(spec, paths.grid.horizon)
        return solve_cole_hopf(model, terminal, paths,
                               n_quad=opt.get("quad_points", 96))
    if sid == "linear":
        return solve_linear(model, opt.get("a", 0.0), spec, paths, noise,
                            _build_basis(opt, paths))
    if sid == "decomposed_additive":
        return solve_decomposed_additive(
            spec, model, paths, noise, _build_basis(opt, paths), trunc,
            picard_budget=budget, tol=tol,
            measure_route=opt.get("measure_route", "drift"))
    if sid == "decomposed_malliavin":
        return solve_decomposed_malliavin(
            spec, model, paths, noise, _build_basis(opt, paths), trunc,
            picard_budget=budget, tol=tol)
    raise InvalidArgument(f"unknown solver id {sid!r}")


def _gradz_along(spec: GeneratorSpec, sol, paths) -> np.ndarray:
    n = paths.grid.n_steps
    theta = np.zeros((paths.n_paths, n, paths.dim))
    for i in range(n):
        theta[:, i, :] = grad_z(spec, float(paths.grid.nodes[i]),
                                prefix_at(paths, i), sol.Y[:, i], sol.Z[:, i, :])
    return theta


def _run_diagnostic(dg: dict, solutions: dict, spec, paths, noise, cfg) -> dict:
    did = dg["id"]
    opt = dg["options"]

    def pick(key="solver"):
        name = opt.get(key)
        if name is None:
            name = next(iter(solutions))
        if name not in solutions:
            raise InvalidArgument(f"diagnostic references unknown solver '{name}'")
        return solutions[name]

    if did == "z_growth":
        rep = z_growth_report(pick(), paths, float(opt.get("r", 0.0)))
        return {"rows": rep.as_rows(), "max_ratio": rep.max_ratio,
                "q999_overall": rep.q999_overall, "pass": np.isfinite(rep.max_ratio)}
    if did == "exp_moment":
        est = exp_moment(pick(), float(opt.get("q", 1.0)))
        return {"q": est.q, "estimate": est.estimate, "se": est.se,
                "log_estimate": est.log_estimate, "pass": est.stable}
    if did == "stochastic_exponential":
        sol = pick()
        theta = _gradz_along(spec, sol, paths)
        rep = stochastic_exponential(theta, noise)
        martingale_ok = abs(rep.mean - 1.0) <= 3.0 * rep.se + 1e-12
        return {"mean": rep.mean, "se": rep.se,
                "lp_norms": {str(k): v for k, v in rep.lp_norms.items()},
                "novikov": rep.novikov, "pass": martingale_ok}
    if did == "bmo_pstar":
        sol = pick()
        theta = _gradz_along(spec, sol, paths)
        bmo = bmo_estimate(theta, paths.grid)
        out = {"bmo": bmo, "pass": np.isfinite(bmo)}
        if bmo > 0:
            ps = pstar_from_bmo(bmo)
            out["pstar"] = ps.value
            out["pstar_saturated"] = ps.saturated
        return out
    if did == "uniqueness":
        sol_a = pick("a")
        sol_b = pick("b")
        verdict = uniqueness_probe(sol_a, sol_b,
                                   budget=opt.get("budget"),
                                   scheme_tol=opt.get("scheme_tol", 2e-2))
        return {"method_a": verdict.method_a, "method_b": verdict.method_b,
                "sup_mean_abs": verdict.sup_mean_abs,
                "sup_max_abs": verdict.sup_max_abs,
                "budget": verdict.budget, "delta_z_l2": verdict.delta_z_l2,
                "pass": verdict.passed}
    if did == "class_membership":
        cm = class_membership(pick(), float(opt.get("K_z", spec.K_z)),
                              p_grid=tuple(opt.get("p_grid", (1.5, 2.0, 4.0))),
                              eps_grid=tuple(opt.get("eps_grid", (0.1, 0.5, 1.0))))
        return {"entries": cm.entries, "pass": cm.all_finite_looking}
    raise InvalidArgument(f"unknown diagnostic id {did!r}")


@dataclass
class RunRecord:
    """Provenance of one experiment run; written as record.json."""

    config_hash: str
    out_dir: str
    status: str = "incomplete"
    version: str = __version__
    stages: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(r.get("pass", True) for r in self.reports.values())

    def summary(self) -> dict:
        """Deterministic summary (no wall-clock data)."""
        return {"config_hash": self.config_hash, "status": self.status,
                "version": self.version, "reports": self.reports,
                "stages": self.stages}


def run_experiment(config: ExperimentConfig, out_dir: str | Path,
                   threads: int | None = None) -> RunRecord:
    """Execute simulate -> solve -> diagnose, persisting all artifacts.

    Identical config yields byte-identical bundle/solution/summary artifacts;
    thread count has no influence on any numerical result.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = RunRecord(config_hash=config.config_hash, out_dir=str(out))
    grid = make_grid(config["grid"]["T"], config["grid"]["steps"])
    model = build_model(config)
    spec = build_generator(config)

    t0 = time.monotonic()
    sampling = config["sampling"]
    if sampling["kind"] == "bernoulli":
        noise = bernoulli_bundle(grid)
    else:
        noise = sample_brownian(grid, model.dim, sampling["paths"],
                                sampling["seed"])
    paths = simulate_forward(model, noise, grid)
    if sampling.get("tangent"):
        paths = simulate_tangent(model, noise, paths)
    record.timings["simulate"] = time.monotonic() - t0
    save_bundle(out / "paths", paths)
    save_brownian(out / "noise", noise)
    record.artifacts["paths"] = str(out / "paths.bin")
    record.artifacts["noise"] = str(out / "noise.bin")
    record.stages.append({"stage": "simulate", "status": "ok"})

    solutions = {}
    for sv in config["solvers"]:
        name = sv["name"]
        t0 = time.monotonic()
        try:
            sol = _run_solver(sv, spec, model, paths, noise, config)
        except Exception as e:  # branch failures recorded, pipeline continues
            record.stages.append({"stage": f"solver:{name}", "status": "error",
                                  "error": f"{type(e).__name__}: {e}"})
            continue
        record.timings[f"solver:{name}"] = time.monotonic() - t0
        solutions[name] = sol
        save_solution(out / f"solution_{name}", sol)
        record.artifacts[f"solution:{name}"] = str(out / f"solution_{name}_Y.bin")
        record.stages.append({"stage": f"solver:{name}", "status": "ok"})

    for dg in config["diagnostics"]:
        name = dg["name"]
        t0 = time.monotonic()
        try:
            rep = _run_diagnostic(dg, solutions, spec, paths, noise, config)
        except Exception as e:
            record.stages.append({"stage": f"diagnostic:{name}",
                                  "status": "error",
                                  "error": f"{type(e).__name__}: {e}"})
            continue
        record.timings[f"diagnostic:{name}"] = time.monotonic() - t0
        key = name
        k = 1
        while key in record.reports:
            k += 1
            key = f"{name}#{k}"
        record.reports[key] = rep
        record.stages.append({"stage": f"diagnostic:{name}", "status": "ok"})

    record.status = ("complete" if all(s["status"] == "ok" for s in record.stages)
                     else "partial")
    _atomic_write(out / "summary.json",
                  canonical_json(record.summary()).encode())
    record.artifacts["summary"] = str(out / "summary.json")
    payload = dict(record.summary(), timings=record.timings,
                   artifacts=record.artifacts, threads=threads)
    _atomic_write(out / "record.json", canonical_json(payload).encode())
    return record


def emit_report(record: RunRecord, fmt: str = "json") -> list[Path]:
    """Materialize CSV curves and/or the JSON summary from a run record."""
    if fmt not in ("csv", "json"):
        raise InvalidArgument(f"format must be 'csv' or 'json', got {fmt!r}")
    if record.status == "incomplete" or not record.reports:
        missing = [s["stage"] for s in record.stages if s["status"] != "ok"]
        raise ReportIncomplete(missing or ["diagnostics"])
    out = Path(record.out_dir)
    written: list[Path] = []
    if fmt == "json":
        path = out / "report.json"
        _atomic_write(path, canonical_json(record.summary()).encode())
        written.append(path)
    else:
        for key, rep in record.reports.items():
            if "rows" not in rep:
                continue
            lines = ["t,mean_ratio,q999_ratio,max_ratio"]
            for row in rep["rows"]:
                lines.append(f"{row['t']},{row['mean_ratio']},"
                             f"{row['q999_ratio']},{row['max_ratio']}")
            path = out / f"report_{key}.csv"
            _atomic_write(path, ("\n".join(lines) + "\n").encode())
            written.append(path)
        if not written:
            raise ReportIncomplete(["no per-node curve reports present"])
    return written
