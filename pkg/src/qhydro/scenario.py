"""Declarative scenarios: schema, overrides, check execution and run bundles."""

from __future__ import annotations

import copy
import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import nonequilibrium as neq
from .madelung import extract_slabs, mixed_velocity_check
from .numerics import DIRICHLET, PERIODIC, Grid1D, Grid2D, norm
from .permutation import (
    LambdaOperator, born_permutation_test, lambda_linearity_defect, smooth_random_probes,
    wave_operator_residual,
)
from .schrodinger import METHODS, NumericalAbort, PhysParams, Potential, evolve, initial_state, snapshot_states
from .verify import (
    EquationId, ResidualReport, classicality, convergence_table, min_order, residual, residual_mask,
    stress_form_residuals, velocity_equation_residuals, velocity_uniqueness_probe,
)

SCHEMA_VERSION = 1
SUITES = ("permutation", "uniqueness", "classicality", "nonequilibrium", "mixed_velocity",
          "assembly", "literal_forms")
KNOWN_CHECKS = tuple(e.value for e in EquationId) + SUITES
TWO_BODY_ONLY = ("permutation", "classicality", "mixed_velocity", "assembly")
ONE_BODY_ONLY = ("uniqueness", "nonequilibrium")

DEFAULT_TOLERANCES = {
    "min_order": 1.7,          # observed L2 order over the refinement ladder
    "linf_max": 1e-4,          # final-level Linf of each residual
    "floor": 1e-8,             # residuals below this at every level count as converged
    "mixed_linf": 1e-5,
    "cross_min": 0.0,          # classicality cross-term norm must exceed this
    "assembly_rel": 1e-12,
    "linearity_rel": 1e-12,
    "delta_linf": 1e-8,        # |rho - swap rho| for symmetric states
    "defect_C": 1e-8,          # symmetric case: Lambda swap-defect < defect_C dx^2
    "defect_oracle": None,     # asymmetric case: defect > (1 - defect_slack) * oracle
    "defect_slack": 0.5,
    "uniqueness_factor": 100.0,
    "uniqueness_clean": 1e-4,
    "deviation_C": None,       # equilibrium deviation L1 < C (dx^2 + dt)
    "velocity_linf": 1e-3,     # derived two-body velocity equations
}

SCENARIO_DIR = "scenarios"


class SchemaError(ValueError):
    """Invalid scenario; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ------------------------------------------------------------------ schema

def _require(d: dict, key: str, types, where: str):
    if key not in d:
        raise SchemaError(f"{where}{key}", "missing required field")
    val = d[key]
    if not isinstance(val, types) or (isinstance(val, bool) and types is not bool):
        raise SchemaError(f"{where}{key}", f"expected {types.__name__}, got {type(val).__name__}")
    return val


def _number(d: dict, key: str, default, where: str) -> float:
    val = d.get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(f"{where}{key}", f"expected a number, got {val!r}")
    return float(val)


@dataclass
class Scenario:
    id: str
    description: str
    space: dict
    physics: dict
    potential: dict
    initial_state: dict
    evolution: dict
    checks: list[str]
    refinements: list[int] | None
    scheme: str
    pi_form: str
    seed: int
    tolerances: dict
    suites: dict
    output: str | None
    raw: dict = field(repr=False)

    @property
    def ndim(self) -> int:
        return int(self.space.get("dim", 1))

    @property
    def levels(self) -> list[int]:
        return list(self.refinements) if self.refinements else [int(self.space["n"])]

    def params(self) -> PhysParams:
        return PhysParams(**{k: float(v) for k, v in self.physics.items()})

    def grid(self, n: int | None = None):
        sp_ = self.space
        n = int(sp_["n"]) if n is None else n
        if self.ndim == 1:
            return Grid1D(n, float(sp_["x_min"]), float(sp_["x_max"]), sp_.get("boundary", PERIODIC))
        return Grid2D.square(n, float(sp_["x_min"]), float(sp_["x_max"]), sp_.get("boundary", PERIODIC))

    def potential_obj(self) -> Potential:
        p = dict(self.potential)
        kind = p.pop("kind", "free")
        return Potential(kind, **{k: float(v) for k, v in p.items()})

    def tol(self, key: str):
        return self.tolerances.get(key, DEFAULT_TOLERANCES.get(key))


TOP_LEVEL_KEYS = ("schema_version", "id", "description", "space", "physics", "potential", "initial_state",
                  "evolution", "checks", "refinements", "scheme", "pi_form", "seed", "tolerances", "suites",
                  "output")


def validate(raw: dict) -> Scenario:
    """Check ``raw`` against the schema and return a :class:`Scenario`."""
    if not isinstance(raw, dict):
        raise SchemaError("<root>", "scenario must be an object")
    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            raise SchemaError(key, "unknown top-level field")
    version = _require(raw, "schema_version", int, "")
    if version != SCHEMA_VERSION:
        raise SchemaError("schema_version", f"unsupported version {version} (expected {SCHEMA_VERSION})")
    sid = _require(raw, "id", str, "")
    space = _require(raw, "space", dict, "")
    dim = space.get("dim", 1)
    if dim not in (1, 2):
        raise SchemaError("space.dim", f"must be 1 or 2, got {dim!r}")
    n = _require(space, "n", int, "space.")
    for key in ("x_min", "x_max"):
        _number(space, key, None, "space.")
    if space.get("boundary", PERIODIC) not in (PERIODIC, DIRICHLET):
        raise SchemaError("space.boundary", f"unknown boundary {space.get('boundary')!r}")
    physics = raw.get("physics", {})
    for key, val in physics.items():
        if key not in ("hbar", "m", "m1", "m2"):
            raise SchemaError(f"physics.{key}", "unknown physical parameter")
        if not _number(physics, key, None, "physics.") > 0:
            raise SchemaError(f"physics.{key}", "must be strictly positive")
    potential = raw.get("potential", {"kind": "free"})
    if potential.get("kind", "free") not in ("free", "harmonic", "barrier", "coupled_harmonic"):
        raise SchemaError("potential.kind", f"unknown potential {potential.get('kind')!r}")
    for key in potential:
        if key != "kind" and key not in ("omega", "center", "height", "width", "kappa"):
            raise SchemaError(f"potential.{key}", "unknown potential parameter")
    init = _require(raw, "initial_state", dict, "")
    evolution = raw.get("evolution", {})
    method = evolution.get("method", "split_step_spectral")
    if method not in METHODS:
        raise SchemaError("evolution.method", f"unknown method {method!r}")
    for key in ("dt_over_dx", "t0"):
        if key in evolution:
            _number(evolution, key, None, "evolution.")
    checks = _require(raw, "checks", list, "")
    if not checks:
        raise SchemaError("checks", "at least one check is required")
    seen = set()
    for i, c in enumerate(checks):
        if c not in KNOWN_CHECKS:
            raise SchemaError(f"checks[{i}]", f"unknown check {c!r}")
        if c in seen:
            raise SchemaError(f"checks[{i}]", f"duplicate check {c!r}")
        seen.add(c)
        is_two = c in TWO_BODY_ONLY or (c in EquationId.__members__ and EquationId(c).two_body)
        is_one = c in ONE_BODY_ONLY or (c in EquationId.__members__ and not EquationId(c).two_body)
        if (dim == 2 and is_one) or (dim == 1 and is_two):
            raise SchemaError(f"checks[{i}]", f"check {c!r} does not apply to a {dim}D scenario")
    refinements = raw.get("refinements")
    if refinements is not None:
        if not isinstance(refinements, list) or not all(isinstance(r, int) and not isinstance(r, bool) for r in refinements):
            raise SchemaError("refinements", "expected a list of integers")
        if any(b <= a for a, b in zip(refinements, refinements[1:])):
            raise SchemaError("refinements", "must be strictly increasing in n")
    scheme = raw.get("scheme", "spectral")
    if scheme not in ("spectral", "fd2", "fd4"):
        raise SchemaError("scheme", f"unknown scheme {scheme!r}")
    pi_form = raw.get("pi_form", "standard")
    if pi_form not in ("standard", "literal"):
        raise SchemaError("pi_form", f"unknown stress form {pi_form!r}")
    tolerances = raw.get("tolerances", {})
    for key in tolerances:
        if key not in DEFAULT_TOLERANCES:
            raise SchemaError(f"tolerances.{key}", "unknown tolerance")
    suites = raw.get("suites", {})
    for key in suites:
        if key not in SUITES:
            raise SchemaError(f"suites.{key}", "unknown suite")
    if "nonequilibrium" in checks:
        cfg = suites.get("nonequilibrium", {})
        if cfg.get("mode") not in neq.MODES:
            raise SchemaError("suites.nonequilibrium.mode", f"expected one of {neq.MODES}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise SchemaError("seed", "expected an integer")
    sc = Scenario(sid, str(raw.get("description", "")), space, physics, potential, init, evolution,
                  list(checks), refinements, scheme, pi_form, seed, tolerances, suites,
                  raw.get("output"), raw)
    try:
        sc.grid(n)
        sc.params()
        sc.potential_obj()
    except (TypeError, ValueError) as exc:
        raise SchemaError("space" if "grid" in str(exc) or "x_max" in str(exc) else "physics", str(exc)) from exc
    return sc


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in text:
        raise SchemaError("--override", f"expected key=value, got {text!r}")
    key, val = text.split("=", 1)
    try:
        parsed = json.loads(val)
    except json.JSONDecodeError:
        parsed = val
    return key.strip().split("."), parsed


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    out = copy.deepcopy(raw)
    for text in overrides:
        path, val = parse_override(text)
        d = out
        for k in path[:-1]:
            if not isinstance(d.get(k, {}), dict):
                raise SchemaError(".".join(path), f"{k!r} is not an object")
            d = d.setdefault(k, {})
        d[path[-1]] = val
    return out


def bundled_ids() -> list[str]:
    root = resources.files("qhydro").joinpath(SCENARIO_DIR)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_raw(ref: str) -> dict:
    """Read a scenario from a file path or a bundled scenario id."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    elif ref in bundled_ids():
        text = resources.files("qhydro").joinpath(SCENARIO_DIR, f"{ref}.json").read_text(encoding="utf-8")
    else:
        raise FileNotFoundError(f"no scenario file or bundled scenario named {ref!r}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<file>", f"invalid JSON: {exc}") from exc


def load(ref: str, overrides: list[str] | None = None) -> Scenario:
    return validate(apply_overrides(load_raw(ref), overrides or []))


# --------------------------------------------------------------- execution

@dataclass
class CheckResult:
    name: str
    passed: bool | None            # None: informational, nothing asserted
    metrics: dict[str, float] = field(default_factory=dict)
    residuals: list[ResidualReport] = field(default_factory=list)
    deviation: dict[str, list[dict]] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {"name": self.name, "passed": self.passed, "metrics": self.metrics, "messages": self.messages}


def level_dt(sc: Scenario, grid) -> float:
    ev = sc.evolution
    if "dt" in ev:
        return float(ev["dt"])
    return float(ev.get("dt_over_dx", 0.1)) * grid.axes[0].dx


def level_slabs(sc: Scenario, n: int):
    """Field slabs at resolution ``n`` around time t0 (dt tied to dx)."""
    grid = sc.grid(n)
    params = sc.params()
    pot = sc.potential_obj()
    state = initial_state(grid, params, sc.initial_state)
    dt = level_dt(sc, grid)
    method = sc.evolution.get("method", "split_step_spectral")
    t0 = float(sc.evolution.get("t0", 0.0))
    if t0 > 0:
        steps = max(1, round(t0 / dt))
        state = evolve(state, pot, t0 / steps, steps, method)
    states = snapshot_states(state, pot, dt, method)
    return extract_slabs(states, pot, dt, scheme=sc.scheme, pi_form=sc.pi_form)


def _equation_check(sc: Scenario, eq: str, slabs_by_level: dict) -> CheckResult:
    levels = sc.levels
    reports = [residual(eq, slabs_by_level[n], scenario=sc.id, level=i) for i, n in enumerate(levels)]
    rows = convergence_table(reports)
    res = CheckResult(eq, True, residuals=reports)
    final = reports[-1]
    res.metrics["final_Linf"] = final.Linf
    res.metrics["final_L2"] = final.L2
    for r in rows[1:]:
        res.metrics[f"order_L2_{r.level}"] = r.order_L2
        res.metrics[f"order_Linf_{r.level}"] = r.order_Linf
    if final.Linf >= sc.tol("linf_max"):
        res.passed = False
        res.messages.append(f"final Linf {final.Linf:.3e} >= {sc.tol('linf_max'):g}")
    if len(levels) >= 3:
        at_floor = all(r.Linf < sc.tol("floor") for r in reports)
        order = min_order(rows, "L2")
        res.metrics["min_order_L2"] = order
        if at_floor:
            res.messages.append(f"converged at round-off floor (Linf < {sc.tol('floor'):g} at every level); "
                                "observed order not meaningful")
        elif not order >= sc.tol("min_order"):
            res.passed = False
            res.messages.append(f"observed L2 order {order:.3f} < {sc.tol('min_order')}")
    return res


def _literal_forms(sc: Scenario, s) -> CheckResult:
    res = CheckResult("literal_forms", True)
    if sc.ndim == 1:
        forms = stress_form_residuals(s)
        res.metrics["momentum_L2_standard"] = forms["standard"]
        res.metrics["momentum_L2_literal"] = forms["literal"]
        if not forms["standard"] < forms["literal"]:
            res.passed = False
        res.messages.append(
            f"stress form: standard residual {forms['standard']:.3e}, literal form {forms['literal']:.3e}")
    else:
        derived = velocity_equation_residuals(s)
        literal = velocity_equation_residuals(s, literal=True)
        for k in derived:
            res.metrics[f"{k}_Linf_derived"] = derived[k]
            res.metrics[f"{k}_Linf_literal"] = literal[k]
            if not derived[k] < sc.tol("velocity_linf"):
                res.passed = False
            if literal[k] > 10 * max(derived[k], 1e-300):
                res.messages.append(f"{k}: literal coefficients give {literal[k]:.3e} vs derived {derived[k]:.3e}")
    return res


def _mixed(sc: Scenario, s) -> CheckResult:
    val = mixed_velocity_check(s.cur)
    return CheckResult("mixed_velocity", val < sc.tol("mixed_linf"), {"mixed_Linf": val, "n": s.grid.shape[0]})


def _classicality(sc: Scenario, s) -> CheckResult:
    c = classicality(s)
    m = {"cross_L2": c.cross_norm, "single_L2": c.single_norm, "total_L2": c.total_norm, "ratio": c.ratio}
    return CheckResult("classicality", c.cross_norm > sc.tol("cross_min"), m)


def _assembly(sc: Scenario, s) -> CheckResult:
    op = LambdaOperator.from_slabs(s)
    mask = residual_mask(s)
    direct = norm(wave_operator_residual(op, s.slab("rho")), s.grid, "L2", mask=mask)
    assembled = residual("wave_2p", s).L2
    rel = abs(direct - assembled) / max(assembled, 1e-300)
    return CheckResult("assembly", rel <= sc.tol("assembly_rel"),
                       {"operator_L2": direct, "wave_2p_L2": assembled, "relative_difference": rel})


def _uniqueness(sc: Scenario, s) -> CheckResult:
    c = float(sc.suites.get("uniqueness", {}).get("c", 0.1))
    clean, corrupted = velocity_uniqueness_probe(s, c)
    factor = corrupted.Linf / max(clean.Linf, 1e-300)
    ok = clean.Linf < sc.tol("uniqueness_clean") and factor >= sc.tol("uniqueness_factor")
    return CheckResult("uniqueness", ok, {"c": c, "clean_Linf": clean.Linf, "shifted_Linf": corrupted.Linf,
                                          "factor": factor, "n": s.grid.shape[0]})


def _permutation(sc: Scenario) -> CheckResult:
    cfg = sc.suites.get("permutation", {})
    grid = sc.grid()
    params = sc.params()
    pot = sc.potential_obj()
    dt = level_dt(sc, grid)
    interval = float(cfg.get("interval", 0.5))
    samples = int(cfg.get("samples", 3))
    n_probes = int(cfg.get("probes", 4))
    n_lin = int(cfg.get("linearity_probes", 100))
    method = sc.evolution.get("method", "split_step_spectral")
    signs = cfg.get("signs", [sc.initial_state.get("sign", 1)]) if sc.initial_state.get("kind") == "symmetrized" else [None]
    res = CheckResult("permutation", True)
    dx = grid.axes[0].dx
    res.metrics["dx"] = dx
    equal = params.m1 == params.m2
    symmetric = pot.is_swap_symmetric(grid)
    res.metrics["equal_masses"] = float(equal)
    res.metrics["symmetric_potential"] = float(symmetric)
    for sign in signs:
        spec = dict(sc.initial_state)
        tag = ""
        if sign is not None:
            spec["sign"] = int(sign)
            tag = "sym_" if sign > 0 else "anti_"
        state = initial_state(grid, params, spec)
        rep = born_permutation_test(state, pot, dt, samples, max(1, round(interval / dt)), method,
                                    sc.scheme, n_probes, sc.seed)
        slabs = extract_slabs(snapshot_states(state, pot, dt, method), pot, dt, scheme=sc.scheme)
        op = LambdaOperator.from_slabs(slabs)
        probes = smooth_random_probes(grid, slabs.cur.rho, n_lin, sc.seed)
        lin = lambda_linearity_defect(op, probes, sc.seed)
        res.metrics[f"{tag}delta_Linf_max"] = max(rep.delta_linf)
        res.metrics[f"{tag}delta_rel_max"] = max(rep.delta_rel)
        res.metrics[f"{tag}eq21_Linf_max"] = max(rep.eq21_linf)
        res.metrics[f"{tag}swap_defect_max"] = max(rep.lambda_defect)
        res.metrics[f"{tag}linearity_rel"] = lin
        for k, t in enumerate(rep.times):
            res.metrics[f"{tag}swap_defect_t{k}"] = rep.lambda_defect[k]
        if lin > sc.tol("linearity_rel"):
            res.passed = False
            res.messages.append(f"{tag}linearity defect {lin:.3e} > {sc.tol('linearity_rel'):g}")
        defect = max(rep.lambda_defect)
        if equal and symmetric:
            if max(rep.delta_linf) >= sc.tol("delta_linf"):
                res.passed = False
                res.messages.append(f"{tag}|rho - swap rho| reached {max(rep.delta_linf):.3e}")
            bound = sc.tol("defect_C") * dx**2
            if defect >= bound:
                res.passed = False
                res.messages.append(f"{tag}swap defect {defect:.3e} >= C dx^2 = {bound:.3e}")
        else:
            oracle = sc.tol("defect_oracle")
            res.messages.append(f"{tag}swap defect {defect:.4g} (masses {params.m1:g}, {params.m2:g}; "
                                f"symmetric potential: {symmetric})")
            if oracle is not None and defect <= (1 - sc.tol("defect_slack")) * oracle:
                res.passed = False
                res.messages.append(f"{tag}swap defect {defect:.3e} below {1 - sc.tol('defect_slack'):g} x oracle {oracle:g}")
    return res


def _nonequilibrium(sc: Scenario) -> CheckResult:
    cfg = sc.suites["nonequilibrium"]
    mode = cfg["mode"]
    params = sc.params()
    pot = sc.potential_obj()
    grid = sc.grid()
    method = sc.evolution.get("method", "split_step_spectral")
    every = int(cfg.get("sample_every", 10))
    res = CheckResult("nonequilibrium", True)
    if mode == neq.GUIDED:
        dt = float(cfg.get("dt", 0.01))
        steps = int(cfg.get("steps", 1000))
        psi0 = initial_state(grid, params, sc.initial_state)
        eq_run = neq.run_guided(psi0, pot, dt, steps, sample_every=every, method=method, scheme=sc.scheme)
        rho_p = neq.perturbed_density(psi0.rho, grid, float(cfg.get("perturbation", 0.3)))
        pert = neq.run_guided(psi0, pot, dt, steps, rho0=rho_p, sample_every=every, method=method,
                              scheme=sc.scheme)
    else:
        if grid.boundary != DIRICHLET:
            raise SchemaError("space.boundary", "self-consistent mode runs on a dirichlet_zero grid")
        pad = int(cfg.get("reference_pad", grid.n))
        ref_grid, off = neq.embedding_grid(grid, pad)
        psi0 = initial_state(ref_grid, params, sc.initial_state)
        t_end = float(cfg["t_end"])
        dt = float(cfg["dt"]) if "dt" in cfg else neq.dispersive_dt(grid, params, float(cfg.get("safety", 0.3)))
        steps = math.ceil(t_end / dt - 1e-9)
        dt = t_end / steps
        every = max(1, steps // int(cfg.get("samples", 20)))
        st0 = neq.equilibrium_state(psi0, grid, off)
        kw = dict(reference=psi0, offset=off, sample_every=every, scheme=cfg.get("scheme", "fd4"), method=method)
        eq_run = neq.run_self_consistent(st0, pot, dt, steps, **kw)
        w_p = neq.perturbed_log_density(st0.w, grid, float(cfg.get("perturbation", 0.1)))
        pert = neq.run_self_consistent(neq.NoneqState(w_p, st0.v.copy(), st0.t, neq.SELF_CONSISTENT, grid, params),
                                       pot, dt, steps, **kw)
    dx = grid.dx
    bound_scale = dx**2 + dt
    worst = max(eq_run.trace.L1)
    res.metrics.update({"dx": dx, "dt": dt, "steps": float(steps), "equilibrium_L1_max": worst,
                        "equilibrium_Linf_max": max(eq_run.trace.Linf), "scaled_L1": worst / bound_scale,
                        "equilibrium_mass_error": eq_run.mass_error, "perturbed_mass_error": pert.mass_error,
                        "perturbed_steps": float(pert.steps_done),
                        "perturbed_L1_first": pert.trace.L1[0], "perturbed_L1_last": pert.trace.L1[-1]})
    res.deviation = {"deviation": eq_run.trace.rows(), "deviation_perturbed": pert.trace.rows()}
    if eq_run.rejected:
        res.passed = False
        res.messages.append(f"equilibrium run rejected: {eq_run.rejected}")
    C = sc.tol("deviation_C")
    if C is not None and not worst < C * bound_scale:
        res.passed = False
        res.messages.append(f"equilibrium L1 deviation {worst:.3e} >= C (dx^2 + dt) = {C * bound_scale:.3e}")
    if not eq_run.mass_ok:
        res.passed = False
        res.messages.append(f"mass monitor breached: |int rho - 1| = {eq_run.mass_error:.3e}")
    if pert.rejected:
        res.messages.append(f"perturbed run stopped after {pert.steps_done} steps: {pert.rejected}")
    if not pert.mass_ok:
        res.messages.append(f"perturbed run mass drift {pert.mass_error:.3e}")
    return res


@dataclass
class RunResult:
    scenario: Scenario
    checks: list[CheckResult]
    provenance: dict
    abort: str | None = None

    @property
    def exit_code(self) -> int:
        if self.abort is not None:
            return 3
        return 0 if all(c.passed is not False for c in self.checks) else 1


def _map(func, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def execute(sc: Scenario, threads: int = 1) -> RunResult:
    """Run every requested check; results keep the order of ``sc.checks``."""
    from . import __version__

    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    prov = {"package_version": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scheme": sc.scheme, "pi_form": sc.pi_form, "threads": threads,
            "method": sc.evolution.get("method", "split_step_spectral"), "seed": sc.seed, "started": started}
    equations = [c for c in sc.checks if c in EquationId.__members__]
    slab_checks = {"literal_forms", "mixed_velocity", "classicality", "assembly", "uniqueness"}
    needs_slabs = bool(equations) or any(c in slab_checks for c in sc.checks)
    try:
        levels = sc.levels if equations else sc.levels[-1:]
        slabs = dict(zip(levels, _map(lambda n: level_slabs(sc, n), levels, threads))) if needs_slabs else {}
        finest = slabs.get(sc.levels[-1]) if slabs else None

        def run_one(name: str) -> CheckResult:
            if name in EquationId.__members__:
                return _equation_check(sc, name, slabs)
            if name == "literal_forms":
                return _literal_forms(sc, finest)
            if name == "mixed_velocity":
                return _mixed(sc, finest)
            if name == "classicality":
                return _classicality(sc, finest)
            if name == "assembly":
                return _assembly(sc, finest)
            if name == "uniqueness":
                return _uniqueness(sc, finest)
            if name == "permutation":
                return _permutation(sc)
            return _nonequilibrium(sc)

        checks = _map(run_one, sc.checks, threads)
        abort = None
    except NumericalAbort as exc:
        checks, abort = [], str(exc)
    prov["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return RunResult(sc, checks, prov, abort)


# ------------------------------------------------------------------ bundles

RESIDUAL_COLUMNS = ["scenario_id", "equation", "level", "n", "dx", "dt", "L1", "L2", "Linf", "interior_fraction"]
DEVIATION_COLUMNS = ["scenario_id", "time", "L1", "Linf"]
METRIC_COLUMNS = ["scenario_id", "check", "metric", "value"]


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        wr.writeheader()
        for row in rows:
            wr.writerow({k: _cell(row.get(k)) for k in columns})


def write_bundle(result: RunResult, out_dir: Path) -> Path:
    """bundle.json plus CSV sidecars (residuals, metrics, deviation traces)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    sc = result.scenario
    artifacts = ["residuals.csv", "metrics.csv"]
    res_rows = []
    for c in result.checks:
        for r in c.residuals:
            res_rows.append({**r.as_row(), "scenario_id": sc.id})
    _write_csv(out_dir / "residuals.csv", RESIDUAL_COLUMNS, res_rows)
    metric_rows = [{"scenario_id": sc.id, "check": c.name, "metric": k, "value": float(v)}
                   for c in result.checks for k, v in c.metrics.items() if v is not None]
    _write_csv(out_dir / "metrics.csv", METRIC_COLUMNS, metric_rows)
    for c in result.checks:
        for name, rows in c.deviation.items():
            _write_csv(out_dir / f"{name}.csv", DEVIATION_COLUMNS, [{**r, "scenario_id": sc.id} for r in rows])
            artifacts.append(f"{name}.csv")
    bundle = {
        "schema_version": SCHEMA_VERSION,
        "scenario": sc.raw,
        "status": {0: "pass", 1: "fail", 3: "abort"}[result.exit_code],
        "exit_code": result.exit_code,
        "abort": result.abort,
        "checks": [c.summary() for c in result.checks],
        "provenance": result.provenance,
        "artifacts": artifacts,
    }
    with (out_dir / "bundle.json").open("w", encoding="utf-8") as fh:
        json.dump(bundle, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return out_dir


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
