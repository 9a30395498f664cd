"""Command-line driver.

Subcommands
-----------
analyze   ingest -> spec -> Gram -> weights -> solver -> estimand -> diagnostics
patch     discretize + recalibrate an estimated design, report bins
estimate  IPW / trimmed / patched / regression point estimates
simulate  assignment simulation and consistency curves
catalog   closed-form design construction for a named template

Reports are JSON with a fixed schema (``schema_version`` 1) and floats
rendered at 17 significant digits, so identical configuration and seed
produce byte-identical files.  Input files are never written to.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import catalog as catalog_ops
from .diagnostics import calibration_csv, profiles_csv, run_design_checklist
from .estimators import (
    DivisionGuardError,
    ipw_estimate,
    patch_design,
    patched_estimate,
    trimmed_ate,
)
from .gram import SingularGramError, population_gram, sample_gram
from .model import (
    DataFormatError,
    Design,
    build_template,
    load_long_csv,
    validate_population,
)
from .oracle import JointDesign, consistency_harness, simulate_assignment
from .solver import SolverOptions, design_to_csv, solve_implicit_design
from .weights import (
    export_weights_csv,
    identification_strength,
    point_estimate,
    potential_weights,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_SPEC = 4
EXIT_GRAM = 5
EXIT_SOLVER = 6
EXIT_ESTIMATE = 7
EXIT_DIAGNOSTICS = 8
EXIT_SIMULATE = 9


class ConfigError(ValueError):
    """Raised for malformed or unresolvable run configuration."""


class PipelineError(RuntimeError):
    """A pipeline stage failure carrying its exit code."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Canonical JSON
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    """Fixed 17-significant-digit rendering used in every report."""
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(float(x), ".17g")


def dumps_canonical(obj, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, fixed float format, no whitespace drift."""
    pad = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=True)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = ",\n".join("  " * (indent + 1) + dumps_canonical(v, indent + 1) for v in obj)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = []
        for key in sorted(obj):
            parts.append(
                "  " * (indent + 1)
                + json.dumps(str(key), ensure_ascii=True)
                + ": "
                + dumps_canonical(obj[key], indent + 1)
            )
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_report(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(payload))
        fh.write("\n")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

_PROFILES = {
    "strict": SolverOptions(
        rank_cutoff=1e-10,
        residual_tol=1e-9,
        proper_tol=1e-11,
        gram_rtol_population=1e-11,
        gram_rtol_estimated=1e-7,
    ),
    "default": SolverOptions(),
    "loose": SolverOptions(
        rank_cutoff=1e-8,
        residual_tol=1e-7,
        proper_tol=1e-9,
        gram_rtol_population=1e-9,
        gram_rtol_estimated=1e-5,
    ),
}

_CONFIG_KEYS = {
    "data_path",
    "template",
    "options",
    "mode",
    "design_path",
    "treatment_values",
    "diagnostics",
    "estimators",
    "out_dir",
    "seed",
    "threads",
    "tolerance_profile",
    "tolerances",
    "unit_weights_path",
    "simulate",
    "patch",
    "catalog",
}

_DIAGNOSTIC_KEYS = {"enabled", "bins", "reset", "balance"}


@dataclass
class RunConfig:
    """Validated run configuration; unknown keys are rejected at parse time."""

    data_path: str | None = None
    template: str = "angrist"
    options: dict = field(default_factory=dict)
    mode: str = "estimated"
    design_path: str | None = None
    treatment_values: list | None = None
    diagnostics: dict = field(default_factory=dict)
    estimators: list = field(default_factory=list)
    out_dir: str = "."
    seed: int = 0
    threads: int | None = None
    tolerance_profile: str = "default"
    tolerances: dict = field(default_factory=dict)
    unit_weights_path: str | None = None
    simulate: dict = field(default_factory=dict)
    patch: dict = field(default_factory=dict)
    catalog: dict = field(default_factory=dict)

    def solver_options(self) -> SolverOptions:
        base = _PROFILES[self.tolerance_profile]
        if not self.tolerances:
            return base
        valid = set(SolverOptions.__dataclass_fields__)
        unknown = set(self.tolerances) - valid
        if unknown:
            raise ConfigError(f"unknown tolerance overrides: {sorted(unknown)}")
        from dataclasses import replace

        return replace(base, **{k: float(v) for k, v in self.tolerances.items()})


def parse_run_config(raw: dict, base_dir: str = ".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig()
    for key, value in raw.items():
        setattr(cfg, key, value)
    if cfg.mode not in ("population", "estimated"):
        raise ConfigError(f"mode must be population|estimated, got {cfg.mode!r}")
    if cfg.tolerance_profile not in _PROFILES:
        raise ConfigError(
            f"tolerance_profile must be one of {sorted(_PROFILES)}, got {cfg.tolerance_profile!r}"
        )
    if not isinstance(cfg.options, dict):
        raise ConfigError("options must be an object")
    if not isinstance(cfg.diagnostics, dict):
        raise ConfigError("diagnostics must be an object")
    bad = set(cfg.diagnostics) - _DIAGNOSTIC_KEYS
    if bad:
        raise ConfigError(f"unknown diagnostics keys: {sorted(bad)}")
    cfg.seed = int(cfg.seed)
    if cfg.threads is not None:
        cfg.threads = int(cfg.threads)
        if cfg.threads < 1:
            raise ConfigError("threads must be >= 1")
    for attr in ("data_path", "design_path", "unit_weights_path"):
        value = getattr(cfg, attr)
        if value is not None:
            resolved = value if os.path.isabs(value) else os.path.join(base_dir, value)
            if not os.path.exists(resolved):
                raise ConfigError(f"{attr} does not resolve: {value!r}")
            setattr(cfg, attr, resolved)
    return cfg


def load_run_config(path: str | None, overrides: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    base_dir = "."
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        base_dir = os.path.dirname(os.path.abspath(path))
    cfg = parse_run_config(raw, base_dir=base_dir)
    if overrides.data is not None:
        if not os.path.exists(overrides.data):
            raise ConfigError(f"--data does not resolve: {overrides.data!r}")
        cfg.data_path = overrides.data
    if overrides.out is not None:
        cfg.out_dir = overrides.out
    if overrides.unit_weights is not None:
        if not os.path.exists(overrides.unit_weights):
            raise ConfigError(f"--unit-weights does not resolve: {overrides.unit_weights!r}")
        cfg.unit_weights_path = overrides.unit_weights
    if overrides.seed is not None:
        cfg.seed = int(overrides.seed)
    if overrides.tolerance_profile is not None:
        cfg.tolerance_profile = overrides.tolerance_profile
    threads = overrides.threads
    if threads is None:
        env = os.environ.get("IDW_THREADS")
        if env is not None:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"IDW_THREADS is not an integer: {env!r}") from None
    if threads is not None:
        cfg.threads = int(threads)
        if cfg.threads < 1:
            raise ConfigError("threads must be >= 1")
    cfg.solver_options()  # validate tolerance overrides eagerly
    return cfg


def _apply_threads(cfg: RunConfig) -> None:
    """Best-effort thread cap for the numerical backends."""
    if cfg.threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(cfg.threads))


# ---------------------------------------------------------------------------
# Shared pipeline pieces
# ---------------------------------------------------------------------------


def _load_data(cfg: RunConfig):
    if cfg.data_path is None:
        raise PipelineError(EXIT_CONFIG, "no data file given (use --data or config data_path)")
    values = (
        np.asarray(cfg.treatment_values, dtype=float)
        if cfg.treatment_values is not None
        else None
    )
    try:
        return load_long_csv(cfg.data_path, treatment_values=values)
    except DataFormatError as exc:
        raise PipelineError(EXIT_DATA, f"malformed data file: {exc}") from None


def _load_design_csv(path: str, n: int, num_arms: int) -> Design:
    """Read a design from CSV columns prob_0..prob_J (unit order preserved)."""
    import csv as _csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PipelineError(EXIT_DATA, "design CSV: missing header row")
        cols = [f"prob_{j}" for j in range(num_arms)]
        missing = [c for c in cols if c not in reader.fieldnames]
        if missing:
            raise PipelineError(EXIT_DATA, f"design CSV: missing columns {missing}")
        rows = []
        try:
            for rec in reader:
                rows.append([float(rec[c]) for c in cols])
        except (TypeError, ValueError) as exc:
            raise PipelineError(EXIT_DATA, f"design CSV: {exc}") from None
    probs = np.asarray(rows, dtype=float)
    if probs.shape != (n, num_arms):
        raise PipelineError(
            EXIT_DATA, f"design CSV has shape {probs.shape}, expected {(n, num_arms)}"
        )
    return Design(probs, kind="candidate")


def _load_unit_weights(path: str, n: int) -> np.ndarray:
    import csv as _csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or "weight" not in reader.fieldnames:
            raise PipelineError(EXIT_DATA, "unit-weights CSV needs a 'weight' column")
        try:
            w = np.array([float(rec["weight"]) for rec in reader])
        except (TypeError, ValueError) as exc:
            raise PipelineError(EXIT_DATA, f"unit-weights CSV: {exc}") from None
    if w.shape != (n,):
        raise PipelineError(EXIT_DATA, f"unit-weights CSV has {w.shape[0]} rows, expected {n}")
    return w


def _ate_weights(n: int, unit_weights: np.ndarray | None) -> np.ndarray:
    """Signed binary-contrast weights: +v on treatment, -v on control."""
    v = np.ones(n) if unit_weights is None else unit_weights
    return np.column_stack([-v, v])


def _build_spec(cfg: RunConfig, pop, ts, design):
    try:
        return build_template(cfg.template, dict(cfg.options), pop, ts, design)
    except (KeyError, ValueError) as exc:
        raise PipelineError(EXIT_SPEC, f"cannot build template {cfg.template!r}: {exc}") from None


def _target_design(cfg: RunConfig, pop, ts) -> Design | None:
    if cfg.design_path is None:
        return None
    return _load_design_csv(cfg.design_path, pop.n, ts.num_values)


def _compute_weights(cfg: RunConfig, pop, ts, design):
    spec = _build_spec(cfg, pop, ts, design)
    try:
        if cfg.mode == "population":
            if design is None:
                raise PipelineError(
                    EXIT_CONFIG, "population mode needs a target design (design_path)"
                )
            gram = population_gram(spec, pop, ts, design)
        else:
            gram = sample_gram(spec, pop, ts)
        # The inversion inside potential_weights is where singularity
        # actually surfaces, so it belongs under the same handler.
        return spec, gram, potential_weights(spec, pop, ts, gram)
    except SingularGramError as exc:
        raise PipelineError(EXIT_GRAM, f"singular Gram matrix: {exc}") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_analyze(cfg: RunConfig) -> int:
    pop, ts = _load_data(cfg)
    target = _target_design(cfg, pop, ts)
    spec, gram, pws = _compute_weights(cfg, pop, ts, target)
    validation = validate_population(pop, ts)
    try:
        report = solve_implicit_design(pws, options=cfg.solver_options())
    except np.linalg.LinAlgError as exc:
        raise PipelineError(EXIT_SOLVER, f"solver failure: {exc}") from None
    ident = identification_strength(pws)

    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "analyze",
        "seed": cfg.seed,
        "template": cfg.template,
        "mode": cfg.mode,
        "tolerance_profile": cfg.tolerance_profile,
        "n": pop.n,
        "periods": ts.T,
        "arms": ts.num_values,
        "validation": {"violations": list(validation.violations)},
        "solver": report.to_json_dict(),
        "identification": {
            "sigma_min": ident.population_min,
            "unconstrained_units": int(ident.unconstrained.sum()),
            "weakly_identified_units": int(ident.weakly_identified.sum()),
        },
        "point_estimate": point_estimate(pws),
    }

    if report.estimand is not None:
        est = report.estimand
        payload["estimand"] = {
            "zero_sum_gap": est.zero_sum_gap,
            "wate_mean": est.wate_mean,
            "contamination_mass": est.contamination_mass,
            "negative_weight_cells": len(est.negativity),
        }
    else:
        payload["estimand"] = None

    diag_cfg = cfg.diagnostics
    diagnostics_on = diag_cfg.get("enabled", True) and report.design is not None
    diag = None
    if diagnostics_on and ts.num_values == 2:
        try:
            diag = run_design_checklist(
                report.design,
                pop,
                bins=int(diag_cfg.get("bins", 7)),
                reset_powers=3 if diag_cfg.get("reset", True) else 1,
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise PipelineError(EXIT_DIAGNOSTICS, f"diagnostics failure: {exc}") from None
        payload["diagnostics"] = diag.to_json_dict()
    else:
        payload["diagnostics"] = None

    os.makedirs(cfg.out_dir, exist_ok=True)
    write_report(os.path.join(cfg.out_dir, "report.json"), payload)
    export_weights_csv(pws, os.path.join(cfg.out_dir, "weights.csv"))
    if report.design is not None:
        design_to_csv(report, ts, os.path.join(cfg.out_dir, "design.csv"))
    if diag is not None:
        with open(os.path.join(cfg.out_dir, "calibration.csv"), "w", encoding="utf-8") as fh:
            fh.write(calibration_csv(diag))
        with open(os.path.join(cfg.out_dir, "profiles.csv"), "w", encoding="utf-8") as fh:
            fh.write(profiles_csv(diag))
    print(f"analyze: verdict={report.verdict} n={pop.n} out={cfg.out_dir}")
    return EXIT_OK


def _estimated_design(cfg: RunConfig, pop, ts):
    """The design the estimators act on: candidate CSV or solved implicit."""
    target = _target_design(cfg, pop, ts)
    if target is not None and cfg.mode == "estimated":
        return target
    spec, gram, pws = _compute_weights(cfg, pop, ts, target)
    report = solve_implicit_design(pws, options=cfg.solver_options())
    if report.design is None:
        raise PipelineError(EXIT_SOLVER, f"no implicit design (verdict {report.verdict})")
    return report.design


def cmd_patch(cfg: RunConfig) -> int:
    pop, ts = _load_data(cfg)
    if ts.num_values != 2:
        raise PipelineError(EXIT_CONFIG, "patch requires a binary treatment")
    design = _estimated_design(cfg, pop, ts)
    policy = cfg.patch.get("policy", "imbens_rubin_recursive")
    if isinstance(policy, str) and policy.isdigit():
        policy = int(policy)
    try:
        patched = patch_design(design, pop, policy=policy)
    except ValueError as exc:
        raise PipelineError(EXIT_ESTIMATE, f"patching failed: {exc}") from None

    os.makedirs(cfg.out_dir, exist_ok=True)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "patch",
        "seed": cfg.seed,
        "policy": str(cfg.patch.get("policy", "imbens_rubin_recursive")),
        "patch": patched.to_json_dict(),
    }
    write_report(os.path.join(cfg.out_dir, "patch.json"), payload)
    p = patched.patched_probs
    with open(os.path.join(cfg.out_dir, "patched_design.csv"), "w", encoding="utf-8") as fh:
        fh.write("unit,prob_0,prob_1,bin\n")
        unit_ids = pop.unit_ids or tuple(str(i) for i in range(pop.n))
        for i in range(pop.n):
            fh.write(
                f"{unit_ids[i]},{1.0 - p[i]:.17g},{p[i]:.17g},{int(patched.assignment[i])}\n"
            )
    print(f"patch: bins={len(patched.bins)} excluded={patched.excluded.size} out={cfg.out_dir}")
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    pop, ts = _load_data(cfg)
    if ts.num_values != 2:
        raise PipelineError(EXIT_CONFIG, "estimate requires a binary treatment")
    design = _estimated_design(cfg, pop, ts)
    unit_w = (
        _load_unit_weights(cfg.unit_weights_path, pop.n)
        if cfg.unit_weights_path is not None
        else None
    )
    requests = cfg.estimators or [{"kind": "ipw"}, {"kind": "trimmed"}]
    results = []
    excluded_units: list[int] = []
    for req in requests:
        if not isinstance(req, dict) or "kind" not in req:
            raise PipelineError(EXIT_CONFIG, f"estimator request needs a 'kind': {req!r}")
        kind = req["kind"]
        try:
            if kind == "ipw":
                res = ipw_estimate(
                    design, pop, _ate_weights(pop.n, unit_w), eps=float(req.get("eps", 1e-8))
                )
                results.append({"kind": "ipw", **res.to_json_dict()})
            elif kind == "trimmed":
                res = trimmed_ate(design, pop, eps=float(req.get("eps", 0.02)))
                results.append({"kind": "trimmed", **res.to_json_dict()})
            elif kind == "patched":
                patched = patch_design(
                    design, pop, policy=req.get("policy", "imbens_rubin_recursive")
                )
                weights = _ate_weights(pop.n, unit_w)
                weights[patched.excluded] = 0.0
                res = patched_estimate(patched, pop, weights, eps=float(req.get("eps", 1e-8)))
                excluded_units = [int(i) for i in patched.excluded]
                results.append(
                    {"kind": "patched", "excluded": excluded_units, **res.to_json_dict()}
                )
            else:
                raise PipelineError(EXIT_CONFIG, f"unknown estimator kind {kind!r}")
        except (DivisionGuardError, ValueError) as exc:
            raise PipelineError(EXIT_ESTIMATE, f"estimator {kind!r} failed: {exc}") from None

    os.makedirs(cfg.out_dir, exist_ok=True)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "seed": cfg.seed,
        "estimates": results,
        "excluded_units": excluded_units,
    }
    write_report(os.path.join(cfg.out_dir, "estimates.json"), payload)
    print(f"estimate: {len(results)} estimators out={cfg.out_dir}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    sim = cfg.simulate
    if not sim:
        raise PipelineError(EXIT_CONFIG, "simulate needs a 'simulate' config block")
    os.makedirs(cfg.out_dir, exist_ok=True)
    if "scenario" in sim:
        known = {"scenario", "n_grid", "reps"}
        unknown = set(sim) - known
        if unknown:
            raise PipelineError(EXIT_CONFIG, f"unknown simulate keys: {sorted(unknown)}")
        try:
            curve = consistency_harness(
                sim["scenario"],
                [int(v) for v in sim.get("n_grid", [200, 2000])],
                int(sim.get("reps", 100)),
                seed=cfg.seed,
            )
        except ValueError as exc:
            raise PipelineError(EXIT_SIMULATE, str(exc)) from None
        payload = {
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "seed": cfg.seed,
            "curve": curve.to_json_dict(),
            "decreasing": curve.decreasing(),
        }
        write_report(os.path.join(cfg.out_dir, "simulation.json"), payload)
        print(f"simulate: scenario={sim['scenario']} decreasing={curve.decreasing()}")
        return EXIT_OK
    if "joint" in sim:
        joint = sim["joint"]
        reps = int(sim.get("reps", 1000))
        kind = joint.get("kind")
        try:
            if kind == "complete_randomization":
                jd = JointDesign(
                    kind=kind,
                    n=int(joint["n"]),
                    n_treated=int(joint["n_treated"]),
                    seed=cfg.seed,
                )
            elif kind == "independent":
                probs = np.asarray(joint["probs"], dtype=float)
                jd = JointDesign(kind=kind, design=Design(probs, kind="true"), seed=cfg.seed)
            else:
                raise PipelineError(EXIT_CONFIG, f"unknown joint design kind {kind!r}")
            draws = simulate_assignment(jd, reps)
        except (KeyError, ValueError) as exc:
            raise PipelineError(EXIT_SIMULATE, f"simulation failed: {exc}") from None
        freq = np.stack([(draws == j).mean(axis=0) for j in range(int(draws.max()) + 1)], axis=1)
        payload = {
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "seed": cfg.seed,
            "reps": reps,
            "marginal_frequencies": freq,
        }
        write_report(os.path.join(cfg.out_dir, "simulation.json"), payload)
        print(f"simulate: joint kind={kind} reps={reps}")
        return EXIT_OK
    raise PipelineError(EXIT_CONFIG, "simulate config needs 'scenario' or 'joint'")


_CATALOG_POP_OPS = {
    "angrist": catalog_ops.angrist_design,
    "saturated_interacted": catalog_ops.saturated_interacted_design,
    "kline": catalog_ops.kline_design,
}
_CATALOG_PANEL_OPS = {
    "multivalued": catalog_ops.multivalued_design,
    "twfe": catalog_ops.twfe_design,
    "unbalanced_twfe": catalog_ops.unbalanced_twfe_condition,
}


def cmd_catalog(cfg: RunConfig) -> int:
    pop, ts = _load_data(cfg)
    target = _target_design(cfg, pop, ts)
    name = cfg.catalog.get("template", cfg.template)
    extra = {k: v for k, v in cfg.catalog.items() if k != "template"}
    try:
        if name == "owfe":
            result = catalog_ops.owfe_check(ts)
        elif name == "interacted_t":
            t = extra.get("t")
            result = catalog_ops.interacted_t_design(
                pop,
                t=None if t is None else float(t),
                mode=cfg.mode,
                design=target,
                seed_design=None,
            )
        elif name == "event_study":
            result = catalog_ops.event_study_design(
                pop, ts, np.asarray(extra["path_features"], dtype=float),
                mode=cfg.mode, design=target,
            )
        elif name in _CATALOG_POP_OPS:
            result = _CATALOG_POP_OPS[name](pop, mode=cfg.mode, design=target)
        elif name in _CATALOG_PANEL_OPS:
            result = _CATALOG_PANEL_OPS[name](pop, ts, mode=cfg.mode, design=target)
        else:
            raise PipelineError(EXIT_CONFIG, f"unknown catalog template {name!r}")
    except PipelineError:
        raise
    except (KeyError, ValueError, np.linalg.LinAlgError, catalog_ops.FixedPointError) as exc:
        raise PipelineError(EXIT_SPEC, f"catalog construction failed: {exc}") from None

    os.makedirs(cfg.out_dir, exist_ok=True)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "catalog",
        "seed": cfg.seed,
        "template": name,
        "result": result.to_json_dict(),
    }
    write_report(os.path.join(cfg.out_dir, "catalog.json"), payload)
    if result.design is not None:
        p = result.design.probs
        with open(os.path.join(cfg.out_dir, "catalog_design.csv"), "w", encoding="utf-8") as fh:
            fh.write(",".join(f"prob_{j}" for j in range(p.shape[1])) + "\n")
            for row in p:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    print(f"catalog: template={name} exists={result.exists}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Bundled example data
# ---------------------------------------------------------------------------


def bundled_data_path(name: str = "synthetic_linear.csv") -> str:
    """Filesystem path of a data file shipped with the package."""
    ref = resources.files("idweights").joinpath("data", name)
    return str(ref)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idw",
        description="Implicit-design analysis of linear regression estimators",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "full pipeline: weights, implicit design, estimand, diagnostics"),
        ("patch", "discretize and recalibrate an estimated design"),
        ("estimate", "IPW / trimmed / patched point estimates"),
        ("simulate", "assignment simulation and consistency curves"),
        ("catalog", "closed-form design construction for a named template"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", help="long-format CSV data file")
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--unit-weights", dest="unit_weights", help="per-unit weight CSV")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument("--threads", type=int, help="thread cap (env IDW_THREADS as fallback)")
        p.add_argument(
            "--tolerance-profile",
            dest="tolerance_profile",
            choices=sorted(_PROFILES),
            help="numerical tolerance preset",
        )
    return parser


_COMMANDS = {
    "analyze": cmd_analyze,
    "patch": cmd_patch,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "catalog": cmd_catalog,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _apply_threads(cfg)
    try:
        return _COMMANDS[args.command](cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
