"""Command-line driver: ``pilotgeom <command> [--config file.json] [--seed N] ...``.

Every output file starts with ``#`` comment rows holding the resolved
configuration, the seed and the package version, followed by a plain CSV
table with 9 significant digits.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .area_models import area_distribution, moments_cc, moments_ce
from .coverage_se import (
    NetworkConfig,
    analytical_model,
    avg_cell_se,
    avg_user_se,
    cell_se_terms,
    coverage,
    db_to_linear,
)
from .geometry import CC, CE, write_cells_csv
from .interference import pcf_cc, pcf_ce, radius_scaled
from .numerics import RngStream
from .pilots import PilotPlan
from .simulate import FPR, REUSE1, SimulationSettings, cell_areas, ks_kl, run_experiment, sample_cells

COMMANDS = ("areas", "pcf", "coverage", "se", "simulate", "validate", "sweep")

DEFAULTS = {
    "lambda0": 4e-6,
    "alpha": 3.7,
    "T_c": 200,
    "B": 100,
    "c2": 1.25,
    "beta_f": 3,
}

CONFIG_KEYS = {
    "lambda0", "lambda_u", "lambda_u_over_lambda0", "alpha", "c2", "kappa", "R_c",
    "B", "B_C", "B_E", "beta_f", "T_c", "partition_rule", "group_inclusion", "utilization_override",
    "ce_group_mode", "tagging", "half_width", "guard_band",
    "thresholds_db", "radii", "n_cells", "sweep",
}  # fmt: skip

SWEEP_AXES = ("kappa", "bc_over_b", "lambda_u_over_lambda0")

# printed goodness-of-fit values at lambda0 = 4e-6 (KS, KL) per R_c in meters
TABLE1 = {
    CC: {100: (0.0230, 0.0125), 200: (0.0238, 0.0095), 250: (0.0123, 0.0055), 300: (0.0104, 0.0032), 500: (0.002, 0.0007)},
    CE: {100: (0.0164, 0.0098), 200: (0.0107, 0.0087), 250: (0.0233, 0.0160), 300: (0.0347, 0.0208)},
}
TABLE1_TOL = 0.01


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    command: str
    config: NetworkConfig
    settings: SimulationSettings
    n_realizations: int = 100
    seed: int = 1
    output_dir: Path = Path(".")
    mode: str = FPR
    sweep_axis: tuple | None = None
    thresholds_db: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
    radii: tuple = (100.0, 200.0, 250.0, 300.0, 500.0)
    n_cells: int = 10_000
    raw: dict = field(default_factory=dict)


def _num(raw, key, kind=float, positive=False, nonneg=False):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if kind is int and float(v) != int(v):
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    v = kind(v)
    if positive and not v > 0:
        raise ConfigError(f"{key}: must be > 0, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"{key}: must be >= 0, got {v}")
    return v


def build_config(raw: dict) -> tuple[NetworkConfig, SimulationSettings, dict]:
    """Validated model config and simulation settings from a JSON object."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    r = {**DEFAULTS, **raw}
    lambda0 = _num(r, "lambda0", positive=True)
    c2 = _num(r, "c2", positive=True)
    alpha = _num(r, "alpha")
    if not alpha > 1:
        raise ConfigError(f"alpha: must be > 1 so that 2*alpha > 2, got {alpha}")

    if "kappa" in r and "R_c" in r:
        kappa = _num(r, "kappa", nonneg=True)
        R_c = _num(r, "R_c", nonneg=True)
        implied = radius_scaled(kappa, c2) / math.sqrt(lambda0)
        if abs(implied - R_c) > 1e-9 * max(abs(R_c), abs(implied)):
            raise ConfigError(f"kappa and R_c disagree: kappa={kappa} implies R_c={implied!r}, got R_c={R_c!r}")
    elif "R_c" in r:
        kappa = NetworkConfig.kappa_from_radius(_num(r, "R_c", nonneg=True), lambda0, c2)
    else:
        kappa = _num(r, "kappa", nonneg=True) if "kappa" in r else 0.6

    if "lambda_u" in r and "lambda_u_over_lambda0" in r:
        raise ConfigError("give either lambda_u or lambda_u_over_lambda0, not both")
    if "lambda_u" in r:
        lambda_u = _num(r, "lambda_u", positive=True)
    else:
        lambda_u = lambda0 * (_num(r, "lambda_u_over_lambda0", positive=True) if "lambda_u_over_lambda0" in r else 150.0)

    B = _num(r, "B", int, nonneg=True)
    beta_f = _num(r, "beta_f", int)
    T_c = _num(r, "T_c", int, nonneg=True)
    if beta_f < 1:
        raise ConfigError(f"beta_f: must be >= 1, got {beta_f}")
    rule = r.get("partition_rule", False)
    if not isinstance(rule, bool):
        raise ConfigError("partition_rule: expected true/false")
    try:
        if rule:
            if "B_C" in r or "B_E" in r:
                raise ConfigError("partition_rule cannot be combined with explicit B_C/B_E")
            plan = PilotPlan.from_rule(kappa, B=B, beta_f=beta_f, T_c=T_c)
        else:
            B_C = _num(r, "B_C", int, nonneg=True) if "B_C" in r else None
            B_E = _num(r, "B_E", int, nonneg=True) if "B_E" in r else None
            if B_C is None and B_E is None:
                if (B, beta_f) != (100, 3):
                    raise ConfigError("B_C: required (or partition_rule) when B or beta_f differ from the defaults")
                B_C, B_E = 58, 14
            elif B_C is None:
                B_C = B - beta_f * B_E
            elif B_E is None:
                if (B - B_C) % beta_f:
                    raise ConfigError(f"B_C: B - B_C = {B - B_C} is not divisible by beta_f = {beta_f}")
                B_E = (B - B_C) // beta_f
            plan = PilotPlan(B=B, B_C=B_C, B_E=B_E, beta_f=beta_f, T_c=T_c)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"B_C/B_E/beta_f/B/T_c: {exc}") from exc

    group_inclusion = _num(r, "group_inclusion") if "group_inclusion" in r else 1.0
    if not 0 <= group_inclusion <= 1:
        raise ConfigError(f"group_inclusion: must lie in [0, 1], got {group_inclusion}")
    override = r.get("utilization_override")
    if override is not None:
        if (
            not isinstance(override, list)
            or len(override) != 2
            or not all(isinstance(u, (int, float)) and 0 <= u <= 1 for u in override)
        ):
            raise ConfigError("utilization_override: expected [cc, ce] probabilities")
        override = tuple(float(u) for u in override)
    config = NetworkConfig(
        lambda0=lambda0,
        lambda_u=lambda_u,
        alpha=alpha,
        c2=c2,
        kappa=kappa,
        plan=plan,
        group_inclusion=group_inclusion,
        utilization_override=override,
    )
    try:
        settings = SimulationSettings(
            half_width=float(r.get("half_width", 8.0)),
            guard_band=float(r.get("guard_band", 3.0)),
            ce_group_mode=r.get("ce_group_mode", "random"),
            tagging=r.get("tagging", "center"),
        )
    except ValueError as exc:
        raise ConfigError(f"ce_group_mode/tagging/half_width/guard_band: {exc}") from exc
    return config, settings, r


def parse_config(path, command: str = "simulate", **overrides) -> ExperimentSpec:
    """Read a JSON config file (empty file = all defaults) into a validated spec."""
    text = Path(path).read_text() if path is not None else ""
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return spec_from_dict(raw, command, **overrides)


def spec_from_dict(raw: dict, command: str = "simulate", **overrides) -> ExperimentSpec:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    config, settings, r = build_config(raw)
    sweep = None
    if "sweep" in r:
        s = r["sweep"]
        if not isinstance(s, dict) or set(s) - {"axis", "grid"} or "axis" not in s:
            raise ConfigError('sweep: expected {"axis": name, "grid": [values]}')
        if s["axis"] not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis: must be one of {SWEEP_AXES}")
        grid = s.get("grid")
        if not isinstance(grid, list) or not grid:
            raise ConfigError("sweep.grid: must be a nonempty list")
        sweep = (s["axis"], tuple(float(g) for g in grid))
    thresholds = tuple(float(t) for t in r.get("thresholds_db", (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0)))
    radii = tuple(float(x) for x in r.get("radii", (100.0, 200.0, 250.0, 300.0, 500.0)))
    n_cells = int(r.get("n_cells", 10_000))
    if n_cells < 1000:
        raise ConfigError("n_cells: must be >= 1000")
    kw = dict(
        command=command,
        config=config,
        settings=settings,
        sweep_axis=sweep,
        thresholds_db=thresholds,
        radii=radii,
        n_cells=n_cells,
        raw=raw,
    )
    kw.update({k: v for k, v in overrides.items() if v is not None})
    spec = ExperimentSpec(**kw)
    if spec.n_realizations < 1:
        raise ConfigError("realizations: must be >= 1")
    if spec.mode not in (FPR, REUSE1):
        raise ConfigError("mode: must be fpr or reuse1")
    return spec


# ---------------------------------------------------------------------------
# output helpers


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.9g}"


def _echo(spec: ExperimentSpec) -> str:
    c = asdict(spec.config)
    c["R_c"] = spec.config.R_c
    doc = {"config": c, "settings": asdict(spec.settings), "mode": spec.mode, "realizations": spec.n_realizations}
    return json.dumps(_fmt_tree(doc), sort_keys=True, separators=(",", ":"))


def _fmt_tree(obj):
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else fmt(obj)
    if isinstance(obj, dict):
        return {k: _fmt_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fmt_tree(v) for v in obj]
    return obj


def header_lines(spec: ExperimentSpec, extra=()) -> list:
    return [f"config: {_echo(spec)}", f"seed: {spec.seed}", f"version: pilotgeom {__version__}", *extra]


def write_table(path: Path, spec: ExperimentSpec, columns, rows, extra_header=()) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="ascii") as fh:
        for line in header_lines(spec, extra_header):
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def out_name(spec: ExperimentSpec, experiment: str, ext: str = "csv") -> Path:
    return spec.output_dir / f"{experiment}_{fmt(spec.config.kappa)}_{spec.seed}.{ext}"


# ---------------------------------------------------------------------------
# commands


def _stream(spec: ExperimentSpec, salt: int) -> RngStream:
    return RngStream(spec.seed, salt)


def _area_rows(samples, dist, n_points=201):
    x_hi = float(np.max(samples)) if len(samples) else 1.0
    x = np.linspace(0.0, x_hi, n_points)
    srt = np.sort(samples)
    emp = np.searchsorted(srt, x, side="right") / len(srt)
    return [(xi, mi, ei) for xi, mi, ei in zip(x, dist.cdf(x), emp)]


def cmd_areas(spec: ExperimentSpec) -> tuple[int, list]:
    c = spec.config
    polys = sample_cells(c.lambda0, spec.n_cells, _stream(spec, 1))
    cells = cell_areas(polys, c.R_c)
    written = []
    p = out_name(spec, "cells")
    write_cells_csv(p, cells, header_lines(spec))
    written.append(p)
    for kind in (CC, CE):
        samples = np.array([x.cc_area if kind == CC else x.ce_area for x in cells])
        try:
            dist = area_distribution(kind, c.lambda0, c.R_c)
        except ValueError as exc:
            print(f"areas: no {kind} model at R_c={c.R_c:.6g}: {exc}", file=sys.stderr)
            continue
        ks, kl = ks_kl(samples, dist)
        rows = _area_rows(samples, dist)
        p = out_name(spec, f"areas_{kind.lower()}")
        write_table(p, spec, ("x", "model_cdf", "empirical_cdf"), rows, [f"ks: {fmt(ks)}", f"kl: {fmt(kl)}"])
        written.append(p)
    return 0, written


def cmd_pcf(spec: ExperimentSpec) -> tuple[int, list]:
    c = spec.config
    summary = run_experiment(c, FPR, spec.n_realizations, _stream(spec, 2), spec.settings)
    written = []
    for kind in (CC, CE):
        emp = summary.pcf.get(kind)
        if emp is None:
            continue
        r = emp.r_mid
        model = pcf_cc(r, c.kappa, c.c2) if kind == CC else pcf_ce(r, c.kappa, c.c2, 1.0 - analytical_model(c).p_E3)
        rows = list(zip(r, model, emp.pcf, emp.stderr))
        p = out_name(spec, f"pcf_{kind.lower()}")
        write_table(p, spec, ("r_scaled", "model_pcf", "empirical_pcf", "empirical_stderr"), rows)
        written.append(p)
    return 0, written


def _coverage_tables(spec, summary, prefix):
    c = spec.config
    t_db = np.asarray(spec.thresholds_db)
    T = db_to_linear(t_db)
    written = []
    for kind in (CC, CE):
        if c.plan.pool_size(kind) == 0:
            continue
        ana = coverage(kind, T, c) if spec.mode == FPR else np.full(len(T), np.nan)
        if summary is not None and len(summary.sinr[kind]):
            sim, se = summary.coverage(kind, T)
        else:
            sim = se = np.full(len(T), np.nan)
        p = out_name(spec, f"{prefix}_{kind.lower()}")
        write_table(p, spec, ("threshold_db", "analytical", "simulated", "sim_stderr"), zip(t_db, ana, sim, se))
        written.append(p)
    return written


def cmd_coverage(spec: ExperimentSpec) -> tuple[int, list]:
    summary = run_experiment(spec.config, spec.mode, spec.n_realizations, _stream(spec, 3), spec.settings)
    return 0, _coverage_tables(spec, summary, "coverage")


def cmd_se(spec: ExperimentSpec) -> tuple[int, list]:
    c = spec.config
    rows = []
    if spec.mode == FPR:
        rows.append(("analytical_fpr", avg_user_se(CC, c), avg_user_se(CE, c), avg_cell_se(c), "nan", "nan", "nan"))
    summary = run_experiment(c, spec.mode, spec.n_realizations, _stream(spec, 4), spec.settings)
    cc, cc_se = summary.mean_user_se(CC) if len(summary.user_se[CC]) else (math.nan, math.nan)
    ce, ce_se = summary.mean_user_se(CE) if len(summary.user_se[CE]) else (math.nan, math.nan)
    cell, cell_se = summary.mean_cell_se()
    rows.append((f"simulated_{spec.mode}", cc, ce, cell, cc_se, ce_se, cell_se))
    cols = ("knob", "cc_user_se", "ce_user_se", "cell_se", "cc_user_se_stderr", "ce_user_se_stderr", "cell_se_stderr")
    return 0, [write_table(out_name(spec, "se"), spec, cols, rows)]


def cmd_simulate(spec: ExperimentSpec) -> tuple[int, list]:
    summary = run_experiment(spec.config, spec.mode, spec.n_realizations, _stream(spec, 5), spec.settings)
    p = out_name(spec, "simulate", "json")
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(summary.to_json() + "\n")
    return 0, [p, *_coverage_tables(spec, summary, "simulate_coverage")]


@dataclass
class Check:
    name: str
    value: float
    target: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and abs(self.value - self.target) <= self.tolerance)


def validation_checks(spec: ExperimentSpec) -> list:
    """Paired analytical / Monte Carlo checks behind the ``validate`` command."""
    c = spec.config
    checks = []
    polys = sample_cells(c.lambda0, spec.n_cells, _stream(spec, 6))
    for R in spec.radii:
        cells = cell_areas(polys, R)
        m1c, _ = moments_cc(c.lambda0, R)
        m1e, _ = moments_ce(c.lambda0, R)
        cc = np.array([x.cc_area for x in cells])
        ce = np.array([x.ce_area for x in cells])
        checks.append(Check(f"mean_cc_area_rel_err@R_c={fmt(R)}", cc.mean() / m1c - 1.0, 0.0, 0.01))
        checks.append(Check(f"mean_ce_area_rel_err@R_c={fmt(R)}", ce.mean() / m1e - 1.0, 0.0, 0.01))
        for kind, samples in ((CC, cc), (CE, ce)):
            target = TABLE1[kind].get(int(round(R)))
            if target is None:
                continue
            dist = area_distribution(kind, c.lambda0, R)
            ks, kl = ks_kl(samples, dist)
            checks.append(Check(f"ks_{kind.lower()}@R_c={fmt(R)}", ks, target[0], TABLE1_TOL))
            checks.append(Check(f"kl_{kind.lower()}@R_c={fmt(R)}", kl, target[1], TABLE1_TOL))
    # coverage at the configured kappa, with the CE group mode paired to group_inclusion
    settings = spec.settings
    paired = c.with_(group_inclusion=1.0 if settings.ce_group_mode == "same_set" else 1.0 / c.plan.beta_f)
    summary = run_experiment(paired, FPR, spec.n_realizations, _stream(spec, 7), settings)
    T = db_to_linear(spec.thresholds_db)
    for kind in (CC, CE):
        if not len(summary.sinr[kind]):
            continue
        sim, _ = summary.coverage(kind, T)
        ana = coverage(kind, T, paired)
        for t_db, s, a in zip(spec.thresholds_db, sim, ana):
            checks.append(Check(f"coverage_{kind.lower()}@{fmt(t_db)}dB", s, a, 0.03))
    return checks


def cmd_validate(spec: ExperimentSpec) -> tuple[int, list]:
    checks = validation_checks(spec)
    rows = [(ch.name, ch.value, ch.target, ch.tolerance, ch.passed) for ch in checks]
    p = write_table(out_name(spec, "validate"), spec, ("check", "value", "target", "tolerance", "pass"), rows)
    failed = [ch.name for ch in checks if not ch.passed]
    for ch in checks:
        print(f"{'PASS' if ch.passed else 'FAIL'} {ch.name}: {fmt(ch.value)} (target {fmt(ch.target)} +- {fmt(ch.tolerance)})")
    return (1 if failed else 0), [p]


def _sweep_row(config: NetworkConfig, spec: ExperimentSpec, index: int):
    rule = -math.expm1(-config.kappa**2)
    bc = config.plan.B_C / config.plan.B
    if spec.mode == FPR:
        cc, ce = avg_user_se(CC, config), avg_user_se(CE, config)
        cell = sum(cell_se_terms(config))
    else:
        s = run_experiment(config, REUSE1, spec.n_realizations, RngStream(spec.seed, 1000 + index), spec.settings)
        cc = s.mean_user_se(CC)[0] if len(s.user_se[CC]) else math.nan
        ce = s.mean_user_se(CE)[0] if len(s.user_se[CE]) else math.nan
        cell = s.mean_cell_se()[0]
    return (config.kappa, bc, cc, ce, cell, rule)


def cmd_sweep(spec: ExperimentSpec) -> tuple[int, list]:
    c = spec.config
    axis, grid = spec.sweep_axis or ("kappa", tuple(np.round(np.arange(0.4, 2.0001, 0.2), 10)))
    rows, status = [], 0
    for i, g in enumerate(grid):
        try:
            if axis == "kappa":
                cfg = c.with_(kappa=g, plan=PilotPlan.from_rule(g, c.plan.B, c.plan.beta_f, c.plan.T_c))
            elif axis == "bc_over_b":
                B_C = int(round(g * c.plan.B))
                B_E, rem = divmod(c.plan.B - B_C, c.plan.beta_f)
                if rem:
                    raise ValueError(f"B_C={B_C} leaves {c.plan.B - B_C} CE pilots, not divisible by beta_f")
                cfg = c.with_(plan=PilotPlan(c.plan.B, B_C, B_E, c.plan.beta_f, c.plan.T_c))
            else:
                cfg = c.with_(lambda_u=g * c.lambda0)
            rows.append(_sweep_row(cfg, spec, i))
        except ValueError as exc:
            print(f"sweep: {axis}={g}: {exc}", file=sys.stderr)
            status = 1
    cols = ("kappa", "bc_over_b", "cc_user_se", "ce_user_se", "cell_se", "rule_bc_over_b")
    p = spec.output_dir / f"sweep_{axis}_{spec.seed}.csv"
    return status, [write_table(p, spec, cols, rows, [f"axis: {axis}"])]


HANDLERS = {
    "areas": cmd_areas,
    "pcf": cmd_pcf,
    "coverage": cmd_coverage,
    "se": cmd_se,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
}


def run(spec: ExperimentSpec) -> int:
    status, written = HANDLERS[spec.command](spec)
    for p in written:
        print(p)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilotgeom", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=None, help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--realizations", type=int, default=100)
    parser.add_argument("--out", type=Path, default=Path("."))
    parser.add_argument("--mode", choices=(FPR, REUSE1), default=FPR)
    parser.add_argument("--version", action="version", version=f"pilotgeom {__version__}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = parse_config(
            args.config,
            args.command,
            seed=args.seed,
            n_realizations=args.realizations,
            output_dir=args.out,
            mode=args.mode,
        )
    except (ConfigError, OSError) as exc:
        print(f"pilotgeom: config error: {exc}", file=sys.stderr)
        return 2
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
