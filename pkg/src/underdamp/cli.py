"""Command-line experiment runner.

Subcommands:

    run      one trajectory (discrete method or ODE model) -> CSV + summary JSON
    sweep    a grid of runs over the momentum parameter r -> CSVs + aggregate JSON
    audit    Lyapunov monotonicity certificate for a recorded run -> audit JSON
    compare  discrete NAG vs both ODE models at matched times t = k sqrt(s)
    rates    convergence-rate certificates evaluated on an existing CSV

Configuration merges three layers, later winning: dataclass defaults, then a
JSON config file (--config, keys = ExperimentConfig field names), then
explicit flags.  The default output directory is taken from UNDERDAMP_OUT_DIR
(falling back to the working directory).  Every error path prints a single
``error: ...`` line on stderr and exits 1; a requested certificate that fails
exits 2; success exits 0.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import lyapunov as _lyapunov
from .diagnostics import (
    TrajectoryRecord,
    certify_gradient_trend,
    certify_objective_rate,
    compare_ode_nag,
    read_csv,
    write_csv,
)
from .ode import OdeConfig, OdeModel, run_model
from .optimizers import Method, MomentumParameter, RunConfig, run
from .problems import CompositeProblem, ConfigError, DivergenceError, load_problem

METHODS = ("nag", "phase", "fista", "ode-low", "ode-high")
DISCRETE_METHODS = ("nag", "phase", "fista")


@dataclass
class ExperimentConfig:
    """Everything a subcommand needs; unused fields are simply ignored."""

    problem: str = "reference-quadratic"
    method: str = "nag"
    r: float = 2.0
    s: Optional[float] = None  # None -> 1/L of the problem
    iters: int = 1000
    t_end: float = 10.0
    dt: float = 1e-3
    out: Optional[str] = None
    audit: bool = False
    allow_large_step: bool = False
    # subcommand-specific extensions
    r_list: Optional[list[float]] = None
    checkpoints: Optional[list[int]] = None
    k_max: int = 200
    input: Optional[str] = None
    kind: Optional[str] = None


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as configuration errors."""

    def error(self, message):  # noqa: A002 - argparse API
        raise ConfigError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--problem", type=str, default=None)
    common.add_argument("--method", type=str, default=None, choices=METHODS)
    common.add_argument("--r", type=float, default=None)
    common.add_argument("--s", type=float, default=None)
    common.add_argument("--iters", type=int, default=None)
    common.add_argument("--t-end", dest="t_end", type=float, default=None)
    common.add_argument("--dt", type=float, default=None)
    common.add_argument("--out", type=str, default=None)
    common.add_argument("--audit", action="store_const", const=True, default=None)
    common.add_argument(
        "--allow-large-step", dest="allow_large_step", action="store_const", const=True, default=None
    )
    common.add_argument("--config", type=str, default=None)

    parser = _Parser(prog="underdamp", description="momentum-family optimization experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one trajectory -> CSV + summary JSON")
    sweep = sub.add_parser("sweep", parents=[common], help="grid of runs over r")
    sweep.add_argument("--r-list", dest="r_list", type=float, nargs="+", default=None)
    sweep.add_argument("--checkpoints", type=int, nargs="+", default=None)
    audit_p = sub.add_parser("audit", parents=[common], help="Lyapunov certificate for a recorded run")
    audit_p.add_argument("--input", type=str, default=None)
    audit_p.add_argument("--kind", type=str, default=None, choices=_lyapunov.AUDIT_KINDS)
    compare = sub.add_parser("compare", parents=[common], help="NAG vs ODE models at t = k sqrt(s)")
    compare.add_argument("--k-max", dest="k_max", type=int, default=None)
    rates = sub.add_parser("rates", parents=[common], help="rate certificates on an existing CSV")
    rates.add_argument("--input", type=str, default=None)
    return parser


def _merge_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, value in file_values.items():
            if key not in _CONFIG_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        setattr(cfg, key, value)
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; expected one of {METHODS}")
    return cfg


def _out_dir() -> Path:
    return Path(os.environ.get("UNDERDAMP_OUT_DIR") or ".")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _resolve_step(cfg: ExperimentConfig, problem: CompositeProblem) -> float:
    s = cfg.s if cfg.s is not None else 1.0 / problem.smooth.lipschitz
    if not (np.isfinite(s) and s > 0):
        raise ConfigError(f"step size must be a positive real, got {s}")
    if s * problem.smooth.lipschitz > 1.0 + 1e-12 and not cfg.allow_large_step:
        raise ConfigError(
            f"step size {s:g} exceeds 1/L = {1.0 / problem.smooth.lipschitz:g}; "
            "pass --allow-large-step to override"
        )
    return s


def _audit_kind(method: str, gamma: float, explicit: Optional[str]) -> str:
    if explicit is not None:
        if explicit not in _lyapunov.AUDIT_KINDS:
            raise ConfigError(f"unknown Lyapunov kind {explicit!r}")
        return explicit
    if method == "ode-high":
        return "continuous"
    if method == "ode-low":
        raise ConfigError("no Lyapunov audit is defined for the low-resolution model")
    if gamma > 1.0:
        raise ConfigError(f"no Lyapunov function is defined for gamma = {gamma:g} > 1 (r > 2)")
    family = "fista" if method == "fista" else "nag"
    return f"critical-{family}" if gamma == 0.0 else family


def _threshold_value(method: str, gamma: float, s: float, iters: int, t_end: float):
    """K_0 for discrete runs, t_0 for the high-resolution model, else None."""
    if method == "ode-low":
        return None
    if method == "ode-high":
        if gamma == 0.0:
            return 0.0
        if gamma > 1.0:
            return None
        return _lyapunov.continuous_threshold(gamma, s, horizon=t_end).t0
    if gamma == 0.0:
        return 0
    if gamma == 1.0:
        return 3
    if gamma > 1.0:
        return None
    return _lyapunov.discrete_threshold(gamma, horizon=max(iters, 1000)).k0


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_run(cfg: ExperimentConfig) -> int:
    problem = load_problem(cfg.problem)
    momentum = MomentumParameter(r=cfg.r)
    gamma = momentum.gamma
    s = _resolve_step(cfg, problem)

    if cfg.method in DISCRETE_METHODS:
        if cfg.iters < 0:
            raise ConfigError(f"iters must be nonnegative, got {cfg.iters}")
        result = run(
            RunConfig(
                momentum=momentum,
                step=s,
                max_iter=cfg.iters,
                problem=cfg.problem,
                record_every=1,
                allow_large_step=cfg.allow_large_step,
                lyapunov="auto" if gamma <= 1.0 else None,
            ),
            cfg.method,
        )
        records = result.records
        default_name = f"run-{cfg.method}-r{cfg.r:g}-s{s:g}.csv"
    else:
        model = OdeModel.HIGH if cfg.method == "ode-high" else OdeModel.LOW
        ode_cfg = OdeConfig(model=model, momentum=momentum, s=s, dt=cfg.dt, t_end=cfg.t_end)
        result = run_model(ode_cfg, problem=problem, problem_id=cfg.problem)
        records = result.records
        default_name = f"run-{cfg.method}-r{cfg.r:g}-s{s:g}.csv"

    csv_path = Path(cfg.out) if cfg.out else _out_dir() / default_name
    write_csv(records, csv_path)

    certificates = []
    exit_code = 0
    if cfg.audit:
        kind = _audit_kind(cfg.method, gamma, cfg.kind)
        trajectory = result.states if cfg.method.startswith("ode-") else records
        report = _lyapunov.audit(trajectory, kind, problem=problem, gamma=gamma, s=s)
        certificates.append(report.to_json_dict())
        print(report.summary_line())
        _write_json(csv_path.with_suffix(".audit.json"), report.to_json_dict())
        if not report.certified:
            exit_code = 2

    summary = {
        "problem": cfg.problem,
        "method": cfg.method,
        "r": cfg.r,
        "gamma": gamma,
        "s": s,
        "final_gap": records[-1].gap,
        "final_min_grad_sq": records[-1].min_grad_sq,
        "K0_or_t0": _threshold_value(cfg.method, gamma, s, cfg.iters, cfg.t_end),
        "certificates": certificates,
        "csv": str(csv_path),
        "large_step_override": bool(cfg.allow_large_step and s * problem.smooth.lipschitz > 1.0 + 1e-12),
    }
    _write_json(csv_path.with_suffix(".summary.json"), summary)
    print(f"wrote {csv_path} ({len(records)} rows)")
    return exit_code


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if not cfg.r_list:
        raise ConfigError("sweep needs a nonempty r list (--r-list)")
    if cfg.method not in DISCRETE_METHODS:
        raise ConfigError(f"sweep supports discrete methods only, got {cfg.method!r}")
    seen: list[float] = []
    for r in cfg.r_list:
        if r in seen:
            print(f"warning: duplicate r = {r:g} deduplicated", file=sys.stderr)
        else:
            seen.append(r)

    problem = load_problem(cfg.problem)
    s = _resolve_step(cfg, problem)
    out_dir = Path(cfg.out) if cfg.out else _out_dir() / "sweep"
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.checkpoints:
        checkpoints = sorted({int(k) for k in cfg.checkpoints if 0 <= int(k) <= cfg.iters})
        if not checkpoints:
            raise ConfigError("no checkpoint falls inside [0, iters]")
    else:
        checkpoints = sorted({10**p for p in range(1, 7) if 10**p < cfg.iters} | {cfg.iters})

    aggregate: dict = {
        "problem": cfg.problem,
        "method": cfg.method,
        "s": s,
        "iters": cfg.iters,
        "checkpoints": checkpoints,
        "runs": {},
    }
    for r in seen:
        result = run(
            RunConfig(
                momentum=MomentumParameter(r=r),
                step=s,
                max_iter=cfg.iters,
                problem=cfg.problem,
                record_every=1,
                allow_large_step=cfg.allow_large_step,
                lyapunov="auto" if (r + 1.0) / 3.0 <= 1.0 else None,
            ),
            cfg.method,
        )
        name = f"sweep-{cfg.method}-r{r:g}.csv"
        write_csv(result.records, out_dir / name)
        by_k = {int(rec.k_or_t): rec for rec in result.records}
        aggregate["runs"][f"{r:g}"] = {
            "csv": name,
            "gap_at_k": {str(k): by_k[k].gap for k in checkpoints if k in by_k},
            "min_grad_sq_at_k": {str(k): by_k[k].min_grad_sq for k in checkpoints if k in by_k},
        }
    _write_json(out_dir / "sweep.json", aggregate)
    print(f"wrote {len(seen)} runs to {out_dir}")
    return 0


def cmd_audit(cfg: ExperimentConfig) -> int:
    if not cfg.input:
        raise ConfigError("audit needs --input pointing at a recorded run CSV")
    in_path = Path(cfg.input)
    records = read_csv(in_path)
    if not records:
        raise ConfigError(f"{in_path} holds no data rows")
    problem = load_problem(cfg.problem)
    momentum = MomentumParameter(r=cfg.r)
    gamma = momentum.gamma
    s = _resolve_step(cfg, problem)
    kind = _audit_kind(cfg.method, gamma, cfg.kind)

    if all(rec.lyap is None for rec in records):
        # Lyapunov history was not recorded; reproduce the run at full cadence
        last = records[-1].k_or_t
        if kind == "continuous":
            ode_cfg = OdeConfig(
                model=OdeModel.HIGH, momentum=momentum, s=s, dt=cfg.dt, t_end=float(last)
            )
            trajectory: Sequence = run_model(ode_cfg, problem=problem, problem_id=cfg.problem).states
        else:
            result = run(
                RunConfig(
                    momentum=momentum,
                    step=s,
                    max_iter=int(last),
                    problem=cfg.problem,
                    record_every=1,
                    allow_large_step=cfg.allow_large_step,
                    lyapunov="auto",
                ),
                cfg.method,
            )
            trajectory = result.records
    else:
        trajectory = records

    report = _lyapunov.audit(trajectory, kind, problem=problem, gamma=gamma, s=s)
    out_path = Path(cfg.out) if cfg.out else in_path.with_suffix(".audit.json")
    _write_json(out_path, report.to_json_dict())
    print(report.summary_line())
    return 0 if report.certified else 2


def cmd_compare(cfg: ExperimentConfig) -> int:
    if cfg.k_max < 1:
        raise ConfigError(f"k_max must be a positive integer, got {cfg.k_max}")
    problem = load_problem(cfg.problem)
    momentum = MomentumParameter(r=cfg.r)
    gamma = momentum.gamma
    s = _resolve_step(cfg, problem)
    sqrt_s = math.sqrt(s)
    t_end = cfg.k_max * sqrt_s + 2.0 * cfg.dt  # margin so every t_k is interpolable

    nag = run(
        RunConfig(
            momentum=momentum,
            step=s,
            max_iter=cfg.k_max,
            problem=cfg.problem,
            record_every=1,
            allow_large_step=cfg.allow_large_step,
            lyapunov="auto" if gamma <= 1.0 else None,
        ),
        "nag",
    )
    low = run_model(
        OdeConfig(model=OdeModel.LOW, momentum=momentum, s=s, dt=cfg.dt, t_end=t_end),
        problem=problem,
        problem_id=cfg.problem,
    )
    high = run_model(
        OdeConfig(model=OdeModel.HIGH, momentum=momentum, s=s, dt=cfg.dt, t_end=t_end),
        problem=problem,
        problem_id=cfg.problem,
    )
    low_report = compare_ode_nag(nag, low, k_max=cfg.k_max)
    high_report = compare_ode_nag(nag, high, k_max=cfg.k_max)

    out_dir = Path(cfg.out) if cfg.out else _out_dir() / "compare"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(nag.records, out_dir / "nag.csv")
    write_csv(low.records, out_dir / "ode-low.csv")
    write_csv(high.records, out_dir / "ode-high.csv")
    write_csv(_aligned_records(low, low_report, gamma), out_dir / "ode-low-aligned.csv")
    write_csv(_aligned_records(high, high_report, gamma), out_dir / "ode-high-aligned.csv")

    payload = {
        "problem": cfg.problem,
        "r": cfg.r,
        "gamma": gamma,
        "s": s,
        "dt": cfg.dt,
        "k_max": cfg.k_max,
        "sup_deviation_low": low_report.sup_deviation,
        "sup_deviation_high": high_report.sup_deviation,
        "high_closer": bool(high_report.sup_deviation < low_report.sup_deviation),
        "files": {
            "nag": "nag.csv",
            "ode_low": "ode-low.csv",
            "ode_high": "ode-high.csv",
            "ode_low_aligned": "ode-low-aligned.csv",
            "ode_high_aligned": "ode-high-aligned.csv",
        },
    }
    _write_json(out_dir / "compare.json", payload)
    print(
        f"sup deviation from NAG over k <= {cfg.k_max}: "
        f"high-resolution {high_report.sup_deviation:.6g}, low-resolution {low_report.sup_deviation:.6g}"
    )
    return 0


def _aligned_records(ode_result, report, gamma: float) -> list[TrajectoryRecord]:
    """Re-express an ODE gap/gradient curve on the discrete index grid k.

    Values are linearly interpolated at t_k = k sqrt(s); the normalized
    columns keep the continuous-time convention (powers of t_k), and
    min_grad_sq is the running minimum of the interpolated samples.
    """
    ts = np.array([rec.k_or_t for rec in ode_result.records])
    grads = np.array([rec.grad_sq for rec in ode_result.records])
    grad_at_k = np.interp(report.t_values, ts, grads)
    min_grad = np.minimum.accumulate(grad_at_k)
    out = []
    for k, t, gap, g_sq, mg in zip(
        report.k_values, report.t_values, report.ode_gaps, grad_at_k, min_grad
    ):
        out.append(
            TrajectoryRecord(
                k_or_t=float(k),
                gap=float(gap),
                grad_sq=float(g_sq),
                min_grad_sq=float(mg),
                lyap=None,
                norm_gap=float(t) ** (2.0 * gamma) * float(gap),
                norm_grad=float(t) ** (2.0 * gamma + 1.0) * float(mg),
            )
        )
    return out


def cmd_rates(cfg: ExperimentConfig) -> int:
    if not cfg.input:
        raise ConfigError("rates needs --input pointing at a recorded run CSV")
    in_path = Path(cfg.input)
    records = read_csv(in_path)
    if not records:
        raise ConfigError(f"{in_path} holds no data rows")
    problem = load_problem(cfg.problem)
    momentum = MomentumParameter(r=cfg.r)
    gamma = momentum.gamma
    if gamma > 1.0:
        raise ConfigError(f"rate certificates cover gamma <= 1, got gamma = {gamma:g} (r = {cfg.r:g})")
    s = _resolve_step(cfg, problem)
    variant = "fista" if cfg.method == "fista" else "nag"

    if gamma == 0.0:
        k0 = 1
    elif gamma == 1.0:
        k0 = 3
    else:
        k0 = _lyapunov.discrete_threshold(gamma, horizon=int(records[-1].k_or_t)).k0
    anchor = next((rec for rec in records if rec.k_or_t >= k0 and rec.lyap is not None), None)
    if anchor is None:
        raise ConfigError(
            f"{in_path} carries no Lyapunov values at k >= {k0}; re-record the run at full cadence"
        )
    anchor_k = int(anchor.k_or_t)

    objective = certify_objective_rate(records, anchor_k, anchor.lyap, gamma, s, variant=variant)
    trend = certify_gradient_trend(records, gamma, s, anchor_k)
    payload = {
        "input": str(in_path),
        "gamma": gamma,
        "s": s,
        "variant": variant,
        "k0": anchor_k,
        "objective": {"passed": objective.passed, "worst_margin": objective.worst_margin},
        "gradient_trend": {"passed": trend.passed, "worst_margin": trend.worst_margin},
    }
    out_path = Path(cfg.out) if cfg.out else in_path.with_suffix(".rates.json")
    _write_json(out_path, payload)
    print(objective.summary_line())
    print(trend.summary_line())
    return 0 if objective.passed and trend.passed else 2


_DISPATCH = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "audit": cmd_audit,
    "compare": cmd_compare,
    "rates": cmd_rates,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = _merge_config(args)
        return _DISPATCH[args.command](cfg)
    except (ConfigError, DivergenceError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
