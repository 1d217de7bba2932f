"""Trajectory records, CSV serialization, certificates, and comparisons.

The record schema is the package's main external interface: every run (discrete
or ODE) serializes to the same seven CSV columns::

    k_or_t, gap, grad_sq, min_grad_sq, lyap, norm_gap, norm_grad

* ``gap``          objective suboptimality at the step's evaluation point
                   (f(y_k) - f* for the gradient family, Phi(x_k) - Phi* for
                   proximal runs, model-appropriate point for ODE rows),
* ``grad_sq``      squared norm of the driving (sub)gradient at y_k,
* ``min_grad_sq``  running minimum of ``grad_sq`` over all steps so far,
* ``lyap``         Lyapunov value when requested/defined, else empty,
* ``norm_gap``     s^gamma (k+1)^(2 gamma) gap          (discrete rows)
                   t^(2 gamma) gap                      (ODE rows),
* ``norm_grad``    s^(gamma+1) k^(2 gamma + 1) min_grad_sq   (discrete rows)
                   t^(2 gamma + 1) min_grad_sq              (ODE rows).

The normalized columns are flat or decaying exactly when the corresponding
inverse-polynomial convergence rates hold, which is what the certificates in
this module check.  Floats are serialized with 17 significant digits so CSVs
round-trip bit-exactly and identical configurations produce identical bytes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .problems import ConfigError

Array = np.ndarray

CSV_COLUMNS = ("k_or_t", "gap", "grad_sq", "min_grad_sq", "lyap", "norm_gap", "norm_grad")

OBJECTIVE_RATE_TOL = 1e-10
GRADIENT_TREND_FACTOR = 2.0


@dataclass(frozen=True)
class TrajectoryRecord:
    """One serialized step of a discrete run (k_or_t = k) or ODE path (= t)."""

    k_or_t: float
    gap: float
    grad_sq: float
    min_grad_sq: float
    lyap: Optional[float]
    norm_gap: float
    norm_grad: float


def normalized_gap(gamma: float, s: float, k: float, gap: float) -> float:
    """s^gamma (k+1)^(2 gamma) * gap — flat iff the objective rate is tight."""
    return s**gamma * (k + 1.0) ** (2.0 * gamma) * gap


def normalized_grad(gamma: float, s: float, k: float, min_grad_sq: float) -> float:
    """s^(gamma+1) k^(2 gamma + 1) * min_grad_sq — vanishes iff the gradient rate holds."""
    return s ** (gamma + 1.0) * k ** (2.0 * gamma + 1.0) * min_grad_sq


def make_discrete_record(
    k: int,
    gap: float,
    grad_sq: float,
    min_grad_sq: float,
    gamma: float,
    s: float,
    lyap: Optional[float] = None,
) -> TrajectoryRecord:
    return TrajectoryRecord(
        k_or_t=float(k),
        gap=gap,
        grad_sq=grad_sq,
        min_grad_sq=min_grad_sq,
        lyap=lyap,
        norm_gap=normalized_gap(gamma, s, k, gap),
        norm_grad=normalized_grad(gamma, s, k, min_grad_sq),
    )


def make_ode_record(
    t: float,
    gap: float,
    grad_sq: float,
    min_grad_sq: float,
    gamma: float,
    lyap: Optional[float] = None,
) -> TrajectoryRecord:
    return TrajectoryRecord(
        k_or_t=t,
        gap=gap,
        grad_sq=grad_sq,
        min_grad_sq=min_grad_sq,
        lyap=lyap,
        norm_gap=t ** (2.0 * gamma) * gap,
        norm_grad=t ** (2.0 * gamma + 1.0) * min_grad_sq,
    )


def record(state, problem, params: dict) -> TrajectoryRecord:
    """Build a record directly from a run/ODE state (convenience path).

    ``params`` carries ``method`` ("nag"|"phase"|"fista"|"ode-low"|"ode-high"),
    ``gamma``, ``s``, optionally the running ``min_grad_sq`` seen so far and a
    precomputed ``lyap`` value.  The hot loop in the optimizers builds records
    without re-evaluating gradients; this entry point recomputes them and is
    meant for spot checks and tests.  Refuses when the problem's optimum is
    unknown.
    """
    method = params["method"]
    gamma = params["gamma"]
    s = params["s"]
    prev_min = params.get("min_grad_sq", math.inf)
    lyap = params.get("lyap")

    smooth = problem.smooth if hasattr(problem, "smooth") else problem

    if hasattr(state, "t"):  # ODE state
        point = state.X + math.sqrt(s) * state.V if method == "ode-high" else state.X
        grad = smooth.gradient(point)
        grad_sq = float(grad @ grad)
        return make_ode_record(
            state.t, smooth.gap(point), grad_sq, min(prev_min, grad_sq), gamma, lyap
        )

    from .optimizers import momentum_weight  # deferred: avoids a module cycle

    k = state.k
    r = 3.0 * gamma - 1.0
    if method == "phase":
        y = state.x_curr + momentum_weight(k, r) * math.sqrt(s) * state.v
    else:
        y = state.x_curr + momentum_weight(k, r) * (state.x_curr - state.x_prev)

    if method == "fista":
        from .problems import proximal_subgradient

        g = proximal_subgradient(problem, y, s)
        grad_sq = float(g @ g)
        gap = problem.composite_gap(state.x_curr)
    else:
        grad = smooth.gradient(y)
        grad_sq = float(grad @ grad)
        gap = smooth.gap(y)

    return make_discrete_record(k, gap, grad_sq, min(prev_min, grad_sq), gamma, s, lyap)


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------


def _format_value(x: Optional[float]) -> str:
    if x is None:
        return ""
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return format(x, ".17g")


def write_csv(records: Iterable[TrajectoryRecord], path) -> None:
    """Write records with the mandatory header; floats at 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    _format_value(rec.k_or_t),
                    _format_value(rec.gap),
                    _format_value(rec.grad_sq),
                    _format_value(rec.min_grad_sq),
                    _format_value(rec.lyap),
                    _format_value(rec.norm_gap),
                    _format_value(rec.norm_grad),
                ]
            )


def read_csv(path) -> list[TrajectoryRecord]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"trajectory file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ConfigError(f"unexpected CSV header in {path}: {header}")
        records = []
        for row in reader:
            if len(row) != len(CSV_COLUMNS):
                raise ConfigError(f"malformed CSV row in {path}: {row}")
            records.append(
                TrajectoryRecord(
                    k_or_t=float(row[0]),
                    gap=float(row[1]),
                    grad_sq=float(row[2]),
                    min_grad_sq=float(row[3]),
                    lyap=float(row[4]) if row[4] != "" else None,
                    norm_gap=float(row[5]),
                    norm_grad=float(row[6]),
                )
            )
    return records


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    """Outcome of one empirical convergence check."""

    name: str
    passed: bool
    worst_margin: float
    details: dict

    def summary_line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{self.name}: {status} (worst margin {self.worst_margin:.3e})"


def certify_objective_rate(
    records: Sequence[TrajectoryRecord],
    k0: int,
    lyap_at_k0: float,
    gamma: float,
    s: float,
    variant: str = "nag",
) -> Certificate:
    """Check gap_k <= E(K0) / (s^gamma base^(2 gamma)) for every recorded k >= K0.

    ``base`` is (k+1) for the gradient family and k for the proximal family.
    Tolerance 1e-10 * max(1, bound) per point.
    """
    if variant not in ("nag", "fista"):
        raise ConfigError(f"unknown objective-rate variant {variant!r}")
    checked = 0
    worst = -math.inf
    worst_k = None
    for rec in records:
        k = rec.k_or_t
        if k < k0:
            continue
        base = k + 1.0 if variant == "nag" else float(k)
        bound = lyap_at_k0 / (s**gamma * base ** (2.0 * gamma))
        margin = rec.gap - bound - OBJECTIVE_RATE_TOL * max(1.0, abs(bound))
        checked += 1
        if margin > worst:
            worst = margin
            worst_k = k
    if checked == 0:
        raise ValueError(f"no records at or past the threshold k0={k0}")
    return Certificate(
        name=f"objective-rate[{variant}, gamma={gamma:g}]",
        passed=worst <= 0.0,
        worst_margin=worst,
        details={"k0": k0, "lyap_at_k0": lyap_at_k0, "checked": checked, "worst_k": worst_k},
    )


def certify_gradient_trend(
    records: Sequence[TrajectoryRecord],
    gamma: float,
    s: float,
    k0: int,
) -> Certificate:
    """Check that the scaled running-minimum gradient trend is genuinely decaying.

    The theory says s^(gamma+1) k^(2 gamma + 1) min_grad_sq -> 0.  Empirically:
    the median of ``norm_grad`` over the last recorded decade [k_max/10, k_max]
    must be at most half its median over the first decade [k0, 10 k0].  Refuses
    (raises) when the records span fewer than two decades past k0.
    """
    ks = np.array([rec.k_or_t for rec in records])
    vals = np.array([rec.norm_grad for rec in records])
    if k0 < 1:
        raise ValueError(f"threshold k0 must be >= 1, got {k0}")
    k_max = float(ks.max()) if ks.size else 0.0
    if k_max < 100.0 * k0:
        raise ValueError(
            f"records span less than two decades past k0={k0} (k_max={k_max:g}); "
            "certificate refused — run longer"
        )
    first = vals[(ks >= k0) & (ks <= 10.0 * k0)]
    last = vals[(ks >= k_max / 10.0) & (ks <= k_max)]
    if first.size == 0 or last.size == 0:
        raise ValueError("empty decade window; record cadence too sparse for the trend certificate")
    median_first = float(np.median(first))
    median_last = float(np.median(last))
    passed = median_last == 0.0 or GRADIENT_TREND_FACTOR * median_last <= median_first
    ratio = math.inf if median_last == 0.0 else median_first / median_last
    return Certificate(
        name=f"gradient-trend[gamma={gamma:g}]",
        passed=passed,
        worst_margin=(median_last * GRADIENT_TREND_FACTOR - median_first),
        details={
            "k0": k0,
            "median_first_decade": median_first,
            "median_last_decade": median_last,
            "decay_ratio": ratio,
        },
    )


# ---------------------------------------------------------------------------
# trajectory comparisons
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompareReport:
    """Sup-norm deviation between a discrete run and an ODE path under t = k sqrt(s)."""

    sup_deviation: float
    k_values: Array
    t_values: Array
    nag_gaps: Array
    ode_gaps: Array

    @property
    def deviations(self) -> Array:
        return np.abs(self.nag_gaps - self.ode_gaps)


def compare_ode_nag(nag_result, ode_result, k_max: Optional[int] = None) -> CompareReport:
    """Align an ODE gap curve with a discrete run via t = k sqrt(s) and compare.

    Both arguments are result objects exposing ``records`` (and optionally
    ``problem_id``); the ODE gap is linearly interpolated at each discrete
    time t_k = k sqrt(s) with t_k inside the integrated span, k <= k_max.
    """
    nag_pid = getattr(nag_result, "problem_id", None)
    ode_pid = getattr(ode_result, "problem_id", None)
    if nag_pid is not None and ode_pid is not None and nag_pid != ode_pid:
        raise ConfigError(f"cannot compare runs on different problems: {nag_pid!r} vs {ode_pid!r}")

    s = nag_result.step
    sqrt_s = math.sqrt(s)
    ks = np.array([rec.k_or_t for rec in nag_result.records])
    nag_gaps = np.array([rec.gap for rec in nag_result.records])
    ts = np.array([rec.k_or_t for rec in ode_result.records])
    ode_gaps = np.array([rec.gap for rec in ode_result.records])
    if ts.size < 2:
        raise ConfigError("ODE trajectory too short to interpolate")

    mask = ks * sqrt_s <= ts[-1] + 1e-12
    if k_max is not None:
        mask &= ks <= k_max
    ks = ks[mask]
    if ks.size == 0:
        raise ConfigError("no discrete steps fall inside the integrated ODE span")
    t_match = ks * sqrt_s
    ode_at_k = np.interp(t_match, ts, ode_gaps)
    nag_at_k = nag_gaps[mask]
    deviations = np.abs(nag_at_k - ode_at_k)
    return CompareReport(
        sup_deviation=float(deviations.max()),
        k_values=ks,
        t_values=t_match,
        nag_gaps=nag_at_k,
        ode_gaps=ode_at_k,
    )


def fit_loglog_slope(
    records: Sequence[TrajectoryRecord],
    column: str = "gap",
    k_range: Optional[tuple[float, float]] = None,
) -> tuple[float, float]:
    """Least-squares slope of log(column) against log(k); returns (slope, rms residual).

    Only strictly positive values at k > 0 inside ``k_range`` participate;
    refuses with fewer than ten usable points.
    """
    ks, vals = [], []
    for rec in records:
        value = getattr(rec, column)
        if rec.k_or_t <= 0 or value <= 0:
            continue
        if k_range is not None and not (k_range[0] <= rec.k_or_t <= k_range[1]):
            continue
        ks.append(rec.k_or_t)
        vals.append(value)
    if len(ks) < 10:
        raise ValueError(f"need at least 10 positive points for a log-log fit, got {len(ks)}")
    log_k = np.log(np.array(ks))
    log_v = np.log(np.array(vals))
    slope, intercept = np.polyfit(log_k, log_v, 1)
    fitted = slope * log_k + intercept
    residual = float(np.sqrt(np.mean((fitted - log_v) ** 2)))
    return float(slope), residual
