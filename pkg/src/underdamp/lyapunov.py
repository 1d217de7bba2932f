"""Lyapunov functions, coefficient family, thresholds, and monotonicity audits.

Everything here is indexed by gamma = (r+1)/3: gamma = 0 is the critical
member with energy-style Lyapunov functions, gamma in (0,1) the underdamped
regime where monotone decrease only sets in past a computable threshold
(t_0 in continuous time, K_0 in discrete time).

Continuous (high-resolution model, gamma in (0,1), t > 3 gamma sqrt(s)):

    E(t) = [t^g (t^g - 2g sqrt(s) t^(g-1)) / (t - 3g sqrt(s))] (t + 3g sqrt(s)/2) (f(X + sqrt(s) V) - f*)
           + 1/2 || t^g V + 2g t^(g-1) (X - x*) ||^2
           + g (1-g) t^(2(g-1)) || X - x* ||^2,

reducing at gamma = 0 to f(X + sqrt(s) V) - f* + ||V||^2 / 2.

Discrete (k >= 3, with u_k = k^g + 2g (k+1)^(g-1), v_k = (x_k - x_{k-1})/sqrt(s)):

    E(k) = s^g k^g u_k (f(y_{k-1}) - f*)
           + 1/2 || (k-1)^g s^(g/2) v_k + 2g k^(g-1) s^((g-1)/2) (x_k - x*) ||^2
           + (s^(g-1)/2) H_k || x_{k-1} - x* ||^2,

with H_k = -F_{k-1}/2 >= 0 for k past the threshold; the proximal variant
replaces the potential with Phi(x_k) - Phi*.  At gamma = 0 both reduce to the
energy forms f(y_{k-1}) - f* + ||v_k||^2/2 and Phi(x_k) - Phi* + ||v_k||^2/2.

An audit evaluates the matching function along a trajectory, locates the
threshold, and certifies that no per-step increment past it exceeds
1e-10 * max(1, E(threshold)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .problems import Array, CompositeProblem, ConfigError, SmoothObjective

MONOTONE_TOL = 1e-10
DECREMENT_TOL = 1e-12

AUDIT_KINDS = ("continuous", "nag", "fista", "critical-nag", "critical-fista")


def _smooth_part(problem) -> SmoothObjective:
    return problem.smooth if isinstance(problem, CompositeProblem) else problem


def _require_minimizer(smooth: SmoothObjective) -> Array:
    if smooth.minimizer is None or smooth.optimal_value is None:
        raise ConfigError("Lyapunov evaluation needs a problem with a known minimizer")
    return smooth.minimizer


# ---------------------------------------------------------------------------
# coefficient family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientTable:
    """The eight per-step coefficients at one (k, gamma)."""

    k: int
    gamma: float
    A: float
    B: float
    C: float
    D: float
    E: float
    F: float
    G: float
    H: float


def _check_gamma(gamma: float, *, upper_open: bool) -> None:
    hi_ok = gamma < 1.0 if upper_open else gamma <= 1.0
    if not (np.isfinite(gamma) and 0.0 < gamma and hi_ok):
        interval = "(0, 1)" if upper_open else "(0, 1]"
        raise ConfigError(f"gamma must lie in {interval}, got {gamma}")


def coefficient_arrays(ks: Array, gamma: float) -> dict[str, Array]:
    """Vectorized coefficient family over integer indices ks >= 2.

    Returns arrays A..H aligned with ``ks``.  ``F`` is also defined at k = 1
    (it vanishes there), which is what makes H_2 = -F_1/2 = 0 well defined.
    """
    _check_gamma(gamma, upper_open=False)
    ks = np.asarray(ks, dtype=float)
    if ks.size and ks.min() < 2:
        raise ConfigError(f"coefficients are defined for k >= 2, got min k = {ks.min():g}")
    g = gamma

    def u_of(k: Array) -> Array:
        return k**g + 2.0 * g * (k + 1.0) ** (g - 1.0)

    def f_of(k: Array) -> Array:
        # absorbed form of F: finite down to k = 1 (both products vanish there)
        denom = k + 3.0 * g - 1.0
        return (4.0 * g / denom) * (
            (k - 1.0) * (k + 1.0) ** (g - 1.0) * u_of(k)
            - k ** (g - 1.0) * (k - 1.0) ** g * denom
        )

    u = u_of(ks)
    denom = ks + 3.0 * g - 1.0
    A = ((ks - 1.0) / denom) ** 2 * (u**2 - (ks - 1.0) ** (2.0 * (g - 1.0)) * denom**2)
    B = 4.0 * g**2 * ((ks + 1.0) ** (2.0 * (g - 1.0)) - ks ** (2.0 * (g - 1.0)))
    C = u**2
    D = -2.0 * (ks - 1.0) * u**2 / denom
    E = -4.0 * g * (ks + 1.0) ** (g - 1.0) * u
    F = f_of(ks)
    G = -2.0 * ks**g * u
    H = -0.5 * f_of(ks - 1.0)
    return {"A": A, "B": B, "C": C, "D": D, "E": E, "F": F, "G": G, "H": H}


def coefficients(k: int, gamma: float) -> CoefficientTable:
    """Coefficient family at a single index k >= 2."""
    if k < 2:
        raise ConfigError(f"coefficients are defined for k >= 2, got {k}")
    arrays = coefficient_arrays(np.array([float(k)]), gamma)
    return CoefficientTable(
        k=k, gamma=gamma, **{name: float(vals[0]) for name, vals in arrays.items()}
    )


def _h_coefficient(k: float, gamma: float) -> float:
    """H_k = -F_{k-1}/2, the distance-square weight; 0 identically at gamma = 0."""
    if gamma == 0.0:
        return 0.0
    km = k - 1.0
    denom = km + 3.0 * gamma - 1.0
    u = km**gamma + 2.0 * gamma * k**gamma / k  # (km+1)^(g-1) = k^g / k
    f_prev = (4.0 * gamma / denom) * (
        (km - 1.0) * k ** (gamma - 1.0) * u - km ** (gamma - 1.0) * (km - 1.0) ** gamma * denom
    )
    return -0.5 * f_prev


# ---------------------------------------------------------------------------
# continuous Lyapunov function and threshold
# ---------------------------------------------------------------------------


def continuous_lyapunov(state, gamma: float, s: float, problem) -> float:
    """E(t) along a high-resolution trajectory state (t, X, V).

    Defined for t > 3 gamma sqrt(s) when gamma in (0, 1]; the gamma = 0 energy
    form is defined for any t.
    """
    smooth = _smooth_part(problem)
    x_star = _require_minimizer(smooth)
    sqrt_s = math.sqrt(s)
    y = state.X + sqrt_s * state.V
    if gamma == 0.0:
        return smooth.gap(y) + 0.5 * float(state.V @ state.V)
    _check_gamma(gamma, upper_open=False)
    t = state.t
    pole = 3.0 * gamma * sqrt_s
    if t <= pole:
        raise ConfigError(f"continuous Lyapunov needs t > 3 gamma sqrt(s) = {pole:g}, got t = {t:g}")
    tg = t**gamma
    tgm = t ** (gamma - 1.0)
    pot_coef = (tg * (tg - 2.0 * gamma * sqrt_s * tgm) / (t - pole)) * (t + 0.5 * pole)
    mixed_vec = tg * state.V + 2.0 * gamma * tgm * (state.X - x_star)
    dist = state.X - x_star
    return (
        pot_coef * smooth.gap(y)
        + 0.5 * float(mixed_vec @ mixed_vec)
        + gamma * (1.0 - gamma) * t ** (2.0 * (gamma - 1.0)) * float(dist @ dist)
    )


@dataclass(frozen=True)
class ContinuousThreshold:
    """t_0 = max(3 gamma sqrt(s) + 1, t_1), with t_1 from the derivative-bound scan."""

    t0: float
    t1: float
    bound_verified: bool


def continuous_threshold(
    gamma: float, s: float, horizon: float = 100.0, grid: int = 4000
) -> ContinuousThreshold:
    """Locate the monotonicity threshold t_0 for the continuous audit.

    Scans a grid over (3 gamma sqrt(s), horizon] for the smallest t_1 past
    which the derivative bound

        g'(t) >= 2 gamma t^(2 gamma - 1) (1 + 3 gamma sqrt(s) / (2 t)),

    holds at every grid point (g' by central differences at relative step
    1e-6).  When no such t_1 exists on the window — which is the generic
    outcome, the bound has a bounded validity interval — falls back to
    t_0 = 3 gamma sqrt(s) + 1 and reports ``bound_verified = False``.
    """
    if gamma == 0.0:
        return ContinuousThreshold(t0=0.0, t1=0.0, bound_verified=True)
    _check_gamma(gamma, upper_open=False)
    if not (np.isfinite(s) and s > 0):
        raise ConfigError(f"step size must be a positive real, got {s}")
    pole = 3.0 * gamma * math.sqrt(s)
    fallback = pole + 1.0
    t_lo = pole + 0.01 * max(1.0, pole)
    if horizon <= t_lo:
        return ContinuousThreshold(t0=fallback, t1=fallback, bound_verified=False)
    ts = np.linspace(t_lo, horizon, grid)

    def g_fun(t: Array) -> Array:
        tg = t**gamma
        tgm = t ** (gamma - 1.0)
        return (t + 0.5 * pole) / (t - pole) * tg * (tg - 2.0 * gamma * math.sqrt(s) * tgm)

    h = 1e-6 * ts
    g_prime = (g_fun(ts + h) - g_fun(ts - h)) / (2.0 * h)
    bound = 2.0 * gamma * ts ** (2.0 * gamma - 1.0) * (1.0 + pole / (2.0 * ts))
    ok = g_prime >= bound
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        t1 = float(ts[0])
        verified = True
    elif bad[-1] == len(ts) - 1:
        t1 = fallback
        verified = False
    else:
        t1 = float(ts[bad[-1] + 1])
        verified = True
    return ContinuousThreshold(t0=max(fallback, t1) if verified else fallback, t1=t1, bound_verified=verified)


# ---------------------------------------------------------------------------
# discrete Lyapunov functions and threshold
# ---------------------------------------------------------------------------


def _discrete_core(state, gamma: float, s: float, potential_gap: float, x_star: Array) -> float:
    k = float(state.k)
    u = k**gamma + 2.0 * gamma * (k + 1.0) ** (gamma - 1.0)
    pot = s**gamma * k**gamma * u * potential_gap
    mixed_vec = (k - 1.0) ** gamma * s ** (gamma / 2.0) * state.v + (
        2.0 * gamma * k ** (gamma - 1.0) * s ** ((gamma - 1.0) / 2.0)
    ) * (state.x_curr - x_star)
    dist_prev = state.x_prev - x_star
    third = 0.5 * s ** (gamma - 1.0) * _h_coefficient(k, gamma) * float(dist_prev @ dist_prev)
    return pot + 0.5 * float(mixed_vec @ mixed_vec) + third


def discrete_lyapunov_nag(state, gamma: float, s: float, problem) -> float:
    """E(k) for the gradient family; defined for k >= 3, gamma in [0, 1].

    At gamma = 0 every gamma-weighted term vanishes and the value coincides
    exactly with the critical energy f(y_{k-1}) - f* + ||v_k||^2 / 2.
    """
    if state.k < 3:
        raise ConfigError(f"discrete Lyapunov needs k >= 3, got k = {state.k}")
    if not (0.0 <= gamma <= 1.0):
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    smooth = _smooth_part(problem)
    x_star = _require_minimizer(smooth)
    return _discrete_core(state, gamma, s, smooth.gap(state.y_prev), x_star)


def discrete_lyapunov_fista(state, gamma: float, s: float, problem: CompositeProblem) -> float:
    """Proximal variant: the potential term carries Phi(x_k) - Phi*."""
    if state.k < 3:
        raise ConfigError(f"discrete Lyapunov needs k >= 3, got k = {state.k}")
    if not (0.0 <= gamma <= 1.0):
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    if problem.composite_minimizer is None:
        raise ConfigError("proximal Lyapunov evaluation needs the composite minimizer")
    return _discrete_core(
        state, gamma, s, problem.composite_gap(state.x_curr), problem.composite_minimizer
    )


def critical_lyapunov_nag(state, problem) -> float:
    """Energy form f(y_{k-1}) - f* + ||v_k||^2 / 2 (k >= 1)."""
    if state.k < 1:
        raise ConfigError(f"critical Lyapunov needs k >= 1, got k = {state.k}")
    smooth = _smooth_part(problem)
    return smooth.gap(state.y_prev) + 0.5 * float(state.v @ state.v)


def critical_lyapunov_fista(state, problem: CompositeProblem) -> float:
    """Energy form Phi(x_k) - Phi* + ||v_k||^2 / 2 (k >= 1)."""
    if state.k < 1:
        raise ConfigError(f"critical Lyapunov needs k >= 1, got k = {state.k}")
    return problem.composite_gap(state.x_curr) + 0.5 * float(state.v @ state.v)


def evaluate(kind: str, state, problem, gamma: float, s: float) -> Optional[float]:
    """Evaluate one Lyapunov kind at a state; None where it is not yet defined."""
    if kind == "continuous":
        if gamma > 0.0 and state.t <= 3.0 * gamma * math.sqrt(s):
            return None
        return continuous_lyapunov(state, gamma, s, problem)
    if kind == "nag":
        return discrete_lyapunov_nag(state, gamma, s, problem) if state.k >= 3 else None
    if kind == "fista":
        return discrete_lyapunov_fista(state, gamma, s, problem) if state.k >= 3 else None
    if kind == "critical-nag":
        return critical_lyapunov_nag(state, problem) if state.k >= 1 else None
    if kind == "critical-fista":
        return critical_lyapunov_fista(state, problem) if state.k >= 1 else None
    raise ConfigError(f"unknown Lyapunov kind {kind!r}; expected one of {AUDIT_KINDS}")


@dataclass(frozen=True)
class DiscreteThreshold:
    """Smallest K_0 >= 3 past which the sign conditions hold through the horizon."""

    k0: int
    satisfied: bool
    horizon: int


def discrete_threshold(gamma: float, horizon: int = 10**6) -> DiscreteThreshold:
    """Scan k = 3..horizon for the threshold K_0(gamma), gamma in (0, 1).

    Conditions at k: A_k <= 0; H_k >= 0 with H_{k+1} <= H_k; and
    G_{k+1} - G_k - E_k >= 0.  K_0 is the smallest index from which all hold
    through the horizon.  ``satisfied`` is False when no such index exists
    inside the scanned window.
    """
    _check_gamma(gamma, upper_open=True)
    if horizon < 3:
        raise ConfigError(f"horizon must be >= 3, got {horizon}")
    ks = np.arange(2.0, float(horizon) + 2.0)  # k = 2 .. horizon+1
    arrays = coefficient_arrays(ks, gamma)
    A, E, G, H = arrays["A"], arrays["E"], arrays["G"], arrays["H"]
    # index i corresponds to k = i + 2; conditions evaluated for k = 3..horizon
    sl = slice(1, horizon - 1)  # k = 3 .. horizon
    sl_next = slice(2, horizon)  # k+1 = 4 .. horizon+1
    ok = (
        (A[sl] <= 0.0)
        & (H[sl] >= 0.0)
        & (H[sl_next] <= H[sl])
        & (G[sl_next] - G[sl] - E[sl] >= 0.0)
    )
    kk = ks[sl]
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        return DiscreteThreshold(k0=3, satisfied=True, horizon=horizon)
    last_bad_k = int(kk[bad[-1]])
    k0 = last_bad_k + 1
    return DiscreteThreshold(k0=k0, satisfied=k0 <= horizon, horizon=horizon)


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------


@dataclass
class LyapunovAudit:
    """Monotonicity certificate for one Lyapunov function along one trajectory."""

    kind: str
    gamma: float
    s: float
    threshold: float
    max_violation: float
    certified: bool
    bound_verified: bool
    indices: Array
    values: Array
    details: dict

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "s": self.s,
            "threshold": self.threshold,
            "max_violation": self.max_violation,
            "certified": self.certified,
            "bound_verified": self.bound_verified,
        }

    def summary_line(self) -> str:
        status = "certified" if self.certified else "NOT CERTIFIED"
        return (
            f"lyapunov[{self.kind}, gamma={self.gamma:g}, s={self.s:g}]: {status} "
            f"(threshold {self.threshold:g}, max violation {self.max_violation:.3e})"
        )


def _series_from_trajectory(trajectory: Sequence, kind: str, problem, gamma: float, s: float):
    """Extract (indices, values, grad_sq_by_index) from states or records."""
    first = trajectory[0]
    grads: dict[float, float] = {}
    if hasattr(first, "lyap"):  # TrajectoryRecord stream
        indices, values = [], []
        for rec in trajectory:
            grads[float(rec.k_or_t)] = rec.grad_sq
            if rec.lyap is not None:
                indices.append(float(rec.k_or_t))
                values.append(rec.lyap)
        return np.array(indices), np.array(values), grads, "records"
    indices, values = [], []
    for state in trajectory:
        val = evaluate(kind, state, problem, gamma, s)
        if val is not None:
            indices.append(float(state.t) if hasattr(state, "t") else float(state.k))
            values.append(val)
    return np.array(indices), np.array(values), grads, "states"


def audit(
    trajectory: Sequence,
    kind: str,
    problem,
    gamma: float,
    s: float,
    horizon: Optional[Union[int, float]] = None,
) -> LyapunovAudit:
    """Certify monotone decrease of the matching Lyapunov function.

    ``trajectory`` is a sequence of run states, ODE states, or trajectory
    records that already carry Lyapunov values.  The threshold is K_0(gamma)
    for the discrete kinds, t_0(gamma, s) for the continuous kind, and 0 for
    the critical kinds.  Certification requires every per-step increment past
    the threshold to stay at or below 1e-10 * max(1, E(threshold)); the
    critical gradient-family audit additionally checks the per-step decrement
    dominance E(k) - E(k+1) >= (s/2) ||grad f(y_{k-1})||^2 (within 1e-12 * scale).
    """
    if kind not in AUDIT_KINDS:
        raise ConfigError(f"unknown audit kind {kind!r}; expected one of {AUDIT_KINDS}")
    if len(trajectory) < 2:
        raise ConfigError("trajectory too short to audit (need at least two states)")

    indices, values, grads, mode = _series_from_trajectory(trajectory, kind, problem, gamma, s)
    if indices.size < 2:
        raise ConfigError(f"not enough {kind!r} Lyapunov values along the trajectory to audit")

    bound_verified = True
    if kind == "continuous":
        thr = continuous_threshold(gamma, s, horizon=float(horizon or indices[-1]))
        threshold = thr.t0
        bound_verified = thr.bound_verified
    elif kind in ("nag", "fista"):
        if gamma == 1.0:
            # at gamma = 1 the sign conditions hold identically from k = 3 on
            threshold = 3.0
        else:
            dthr = discrete_threshold(gamma, horizon=int(horizon or indices[-1]))
            threshold = float(dthr.k0)
            bound_verified = dthr.satisfied
    else:
        threshold = 0.0

    past = indices >= threshold
    if int(past.sum()) < 2:
        raise ConfigError(
            f"trajectory ends at {indices[-1]:g}, too close to the threshold {threshold:g} to audit"
        )
    tail_values = values[past]
    tail_indices = indices[past]
    e_threshold = float(tail_values[0])
    scale = max(1.0, e_threshold)
    increments = np.diff(tail_values)
    max_violation = float(max(increments.max(), 0.0))
    certified = max_violation <= MONOTONE_TOL * scale

    details: dict = {
        "e_threshold": e_threshold,
        "checked_steps": int(increments.size),
        "first_index": float(tail_indices[0]),
        "last_index": float(tail_indices[-1]),
        "mode": mode,
    }

    if kind == "critical-nag":
        margins = _critical_decrement_margins(trajectory, tail_indices, tail_values, grads, problem, s, mode)
        if margins is not None and margins.size:
            min_margin = float(margins.min())
            details["min_decrement_margin"] = min_margin
            details["decrement_checked"] = True
            certified = certified and min_margin >= -DECREMENT_TOL * scale
        else:
            details["decrement_checked"] = False

    return LyapunovAudit(
        kind=kind,
        gamma=gamma,
        s=s,
        threshold=threshold,
        max_violation=max_violation,
        certified=certified,
        bound_verified=bound_verified,
        indices=indices,
        values=values,
        details=details,
    )


def _critical_decrement_margins(trajectory, tail_indices, tail_values, grads, problem, s, mode):
    """(E(k) - E(k+1)) - (s/2) ||grad f(y_{k-1})||^2 for consecutive audited steps."""
    smooth = _smooth_part(problem)
    if mode == "states":
        by_k = {state.k: state for state in trajectory}
        margins = []
        for i in range(len(tail_indices) - 1):
            k = int(tail_indices[i])
            if int(tail_indices[i + 1]) != k + 1:
                return None  # non-unit stride: decrement dominance not checkable
            g = smooth.gradient(by_k[k].y_prev)
            margins.append((tail_values[i] - tail_values[i + 1]) - 0.5 * s * float(g @ g))
        return np.array(margins)
    margins = []
    for i in range(len(tail_indices) - 1):
        k = tail_indices[i]
        if tail_indices[i + 1] != k + 1 or (k - 1) not in grads:
            return None
        margins.append((tail_values[i] - tail_values[i + 1]) - 0.5 * s * grads[k - 1])
    return np.array(margins)


def continuous_decrement_margins(states: Sequence, gamma: float, s: float, problem) -> tuple[Array, Array]:
    """Finite-difference check data for dE/dt <= -sqrt(s) t^g (t^g - g sqrt(s) t^(g-1)) ||grad f||^2.

    Returns (midpoint times, margins), where each margin is the finite
    difference of E across one integrator step minus the trapezoidal average
    of the bound at the endpoints; monotone dissipation at the theoretical
    rate makes every margin nonpositive up to O(dt^2) discretization error.
    """
    smooth = _smooth_part(problem)
    sqrt_s = math.sqrt(s)
    pole = 3.0 * gamma * sqrt_s
    eligible = [st for st in states if st.t > pole or gamma == 0.0]
    ts = np.array([st.t for st in eligible])
    energies = np.array([continuous_lyapunov(st, gamma, s, problem) for st in eligible])
    bounds = np.empty_like(ts)
    for i, st in enumerate(eligible):
        grad = smooth.gradient(st.X + sqrt_s * st.V)
        t = st.t
        if gamma == 0.0:
            factor = 1.0  # t^g (t^g - g sqrt(s) t^(g-1)) -> 1 as gamma -> 0
        else:
            factor = t**gamma * (t**gamma - gamma * sqrt_s * t ** (gamma - 1.0))
        bounds[i] = -sqrt_s * factor * float(grad @ grad)
    dt = np.diff(ts)
    margins = np.diff(energies) / dt - 0.5 * (bounds[:-1] + bounds[1:])
    midpoints = 0.5 * (ts[:-1] + ts[1:])
    return midpoints, margins
