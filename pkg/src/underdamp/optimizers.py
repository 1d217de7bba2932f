"""Accelerated gradient family: two-line scheme, phase-space form, proximal form.

All three methods share the momentum weight (k-1)/(k+r) indexed by r >= -1,
reparameterized as gamma = (r+1)/3:

* ``nag_step``          x_{k+1} = y_k - s grad f(y_k),
                        y_{k+1} = x_{k+1} + ((k)/(k+1+r))(x_{k+1} - x_k),
* ``phase_space_step``  the algebraically equivalent (x, v) system with
                        v_k = (x_k - x_{k-1})/sqrt(s),
* ``fista_step``        the gradient step replaced by the proximal map P_s.

Degenerate momentum indices resolve to weight 0: at k=0 the ratio is -1/r and
at k=1 it is 0/(1+r) (0/0 when r=-1), so y_0 = x_0 and y_1 = x_1 for every r.
This keeps the two-line and phase-space forms equivalent across the whole
family including r = -1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from . import lyapunov as _lyapunov
from .diagnostics import TrajectoryRecord, make_discrete_record
from .problems import (
    Array,
    CompositeProblem,
    ConfigError,
    SmoothObjective,
    check_finite,
    load_problem,
    smooth_composite,
)


class Method(str, Enum):
    NAG = "nag"
    PHASE = "phase"
    FISTA = "fista"


@dataclass(frozen=True)
class MomentumParameter:
    """Momentum family index r in [-1, inf); gamma = (r+1)/3.

    gamma = 0 is the critical member, gamma in (0,1) the underdamped regime,
    gamma = 1 (r = 2) the classical critically damped choice.
    """

    r: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.r) and self.r >= -1.0):
            raise ConfigError(f"momentum parameter requires r >= -1, got {self.r}")

    @property
    def gamma(self) -> float:
        return (self.r + 1.0) / 3.0

    @classmethod
    def from_gamma(cls, gamma: float) -> "MomentumParameter":
        return cls(3.0 * gamma - 1.0)


def momentum_weight(k: int, r: float) -> float:
    """(k-1)/(k+r), with the degenerate indices k <= 1 resolved to 0."""
    if k <= 1:
        return 0.0
    return (k - 1.0) / (k + r)


@dataclass
class RunState:
    """Iterate triple (x_k, x_{k-1}, y_{k-1}) plus velocity v_k and counter k."""

    k: int
    x_curr: Array
    x_prev: Array
    y_prev: Array
    v: Array


def initial_state(x0: Array) -> RunState:
    x0 = np.array(x0, dtype=float)
    return RunState(k=0, x_curr=x0, x_prev=x0.copy(), y_prev=x0.copy(), v=np.zeros_like(x0))


def _as_smooth(problem: Union[SmoothObjective, CompositeProblem]) -> SmoothObjective:
    return problem.smooth if isinstance(problem, CompositeProblem) else problem


# ---------------------------------------------------------------------------
# single-step kernels
#
# Each advances state k -> k+1 and also returns the evaluation point y_k and
# the squared norm of the (sub)gradient there, so the runner can record
# without re-evaluating anything.
# ---------------------------------------------------------------------------


def _nag_kernel(state: RunState, smooth: SmoothObjective, r: float, s: float):
    y = state.x_curr + momentum_weight(state.k, r) * (state.x_curr - state.x_prev)
    grad = smooth.gradient(y)
    x_next = y - s * grad
    check_finite(x_next, f"iterate x_{state.k + 1}")
    v_next = (x_next - state.x_curr) / math.sqrt(s)
    next_state = RunState(state.k + 1, x_next, state.x_curr, y, v_next)
    return next_state, y, float(grad @ grad)


def _phase_kernel(state: RunState, smooth: SmoothObjective, r: float, s: float):
    k = state.k
    sqrt_s = math.sqrt(s)
    weight = momentum_weight(k, r)
    y = state.x_curr + weight * sqrt_s * state.v
    grad = smooth.gradient(y)
    # v_{k+1} = v_k - (3 gamma / (k + 3 gamma - 1)) v_k - sqrt(s) grad f(y_k):
    # the friction coefficient equals 1 - (k-1)/(k+3g-1), so damping v by the
    # momentum weight is the same update with the k <= 1 corners (where the
    # weight is 0 by convention, including the 0/0 at gamma = 0, k = 1)
    # resolved exactly as the two-line scheme resolves them.
    v_next = weight * state.v - sqrt_s * grad
    x_next = state.x_curr + sqrt_s * v_next
    check_finite(x_next, f"iterate x_{k + 1}")
    next_state = RunState(k + 1, x_next, state.x_curr, y, v_next)
    return next_state, y, float(grad @ grad)


def _fista_kernel(state: RunState, problem: CompositeProblem, r: float, s: float):
    y = state.x_curr + momentum_weight(state.k, r) * (state.x_curr - state.x_prev)
    grad = problem.smooth.gradient(y)
    x_next = problem.nonsmooth.prox(y - s * grad, s)
    check_finite(x_next, f"iterate x_{state.k + 1}")
    grad_map = (y - x_next) / s
    v_next = (x_next - state.x_curr) / math.sqrt(s)
    next_state = RunState(state.k + 1, x_next, state.x_curr, y, v_next)
    return next_state, y, float(grad_map @ grad_map)


def nag_step(
    state: RunState,
    problem: Union[SmoothObjective, CompositeProblem],
    momentum: MomentumParameter,
    s: float,
) -> RunState:
    """One two-line accelerated gradient step; increments the counter."""
    next_state, _, _ = _nag_kernel(state, _as_smooth(problem), momentum.r, s)
    return next_state

def phase_space_step(
    state: RunState,
    problem: Union[SmoothObjective, CompositeProblem],
    momentum: MomentumParameter,
    s: float,
) -> RunState:
    """One step of the equivalent (x, v) phase-space system."""
    next_state, _, _ = _phase_kernel(state, _as_smooth(problem), momentum.r, s)
    return next_state


def fista_step(
    state: RunState,
    problem: CompositeProblem,
    momentum: MomentumParameter,
    s: float,
) -> RunState:
    """One proximal accelerated step: x_{k+1} = P_s(y_k)."""
    if not isinstance(problem, CompositeProblem):
        raise ConfigError("fista_step requires a CompositeProblem")
    next_state, _, _ = _fista_kernel(state, problem, momentum.r, s)
    return next_state


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Configuration for a full trajectory.

    ``step=None`` defaults to 1/L.  ``record_every=1`` records every step
    (``--iters N`` then yields N+1 rows); 0 selects the adaptive cadence (all
    k <= 1000, then k divisible by ceil(k/1000)); the final step is always
    recorded.  ``lyapunov`` may be None, "auto", or an explicit kind
    ("nag", "fista", "critical-nag", "critical-fista"); values are attached to
    recorded rows where the chosen function is defined.  Steps larger than 1/L
    are refused unless ``allow_large_step`` is set.
    """

    momentum: MomentumParameter
    step: Optional[float] = None
    max_iter: int = 1000
    problem: Union[CompositeProblem, SmoothObjective, str] = "reference-quadratic"
    x0: Optional[Array] = None
    record_every: int = 1
    allow_large_step: bool = False
    lyapunov: Optional[str] = None
    keep_states: bool = False
    record_ks: frozenset = field(default_factory=frozenset)


@dataclass
class RunResult:
    method: Method
    problem: CompositeProblem
    problem_id: Optional[str]
    momentum: MomentumParameter
    step: float
    records: list[TrajectoryRecord]
    final_state: RunState
    states: Optional[list[RunState]]
    step_ratio: float
    large_step_override: bool

    @property
    def final_gap(self) -> float:
        return self.records[-1].gap

    @property
    def final_min_grad_sq(self) -> float:
        return self.records[-1].min_grad_sq


def _resolve_lyap_kind(requested: Optional[str], method: Method, gamma: float) -> Optional[str]:
    if requested is None:
        return None
    if requested != "auto":
        if requested not in ("nag", "fista", "critical-nag", "critical-fista"):
            raise ConfigError(f"unknown lyapunov kind {requested!r}")
        return requested
    family = "fista" if method is Method.FISTA else "nag"
    if gamma == 0.0:
        return f"critical-{family}"
    if 0.0 < gamma <= 1.0:
        return family
    return None  # no certificate family defined past the critically damped point


def _should_record(k: int, record_every: int, max_iter: int, record_ks: frozenset) -> bool:
    if k == max_iter or k in record_ks:
        return True
    if record_every > 0:
        return k % record_every == 0
    # adaptive cadence: dense start, ~1000 rows per decade afterwards
    return k <= 1000 or k % -(-k // 1000) == 0


def run(cfg: RunConfig, method: Union[Method, str]) -> RunResult:
    """Run a full trajectory and collect records (and optionally states).

    Reproducible by construction: pure float arithmetic, no hidden state, so
    identical configurations serialize to identical CSV bytes.
    """
    method = Method(method)

    if isinstance(cfg.problem, str):
        problem = load_problem(cfg.problem)
        problem_id = cfg.problem
    elif isinstance(cfg.problem, SmoothObjective):
        problem = smooth_composite(cfg.problem)
        problem_id = None
    else:
        problem = cfg.problem
        problem_id = None

    if method is not Method.FISTA and not problem.nonsmooth.is_zero:
        raise ConfigError(
            f"method {method.value!r} handles smooth objectives only; this problem has a "
            "nonsmooth term — use fista"
        )

    if not isinstance(cfg.max_iter, int) or cfg.max_iter < 0:
        raise ConfigError(f"max_iter must be a nonnegative integer, got {cfg.max_iter}")

    smooth = problem.smooth
    s = 1.0 / smooth.lipschitz if cfg.step is None else float(cfg.step)
    if not (np.isfinite(s) and s > 0):
        raise ConfigError(f"step size must be a positive real, got {s}")
    step_ratio = s * smooth.lipschitz
    if step_ratio > 1.0 + 1e-12 and not cfg.allow_large_step:
        raise ConfigError(
            f"step {s:g} exceeds 1/L = {1.0 / smooth.lipschitz:g} "
            "(set allow_large_step to override; convergence is not guaranteed)"
        )

    if cfg.x0 is None:
        x0 = np.ones(problem.dimension)
    else:
        x0 = np.array(cfg.x0, dtype=float)
        if x0.shape != (problem.dimension,):
            raise ConfigError(f"x0 must have shape ({problem.dimension},), got {x0.shape}")

    gamma = cfg.momentum.gamma
    r = cfg.momentum.r
    lyap_kind = _resolve_lyap_kind(cfg.lyapunov, method, gamma)

    if method is Method.NAG:
        kernel = lambda st: _nag_kernel(st, smooth, r, s)  # noqa: E731
    elif method is Method.PHASE:
        kernel = lambda st: _phase_kernel(st, smooth, r, s)  # noqa: E731
    else:
        kernel = lambda st: _fista_kernel(st, problem, r, s)  # noqa: E731

    state = initial_state(x0)
    states = [state] if cfg.keep_states else None
    records: list[TrajectoryRecord] = []
    min_grad_sq = math.inf

    for k in range(cfg.max_iter + 1):
        next_state, y, grad_sq = kernel(state)
        min_grad_sq = min(min_grad_sq, grad_sq)
        if _should_record(k, cfg.record_every, cfg.max_iter, cfg.record_ks):
            gap = problem.composite_gap(state.x_curr) if method is Method.FISTA else smooth.gap(y)
            lyap_val = (
                _lyapunov.evaluate(lyap_kind, state, problem, gamma, s)
                if lyap_kind is not None
                else None
            )
            records.append(make_discrete_record(k, gap, grad_sq, min_grad_sq, gamma, s, lyap_val))
        if k == cfg.max_iter:
            break
        state = next_state
        if states is not None:
            states.append(state)

    return RunResult(
        method=method,
        problem=problem,
        problem_id=problem_id,
        momentum=cfg.momentum,
        step=s,
        records=records,
        final_state=state,
        states=states,
        step_ratio=step_ratio,
        large_step_override=bool(cfg.allow_large_step and step_ratio > 1.0 + 1e-12),
    )
