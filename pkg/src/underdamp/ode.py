"""Continuous-time models and a fixed-step RK4 integrator.

Two second-order models, both parameterized by the momentum family through
r (equivalently gamma = (r+1)/3):

    low-resolution    X'' + ((r+1)/t) X' + grad f(X) = 0
    high-resolution   X'' + (3 gamma / t) X' + (1 + 3 gamma sqrt(s) / (2t)) grad f(X + sqrt(s) X') = 0

At the critical member (r = -1, gamma = 0) the damping terms vanish and both
models lose their time dependence: the low-resolution model becomes Newtonian
motion X'' = -grad f(X), which conserves ||V||^2 / 2 + f(X), while the
high-resolution model keeps the implicit gradient correction,
X'' = -grad f(X + sqrt(s) X').  Only in that case may integration start at
t = 0; otherwise the friction coefficients are singular at the origin and the
start time defaults to one step into the flow.

Integration is classical fixed-step RK4 on the phase variables (X, V).  A
fixed step keeps runs bit-reproducible across platforms, which the trajectory
CSVs rely on; adaptive error control would buy nothing here because every
experiment uses smooth, small-dimensional right-hand sides.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import lyapunov as _lyapunov
from .diagnostics import TrajectoryRecord, make_ode_record
from .optimizers import MomentumParameter
from .problems import (
    Array,
    CompositeProblem,
    ConfigError,
    DIVERGENCE_NORM,
    DivergenceError,
    SmoothObjective,
    check_finite,
    load_problem,
)


class OdeModel(str, enum.Enum):
    LOW = "low"
    HIGH = "high"


@dataclass(frozen=True)
class OdeState:
    """One point of a continuous trajectory: time, position, velocity."""

    t: float
    X: Array
    V: Array


@dataclass
class OdeConfig:
    model: OdeModel = OdeModel.HIGH
    momentum: MomentumParameter = field(default_factory=lambda: MomentumParameter(r=2.0))
    s: float = 0.1
    dt: float = 1e-3
    t_end: float = 10.0
    t_start: Optional[float] = None
    x0: Optional[Array] = None

    def resolved_t_start(self) -> float:
        """Start time: 0 only for the time-free critical member, else > 0."""
        if self.t_start is not None:
            if self.momentum.r != -1.0 and self.t_start <= 0.0:
                raise ConfigError(
                    f"t_start must be positive for r = {self.momentum.r:g} (friction is singular at t = 0)"
                )
            if self.t_start < 0.0:
                raise ConfigError(f"t_start must be nonnegative, got {self.t_start:g}")
            return self.t_start
        return 0.0 if self.momentum.r == -1.0 else max(self.dt, 1e-3)


def _smooth_part(problem) -> SmoothObjective:
    return problem.smooth if isinstance(problem, CompositeProblem) else problem


def _acceleration(cfg: OdeConfig, smooth: SmoothObjective) -> Callable[[float, Array, Array], Array]:
    """Right-hand side X'' = a(t, X, V) for the configured model."""
    if cfg.model is OdeModel.HIGH:
        gamma = cfg.momentum.gamma
        sqrt_s = math.sqrt(cfg.s)
        if gamma == 0.0:
            return lambda t, X, V: -smooth.gradient(X + sqrt_s * V)

        def high(t: float, X: Array, V: Array) -> Array:
            grad = smooth.gradient(X + sqrt_s * V)
            return -(3.0 * gamma / t) * V - (1.0 + 3.0 * gamma * sqrt_s / (2.0 * t)) * grad

        return high
    r = cfg.momentum.r
    if r == -1.0:
        return lambda t, X, V: -smooth.gradient(X)

    def low(t: float, X: Array, V: Array) -> Array:
        return -((r + 1.0) / t) * V - smooth.gradient(X)

    return low


def high_res_rhs(state: OdeState, cfg: OdeConfig, problem) -> Array:
    """Acceleration of the high-resolution model at one state."""
    if cfg.model is not OdeModel.HIGH:
        cfg = OdeConfig(
            model=OdeModel.HIGH, momentum=cfg.momentum, s=cfg.s, dt=cfg.dt, t_end=cfg.t_end
        )
    return _acceleration(cfg, _smooth_part(problem))(state.t, state.X, state.V)


def low_res_rhs(state: OdeState, cfg: OdeConfig, problem) -> Array:
    """Acceleration of the low-resolution model at one state."""
    if cfg.model is not OdeModel.LOW:
        cfg = OdeConfig(
            model=OdeModel.LOW, momentum=cfg.momentum, s=cfg.s, dt=cfg.dt, t_end=cfg.t_end
        )
    return _acceleration(cfg, _smooth_part(problem))(state.t, state.X, state.V)


def integrate(cfg: OdeConfig, problem, keep_every: int = 1) -> list[OdeState]:
    """Fixed-step RK4 from t_start to t_end; returns the kept states.

    Time is reconstructed as t_start + i * dt rather than accumulated, so the
    grid is exact to rounding no matter how many steps are taken.  The first
    and last states are always kept.
    """
    if cfg.dt <= 0 or not np.isfinite(cfg.dt):
        raise ConfigError(f"dt must be a positive real, got {cfg.dt}")
    if keep_every < 1:
        raise ConfigError(f"keep_every must be >= 1, got {keep_every}")
    smooth = _smooth_part(problem)
    t_start = cfg.resolved_t_start()
    if cfg.t_end <= t_start:
        raise ConfigError(f"t_end = {cfg.t_end:g} must exceed t_start = {t_start:g}")
    n_steps = int(round((cfg.t_end - t_start) / cfg.dt))
    if n_steps < 1:
        raise ConfigError("integration window shorter than one step")

    x = np.array(cfg.x0, dtype=float) if cfg.x0 is not None else np.ones(smooth.dimension)
    if x.shape != (smooth.dimension,):
        raise ConfigError(f"x0 has shape {x.shape}, expected ({smooth.dimension},)")
    v = np.zeros_like(x)
    accel = _acceleration(cfg, smooth)
    dt = cfg.dt

    states = [OdeState(t=t_start, X=x.copy(), V=v.copy())]
    for i in range(n_steps):
        t = t_start + i * dt
        k1x = v
        k1v = accel(t, x, v)
        k2x = v + 0.5 * dt * k1v
        k2v = accel(t + 0.5 * dt, x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
        k3x = v + 0.5 * dt * k2v
        k3v = accel(t + 0.5 * dt, x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
        k4x = v + dt * k3v
        k4v = accel(t + dt, x + dt * k3x, v + dt * k3v)
        x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        v = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        check_finite(x, "ODE position")
        check_finite(v, "ODE velocity")
        if float(np.linalg.norm(x)) > DIVERGENCE_NORM:
            raise DivergenceError(f"trajectory diverged at t = {t + dt:g}")
        if (i + 1) % keep_every == 0 or i + 1 == n_steps:
            states.append(OdeState(t=t_start + (i + 1) * dt, X=x, V=v))
    return states


def newton_energy(state: OdeState, problem) -> float:
    """Conserved energy ||V||^2 / 2 + f(X) of the critical low-resolution flow."""
    smooth = _smooth_part(problem)
    return 0.5 * float(state.V @ state.V) + smooth.value(state.X)


@dataclass
class OdeResult:
    model: OdeModel
    momentum: MomentumParameter
    s: float
    dt: float
    problem: object
    problem_id: Optional[str]
    records: list[TrajectoryRecord]
    states: list[OdeState]

    @property
    def final_state(self) -> OdeState:
        return self.states[-1]

    @property
    def final_gap(self) -> float:
        return self.records[-1].gap


def run_model(
    cfg: OdeConfig,
    problem=None,
    problem_id: Optional[str] = None,
    keep_every: int = 1,
) -> OdeResult:
    """Integrate one model and assemble trajectory records.

    The high-resolution model is measured at the lookahead point
    X + sqrt(s) V — the point whose gradient drives the flow — and carries
    the continuous Lyapunov values where defined; the low-resolution model is
    measured at X itself and has no Lyapunov column.  ``min_grad_sq`` is the
    running minimum over every integration step, not just the kept ones.
    """
    if problem is None:
        problem = load_problem(problem_id or "reference-quadratic")
        problem_id = problem_id or "reference-quadratic"
    elif isinstance(problem, str):
        problem_id = problem
        problem = load_problem(problem)
    smooth = _smooth_part(problem)
    if smooth.minimizer is None or smooth.optimal_value is None:
        raise ConfigError("ODE diagnostics need a problem with a known optimum")

    states = integrate(cfg, problem, keep_every=1)
    gamma = cfg.momentum.gamma
    sqrt_s = math.sqrt(cfg.s)
    high = cfg.model is OdeModel.HIGH
    pole = 3.0 * gamma * sqrt_s

    records: list[TrajectoryRecord] = []
    running_min = math.inf
    last_index = len(states) - 1
    for i, state in enumerate(states):
        point = state.X + sqrt_s * state.V if high else state.X
        grad = smooth.gradient(point)
        grad_sq = float(grad @ grad)
        running_min = min(running_min, grad_sq)
        if i % keep_every and i != last_index:
            continue
        lyap = None
        if high and (gamma == 0.0 or state.t > pole):
            lyap = _lyapunov.continuous_lyapunov(state, gamma, cfg.s, problem)
        records.append(
            make_ode_record(
                t=state.t,
                gap=smooth.gap(point),
                grad_sq=grad_sq,
                min_grad_sq=running_min,
                gamma=gamma,
                lyap=lyap,
            )
        )
    kept = states if keep_every == 1 else [st for i, st in enumerate(states) if i % keep_every == 0 or i == last_index]
    return OdeResult(
        model=cfg.model,
        momentum=cfg.momentum,
        s=cfg.s,
        dt=cfg.dt,
        problem=problem,
        problem_id=problem_id,
        records=records,
        states=kept,
    )
