"""Objective definitions shared by the optimizers, ODE models, and audits.

A problem is a small bundle of callables plus the constants the certificates
need: the gradient Lipschitz modulus ``L``, and (when known) the minimizer and
optimal value.  Composite problems add a nonsmooth term through its proximal
map, so FISTA-style methods and the plain gradient family share one container.

Three kinds of instances are used throughout:

* the reference 2-d quadratic ``f(x) = 0.02 x_1^2 + 0.005 x_2^2``,
* general quadratics ``f(x) = x'Qx/2 - b'x`` with symmetric PSD ``Q``,
* LASSO instances ``0.5 ||Ax-b||^2 + lam ||x||_1``.

String ids understood by :func:`load_problem` (and hence by the CLI):
``reference-quadratic``, ``quadratic:<path.json>``, ``lasso:<path.json>``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

# Iterates or ODE states beyond this norm abort the run as divergent.
DIVERGENCE_NORM = 1e12


class ConfigError(ValueError):
    """Invalid problem or run configuration (CLI exit code 1)."""


class DivergenceError(RuntimeError):
    """An iterate or ODE state became non-finite or left the trust region."""


def check_finite(x: Array, what: str) -> None:
    """Abort with a diagnosable error when a state escapes or degenerates."""
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"{what} is non-finite")
    if float(np.linalg.norm(x)) > DIVERGENCE_NORM:
        raise DivergenceError(f"{what} exceeded norm {DIVERGENCE_NORM:g}")


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothObjective:
    """Convex objective with L-Lipschitz gradient.

    Parameters
    ----------
    dimension : int
        Ambient dimension d.
    value, gradient : callables
        ``value(x) -> float`` and ``gradient(x) -> ndarray`` for x of shape (d,).
    lipschitz : float
        Gradient Lipschitz modulus L > 0.
    minimizer, optimal_value : optional
        Known minimizer x* and f(x*); required by gap recording and audits.
    """

    dimension: int
    value: Callable[[Array], float]
    gradient: Callable[[Array], Array]
    lipschitz: float
    minimizer: Optional[Array] = None
    optimal_value: Optional[float] = None

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.dimension}")
        if not (np.isfinite(self.lipschitz) and self.lipschitz > 0):
            raise ConfigError(f"lipschitz must be a positive real, got {self.lipschitz}")
        if self.minimizer is not None and self.minimizer.shape != (self.dimension,):
            raise ConfigError("minimizer shape does not match dimension")

    def gap(self, x: Array) -> float:
        """f(x) - f(x*); refuses when the optimum is unknown."""
        if self.optimal_value is None:
            raise ConfigError("objective gap requested but the optimal value is unknown")
        return float(self.value(x)) - self.optimal_value


@dataclass(frozen=True)
class NonsmoothTerm:
    """Convex nonsmooth term accessed only through its value and prox.

    ``prox(z, sigma)`` returns argmin_u { ||u - z||^2 / (2 sigma) + g(u) }.
    """

    value: Callable[[Array], float]
    prox: Callable[[Array, float], Array]
    is_zero: bool = False


@dataclass(frozen=True)
class CompositeProblem:
    """Smooth + nonsmooth pair, with optional composite optimum metadata."""

    smooth: SmoothObjective
    nonsmooth: NonsmoothTerm
    composite_minimizer: Optional[Array] = None
    composite_optimum: Optional[float] = None

    @property
    def dimension(self) -> int:
        return self.smooth.dimension

    def objective(self, x: Array) -> float:
        return float(self.smooth.value(x)) + float(self.nonsmooth.value(x))

    def composite_gap(self, x: Array) -> float:
        if self.composite_optimum is None:
            raise ConfigError("composite gap requested but the composite optimum is unknown")
        return self.objective(x) - self.composite_optimum


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------


def power_iteration_norm(
    apply_mat: Callable[[Array], Array],
    dimension: int,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> float:
    """Spectral norm of a symmetric PSD operator by power iteration.

    Deterministic start vector (all-ones plus a small index ramp, so it is never
    orthogonal to the leading eigenvector of a nonnegative operator in practice).
    Stops when the Rayleigh estimate is stable to ``tol`` relative.
    """
    v = np.ones(dimension) + np.arange(dimension) / (10.0 * dimension)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = apply_mat(v)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        if abs(norm_w - estimate) <= tol * max(1.0, norm_w):
            return norm_w
        estimate = norm_w
        v = w / norm_w
    return estimate


def make_quadratic(Q: Array, b: Optional[Array] = None, *, lipschitz: Optional[float] = None) -> SmoothObjective:
    """Quadratic ``f(x) = x'Qx/2 - b'x`` with symmetric PSD Q.

    The Lipschitz modulus defaults to the spectral norm of Q via power
    iteration.  The minimizer is obtained from ``Qx = b`` when that system is
    solvable; otherwise it is left unknown.
    """
    Q = np.array(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ConfigError(f"Q must be square, got shape {Q.shape}")
    d = Q.shape[0]
    scale = max(1.0, float(np.abs(Q).max()))
    if float(np.abs(Q - Q.T).max()) > 1e-12 * scale:
        raise ConfigError("Q must be symmetric")
    b = np.zeros(d) if b is None else np.array(b, dtype=float)
    if b.shape != (d,):
        raise ConfigError(f"b must have shape ({d},), got {b.shape}")

    def value(x: Array) -> float:
        return 0.5 * float(x @ (Q @ x)) - float(b @ x)

    def gradient(x: Array) -> Array:
        return Q @ x - b

    if lipschitz is None:
        lipschitz = power_iteration_norm(lambda v: Q @ v, d)

    minimizer = None
    optimal = None
    if not np.any(b):
        # b = 0: the origin minimizes any PSD quadratic.
        minimizer = np.zeros(d)
        optimal = 0.0
    else:
        try:
            candidate = np.linalg.solve(Q, b)
        except np.linalg.LinAlgError:
            candidate = None
        if candidate is not None and float(np.linalg.norm(Q @ candidate - b)) <= 1e-9 * max(1.0, float(np.linalg.norm(b))):
            minimizer = candidate
            optimal = value(candidate)

    return SmoothObjective(d, value, gradient, float(lipschitz), minimizer, optimal)


def reference_quadratic() -> SmoothObjective:
    """The reference 2-d quadratic ``f(x) = 0.02 x_1^2 + 0.005 x_2^2``.

    Hessian diag(0.04, 0.01), so L = 0.04 exactly and the minimizer is the
    origin with optimal value 0.
    """
    return make_quadratic(np.diag([0.04, 0.01]), np.zeros(2), lipschitz=0.04)


def zero_term() -> NonsmoothTerm:
    """The identically-zero nonsmooth term (prox = identity)."""
    return NonsmoothTerm(value=lambda x: 0.0, prox=lambda z, sigma: z, is_zero=True)


def l1_term(lam: float) -> NonsmoothTerm:
    """``g(x) = lam ||x||_1`` with the soft-thresholding prox."""
    if not (np.isfinite(lam) and lam >= 0):
        raise ConfigError(f"l1 weight must be a nonnegative real, got {lam}")
    if lam == 0:
        return zero_term()

    def value(x: Array) -> float:
        return lam * float(np.abs(x).sum())

    def prox(z: Array, sigma: float) -> Array:
        t = lam * sigma
        return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)

    return NonsmoothTerm(value=value, prox=prox)


def smooth_composite(smooth: SmoothObjective) -> CompositeProblem:
    """Wrap a smooth objective as a composite with zero nonsmooth term."""
    return CompositeProblem(
        smooth=smooth,
        nonsmooth=zero_term(),
        composite_minimizer=smooth.minimizer,
        composite_optimum=smooth.optimal_value,
    )


# ---------------------------------------------------------------------------
# proximal operations
# ---------------------------------------------------------------------------


def proximal_map(problem: CompositeProblem, x: Array, s: float) -> Array:
    """``P_s(x) = prox_{s g}(x - s grad f(x))``: one proximal gradient step."""
    if not (np.isfinite(s) and s > 0):
        raise ConfigError(f"step size must be a positive real, got {s}")
    return problem.nonsmooth.prox(x - s * problem.smooth.gradient(x), s)


def proximal_subgradient(problem: CompositeProblem, x: Array, s: float) -> Array:
    """``G_s(x) = (x - P_s(x)) / s``; reduces to grad f(x) when g = 0."""
    return (x - proximal_map(problem, x, s)) / s


# ---------------------------------------------------------------------------
# LASSO
# ---------------------------------------------------------------------------


def _reference_composite_solve(
    smooth: SmoothObjective,
    nonsmooth: NonsmoothTerm,
    x0: Array,
    grad_map_tol: float = 1e-12,
    max_iter: int = 500_000,
) -> Array:
    """Solve a composite problem to high accuracy with a plain FISTA loop.

    Kept local and independent of the optimizers module on purpose: the
    optimum it produces is the yardstick the optimizer tests are measured
    against, so it must not share code with them.  Momentum (k-1)/(k+2),
    step 1/L, stopping on ``||G_s|| <= grad_map_tol``.
    """
    s = 1.0 / smooth.lipschitz
    x = np.array(x0, dtype=float)
    x_prev = x.copy()
    for k in range(1, max_iter + 1):
        y = x + ((k - 1.0) / (k + 2.0)) * (x - x_prev)
        x_next = nonsmooth.prox(y - s * smooth.gradient(y), s)
        grad_map = float(np.linalg.norm(y - x_next)) / s
        x_prev, x = x, x_next
        if grad_map <= grad_map_tol:
            return x
    raise ConfigError(
        f"reference composite solve did not reach ||G_s|| <= {grad_map_tol:g} in {max_iter} iterations"
    )


def lasso_problem(A: Array, b: Array, lam: float, *, solve: bool = True) -> CompositeProblem:
    """LASSO ``Phi(x) = 0.5 ||Ax - b||^2 + lam ||x||_1``.

    L = lambda_max(A'A) by power iteration.  With ``solve=True`` (default) the
    composite minimizer is computed once by the reference solver and cached in
    the returned problem, so gap recording and audits can use it.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    if A.ndim != 2:
        raise ConfigError(f"A must be a 2-d matrix, got shape {A.shape}")
    m, n = A.shape
    if b.shape != (m,):
        raise ConfigError(f"b must have shape ({m},), got {b.shape}")

    def value(x: Array) -> float:
        r = A @ x - b
        return 0.5 * float(r @ r)

    def gradient(x: Array) -> Array:
        return A.T @ (A @ x - b)

    lipschitz = power_iteration_norm(lambda v: A.T @ (A @ v), n)
    smooth = SmoothObjective(n, value, gradient, lipschitz)
    nonsmooth = l1_term(lam)
    problem = CompositeProblem(smooth=smooth, nonsmooth=nonsmooth)
    if solve:
        x_star = _reference_composite_solve(smooth, nonsmooth, np.zeros(n))
        problem = replace(
            problem,
            composite_minimizer=x_star,
            composite_optimum=problem.objective(x_star),
        )
    return problem


def random_lasso(
    n: int = 50,
    m: int = 80,
    nnz: int = 10,
    noise: float = 0.01,
    lam_ratio: float = 0.1,
    seed: int = 7,
    *,
    solve: bool = True,
) -> CompositeProblem:
    """Deterministic random LASSO instance (seeded Gaussian design).

    ``A`` has rows scaled by 1/sqrt(m); the ground signal has ``nnz`` unit-ish
    spikes; ``lam = lam_ratio * ||A'b||_inf`` keeps the solution sparse but
    nontrivial.
    """
    rng = np.random.default_rng(seed)
    nnz = min(nnz, n)
    A = rng.standard_normal((m, n)) / np.sqrt(m)
    x_true = np.zeros(n)
    support = rng.choice(n, size=nnz, replace=False)
    x_true[support] = rng.standard_normal(nnz) + np.sign(rng.standard_normal(nnz))
    b = A @ x_true + noise * rng.standard_normal(m)
    lam = lam_ratio * float(np.abs(A.T @ b).max())
    return lasso_problem(A, b, lam, solve=solve)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

_PROBLEM_CACHE: dict[str, CompositeProblem] = {}


def _load_json(path_str: str) -> dict:
    path = Path(path_str)
    if not path.is_file():
        raise ConfigError(f"problem file not found: {path}")
    try:
        with path.open() as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"problem file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"problem file {path} must contain a JSON object")
    return data


def load_problem(problem_id: str) -> CompositeProblem:
    """Resolve a problem id to a (cached) CompositeProblem.

    ``reference-quadratic`` | ``quadratic:<path>`` (JSON with row-major "Q" and
    optional "b") | ``lasso:<path>`` (JSON with "A", "b", "lambda").
    """
    if problem_id in _PROBLEM_CACHE:
        return _PROBLEM_CACHE[problem_id]

    if problem_id == "reference-quadratic":
        problem = smooth_composite(reference_quadratic())
    elif problem_id.startswith("quadratic:"):
        data = _load_json(problem_id.split(":", 1)[1])
        if "Q" not in data:
            raise ConfigError("quadratic problem file must contain 'Q'")
        problem = smooth_composite(make_quadratic(np.array(data["Q"]), np.array(data["b"]) if "b" in data else None))
    elif problem_id.startswith("lasso:"):
        data = _load_json(problem_id.split(":", 1)[1])
        missing = [key for key in ("A", "b", "lambda") if key not in data]
        if missing:
            raise ConfigError(f"lasso problem file is missing {missing}")
        problem = lasso_problem(np.array(data["A"]), np.array(data["b"]), float(data["lambda"]))
    else:
        raise ConfigError(
            f"unknown problem id {problem_id!r}; expected 'reference-quadratic', 'quadratic:<path>' or 'lasso:<path>'"
        )

    _PROBLEM_CACHE[problem_id] = problem
    return problem
