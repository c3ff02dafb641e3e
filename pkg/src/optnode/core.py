"""Shared domain types: problems, solutions, Jacobians, and the error taxonomy.

Every other module trades in these records.  A problem is a bundle of
callbacks f(x, u), h(x, u), g(x, u) over an input vector x (length n) and a
decision vector u (length m); a solution is the minimizer y together with
multipliers and solver diagnostics; a Jacobian is the dense m x n derivative
of the solution map with flags describing how it was obtained.

All record types are immutable after construction (arrays are marked
read-only), so problems and solutions can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

# Default absolute tolerances on unit-scale problems.  Tight enough that the
# 1e-5 oracle comparisons downstream are solver-noise-dominated by at most
# one order of magnitude.
STATIONARITY_TOL = 1e-8
FEAS_TOL = 1e-8


# ---------------------------------------------------------------------------
# Error taxonomy
# ---------------------------------------------------------------------------

class NodeError(Exception):
    """Base class for all domain errors.

    Attributes
    ----------
    kind : str
        Machine-readable error kind; equals the subclass name.
    detail : str
        Human-readable context.  Always carries the offending quantity's
        dimensions or condition estimate.
    """

    def __init__(self, detail=""):
        self.kind = type(self).__name__
        self.detail = detail
        super().__init__(f"{self.kind}: {detail}" if detail else self.kind)


class InfeasibleProblem(NodeError):
    """No feasible point exists, or the solution set is non-isolated."""


class SolverDiverged(NodeError):
    """A forward solver exhausted its iteration budget without converging."""


class SingularHessian(NodeError):
    """H is numerically singular where an inverse is required."""


class RankDeficientConstraints(NodeError):
    """Constraint Jacobian lost rank where full rank is required."""


class UndefinedGradient(NodeError):
    """The gradient does not exist at this point (and no fallback applies)."""


class DimensionMismatch(NodeError):
    """A callback's output shape violates the problem's declared dimensions."""


ERROR_KINDS = (
    "InfeasibleProblem",
    "SolverDiverged",
    "SingularHessian",
    "RankDeficientConstraints",
    "UndefinedGradient",
    "DimensionMismatch",
)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

def _freeze(a):
    """Return a float64 copy of `a` marked read-only."""
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Derivatives:
    """Optional analytic derivative callbacks for a problem.

    Each callback takes (x, y) and returns an array with the shape noted
    below (n = input dim, m = output dim, p = equality rows, q = inequality
    rows).  Any subset may be provided; the gradient engine falls back to
    finite differences for the rest.

    f_y : (m,)          first derivative of the objective in u
    f_yy : (m, m)       second derivative of the objective in u
    f_xy : (m, n)       mixed second derivative, d2 f / dx_j du_i
    b_column : (x, y, i) -> (m,)   column i of f_xy, generated on demand
                        (used by the streaming VJP so f_xy is never stored)
    h_y : (p, m)        constraint Jacobian in u
    h_x : (p, n)        constraint Jacobian in x
    h_yy : (p, m, m)    per-constraint second derivatives in u
    h_xy : (p, m, n)    per-constraint mixed second derivatives
    g_y, g_x, g_yy, g_xy : same, for inequality constraints (q rows)
    """

    f_y: Optional[Callable] = None
    f_yy: Optional[Callable] = None
    f_xy: Optional[Callable] = None
    b_column: Optional[Callable] = None
    h_y: Optional[Callable] = None
    h_x: Optional[Callable] = None
    h_yy: Optional[Callable] = None
    h_xy: Optional[Callable] = None
    g_y: Optional[Callable] = None
    g_x: Optional[Callable] = None
    g_yy: Optional[Callable] = None
    g_xy: Optional[Callable] = None


@dataclass(frozen=True)
class DeclarativeProblem:
    """One node's defining optimization problem.

    minimize (over u in R^m)   objective(x, u)
    subject to                 eq_constraints(x, u) = 0      (p rows)
                               ineq_constraints(x, u) <= 0   (q rows)

    `objective` may be None for pure feasibility problems (constraints
    only); every other use requires it.  Inputs are plain 1-D vectors; the
    multi-dimensional case is out of scope.
    """

    objective: Optional[Callable]          # (x, u) -> scalar
    input_dim: int                         # n
    output_dim: int                        # m
    eq_constraints: Optional[Callable] = None    # (x, u) -> (p,)
    ineq_constraints: Optional[Callable] = None  # (x, u) -> (q,)
    derivatives: Optional[Derivatives] = None

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise DimensionMismatch(
                f"dims must be positive, got n={self.input_dim} m={self.output_dim}")


@dataclass(frozen=True)
class SolverInfo:
    iterations: int
    converged: bool
    restarts: int = 0


@dataclass(frozen=True)
class Solution:
    """Solver output for one problem instance.

    multipliers has length p + q with entries for inactive inequalities
    fixed at exact zero (placeholder zeros keep the stacked indexing
    aligned).  active_set marks which inequality rows are active at y.
    """

    y: np.ndarray                 # (m,)
    multipliers: np.ndarray       # (p + q,)
    active_set: np.ndarray        # (q,) bool
    objective_value: float
    solver_info: SolverInfo

    def __post_init__(self):
        object.__setattr__(self, "y", _freeze(np.atleast_1d(self.y)))
        object.__setattr__(self, "multipliers", _freeze(np.atleast_1d(
            np.asarray(self.multipliers, dtype=float))))
        act = np.array(self.active_set, dtype=bool, copy=True)
        act.setflags(write=False)
        object.__setattr__(self, "active_set", act)
        object.__setattr__(self, "objective_value", float(self.objective_value))


@dataclass(frozen=True)
class Jacobian:
    """Dense derivative Dy(x) of a solution map, shape (m, n).

    one_sided is set whenever the value is a one-sided choice (an active
    inequality with zero multiplier, or a non-smooth kink).
    rank_deficient_fallback is set when a pseudo-inverse path was taken.
    """

    matrix: np.ndarray
    one_sided: bool = False
    rank_deficient_fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "matrix", _freeze(np.atleast_2d(self.matrix)))


@dataclass(frozen=True)
class ProblemDims:
    n: int
    m: int
    p: int
    q: int


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _probe_shape(name, got, want):
    if got.shape != want:
        raise DimensionMismatch(f"{name}: expected shape {want}, got {got.shape}")


def validate_problem(problem, x=None, u=None):
    """Probe all callbacks at one point and confirm dimensional consistency.

    Parameters
    ----------
    problem : DeclarativeProblem
    x, u : optional probe point; zeros are used when not supplied.

    Returns
    -------
    ProblemDims with the discovered constraint counts.

    Raises
    ------
    DimensionMismatch on any shape violation, including an objective that
    returns a non-scalar and an equality system with more rows than m.
    """
    n, m = problem.input_dim, problem.output_dim
    x = np.zeros(n) if x is None else np.asarray(x, dtype=float)
    u = np.zeros(m) if u is None else np.asarray(u, dtype=float)
    _probe_shape("x", x, (n,))
    _probe_shape("u", u, (m,))

    if problem.objective is not None:
        val = problem.objective(x, u)
        if np.ndim(val) != 0:
            raise DimensionMismatch(
                f"objective: expected scalar, got shape {np.shape(val)}")
    elif problem.eq_constraints is None and problem.ineq_constraints is None:
        raise DimensionMismatch("problem has neither objective nor constraints")

    p = q = 0
    if problem.eq_constraints is not None:
        h = np.atleast_1d(np.asarray(problem.eq_constraints(x, u), dtype=float))
        if h.ndim != 1:
            raise DimensionMismatch(f"eq_constraints: expected vector, got shape {h.shape}")
        p = h.shape[0]
        if problem.objective is not None and p > m:
            raise DimensionMismatch(
                f"eq_constraints: p={p} rows exceed output_dim m={m} (over-determined)")
    if problem.ineq_constraints is not None:
        g = np.atleast_1d(np.asarray(problem.ineq_constraints(x, u), dtype=float))
        if g.ndim != 1:
            raise DimensionMismatch(f"ineq_constraints: expected vector, got shape {g.shape}")
        q = g.shape[0]

    d = problem.derivatives
    if d is not None:
        checks = [("f_y", d.f_y, (m,)), ("f_yy", d.f_yy, (m, m)), ("f_xy", d.f_xy, (m, n)),
                  ("h_y", d.h_y, (p, m)), ("h_x", d.h_x, (p, n)),
                  ("h_yy", d.h_yy, (p, m, m)), ("h_xy", d.h_xy, (p, m, n)),
                  ("g_y", d.g_y, (q, m)), ("g_x", d.g_x, (q, n)),
                  ("g_yy", d.g_yy, (q, m, m)), ("g_xy", d.g_xy, (q, m, n))]
        for name, fn, want in checks:
            if fn is None:
                continue
            _probe_shape(name, np.asarray(fn(x, u), dtype=float), want)
        if d.b_column is not None:
            _probe_shape("b_column", np.asarray(d.b_column(x, u, 0), dtype=float), (m,))
    return ProblemDims(n=n, m=m, p=p, q=q)


@dataclass(frozen=True)
class SolutionResiduals:
    stationarity: float     # inf-norm of D_Y f - lambda^T D_Y h-tilde
    eq_violation: float     # inf-norm of h
    ineq_violation: float   # max_i g_i (negative means strictly feasible)
    sign_violation: float   # max over active inequality rows of lambda_i (>0 is bad)


def solution_residuals(problem, x, sol):
    """KKT residuals of a Solution, for asserting the Solution invariants.

    Uses analytic first derivatives when the problem provides them and
    central finite differences otherwise.
    """
    from . import numdiff  # late import; numdiff has no core dependency cycle

    x = np.asarray(x, dtype=float)
    y = sol.y
    d = problem.derivatives
    cfg = numdiff.FdConfig()

    if problem.objective is None:
        f_y = np.zeros(problem.output_dim)
    elif d is not None and d.f_y is not None:
        f_y = np.asarray(d.f_y(x, y), dtype=float)
    else:
        f_y = numdiff.fd_gradient(lambda u: problem.objective(x, u), y, cfg)

    stacked = f_y.copy()
    eq_violation = 0.0
    lam = sol.multipliers
    k = 0
    if problem.eq_constraints is not None:
        h = np.atleast_1d(problem.eq_constraints(x, y))
        eq_violation = float(np.max(np.abs(h))) if h.size else 0.0
        if d is not None and d.h_y is not None:
            A = np.asarray(d.h_y(x, y), dtype=float)
        else:
            A = numdiff.fd_jacobian(lambda u: problem.eq_constraints(x, u), y, cfg)
        for i in range(A.shape[0]):
            stacked -= lam[k + i] * A[i]
        k += A.shape[0]

    ineq_violation = -np.inf
    sign_violation = -np.inf
    if problem.ineq_constraints is not None:
        g = np.atleast_1d(problem.ineq_constraints(x, y))
        ineq_violation = float(np.max(g)) if g.size else -np.inf
        if d is not None and d.g_y is not None:
            G = np.asarray(d.g_y(x, y), dtype=float)
        else:
            G = numdiff.fd_jacobian(lambda u: problem.ineq_constraints(x, u), y, cfg)
        for i in range(G.shape[0]):
            stacked -= lam[k + i] * G[i]
            if sol.active_set.size and sol.active_set[i]:
                sign_violation = max(sign_violation, float(lam[k + i]))

    return SolutionResiduals(
        stationarity=float(np.max(np.abs(stacked))) if stacked.size else 0.0,
        eq_violation=eq_violation,
        ineq_violation=ineq_violation,
        sign_violation=sign_violation,
    )
