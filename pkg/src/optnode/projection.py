"""Euclidean projection nodes onto L1/L2/Linf spheres and balls.

    y(x) = argmin_u  0.5 ||u - x||^2   subject to  ||u||_p = r  (sphere)
                                                or ||u||_p <= r (ball)

Forward solvers are exact: normalization for L2, sign-decomposed
sort-and-threshold simplex projection for L1, coordinate clamping for
Linf.  Gradients are the closed forms I - a a^T / (a^T a) with
a = (D_Y h)^T, plus masked variants that zero the plateau dimensions and
thereby match what numerical differentiation of the solver produces.

Radius != 1 is handled by the exact scaling reduction: project x/r onto
the unit object and rescale (gradients are unaffected, multipliers scale
by r).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (DeclarativeProblem, Derivatives, InfeasibleProblem,
                   Jacobian, Solution, SolverInfo, UndefinedGradient)

TIE_TOL = 1e-9        # Linf largest-magnitude tie detection
BOUNDARY_RTOL = 1e-9  # ball boundary detection, relative to radius


class Norm(enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


class Surface(enum.Enum):
    SPHERE = "sphere"
    BALL = "ball"


@dataclass(frozen=True)
class ProjectionSpec:
    norm: Norm
    surface: Surface = Surface.SPHERE
    radius: float = 1.0
    masked_gradient: bool = False

    def __post_init__(self):
        if not isinstance(self.norm, Norm):
            object.__setattr__(self, "norm", Norm(self.norm))
        if not isinstance(self.surface, Surface):
            object.__setattr__(self, "surface", Surface(self.surface))
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")


def _norm(z, norm):
    if norm is Norm.L2:
        return float(np.linalg.norm(z))
    if norm is Norm.L1:
        return float(np.sum(np.abs(z)))
    return float(np.max(np.abs(z))) if z.size else 0.0


def _sign_out(z):
    """sign with sign(0) = +1; used when pushing outward from the interior
    so zero coordinates get a deterministic direction."""
    s = np.sign(z)
    s[s == 0.0] = 1.0
    return s


def _simplex_project(v, total):
    """Project nonnegative v onto the simplex {w >= 0, sum w = total} by
    the sort-and-threshold rule.  O(n log n); output is exact."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    j = np.arange(1, v.size + 1)
    rho = np.max(np.flatnonzero(u - css / j > 0.0)) + 1
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _unit_sphere_project(z, norm):
    """Projection of z onto the unit p-sphere; returns (w, lam)."""
    if norm is Norm.L2:
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            raise InfeasibleProblem(
                f"L2 sphere projection of x = 0 (solution set is the entire "
                f"sphere), n={z.size}")
        return z / nz, 1.0 - nz
    if norm is Norm.L1:
        s = float(np.sum(np.abs(z)))
        if s >= 1.0:
            w = np.sign(z) * _simplex_project(np.abs(z), 1.0)
        else:
            # strictly inside: spread the deficit over every coordinate,
            # which is the closest point on the sphere surface
            w = z + _sign_out(z) * ((1.0 - s) / z.size)
        i = int(np.argmax(np.abs(w)))
        return w, float(np.sign(w[i]) * (w[i] - z[i]))
    # Linf
    mx = float(np.max(np.abs(z)))
    if mx >= 1.0:
        w = np.clip(z, -1.0, 1.0)
    else:
        # strictly inside: push every tied largest-magnitude coordinate to
        # the boundary (deterministic choice among the non-unique optima)
        w = z.copy()
        ties = np.abs(z) >= mx - TIE_TOL
        w[ties] = _sign_out(z[ties])
    i = int(np.argmax(np.abs(w)))
    return w, float(np.sign(w[i]) * (w[i] - z[i]))


def project(x, spec):
    """Solve the projection problem.  Returns a Solution with m = n.

    Sphere solutions carry the single equality multiplier; ball solutions
    carry the single inequality multiplier (zero when inactive) and the
    active_set flag.  L2-sphere projection of x = 0 is infeasible (the
    solution set is the whole sphere).
    """
    x = np.asarray(x, dtype=float).ravel()
    spec = spec if isinstance(spec, ProjectionSpec) else ProjectionSpec(spec)
    r = spec.radius
    z = x / r
    if spec.surface is Surface.SPHERE:
        w, lam = _unit_sphere_project(z, spec.norm)
        y = r * w
        mult = np.array([r * lam])
        active = np.zeros(0, dtype=bool)
    else:
        nz = _norm(z, spec.norm)
        if nz <= 1.0 + BOUNDARY_RTOL:
            y = x.copy()
            on_boundary = abs(nz - 1.0) <= BOUNDARY_RTOL
            mult = np.array([0.0])
            active = np.array([on_boundary])
        else:
            w, lam = _unit_sphere_project(z, spec.norm)
            y = r * w
            mult = np.array([r * lam])
            active = np.array([True])
    return Solution(y=y, multipliers=mult, active_set=active,
                    objective_value=0.5 * float(np.sum((y - x) ** 2)),
                    solver_info=SolverInfo(iterations=0, converged=True))


def _sphere_gradient(z, w, norm, masked):
    n = z.size
    if norm is Norm.L2:
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            raise UndefinedGradient(f"L2 gradient undefined at x = 0, n={n}")
        return (np.eye(n) - np.outer(w, w)) / nz
    if norm is Norm.L1:
        a = np.sign(w)              # sign(0) = 0: plateau dimensions
        ata = float(a @ a)
        D = np.eye(n) - np.outer(a, a) / ata
        if masked:
            # mask with p p^T, p = |a| boolean: zero rows/cols off the support
            D = np.diag(np.abs(a)) - np.outer(a, a) / ata
        return D
    # Linf
    amax = float(np.max(np.abs(w)))
    tie = np.abs(w) >= amax - TIE_TOL
    a = np.where(tie, np.sign(w), 0.0)
    if not np.any(a):
        raise UndefinedGradient(f"Linf constraint gradient vanished, n={n}")
    if masked:
        return np.eye(n) - np.diag(np.abs(a))
    return np.eye(n) - np.outer(a, a) / float(a @ a)


def project_gradient(x, spec, y):
    """Closed-form Jacobian of the projection, shape (n, n).

    Sphere: (1/||x||)(I - y y^T) for L2 (at unit radius); I - a a^T/(a^T a)
    for L1/Linf with a the constraint gradient (Linf ties detected to
    1e-9).  masked_gradient selects the plateau-zeroing variants, which
    agree with one-sided numerical differentiation of the solver.  Ball:
    exact zero strictly inside, sphere form outside; on the boundary
    (within 1e-9 relative) the sphere form is returned with
    one_sided = true.
    """
    x = np.asarray(x, dtype=float).ravel()
    spec = spec if isinstance(spec, ProjectionSpec) else ProjectionSpec(spec)
    y = np.asarray(y, dtype=float).ravel()
    z = x / spec.radius
    w = y / spec.radius
    if spec.surface is Surface.SPHERE:
        return Jacobian(_sphere_gradient(z, w, spec.norm, spec.masked_gradient))
    nz = _norm(z, spec.norm)
    if nz < 1.0 - BOUNDARY_RTOL:
        return Jacobian(np.zeros((x.size, x.size)))
    one_sided = abs(nz - 1.0) <= BOUNDARY_RTOL
    return Jacobian(_sphere_gradient(z, w, spec.norm, spec.masked_gradient),
                    one_sided=one_sided)


def as_problem(spec, n):
    """The projection node as a DeclarativeProblem with analytic callbacks,
    for cross-checking against the generic single-constraint engine at
    smooth points."""
    spec = spec if isinstance(spec, ProjectionSpec) else ProjectionSpec(spec)
    r = spec.radius

    def constraint_grad(u):
        if spec.norm is Norm.L2:
            return u / np.linalg.norm(u)
        if spec.norm is Norm.L1:
            return np.sign(u)
        amax = np.max(np.abs(u))
        return np.where(np.abs(u) >= amax - TIE_TOL, np.sign(u), 0.0)

    def constraint(x, u):
        return np.array([_norm(u, spec.norm) - r])

    def c_y(x, u):
        return constraint_grad(u)[None, :]

    def c_yy(x, u):
        if spec.norm is Norm.L2:
            nu = float(np.linalg.norm(u))
            uh = u / nu
            return ((np.eye(n) - np.outer(uh, uh)) / nu)[None, :, :]
        return np.zeros((1, n, n))

    def c_x(x, u):
        return np.zeros((1, n))

    def c_xy(x, u):
        return np.zeros((1, n, n))

    common = dict(
        f_y=lambda x, u: u - x,
        f_yy=lambda x, u: np.eye(n),
        f_xy=lambda x, u: -np.eye(n),
    )
    if spec.surface is Surface.SPHERE:
        derivs = Derivatives(h_y=c_y, h_x=c_x, h_yy=c_yy, h_xy=c_xy, **common)
        return DeclarativeProblem(
            objective=lambda x, u: 0.5 * float(np.sum((u - x) ** 2)),
            input_dim=n, output_dim=n, eq_constraints=constraint,
            derivatives=derivs)
    derivs = Derivatives(g_y=c_y, g_x=c_x, g_yy=c_yy, g_xy=c_xy, **common)
    return DeclarativeProblem(
        objective=lambda x, u: 0.5 * float(np.sum((u - x) ** 2)),
        input_dim=n, output_dim=n, ineq_constraints=constraint,
        derivatives=derivs)
