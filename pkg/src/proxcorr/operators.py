"""Maximal monotone operators of the form ``F(z) + N_box(z)`` and resolvent certificates.

Every operator handled here splits into a single-valued monotone part ``F`` and
the normal cone of a (possibly unbounded) box.  An operator object stores one
such pair per *row*; row ``i`` is agent ``i``'s operator, so the collective
operator ``T(Z)`` acting on an ``N x n`` iterate is the same object as the list
of local operators ``T_i``.  ``op.agent(i)`` gives a single-row view.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

EXACT_TOL = 1e-12


class InfeasibleCandidateError(ValueError):
    """The candidate point lies outside the operator's domain (the box)."""


class OperatorSpec:
    """Base class: rows of monotone operators ``T_i(z) = F_i(z) + N_{[l_i, u_i]}(z)``.

    Subclasses implement :meth:`_field`, the single-valued part evaluated on a
    subset of rows.
    """

    kind = "generic"

    def __init__(self, lower, upper, lipschitz=None):
        self.lower = np.atleast_2d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_2d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper bounds must have equal shape")
        if np.any(self.lower > self.upper):
            raise ValueError("empty box: lower > upper")
        self._lipschitz = None if lipschitz is None else np.broadcast_to(
            np.asarray(lipschitz, dtype=float), (self.lower.shape[0],)).copy()

    @property
    def num_agents(self):
        return self.lower.shape[0]

    @property
    def dim(self):
        return self.lower.shape[1]

    def _rows(self, rows):
        return np.arange(self.num_agents) if rows is None else np.asarray(rows, dtype=int)

    def field(self, Z, rows=None):
        """Single-valued part ``F`` evaluated row-wise: ``F_{rows[r]}(Z[r])``."""
        rows = self._rows(rows)
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape != (len(rows), self.dim):
            raise ValueError(f"expected points of shape {(len(rows), self.dim)}, got {Z.shape}")
        return self._field(Z, rows)

    def _field(self, Z, rows):
        raise NotImplementedError

    def lipschitz(self, rows=None):
        """Known Lipschitz constants of ``F`` per row, or ``None`` if unknown."""
        if self._lipschitz is None:
            return None
        return self._lipschitz[self._rows(rows)]

    def project(self, Z, rows=None):
        rows = self._rows(rows)
        return np.clip(Z, self.lower[rows], self.upper[rows])

    def contains(self, Z, rows=None):
        rows = self._rows(rows)
        return (Z >= self.lower[rows]) & (Z <= self.upper[rows])

    def agent(self, i):
        """Single-agent view of row ``i`` (0-based)."""
        return RowView(self, int(i))

    def has_box(self, rows=None):
        rows = self._rows(rows)
        return bool(np.isfinite(self.lower[rows]).any() or np.isfinite(self.upper[rows]).any())

    def selection(self, Z, rows=None):
        """An element of ``T(Z)``: the single-valued part (zero normal-cone component)."""
        return self.field(Z, rows)


class RowView(OperatorSpec):
    def __init__(self, parent, index):
        self.parent = parent
        self.index = index
        self.kind = parent.kind
        lip = parent.lipschitz([index])
        super().__init__(parent.lower[index:index + 1], parent.upper[index:index + 1], lip)

    def _field(self, Z, rows):
        return self.parent.field(Z, np.full(len(rows), self.index))

    def __repr__(self):
        return f"RowView({self.parent!r}, agent={self.index})"


class AffineOperator(OperatorSpec):
    """``T_i(z) = A_i z - b_i + N_box(z)`` with each ``A_i`` monotone (``A_i + A_i^T`` PSD).

    Covers the zero operator, normal cones of boxes, subdifferentials of convex
    quadratics and the saddle operators of linearly-constrained quadratic programs.
    """

    kind = "affine-monotone"

    def __init__(self, A, b, lower=None, upper=None, kind=None):
        A = np.asarray(A, dtype=float)
        if A.ndim == 2:
            A = A[None]
        b = np.atleast_2d(np.asarray(b, dtype=float))
        m, n, _ = A.shape
        if b.shape != (m, n):
            raise ValueError(f"b must have shape {(m, n)}")
        lower = np.full((m, n), -np.inf) if lower is None else np.broadcast_to(lower, (m, n))
        upper = np.full((m, n), np.inf) if upper is None else np.broadcast_to(upper, (m, n))
        sym = A + np.transpose(A, (0, 2, 1))
        if np.linalg.eigvalsh(sym / 2).min() < -1e-10:
            raise ValueError("affine operator is not monotone: A + A^T has a negative eigenvalue")
        self.A = A
        self.b = b
        if kind is not None:
            self.kind = kind
        super().__init__(lower, upper, np.linalg.norm(A, ord=2, axis=(1, 2)))

    def _field(self, Z, rows):
        return np.einsum("rij,rj->ri", self.A[rows], Z) - self.b[rows]

    def __repr__(self):
        return f"AffineOperator(N={self.num_agents}, n={self.dim}, kind={self.kind!r})"


def zero_operator(num_agents, dim):
    """``T_i = {0}``; its resolvent is the identity."""
    return AffineOperator(np.zeros((num_agents, dim, dim)), np.zeros((num_agents, dim)), kind="zero")


def box_normal_cone(lower, upper):
    """Normal cone of a box, one row per agent; its resolvent is the projection."""
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    m, n = lower.shape
    return AffineOperator(np.zeros((m, n, n)), np.zeros((m, n)), lower, upper, kind="normal-cone-of-box")


def quadratic_subdifferential(H, g):
    """Gradient of ``f_i(z) = z^T H_i z / 2 - g_i^T z`` for PSD ``H_i``."""
    return AffineOperator(H, g, kind="subdifferential-of-convex-function")


class SaddleLagrangianOperator(OperatorSpec):
    """Saddle operator of ``f_i(x) + lam^T h_i(x) + I_Omega(x) - I_K(lam)``.

    ``z = (x, lam)`` with ``x`` in ``R^s`` and ``lam`` in ``R^m``; the first
    ``num_ineq`` multipliers are sign-constrained and the rest free.  The
    callables are vectorized over rows::

        grad_f(rows, X) -> (r, s)
        h(rows, X)      -> (r, m)
        jac_h(rows, X)  -> (r, m, s)

    The single-valued part is ``(grad f + J_h^T lam, -h(x))``.
    """

    kind = "saddle-lagrangian"

    def __init__(self, s, m, num_ineq, grad_f, h, jac_h, x_lower, x_upper, lipschitz=None):
        x_lower = np.atleast_2d(np.asarray(x_lower, dtype=float))
        x_upper = np.atleast_2d(np.asarray(x_upper, dtype=float))
        N = x_lower.shape[0]
        lam_lower = np.full((N, m), -np.inf)
        lam_lower[:, :num_ineq] = 0.0
        lower = np.hstack([x_lower, lam_lower])
        upper = np.hstack([x_upper, np.full((N, m), np.inf)])
        self.s, self.m, self.num_ineq = s, m, num_ineq
        self.grad_f, self.h, self.jac_h = grad_f, h, jac_h
        super().__init__(lower, upper, lipschitz)

    def _field(self, Z, rows):
        X, lam = Z[:, : self.s], Z[:, self.s:]
        J = self.jac_h(rows, X)
        gx = self.grad_f(rows, X) + np.einsum("rms,rm->rs", J, lam)
        glam = -self.h(rows, X)
        return np.hstack([gx, glam])

    def __repr__(self):
        return f"SaddleLagrangianOperator(N={self.num_agents}, s={self.s}, m={self.m})"


class SumOperator(OperatorSpec):
    """Row-wise sum of operators: fields add, boxes intersect."""

    kind = "sum-of-these"

    def __init__(self, *ops):
        if not ops:
            raise ValueError("need at least one operator")
        shape = ops[0].lower.shape
        if any(op.lower.shape != shape for op in ops):
            raise ValueError("summands must have the same number of rows and dimension")
        self.ops = ops
        lower = np.max([op.lower for op in ops], axis=0)
        upper = np.min([op.upper for op in ops], axis=0)
        lips = [op.lipschitz() for op in ops]
        lip = None if any(l is None for l in lips) else np.sum(lips, axis=0)
        super().__init__(lower, upper, lip)

    def _field(self, Z, rows):
        return sum(op.field(Z, rows) for op in self.ops)


class CallableOperator(OperatorSpec):
    """Per-agent callables ``F_i(z) -> R^n`` (looped over rows; for small ad hoc problems)."""

    def __init__(self, fields, lower, upper, lipschitz=None, kind="generic"):
        self.fields = list(fields)
        self.kind = kind
        super().__init__(lower, upper, lipschitz)

    def _field(self, Z, rows):
        return np.array([self.fields[r](z) for r, z in zip(rows, Z)], dtype=float).reshape(Z.shape)


# ---------------------------------------------------------------------------
# inexactness criteria


class CriterionMode(enum.Enum):
    EXACT = "exact"
    A_SUMMABLE = "A"
    B_RELATIVE = "B"


@dataclass(frozen=True)
class Schedule:
    """Precision schedule ``k -> value``.

    Families: ``power`` gives ``c/(k+1)**p``; ``geometric`` gives ``c*q**k``;
    ``custom`` wraps an arbitrary callable (summability unverifiable).
    """

    family: str
    c: float = 1.0
    p: float = 2.0
    q: float = 0.5
    func: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.family not in ("power", "geometric", "custom", "zero"):
            raise ValueError(f"unknown schedule family {self.family!r}")
        if self.family == "custom" and self.func is None:
            raise ValueError("custom schedule needs func")
        if self.c < 0:
            raise ValueError("schedule scale c must be nonnegative")
        if self.family == "geometric" and not (0 <= self.q):
            raise ValueError("geometric ratio q must be nonnegative")

    def __call__(self, k):
        if self.family == "power":
            return self.c / (k + 1) ** self.p
        if self.family == "geometric":
            return self.c * self.q ** k
        if self.family == "zero":
            return 0.0
        return float(self.func(k))

    @property
    def summable(self):
        """``True``/``False`` for the closed-form families, ``None`` when unknown."""
        if self.family == "zero" or self.c == 0:
            return True
        if self.family == "power":
            return self.p > 1
        if self.family == "geometric":
            return self.q < 1
        return None

    def describe(self):
        if self.family == "power":
            return f"{self.c:g}/(k+1)^{self.p:g}"
        if self.family == "geometric":
            return f"{self.c:g}*{self.q:g}^k"
        return self.family


@dataclass(frozen=True)
class InexactnessCriterion:
    """Error-control policy for resolvent evaluations."""

    mode: CriterionMode = CriterionMode.EXACT
    schedule: Schedule = Schedule("zero")

    def __post_init__(self):
        if self.mode is CriterionMode.EXACT and self.schedule.family != "zero":
            object.__setattr__(self, "schedule", Schedule("zero"))
        if self.mode is not CriterionMode.EXACT:
            s = self.schedule.summable
            if s is None:
                warnings.warn("custom precision schedule: summability cannot be verified", stacklevel=3)

    @classmethod
    def exact(cls):
        return cls()

    @classmethod
    def absolute(cls, schedule):
        return cls(CriterionMode.A_SUMMABLE, schedule)

    @classmethod
    def relative(cls, schedule):
        return cls(CriterionMode.B_RELATIVE, schedule)

    @property
    def is_exact(self):
        return self.mode is CriterionMode.EXACT

    @property
    def summable(self):
        return self.schedule.summable

    def bound(self, k, alpha, step_norm=None):
        """Certificate bound for the resolvent computed at iteration ``k``.

        A-mode: ``eps_k / alpha``.  B-mode: ``(delta_k / alpha) * step_norm``.
        Bounds below :data:`EXACT_TOL` are raised to it: a criterion never asks
        for more than the exact-mode accuracy.
        """
        if self.mode is CriterionMode.EXACT:
            return EXACT_TOL
        if self.mode is CriterionMode.A_SUMMABLE:
            b = self.schedule(k) / alpha
        else:
            if step_norm is None:
                raise ValueError("relative criterion needs the step norm")
            b = self.schedule(k) / alpha * np.asarray(step_norm)
        return np.maximum(b, EXACT_TOL)

    def describe(self):
        if self.is_exact:
            return "exact"
        return f"{self.mode.value}:{self.schedule.describe()}"


@dataclass
class ResolventQuery:
    """One evaluation of ``prox_{alpha T_i}`` at ``input_point``."""

    alpha: float
    input_point: np.ndarray
    criterion: InexactnessCriterion = InexactnessCriterion()
    iteration_index: int = 0
    previous_iterate: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        self.input_point = np.asarray(self.input_point, dtype=float)
        if self.criterion.mode is CriterionMode.B_RELATIVE and self.previous_iterate is None:
            raise ValueError("relative (B) criterion needs previous_iterate")
        if self.previous_iterate is not None:
            self.previous_iterate = np.asarray(self.previous_iterate, dtype=float)

    def bound_at(self, point):
        step = None
        if self.criterion.mode is CriterionMode.B_RELATIVE:
            step = np.linalg.norm(np.asarray(point) - self.previous_iterate)
        return float(self.criterion.bound(self.iteration_index, self.alpha, step))


@dataclass
class ResolventResult:
    point: np.ndarray
    certificate: float
    residual_vector: Optional[np.ndarray] = None
    iterations: int = 0
    method: str = ""


# ---------------------------------------------------------------------------
# distances to S_T


def cone_residual(w, Z, lower, upper):
    """Row-wise ``w - Proj_{N_box(Z)}(w)``.

    Coordinates strictly inside keep ``w``; at a lower bound the cone is
    ``(-inf, 0]`` and the residual is ``max(w, 0)``; at an upper bound it is
    ``min(w, 0)``; a degenerate coordinate (``l == u``) absorbs everything.
    """
    at_lo = Z <= lower
    at_hi = Z >= upper
    r = w.copy()
    r = np.where(at_lo & ~at_hi, np.maximum(w, 0.0), r)
    r = np.where(at_hi & ~at_lo, np.minimum(w, 0.0), r)
    r = np.where(at_lo & at_hi, 0.0, r)
    return r


def _check_domain(op, Z, rows):
    inside = op.contains(Z, rows)
    if not inside.all():
        bad = np.argwhere(~inside)
        raise InfeasibleCandidateError(f"candidate outside the operator's box at (row, coord) {bad[:5].tolist()}")


def s_t_residual(op, alpha, z_hat, candidate, rows=None):
    """Minimal-norm element of ``T(Z) + (Z - z_hat)/alpha`` for every row (negated ``w`` residual).

    Returns an array shaped like ``candidate``; its row norms are the distances.
    """
    Z = np.atleast_2d(np.asarray(candidate, dtype=float))
    Zh = np.atleast_2d(np.asarray(z_hat, dtype=float))
    rows = op._rows(rows)
    _check_domain(op, Z, rows)
    w = -op.field(Z, rows) - (Z - Zh) / alpha
    return -cone_residual(w, Z, op.lower[rows], op.upper[rows])


def s_t_distance(op, alpha, z_hat, candidate, rows=None):
    """``dist(0, T(candidate) + (candidate - z_hat)/alpha)``.

    For a single point (1-D input) a float is returned; for stacked rows the
    per-row distances.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    single = np.ndim(candidate) == 1
    s = s_t_residual(op, alpha, z_hat, candidate, rows)
    d = np.linalg.norm(s, axis=1)
    return float(d[0]) if single else d


def residual_vector(op, alpha, z_hat, candidate, rows=None):
    """The error ``e`` with ``candidate = prox_{alpha T}(z_hat + e)`` and ``|e| = alpha * dist``."""
    return alpha * s_t_residual(op, alpha, z_hat, candidate, rows)


def check_criterion(result, query, alpha=None):
    """Whether ``result.certificate`` meets the query's criterion; returns ``(ok, margin)``."""
    alpha = query.alpha if alpha is None else alpha
    q = query if alpha == query.alpha else ResolventQuery(
        alpha, query.input_point, query.criterion, query.iteration_index, query.previous_iterate)
    bound = q.bound_at(result.point)
    margin = bound - result.certificate
    return bool(margin >= 0), float(margin)


def monotonicity_gap(op, Z1, Z2, rows=None):
    """Row-wise ``<z1 - z2, F(z1) - F(z2)>``; nonnegative for a monotone field."""
    d = op.field(Z1, rows) - op.field(Z2, rows)
    return np.einsum("ri,ri->r", Z1 - Z2, d)

