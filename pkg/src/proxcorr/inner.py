"""Inner solvers for the regularized subproblem behind one resolvent evaluation.

``prox_{alpha T}(x)`` is the unique ``u`` with ``0 in F(u) + N_box(u) + (u - x)/alpha``.
For a saddle Lagrangian this is the strongly convex-concave min-max problem
in ``(zeta, eta)``; the projected primal-dual gradient step

    zeta+ = Proj(zeta - g * grad_zeta),   eta+ = Proj(eta + g * grad_eta)

is one projected forward step on the stacked monotone map.  On its own that
step may cycle once ``g`` exceeds the strong-monotonicity margin of a skew
field, so :func:`solve_saddle` pairs it with an extragradient correction
(evaluate at the predicted point, step again from the current one), which
converges for any ``g < 1/(Lip + 1/alpha)``.  Rows are batched across agents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import AffineOperator, cone_residual


STEP_FRACTION = 0.9


class ResolventFailure(RuntimeError):
    """Inner solver hit its iteration cap before reaching the requested certificate."""

    def __init__(self, message, best_certificate, agents=None):
        super().__init__(message)
        self.best_certificate = best_certificate
        self.agents = agents


class NoClosedForm(ValueError):
    """The operator has no closed-form resolvent; fall back to the iterative solver."""


@dataclass(frozen=True)
class SolverSettings:
    step: float | None = None
    max_iterations: int = 20000
    backtracking: bool = True
    lipschitz_samples: int = 100
    progress_ratio: float = 0.9
    divergence_window: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class BatchResult:
    points: np.ndarray
    certificates: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    method: str = "pdg"


def estimate_lipschitz(op, rows, centers, samples=100, seed=0):
    """Per-row Lipschitz estimate of ``F`` from sampled finite differences.

    Points are drawn in the box intersected with a cube around ``centers``
    (unbounded coordinates would otherwise make sampling meaningless).
    """
    rng = np.random.default_rng(seed)
    m, n = centers.shape
    radius = np.maximum(1.0, np.abs(centers))
    lo = np.maximum(op.lower[rows], centers - radius)
    hi = np.minimum(op.upper[rows], centers + radius)
    lo = np.minimum(lo, hi)
    a = lo[:, None, :] + (hi - lo)[:, None, :] * rng.random((m, samples, n))
    b = lo[:, None, :] + (hi - lo)[:, None, :] * rng.random((m, samples, n))
    rr = np.repeat(rows, samples)
    Fa = op.field(a.reshape(-1, n), rr).reshape(m, samples, n)
    Fb = op.field(b.reshape(-1, n), rr).reshape(m, samples, n)
    num = np.linalg.norm(Fa - Fb, axis=2)
    den = np.linalg.norm(a - b, axis=2)
    ratio = np.where(den > 1e-12, num / np.maximum(den, 1e-300), 0.0)
    return ratio.max(axis=1)


def _certificates(op, rows, U, X, alpha):
    G = op.field(U, rows) + (U - X) / alpha
    r = cone_residual(-G, U, op.lower[rows], op.upper[rows])
    return G, np.linalg.norm(r, axis=1)


def solve_saddle(op, alpha, inputs, bound, rows=None, start=None, settings=SolverSettings()):
    """Projected primal-dual gradient on the regularized subproblems of ``rows``.

    Parameters
    ----------
    op : OperatorSpec
    alpha : float
        Resolvent penalty.
    inputs : ndarray (m, n)
        Points at which the resolvents are evaluated.
    bound : callable or array_like
        Target certificate per row; a callable receives the current points and
        returns the bounds (relative criteria depend on the point).
    rows : sequence of int, optional
        Operator rows the inputs belong to (default: all rows).
    start : ndarray (m, n), optional
        Warm start; projected onto the box.  Defaults to the projected input.

    Each row stops at the first iterate whose certificate meets its bound.
    Rows that exhaust ``max_iterations`` are reported with ``converged=False``
    and their best iterate.
    """
    rows = op._rows(rows)
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    m, n = X.shape
    U = op.project(X if start is None else np.atleast_2d(np.asarray(start, dtype=float)), rows).copy()
    bound_fn = bound if callable(bound) else (lambda _U, _b=np.broadcast_to(np.asarray(bound, float), (m,)): _b)

    if settings.step is not None:
        gamma = np.full(m, settings.step)
    else:
        lip = op.lipschitz(rows)
        if lip is None:
            lip = estimate_lipschitz(op, rows, U, settings.lipschitz_samples, settings.seed)
        gamma = STEP_FRACTION * alpha / (1.0 + alpha * np.asarray(lip))

    certs = np.full(m, np.inf)
    iters = np.zeros(m, dtype=int)
    done = np.zeros(m, dtype=bool)
    best_U = U.copy()
    best_c = np.full(m, np.inf)
    window = settings.divergence_window
    history = []

    active = np.arange(m)
    for it in range(settings.max_iterations + 1):
        Ua, Xa, ra = U[active], X[active], rows[active]
        G, c = _certificates(op, ra, Ua, Xa, alpha)
        certs[active] = c
        better = c < best_c[active]
        best_c[active[better]] = c[better]
        best_U[active[better]] = Ua[better]
        b = np.asarray(bound_fn(U), dtype=float)[active]
        hit = c <= b
        done[active[hit]] = True
        iters[active] = it
        if it == settings.max_iterations:
            break
        keep = ~hit
        active, Ua, G, c = active[keep], Ua[keep], G[keep], c[keep]
        if active.size == 0:
            break
        if settings.backtracking:
            history.append((active, c))
            if len(history) > window:
                old_active, old_c = history.pop(0)
                ref = np.full(m, np.nan)
                ref[old_active] = old_c
                # no 10% progress over the window (growth included): halve the step
                grown = c > settings.progress_ratio * ref[active]
                if grown.any():
                    idx = active[grown]
                    gamma[idx] *= 0.5
                    U[idx] = best_U[idx]
                    Ua[grown] = best_U[idx]
                    G[grown] = op.field(Ua[grown], rows[idx]) + (Ua[grown] - X[idx]) / alpha
                    history.clear()
        # extragradient: the plain forward step can cycle on the skew part of a saddle field
        ra, Xa = rows[active], X[active]
        Ub = op.project(Ua - gamma[active, None] * G, ra)
        Gb = op.field(Ub, ra) + (Ub - Xa) / alpha
        U[active] = op.project(Ua - gamma[active, None] * Gb, ra)

    U_out = np.where(done[:, None], U, best_U)
    c_out = np.where(done, certs, best_c)
    return BatchResult(U_out, c_out, iters, done, "pdg")


def closed_form_resolvent(op, alpha, inputs, rows=None):
    """Exact resolvent for operators that admit one.

    Supported: affine operators without a box (linear solve), box normal cones
    (projection), the zero operator (identity).  An affine operator with a box
    has no closed form and raises :class:`NoClosedForm`.
    """
    rows = op._rows(rows)
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if not isinstance(op, AffineOperator):
        parent = getattr(op, "parent", None)
        if isinstance(parent, AffineOperator):
            return closed_form_resolvent(parent, alpha, X, np.full(len(rows), op.index))
        raise NoClosedForm(f"{op.kind} operator has no closed-form resolvent")
    A, b = op.A[rows], op.b[rows]
    zero_field = not np.any(A) and not np.any(b)
    if zero_field:
        U = op.project(X, rows)
        method = "projection" if op.has_box(rows) else "identity"
    elif op.has_box(rows):
        raise NoClosedForm("affine operator with a box: resolvent is not a linear solve")
    else:
        n = X.shape[1]
        M = np.eye(n)[None] + alpha * A
        U = np.linalg.solve(M, (X + alpha * b)[..., None])[..., 0]
        method = "linear-solve"
    _, c = _certificates(op, rows, U, X, alpha)
    return BatchResult(U, c, np.zeros(len(rows), dtype=int), np.ones(len(rows), dtype=bool), method)
