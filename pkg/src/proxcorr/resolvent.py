"""Resolvent evaluation under an inexactness criterion."""

from __future__ import annotations

import numpy as np

from .inner import NoClosedForm, ResolventFailure, SolverSettings, closed_form_resolvent, solve_saddle
from .operators import CriterionMode, EXACT_TOL, ResolventResult, residual_vector


def resolve_rows(op, alpha, inputs, criterion, k=0, previous=None, start=None, rows=None,
                 settings=SolverSettings()):
    """``prox_{alpha T_i}`` for many rows at once, each certified against ``criterion``.

    ``previous`` holds each row's previous iterate (needed by the relative
    criterion); ``start`` is the inner solver's warm start (defaults to
    ``previous`` when given).  Raises :class:`ResolventFailure` naming the
    failing agents when some row cannot be certified.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    rows = op._rows(rows)
    if criterion.mode is CriterionMode.B_RELATIVE and previous is None:
        raise ValueError("relative criterion needs the previous iterate")

    if criterion.is_exact:
        try:
            res = closed_form_resolvent(op, alpha, X, rows)
            if np.all(res.certificates <= EXACT_TOL):
                return res
        except NoClosedForm:
            pass

    if criterion.mode is CriterionMode.B_RELATIVE:
        prev = np.atleast_2d(np.asarray(previous, dtype=float))

        def bound(U):
            return criterion.bound(k, alpha, np.linalg.norm(U - prev, axis=1))
    else:
        bound = np.broadcast_to(criterion.bound(k, alpha), (len(rows),))

    if start is None and previous is not None:
        start = previous
    res = solve_saddle(op, alpha, X, bound, rows=rows, start=start, settings=settings)
    if not res.converged.all():
        bad = np.flatnonzero(~res.converged)
        raise ResolventFailure(
            f"resolvent not certified for agents {(rows[bad] + 1).tolist()} within "
            f"{settings.max_iterations} inner iterations (best certificate {res.certificates[bad].max():.3e})",
            float(res.certificates[bad].max()), (rows[bad] + 1).tolist())
    return res


def resolve(op, query, settings=SolverSettings()):
    """Evaluate ``prox_{alpha T}`` at ``query.input_point`` for a single-agent operator.

    Exact mode returns the resolvent certified to :data:`EXACT_TOL` (closed form
    when available).  Inexact modes return the first inner iterate meeting the
    criterion.  The certificate is always measured, and the residual vector
    ``e`` with ``point = prox(input + e)`` is attached.
    """
    if op.num_agents != 1:
        raise ValueError("resolve takes a single-agent operator; use resolve_rows for stacks")
    x = np.asarray(query.input_point, dtype=float)[None]
    prev = None if query.previous_iterate is None else query.previous_iterate[None]
    res = resolve_rows(op, query.alpha, x, query.criterion, query.iteration_index, prev, settings=settings)
    point = res.points[0]
    e = residual_vector(op, query.alpha, x, point[None])[0]
    return ResolventResult(point, float(res.certificates[0]), e, int(res.iterations[0]), res.method)
