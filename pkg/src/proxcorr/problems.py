"""Test problems: the log-utility coupled-constraint problem and a seeded coupled QP.

Both are distributed problems ``min sum_i f_i(x)`` with a coupled constraint,
turned into the inclusion ``0 in sum_i T_i(x, lam)`` by dual decomposition.
Each agent's operator acts on the stacked point ``z = (x, lam)``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import lsq_linear

from .operators import AffineOperator, SaddleLagrangianOperator


@dataclass(frozen=True)
class SaddleLagrangianProblem:
    """``L_i(x, lam) = f_i(x) + lam^T h_i(x) + I_{Omega_i}(x) - I_{K polar}(lam)``.

    ``h_i = [g_i(x); A_i x - b/N]``; the first ``num_ineq`` multipliers are
    nonnegative, the rest free.  Callables are row-vectorized, see
    :class:`~proxcorr.operators.SaddleLagrangianOperator`.
    """

    num_agents: int
    s: int
    m: int
    num_ineq: int
    f: object
    grad_f: object
    h: object
    jac_h: object
    x_lower: np.ndarray
    x_upper: np.ndarray

    def operator(self):
        return SaddleLagrangianOperator(
            self.s, self.m, self.num_ineq, self.grad_f, self.h, self.jac_h, self.x_lower, self.x_upper)


def lagrangian_operator(problem, agent):
    """Operator ``dL_i`` of agent ``agent`` (1-based)."""
    if not 1 <= agent <= problem.num_agents:
        raise ValueError(f"agent must be in 1..{problem.num_agents}")
    return problem.operator().agent(agent - 1)


# ---------------------------------------------------------------------------
# log-utility problem


@dataclass(frozen=True)
class Ns1Instance:
    """``min sum a_i x`` s.t. ``sum(-c_i log(1+x) + b/N) <= 0``, ``x in [i/N, 3 - i/N]`` for all i."""

    N: int
    a: np.ndarray
    c: np.ndarray
    b: float
    lower: np.ndarray
    upper: np.ndarray

    kind = "ns1"

    @property
    def x_box(self):
        return float(self.lower.max()), float(self.upper.min())

    def coupled_value(self, x):
        """``sum_i (-c_i log(1 + x_i) + b/N)`` for per-agent values ``x`` (scalar broadcasts)."""
        x = np.broadcast_to(np.asarray(x, dtype=float), (self.N,))
        return float(np.sum(-self.c * np.log1p(x) + self.b / self.N))

    def objective(self, x):
        return float(np.sum(self.a) * x)

    def to_dict(self):
        return {"kind": "ns1", "N": self.N}


def ns1_problem(inst):
    N, a, c, bN = inst.N, inst.a, inst.c, inst.b / inst.N

    def f(rows, X):
        return a[rows] * X[:, 0]

    def grad_f(rows, X):
        return a[rows][:, None] * np.ones_like(X)

    def h(rows, X):
        return (-c[rows] * np.log1p(X[:, 0]) + bN)[:, None]

    def jac_h(rows, X):
        return (-c[rows] / (1.0 + X[:, 0]))[:, None, None]

    return SaddleLagrangianProblem(N, 1, 1, 1, f, grad_f, h, jac_h, inst.lower[:, None], inst.upper[:, None])


def build_ns1(N=50):
    """Instance with ``a_i = i/N``, ``c_i = i/(N+1)``, ``b = N log(2)/2`` and its saddle operators.

    Returns ``(instance, operator)``; ``operator.agent(i)`` is agent ``i+1``'s
    operator on ``(x, y)``.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    i = np.arange(1, N + 1, dtype=float)
    inst = Ns1Instance(N, i / N, i / (N + 1), 0.5 * N * np.log(2.0), i / N, 3.0 - i / N)
    return inst, ns1_problem(inst).operator()


def _bisect(g, lo, hi, tol=1e-15, max_iter=200):
    """Root of a decreasing function on [lo, hi] with g(lo) > 0 >= g(hi)."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
    return hi


def ns1_reference(inst):
    """Centralized solution by bisection on the coupled constraint.

    The objective is increasing in ``x`` (``sum a_i > 0``) and the constraint
    function decreasing, so the optimum is the smallest feasible ``x`` in the
    box intersection.  Returns ``(z_star, y_star)`` where ``z_star = (x*, y*)``
    and ``y*`` is the multiplier that makes the box multiplier zero, capped to
    the admissible interval.
    """
    lo, hi = inst.x_box
    if lo > hi:
        raise ValueError("empty box intersection")
    g = inst.coupled_value
    if g(hi) > 0:
        raise ValueError("infeasible instance: coupled constraint violated on the whole box")
    x = lo if g(lo) <= 0 else _bisect(g, lo, hi)
    sa, sc = inst.a.sum(), inst.c.sum()
    if abs(g(x)) <= 1e-12:
        y = sa * (1.0 + x) / sc
    else:
        y = 0.0
    return np.array([x, y]), y


# ---------------------------------------------------------------------------
# coupled quadratic program


@dataclass(frozen=True)
class CoupledQpInstance:
    """``min sum |A_i x - b_i|^2/2`` s.t. ``sum (C_i x - d_i) <= 0``, ``l_i <= x <= u_i``."""

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    seed: int | None = None

    kind = "coupled_qp"

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.A.shape[2]

    @property
    def q(self):
        return self.C.shape[1]

    def saddle_matrices(self):
        """Per-agent ``(At_i, bt_i)`` with ``dL_i(z) = At_i z - bt_i + N(z)``."""
        N, p, q = self.N, self.p, self.q
        At = np.zeros((N, p + q, p + q))
        bt = np.zeros((N, p + q))
        for i in range(N):
            At[i, :p, :p] = self.A[i].T @ self.A[i]
            At[i, :p, p:] = self.C[i].T
            At[i, p:, :p] = -self.C[i]
            bt[i, :p] = self.A[i].T @ self.b[i]
            bt[i, p:] = -self.d[i]
        return At, bt

    def operator(self):
        At, bt = self.saddle_matrices()
        lower = np.hstack([self.lower, np.zeros((self.N, self.q))])
        upper = np.hstack([self.upper, np.full((self.N, self.q), np.inf)])
        return AffineOperator(At, bt, lower, upper, kind="affine-monotone")

    def to_dict(self):
        if self.seed is not None:
            return {"kind": "coupled_qp", "seed": self.seed, "N": self.N, "p": self.p, "q": self.q}
        return {
            "kind": "coupled_qp",
            "arrays": {k: getattr(self, k).tolist() for k in ("A", "b", "C", "d", "lower", "upper")},
        }


def build_coupled_qp(seed=7, N=5, p=3, q=2, max_tries=100):
    """Seeded random coupled QP: standard-normal data, boxes ``[-1, 1]^p``, ``d_i = 1``.

    ``d_i = C_i 0 + 1`` makes ``x = 0`` strictly feasible.  ``A_i`` is ``p x p``;
    draws are repeated until the stacked ``A`` has full column rank.
    """
    if min(N, p, q) < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        A = rng.standard_normal((N, p, p))
        b = rng.standard_normal((N, p))
        C = rng.standard_normal((N, q, p))
        if np.linalg.matrix_rank(A.reshape(N * p, p)) == p:
            break
    else:
        raise ValueError(f"stacked A rank-deficient after {max_tries} draws")
    d = np.ones((N, q))
    inst = CoupledQpInstance(A, b, C, d, -np.ones((N, p)), np.ones((N, p)), seed)
    return inst, inst.operator()


def qp_reference(inst, tol=1e-10):
    """Centralized KKT solution by active-set enumeration.

    Inequalities are the ``q`` aggregated coupled constraints plus the ``2p``
    bounds of the box intersection.  Every active set is tried, smallest first;
    the first whose equality-constrained KKT solve is primal feasible with
    nonnegative multipliers is returned as ``(z_star, lam_star)`` with
    ``z_star = (x*, lam*)``.
    """
    N, p, q = inst.N, inst.p, inst.q
    H = np.einsum("kij,kil->jl", inst.A, inst.A)
    g = np.einsum("kij,ki->j", inst.A, inst.b)
    lo, hi = inst.lower.max(axis=0), inst.upper.min(axis=0)
    if np.any(lo > hi):
        raise ValueError("empty box intersection")
    G = np.vstack([inst.C.sum(axis=0), np.eye(p), -np.eye(p)])
    h = np.concatenate([inst.d.sum(axis=0), hi, -lo])
    n_con = G.shape[0]
    for size in range(0, p + 1):
        for act in itertools.combinations(range(n_con), size):
            act = list(act)
            bounds = [j - q for j in act if j >= q]
            coords = [k % p for k in bounds]
            if len(set(coords)) != len(coords):
                continue
            Ga, ha = G[act], h[act]
            K = np.block([[H, Ga.T], [Ga, np.zeros((size, size))]])
            rhs = np.concatenate([g, ha])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, mu = sol[:p], sol[p:]
            if np.all(G @ x <= h + tol) and np.all(mu >= -tol):
                lam = np.zeros(q)
                for j, m in zip(act, mu):
                    if j < q:
                        lam[j] = max(m, 0.0)
                return np.concatenate([x, lam]), lam
    raise ValueError("no KKT point found: infeasible or degenerate instance")


def centralized_reference(problem):
    """Oracle solution ``(z_star, dual_star)`` for a bundled problem instance."""
    if isinstance(problem, Ns1Instance):
        return ns1_reference(problem)
    if isinstance(problem, CoupledQpInstance):
        return qp_reference(problem)
    raise TypeError(f"no reference solver for {type(problem).__name__}")


def zero_sum_selection(op, z):
    """Selection ``V in T(1 z^T)`` with the smallest column sum ``|1^T V|``.

    Each ``V_i = F_i(z) + n_i`` with ``n_i`` in agent ``i``'s box normal cone at
    ``z``; the cone components are found by bounded least squares.  Returns
    ``(V, residual)`` where ``residual = |1^T V|``; a solution of the inclusion
    has residual zero.
    """
    N, n = op.num_agents, op.dim
    Z = np.tile(np.asarray(z, dtype=float), (N, 1))
    if not op.contains(Z).all():
        raise ValueError("z is outside some agent's domain")
    F = op.field(Z)
    total = F.sum(axis=0)
    cols, lb, ub = [], [], []
    for i in range(N):
        for j in range(n):
            at_lo, at_hi = Z[i, j] <= op.lower[i, j], Z[i, j] >= op.upper[i, j]
            if at_lo or at_hi:
                cols.append((i, j))
                lb.append(-np.inf if at_lo else 0.0)
                ub.append(np.inf if at_hi else 0.0)
    V = F.copy()
    if cols:
        M = np.zeros((n, len(cols)))
        for k, (_, j) in enumerate(cols):
            M[j, k] = 1.0
        res = lsq_linear(M, -total, bounds=(lb, ub), method="bvls", tol=1e-15)
        for k, (i, j) in enumerate(cols):
            V[i, j] += res.x[k]
    return V, float(np.linalg.norm(V.sum(axis=0)))


def initial_iterate(problem, seed=0):
    """Each agent's primal block uniform in its box, multipliers zero."""
    rng = np.random.default_rng(seed)
    if isinstance(problem, Ns1Instance):
        x = problem.lower + (problem.upper - problem.lower) * rng.random(problem.N)
        return np.column_stack([x, np.zeros(problem.N)])
    if isinstance(problem, CoupledQpInstance):
        x = problem.lower + (problem.upper - problem.lower) * rng.random((problem.N, problem.p))
        return np.hstack([x, np.zeros((problem.N, problem.q))])
    raise TypeError(f"unknown problem type {type(problem).__name__}")


def primal_dim(problem):
    return 1 if isinstance(problem, Ns1Instance) else problem.p


def load_problem(spec):
    """Build ``(instance, operator)`` from a declarative dict or a JSON file path.

    Schema: ``{"kind": "ns1", "N": 50}`` or ``{"kind": "coupled_qp", "seed": 7,
    "N": 5, "p": 3, "q": 2}`` or ``{"kind": "coupled_qp", "arrays": {A, b, C, d,
    lower, upper}}``.
    """
    if isinstance(spec, (str, Path)):
        spec = json.loads(Path(spec).read_text())
    kind = spec.get("kind")
    if kind == "ns1":
        return build_ns1(int(spec.get("N", 50)))
    if kind == "coupled_qp":
        if "arrays" in spec:
            arr = {k: np.asarray(v, dtype=float) for k, v in spec["arrays"].items()}
            inst = CoupledQpInstance(arr["A"], arr["b"], arr["C"], arr["d"], arr["lower"], arr["upper"])
            return inst, inst.operator()
        return build_coupled_qp(int(spec.get("seed", 7)), int(spec.get("N", 5)),
                                int(spec.get("p", 3)), int(spec.get("q", 2)))
    raise ValueError(f"unknown problem kind {kind!r}")


def save_problem(problem, path):
    Path(path).write_text(json.dumps(problem.to_dict(), indent=2) + "\n")
