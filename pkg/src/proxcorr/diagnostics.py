"""Analysis-side quantities: the stacked operator Phi, the P/Q preconditioners,
the lifted fixed point, the preconditioned prox and its displacement, audits of
one inexact transition, rate fitting, and per-iteration metrics.

Stacked points ``xi = (Z, Y)`` are handled as pairs of ``N x n`` arrays; the
block matrices act on ``vstack([Z, Y])``.  All norms are Frobenius unless
stated otherwise; ``|P^{-1}|`` and ``|P|`` are spectral norms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import lsq_linear
from scipy.stats import linregress

from .graph import spectral_radius
from .inner import SolverSettings
from .operators import InexactnessCriterion, InfeasibleCandidateError, cone_residual
from .problems import CoupledQpInstance, Ns1Instance, primal_dim
from .resolvent import resolve_rows

EXACT = InexactnessCriterion.exact()


@dataclass
class XiPoint:
    Z: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.Z.shape != self.Y.shape:
            raise ValueError(f"Z {self.Z.shape} and Y {self.Y.shape} differ in shape")

    def stacked(self):
        return np.vstack([self.Z, self.Y])

    @classmethod
    def from_stacked(cls, S):
        N = S.shape[0] // 2
        return cls(S[:N], S[N:])

    def __sub__(self, other):
        return XiPoint(self.Z - other.Z, self.Y - other.Y)

    def norm(self):
        return float(np.sqrt(np.sum(self.Z ** 2) + np.sum(self.Y ** 2)))


@dataclass
class PqPair:
    P: np.ndarray
    Q: np.ndarray

    @classmethod
    def from_mixing(cls, mixing):
        N = mixing.num_agents
        I, Z0 = np.eye(N), np.zeros((N, N))
        P = np.block([[I - mixing.C, Z0], [Z0, I]])
        Q = np.block([[mixing.Wt, Z0], [Z0, I]])
        return cls(P, Q)

    def min_eigenvalues(self):
        """``(lambda_min(P), lambda_min(Q), lambda_min(P^2 - Q^2))``."""
        e = lambda M: float(np.linalg.eigvalsh((M + M.T) / 2).min())
        return e(self.P), e(self.Q), e(self.P @ self.P - self.Q @ self.Q)

    @property
    def p_norm(self):
        return float(np.linalg.norm(self.P, 2))

    @property
    def p_inv_norm(self):
        return float(np.linalg.norm(np.linalg.inv(self.P), 2))


# ---------------------------------------------------------------------------
# Phi and its zero


def _t_distance_rows(op, Z, target):
    """Row-wise ``dist(target_i, T_i(z_i))``."""
    if not op.contains(Z).all():
        raise InfeasibleCandidateError("Z is outside the operator's domain")
    w = target - op.field(Z)
    return np.linalg.norm(cone_residual(w, Z, op.lower, op.upper), axis=1)


def phi_distance(xi, op, mixing, alpha):
    """``dist(0, Phi(xi))`` with ``Phi(Z, Y) = (alpha T(Z) + sqrtC Y, -sqrtC Z)``."""
    first = alpha * _t_distance_rows(op, xi.Z, -(mixing.sqrtC @ xi.Y) / alpha)
    second = np.linalg.norm(mixing.sqrtC @ xi.Z)
    return float(math.hypot(np.linalg.norm(first), second))


def lift_fixed_point(z_star, V_star, mixing, alpha, tol=1e-8):
    """The zero ``xi* = (1 z*^T, Y*)`` of Phi built from a zero-sum selection ``V*``.

    ``Y*`` is the minimum-norm solution of ``sqrtC Y = -alpha V*``, which lies
    in the range of ``sqrtC``.
    """
    V_star = np.atleast_2d(np.asarray(V_star, dtype=float))
    N = mixing.num_agents
    colsum = np.linalg.norm(V_star.sum(axis=0))
    if colsum > tol:
        raise ValueError(f"selection is not zero-sum (|1^T V*| = {colsum:.3e}); no lift exists")
    Y = np.linalg.pinv(mixing.sqrtC, rcond=1e-10) @ (-alpha * V_star)
    Z = np.tile(np.asarray(z_star, dtype=float), (N, 1))
    return XiPoint(Z, Y)


def omega(Z, Y, V, mixing, alpha):
    """``omega = (alpha V + sqrtC Y, -sqrtC Z)``, an element of ``Phi(Z, Y)``."""
    return XiPoint(alpha * V + mixing.sqrtC @ Y, -(mixing.sqrtC @ Z))


def lyapunov(xi, xi_star, pq):
    """``|xi - xi*|^2_{P^2} = |P (xi - xi*)|^2``."""
    return float(np.sum((pq.P @ (xi - xi_star).stacked()) ** 2))


def key_recursion_residual(xi_prev, xi_next, V_next, mixing, alpha, pq):
    """``|P xi^{k+1} + omega^{k+1} - Q xi^k|`` along an exact run."""
    w = omega(xi_next.Z, xi_next.Y, V_next, mixing, alpha).stacked()
    return float(np.linalg.norm(pq.P @ xi_next.stacked() + w - pq.Q @ xi_prev.stacked()))


def phi_inner_product(xi1, xi2, V1, V2, mixing, alpha):
    """``(<omega1 - omega2, xi1 - xi2>, alpha <V1 - V2, Z1 - Z2>)``; the two agree."""
    w1 = omega(xi1.Z, xi1.Y, V1, mixing, alpha)
    w2 = omega(xi2.Z, xi2.Y, V2, mixing, alpha)
    lhs = float(np.sum((w1 - w2).stacked() * (xi1 - xi2).stacked()))
    return lhs, float(alpha * np.sum((V1 - V2) * (xi1.Z - xi2.Z)))


# ---------------------------------------------------------------------------
# preconditioned prox


def prox_pinv_phi(xi_in, op, mixing, alpha, settings=SolverSettings()):
    """``prox_{P^{-1} Phi}(xi_in)``, the unique ``xi`` with ``P xi_in in (P + Phi)(xi)``.

    With ``R = P xi_in`` the inclusion splits into ``Y = R_2 + sqrtC Z`` and
    ``R_1 - sqrtC R_2 in (I + alpha T)(Z)``, so one exact resolvent of ``T``
    gives the answer.
    """
    R1 = xi_in.Z - mixing.C @ xi_in.Z
    R2 = xi_in.Y
    Z = resolve_rows(op, alpha, R1 - mixing.sqrtC @ R2, EXACT, settings=settings).points
    return XiPoint(Z, R2 + mixing.sqrtC @ Z)


def prox_inclusion_residual(xi_in, xi_out, op, mixing, alpha):
    """``dist(P xi_in - P xi_out, Phi(xi_out))``; zero when ``xi_out`` is the prox."""
    r1 = (xi_in.Z - xi_out.Z) - mixing.C @ (xi_in.Z - xi_out.Z)
    first = alpha * _t_distance_rows(op, xi_out.Z, (r1 - mixing.sqrtC @ xi_out.Y) / alpha)
    second = np.linalg.norm(xi_in.Y - xi_out.Y + mixing.sqrtC @ xi_out.Z)
    return float(math.hypot(np.linalg.norm(first), second))


def psi(xi, op, mixing, alpha, settings=SolverSettings()):
    """Displacement ``xi - prox_{P^{-1} Phi}(xi)``."""
    return xi - prox_pinv_phi(xi, op, mixing, alpha, settings)


def apply_pinv_q(xi, pq):
    return XiPoint.from_stacked(np.linalg.solve(pq.P, pq.Q @ xi.stacked()))


def s_phi_distance(xi, xi_prev, op, mixing, alpha):
    """``dist(0, P^{-1} Phi(xi) + xi - P^{-1} Q xi_prev)``.

    Writing the set as ``P^{-1}(alpha T(Z) + R_1, R_2)`` the distance separates
    over columns; each column is a bounded least-squares problem in the normal
    cone components of the agents sitting on a bound.
    """
    Z, Y = xi.Z, xi.Y
    if not op.contains(Z).all():
        raise InfeasibleCandidateError("Z is outside the operator's domain")
    N, n = Z.shape
    M = np.linalg.inv(np.eye(N) - mixing.C)
    R1 = mixing.sqrtC @ Y + Z - mixing.C @ Z - mixing.Wt @ xi_prev.Z
    R2 = Y - mixing.sqrtC @ Z - xi_prev.Y
    G = alpha * op.field(Z) + R1
    at_lo, at_hi = Z <= op.lower, Z >= op.upper
    total = float(np.sum(R2 ** 2))
    for j in range(n):
        idx = np.flatnonzero(at_lo[:, j] | at_hi[:, j])
        rhs = M @ G[:, j]
        if idx.size == 0:
            total += float(rhs @ rhs)
            continue
        lb = np.where(at_lo[idx, j], -np.inf, 0.0)
        ub = np.where(at_hi[idx, j], np.inf, 0.0)
        A = alpha * M[:, idx]
        res = lsq_linear(A, -rhs, bounds=(lb, ub), method="bvls", tol=1e-15)
        r = A @ res.x + rhs
        total += float(r @ r)
    return math.sqrt(total)


def feasible_perturbation(op, Z, size, rng):
    """Random ``E`` with ``|E| = size`` pointing into the box wherever ``Z`` sits on a bound."""
    E = rng.standard_normal(Z.shape)
    E = np.where(Z <= op.lower, np.abs(E), E)
    E = np.where(Z >= op.upper, -np.abs(E), E)
    E *= size / np.linalg.norm(E)
    if not op.contains(Z + E).all():
        raise ValueError("perturbation leaves the box; box too narrow for this size")
    return E


def audit_transition(xi_prev, E, op, mixing, alpha, pq=None, settings=SolverSettings()):
    """Check one inexact transition ``Z^{k+2} = prox(Zhat) + E`` against the stacked identities.

    Returns a dict of measured quantities and margins:

    * ``a_residual``: ``|xi^{k+2} - prox_{P^{-1}Phi}(P^{-1} Q xi^{k+1}) - Etilde|``
    * ``b_margin`` (``|P^{-1}| alpha dist_T - dist_Phi``) and ``b_literal_margin``
      (the same bound without the factor ``alpha``)
    * ``c_margin``: ``dist_Phi - |xi^{k+2} - prox(...)|`` in the Euclidean norm
    * ``etilde_margin``: ``rho(I+C) |E| - |Etilde|``
    """
    pq = PqPair.from_mixing(mixing) if pq is None else pq
    sC = mixing.sqrtC
    zhat = mixing.Wt @ xi_prev.Z - sC @ xi_prev.Y
    Zex = resolve_rows(op, alpha, zhat, EXACT, settings=settings).points
    Z = Zex + E
    xi = XiPoint(Z, xi_prev.Y + sC @ Z)
    target = prox_pinv_phi(apply_pinv_q(xi_prev, pq), op, mixing, alpha, settings)
    Et = XiPoint(E, sC @ E)
    a_res = (xi - target - Et).norm()

    dist_t = float(np.linalg.norm(_t_distance_rows(op, Z, -(Z - zhat) / alpha)))
    dist_phi = s_phi_distance(xi, xi_prev, op, mixing, alpha)
    pinv = pq.p_inv_norm
    gap = (xi - target).norm()
    rho = spectral_radius(np.eye(mixing.num_agents) + mixing.C)
    return {
        "E_norm": float(np.linalg.norm(E)),
        "a_residual": a_res,
        "dist_T": dist_t,
        "dist_Phi": dist_phi,
        "P_inv_norm": pinv,
        "b_margin": pinv * alpha * dist_t - dist_phi,
        "b_literal_margin": pinv * dist_t - dist_phi,
        "prox_gap": gap,
        "c_margin": dist_phi - gap,
        "Etilde_norm": Et.norm(),
        "rho_I_plus_C": rho,
        "etilde_margin": rho * float(np.linalg.norm(E)) - Et.norm(),
    }


def transition_audit(Z_seq, Y_seq, op, mixing, alpha, E_size=1e-3, seed=0, E=None, settings=SolverSettings()):
    """Audit the transitions out of each ``(Z_seq[t], Y_seq[t])`` with injected errors.

    ``E`` may be given explicitly (one array per transition, or a single array
    reused); otherwise random errors of norm ``E_size`` pointing into the box
    are drawn.  Returns ``{"transitions": [...], "worst": {...}}``.
    """
    rng = np.random.default_rng(seed)
    pq = PqPair.from_mixing(mixing)
    out = []
    for t, (Zp, Yp) in enumerate(zip(Z_seq, Y_seq)):
        xi_prev = XiPoint(Zp, Yp)
        if E is None:
            zhat = mixing.Wt @ xi_prev.Z - mixing.sqrtC @ xi_prev.Y
            Zex = resolve_rows(op, alpha, zhat, EXACT, settings=settings).points
            Et = feasible_perturbation(op, Zex, E_size, rng)
        else:
            Et = E[t] if isinstance(E, (list, tuple)) else E
        rec = audit_transition(xi_prev, np.asarray(Et, dtype=float), op, mixing, alpha, pq, settings)
        rec["index"] = t
        out.append(rec)
    worst = {
        "a_residual": max(r["a_residual"] for r in out),
        "b_margin": min(r["b_margin"] for r in out),
        "b_literal_margin": min(r["b_literal_margin"] for r in out),
        "c_margin": min(r["c_margin"] for r in out),
        "etilde_margin": min(r["etilde_margin"] for r in out),
    }
    return {"alpha": alpha, "transitions": out, "worst": worst}


# ---------------------------------------------------------------------------
# rates


def rate_fit(errors, window=None):
    """Contraction estimate from the slope of ``log(error)`` over the last ``window`` entries.

    Returns ``(theta_hat, r_squared)``.  ``window`` defaults to the last 25%.
    """
    e = np.asarray(errors, dtype=float)
    if window is None:
        window = max(2, len(e) // 4)
    e = e[-window:]
    if e.size < 2:
        raise ValueError("need at least two errors")
    if not np.all(np.isfinite(e)) or np.any(e <= 0):
        raise ValueError("window contains zeros, negatives or non-finite values")
    k = np.arange(e.size, dtype=float)
    fit = linregress(k, np.log(e))
    theta = float(np.exp(fit.slope))
    r2 = float(fit.rvalue ** 2) if np.ptp(np.log(e)) > 0 else 1.0
    return theta, r2


# ---------------------------------------------------------------------------
# metrics


@dataclass
class IterationMetrics:
    k: int
    solution_error: float
    consensus_violation: float
    constraint_violation: float
    lyapunov: float = math.nan
    omega_norm: float = math.nan
    max_certificate: float = math.nan
    inner_iterations_total: int = 0

    FIELDS = ("k", "solution_error", "consensus_violation", "constraint_violation",
              "lyapunov", "omega_norm", "max_certificate", "inner_iterations_total")

    def row(self):
        return [getattr(self, f) for f in self.FIELDS]

    def to_dict(self):
        return {f: getattr(self, f) for f in self.FIELDS}


def coupled_violation(instance, X):
    """Positive part of the aggregated coupled inequality at per-agent primal rows ``X``."""
    if isinstance(instance, Ns1Instance):
        return max(instance.coupled_value(X[:, 0]), 0.0)
    if isinstance(instance, CoupledQpInstance):
        g = np.einsum("iqp,ip->q", instance.C, X) - instance.d.sum(axis=0)
        return float(np.linalg.norm(np.maximum(g, 0.0)))
    raise TypeError(f"unknown instance type {type(instance).__name__}")


def primal_metrics(X, x_star, instance):
    """``(solution_error, consensus_violation, constraint_violation)`` for primal rows ``X``."""
    X = np.atleast_2d(X)
    err = float(np.linalg.norm(X - np.asarray(x_star)[None, :]))
    cons = float(np.linalg.norm(X - X.mean(axis=0)[None, :]))
    return err, cons, cons + coupled_violation(instance, X)


def ns1_metrics(Z, instance, z_star, k=0):
    """Metrics of an eq-NS1 iterate; only the ``x`` column enters."""
    err, cons, viol = primal_metrics(np.atleast_2d(Z)[:, :1], np.asarray(z_star)[:1], instance)
    return IterationMetrics(k, err, cons, viol)


@dataclass
class MetricsContext:
    """Everything needed to turn an :class:`AlgorithmState` into :class:`IterationMetrics`."""

    instance: object
    mixing: object
    z_star: np.ndarray
    xi_star: Optional[XiPoint] = None
    track_lyapunov: bool = True
    pq: Optional[PqPair] = field(default=None, repr=False)

    def __post_init__(self):
        self.z_star = np.asarray(self.z_star, dtype=float)
        if self.pq is None:
            self.pq = PqPair.from_mixing(self.mixing)

    def __call__(self, state):
        p = primal_dim(self.instance)
        err, cons, viol = primal_metrics(state.Z[:, :p], self.z_star[:p], self.instance)
        lyap = om = math.nan
        if self.track_lyapunov:
            if self.xi_star is not None:
                lyap = lyapunov(XiPoint(state.Z, state.Y), self.xi_star, self.pq)
            if state.V is not None:
                om = omega(state.Z, state.Y, state.V, self.mixing, state.alpha).norm()
        cert = math.nan if state.certificates is None else float(np.max(state.certificates))
        return IterationMetrics(state.k, err, cons, viol, lyap, om, cert, int(state.inner_iterations))


def reference_lift(instance, op, mixing, alpha, z_star):
    """``xi*`` for an oracle solution ``z*`` via the zero-sum selection."""
    from .problems import zero_sum_selection

    V, res = zero_sum_selection(op, z_star)
    return lift_fixed_point(z_star, V, mixing, alpha, tol=max(1e-8, 10 * res))


def report_to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: report_to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [report_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return report_to_jsonable(asdict(obj))
    return obj
