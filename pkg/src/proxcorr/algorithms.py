"""Proximal-Correction iterations, the cumulative reference form, and the DPPA baseline.

Agent ``i`` owns row ``i`` of ``Z``, ``V`` and ``Y``.  Communication is a
multiplication by ``W`` or ``Wt`` (and by ``sqrtC`` in the primal-dual form);
the resolvent solves of one iteration are independent across rows and are
evaluated as one batched call.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .inner import ResolventFailure, SolverSettings
from .operators import InexactnessCriterion, Schedule
from .resolvent import resolve_rows

PC = "proximal-correction"
PC_ZY = "proximal-correction-zy"
DPPA = "dppa"
ALGORITHMS = (PC, PC_ZY, DPPA)


@dataclass
class AlgorithmState:
    """Collective iterate at iteration ``k``.

    ``Z`` is ``Z^k``; ``Z_prev`` is ``Z^{k-1}`` (used by the recursive form);
    ``V`` is ``V^k`` (``None`` at ``k = 0``); ``Y`` is ``Y^k = sum_{t<=k} sqrtC Z^t``.
    """

    Z: np.ndarray
    V: Optional[np.ndarray]
    Y: np.ndarray
    k: int
    alpha: float
    Z_prev: Optional[np.ndarray] = None
    certificates: Optional[np.ndarray] = None
    inner_iterations: int = 0


@dataclass
class RunConfig:
    algorithm: str
    mixing: object
    operator: object
    Z0: np.ndarray
    alpha: float = 2.0
    criterion: InexactnessCriterion = field(default_factory=InexactnessCriterion)
    max_iterations: int = 1000
    error_target: Optional[float] = None
    dppa_schedule: Optional[Schedule] = None
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        self.Z0 = np.atleast_2d(np.asarray(self.Z0, dtype=float))
        N = self.mixing.num_agents
        if self.Z0.shape != (N, self.operator.dim) or self.operator.num_agents != N:
            raise ValueError("Z0, operator and mixing matrices disagree on N or n")
        if self.algorithm == DPPA:
            if self.dppa_schedule is None:
                self.dppa_schedule = Schedule("power", c=self.alpha, p=0.6)
            s = self.dppa_schedule
            if s.family != "power" or not (0 < s.p <= 1) or s.c <= 0:
                raise ValueError("DPPA needs a diminishing non-summable schedule c/(k+1)^p with 0 < p <= 1")
        elif not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def uses_zy_form(self):
        return self.algorithm == PC_ZY or (self.algorithm == PC and not self.criterion.is_exact)


def _resolve(config, inputs, alpha, k, previous):
    return resolve_rows(config.operator, alpha, inputs, config.criterion, k, previous,
                        start=previous, settings=config.solver)


def pc_init(config):
    """``Z^1 = prox(W Z^0)``, ``V^1 = (W Z^0 - Z^1)/alpha``."""
    mix, a, Z0 = config.mixing, config.alpha, config.Z0
    WZ = mix.W @ Z0
    res = _resolve(config, WZ, a, 0, Z0)
    Z1 = res.points
    Y0 = mix.sqrtC @ Z0
    return AlgorithmState(Z1, (WZ - Z1) / a, Y0 + mix.sqrtC @ Z1, 1, a, Z0,
                          res.certificates, int(res.iterations.sum()))


def pc_step(state, config):
    """One step of the recursive form: ``Zhat = (I+W)Z^{k+1} - Wt Z^k + alpha V^{k+1}``."""
    mix, a = config.mixing, state.alpha
    Zhat = state.Z + mix.W @ state.Z - mix.Wt @ state.Z_prev + a * state.V
    res = _resolve(config, Zhat, a, state.k, state.Z)
    Z = res.points
    return AlgorithmState(Z, (Zhat - Z) / a, state.Y + mix.sqrtC @ Z, state.k + 1, a, state.Z,
                          res.certificates, int(res.iterations.sum()))


def zy_init(config):
    """``(Z^0, Y^0 = sqrtC Z^0)`` for the primal-dual form."""
    Z0 = config.Z0
    return AlgorithmState(Z0.copy(), None, config.mixing.sqrtC @ Z0, 0, config.alpha, None)


def pc_step_zy(state, config):
    """``Z^{k+1} ~ prox(Wt Z^k - sqrtC Y^k)``, ``Y^{k+1} = Y^k + sqrtC Z^{k+1}``."""
    mix, a = config.mixing, state.alpha
    Zhat = mix.Wt @ state.Z - mix.sqrtC @ state.Y
    res = _resolve(config, Zhat, a, state.k, state.Z)
    Z = res.points
    return AlgorithmState(Z, (Zhat - Z) / a, state.Y + mix.sqrtC @ Z, state.k + 1, a, state.Z,
                          res.certificates, int(res.iterations.sum()))


def cumulative_reference_step(history, config):
    """``Z^{j+1} = prox(Wt Z^j + sum_{t<=j} (W - Wt) Z^t)`` from the full history ``Z^0..Z^j``.

    Test oracle for the recursive and primal-dual forms; exact mode only.
    """
    if not config.criterion.is_exact:
        raise ValueError("cumulative reference form is defined for exact resolvents only")
    mix = config.mixing
    D = mix.W - mix.Wt
    acc = sum(D @ Zt for Zt in history)
    inputs = mix.Wt @ history[-1] + acc
    return resolve_rows(config.operator, config.alpha, inputs, config.criterion, settings=config.solver).points


def dppa_init(config):
    return AlgorithmState(config.Z0.copy(), None, config.mixing.sqrtC @ config.Z0, 0,
                          config.dppa_schedule(0), None)


def dppa_step(state, config):
    """``Z^{k+1} = prox_{alpha_k T}(Wt Z^k)`` with the diminishing penalty ``alpha_k``."""
    mix = config.mixing
    a = config.dppa_schedule(state.k)
    inputs = mix.Wt @ state.Z
    res = _resolve(config, inputs, a, state.k, state.Z)
    Z = res.points
    return AlgorithmState(Z, (inputs - Z) / a, state.Y + mix.sqrtC @ Z, state.k + 1,
                          config.dppa_schedule(state.k + 1), state.Z,
                          res.certificates, int(res.iterations.sum()))


def init_state(config):
    if config.algorithm == DPPA:
        return dppa_init(config)
    return zy_init(config)


def advance(state, config):
    """One iteration of the configured algorithm from any state."""
    if config.algorithm == DPPA:
        return dppa_step(state, config)
    if config.uses_zy_form:
        return pc_step_zy(state, config)
    if state.k == 0:
        return pc_init(config)
    return pc_step(state, config)


@dataclass
class RunResult:
    metrics: list
    final_state: AlgorithmState
    states: Optional[list] = None
    failure: Optional[str] = None
    wall_time: float = 0.0

    @property
    def iterations(self):
        return self.final_state.k

    @property
    def ok(self):
        return self.failure is None

    def column(self, name):
        return np.array([getattr(m, name) for m in self.metrics], dtype=float)

    def iterations_to(self, name, target):
        """First iteration at which metric ``name`` is at or below ``target`` (``None`` if never)."""
        for m in self.metrics:
            if getattr(m, name) <= target:
                return m.k
        return None


def run(config, metrics_fn: Optional[Callable] = None, sink: Optional[Callable] = None, keep_states=False):
    """Run the configured algorithm from ``Z^0`` for ``max_iterations`` steps.

    ``metrics_fn(state)`` builds one metrics record per iterate (``k = 0`` included)
    and ``sink(record)`` receives it as soon as it is computed.  The run stops
    early once ``solution_error <= error_target`` when a target is set.  A
    resolvent failure ends the run; the partial trajectory is returned with the
    failure message.
    """
    t0 = time.perf_counter()
    state = init_state(config)
    records, states = [], [state] if keep_states else None

    def emit(st):
        if metrics_fn is None:
            return None
        rec = metrics_fn(st)
        records.append(rec)
        if sink is not None:
            sink(rec)
        return rec

    failure = None
    rec = emit(state)
    for _ in range(config.max_iterations):
        if (config.error_target is not None and rec is not None
                and rec.solution_error <= config.error_target):
            break
        try:
            state = advance(state, config)
        except ResolventFailure as exc:
            failure = f"iteration {state.k + 1}: {exc}"
            break
        if keep_states:
            states.append(state)
        rec = emit(state)
    return RunResult(records, state, states, failure, time.perf_counter() - t0)


def with_overrides(config, **changes):
    return replace(config, **changes)
