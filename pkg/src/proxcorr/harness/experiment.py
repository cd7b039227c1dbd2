"""Turn an :class:`ExperimentConfig` into runs, sweeps, comparisons and audits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import graph as G
from ..algorithms import DPPA, RunConfig, run, zy_init, pc_step_zy
from ..diagnostics import (MetricsContext, IterationMetrics, PqPair, phi_distance, transition_audit,
                           reference_lift, report_to_jsonable)
from ..inner import SolverSettings
from ..operators import InexactnessCriterion, Schedule
from ..problems import centralized_reference, initial_iterate, load_problem
from .config import DPPA_GRID, ConfigError


def build_graph(cfg, num_agents):
    g = cfg.graph
    kind = g["kind"]
    if kind == "edge_list":
        try:
            graph = G.read_edge_list(g["path"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"[graph] path: {exc}") from None
    else:
        n = g.get("N", num_agents)
        if kind == "random_geometric":
            graph = G.random_geometric_graph(n, g.get("seed", 42))
        else:
            graph = {"path": G.path_graph, "cycle": G.cycle_graph, "complete": G.complete_graph}[kind](n)
    if graph.num_agents != num_agents:
        raise ConfigError(f"[graph] N: graph has {graph.num_agents} agents but the problem has {num_agents}")
    return graph


def build_problem(cfg):
    spec = dict(cfg.problem)
    if spec["kind"] == "file":
        try:
            return load_problem(spec["path"])
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"[problem] path: {exc}") from None
    return load_problem(spec)


def make_criterion(cfg, schedule=None):
    if cfg.mode == "exact":
        return InexactnessCriterion.exact()
    s = schedule or cfg.schedule
    sched = Schedule(s.family, c=s.c, p=s.p) if s.family == "power" else Schedule(s.family, c=s.c, q=s.q)
    return InexactnessCriterion.absolute(sched) if cfg.mode == "A" else InexactnessCriterion.relative(sched)


class Setup:
    """Problem, network and oracle shared by every run of one configuration."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.instance, self.op = build_problem(cfg)
        self.graph = build_graph(cfg, self.op.num_agents)
        try:
            self.mixing = G.build_metropolis_weights(self.graph)
        except G.DisconnectedGraphError as exc:
            raise ConfigError(f"[graph] {exc}") from None
        self.z_star, _ = centralized_reference(self.instance)
        self.Z0 = initial_iterate(self.instance, cfg.init_seed)
        self.settings = SolverSettings(step=cfg.inner_step, max_iterations=cfg.inner_max_iterations)

    def context(self, alpha, track_lyapunov=True):
        xi = reference_lift(self.instance, self.op, self.mixing, alpha, self.z_star) if track_lyapunov else None
        return MetricsContext(self.instance, self.mixing, self.z_star, xi, track_lyapunov)

    def run_config(self, cfg=None, alpha0=None):
        cfg = cfg or self.cfg
        kw = dict(algorithm=cfg.algorithm, mixing=self.mixing, operator=self.op, Z0=self.Z0,
                  alpha=cfg.alpha, criterion=make_criterion(cfg), max_iterations=cfg.max_iterations,
                  error_target=cfg.error_target, solver=self.settings)
        if cfg.algorithm == DPPA:
            kw["dppa_schedule"] = Schedule("power", c=alpha0 or cfg.alpha0, p=cfg.dppa_power)
        return RunConfig(**kw)


def tune_dppa(setup, cfg, grid=DPPA_GRID):
    """Pick ``alpha0`` from ``grid`` by the final solution error at the configured horizon."""
    ctx = setup.context(cfg.alpha, track_lyapunov=False)
    scores = {}
    for a0 in grid:
        res = run(setup.run_config(cfg, alpha0=a0), ctx)
        scores[a0] = res.metrics[-1].solution_error if res.ok else math.inf
    best = min(grid, key=lambda a: scores[a])
    return best, scores


def write_csv(path, metrics):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IterationMetrics.FIELDS)
        for m in metrics:
            w.writerow([_fmt(v) for v in m.row()])
    return path


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def execute(cfg, setup=None, sink=None):
    """One run; returns ``(result, provenance)``."""
    setup = setup or Setup(cfg)
    prov = {}
    if cfg.algorithm == DPPA and cfg.alpha0 is None:
        best, scores = tune_dppa(setup, cfg)
        prov["dppa_tuning"] = {"grid": list(DPPA_GRID), "final_errors": {str(k): v for k, v in scores.items()},
                               "chosen_alpha0": best}
        cfg = replace(cfg, alpha0=best)
    track = cfg.algorithm != DPPA
    res = run(setup.run_config(cfg), setup.context(cfg.alpha, track), sink=sink)
    if cfg.algorithm == DPPA:
        prov["alpha0"] = cfg.alpha0
    return res, prov


def summary(cfg, res, prov, target=None):
    last = res.metrics[-1].to_dict() if res.metrics else {}
    target = cfg.error_target if target is None else target
    out = {
        "config": cfg.describe(),
        "iterations": res.iterations,
        "final": last,
        "iterations_to_target": None if target is None else res.iterations_to("solution_error", target),
        "error_target": target,
        "wall_time_s": res.wall_time,
        "failure": res.failure,
    }
    out.update(prov)
    return report_to_jsonable(out)


def run_experiment(cfg, out_dir, figures=False):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res, prov = execute(cfg)
    csv_path = write_csv(out / f"{cfg.name}.csv", res.metrics)
    summ = summary(cfg, res, prov)
    (out / f"{cfg.name}.summary.json").write_text(json.dumps(summ, indent=2) + "\n")
    if figures and res.metrics:
        from .plotting import trajectory_figure

        trajectory_figure(res.metrics, out / f"{cfg.name}.png", f"{cfg.algorithm}, alpha = {cfg.alpha:g}")
    return res, csv_path, summ


def _wide_table(path, runs, column="solution_error"):
    """Iteration-keyed table with one column per labelled run (blank past a run's end)."""
    kmax = max((len(r.metrics) for r in runs.values()), default=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + list(runs))
        for k in range(kmax):
            row = [str(k)]
            for r in runs.values():
                row.append(_fmt(getattr(r.metrics[k], column)) if k < len(r.metrics) else "")
            w.writerow(row)
    return path


def run_sweep(cfg, out_dir, figures=False):
    if not cfg.sweep_parameter or not cfg.sweep_values:
        raise ConfigError("[sweep] values: empty sweep list")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = Setup(cfg)
    runs, members = {}, []
    for v in cfg.sweep_values:
        if cfg.sweep_parameter == "alpha":
            member, label = replace(cfg, alpha=v), f"alpha={v:g}"
        else:
            member, label = replace(cfg, schedule=v), v.label()
        member = replace(member, name=f"{cfg.name}_{label.replace(':', '_')}")
        try:
            res, prov = execute(member, setup)
        except Exception as exc:  # a failed member is recorded and the sweep goes on
            members.append({"value": label, "failure": f"{type(exc).__name__}: {exc}"})
            continue
        write_csv(out / f"{member.name}.csv", res.metrics)
        runs[label] = res
        members.append({"value": label, **summary(member, res, prov)})
    table = _wide_table(out / f"{cfg.name}_sweep.csv", runs)
    doc = {"parameter": cfg.sweep_parameter, "members": members}
    (out / f"{cfg.name}_sweep.summary.json").write_text(json.dumps(report_to_jsonable(doc), indent=2) + "\n")
    if figures and runs:
        from .plotting import comparison_figure

        series = {lab: ([m.k for m in r.metrics], [m.solution_error for m in r.metrics]) for lab, r in runs.items()}
        comparison_figure(series, out / f"{cfg.name}_sweep.png", title=f"sweep over {cfg.sweep_parameter}")
    return runs, table, doc


def compare_algorithms(cfgs, out_dir, name="compare", figures=False):
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two configs")
    key = cfgs[0].fairness_key()
    for c in cfgs[1:]:
        if c.fairness_key() != key:
            raise ConfigError(f"{c.source or c.name}: problem, graph and initial iterate must match across "
                              "compared configs")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = Setup(cfgs[0])
    runs, members = {}, []
    for c in cfgs:
        label = c.name
        if label in runs:
            raise ConfigError(f"[output] name: duplicate label {label!r} across compared configs")
        res, prov = execute(c, setup)
        runs[label] = res
        write_csv(out / f"{name}_{label}.csv", res.metrics)
        members.append({"label": label, **summary(c, res, prov)})
    kmax = max(len(r.metrics) for r in runs.values())
    path = out / f"{name}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["k"]
        for lab in runs:
            header += [f"{lab}_solution_error", f"{lab}_constraint_violation"]
        w.writerow(header)
        for k in range(kmax):
            row = [str(k)]
            for r in runs.values():
                if k < len(r.metrics):
                    row += [_fmt(r.metrics[k].solution_error), _fmt(r.metrics[k].constraint_violation)]
                else:
                    row += ["", ""]
            w.writerow(row)
    (out / f"{name}.summary.json").write_text(json.dumps(report_to_jsonable({"members": members}), indent=2) + "\n")
    if figures:
        from .plotting import comparison_figure

        series = {lab: ([m.k for m in r.metrics], [m.solution_error for m in r.metrics]) for lab, r in runs.items()}
        comparison_figure(series, out / f"{name}.png")
    return runs, path


def validate_graph(cfg, out_dir=None):
    _, op = build_problem(cfg)
    graph = build_graph(cfg, op.num_agents)
    pair = G.MixingPair.from_matrices(G.metropolis_matrix(graph))
    report = G.validate_mixing_assumptions(pair, graph)
    pq = PqPair.from_mixing(pair)
    doc = {
        "num_agents": graph.num_agents,
        "num_edges": len(graph.edges),
        "connected": graph.is_connected(),
        "clauses": [c.__dict__ for c in report.clauses],
        "P2_minus_Q2_min_eig": pq.min_eigenvalues()[2],
        "passed": report.passed,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pair.to_csv(out, prefix=f"{cfg.name}_mixing")
        (out / f"{cfg.name}_graph.json").write_text(json.dumps(report_to_jsonable(doc), indent=2) + "\n")
    return doc


def audit(cfg, out_dir=None, transitions=20, E_size=1e-3, seed=0):
    """Lifted fixed point and transition audits along an exact run from ``Z0``."""
    setup = Setup(cfg)
    xi_star = reference_lift(setup.instance, setup.op, setup.mixing, cfg.alpha, setup.z_star)
    pd = phi_distance(xi_star, setup.op, setup.mixing, cfg.alpha)
    rc = replace(setup.run_config(), algorithm="proximal-correction-zy", criterion=InexactnessCriterion.exact())
    st = zy_init(rc)
    Zs, Ys = [], []
    for _ in range(transitions):
        Zs.append(st.Z)
        Ys.append(st.Y)
        st = pc_step_zy(st, rc)
    rep = transition_audit(Zs, Ys, setup.op, setup.mixing, cfg.alpha, E_size=E_size, seed=seed,
                      settings=setup.settings)
    w = rep["worst"]
    doc = {
        "alpha": cfg.alpha,
        "phi_distance_at_lift": pd,
        "lift_ok": pd <= 1e-8,
        "transition_audit": rep,
        "checks": {
            "a": w["a_residual"] <= 1e-7,
            "b": w["b_margin"] >= -1e-9,
            "b_without_alpha": w["b_literal_margin"] >= -1e-9,
            "c": w["c_margin"] >= -1e-9,
            "etilde": w["etilde_margin"] >= 0,
        },
    }
    doc = report_to_jsonable(doc)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.name}_audit.json").write_text(json.dumps(doc, indent=2) + "\n")
    return doc
