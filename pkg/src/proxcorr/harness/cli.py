"""Command line entry point.

    proxcorr run            --config RUN.cfg [--out DIR] [--figures]
    proxcorr sweep          --config SWEEP.cfg
    proxcorr compare        --config A.cfg --config B.cfg [--name NAME]
    proxcorr validate-graph --config RUN.cfg
    proxcorr audit          --config RUN.cfg

Exit status: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from ..graph import DisconnectedGraphError
from ..inner import ResolventFailure
from . import experiment as ex
from .config import ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("proxcorr")


def _apply_overrides(cfg, args):
    if args.seed_override is not None:
        s = args.seed_override
        problem = dict(cfg.problem)
        if problem.get("kind") == "coupled_qp":
            problem["seed"] = s
        graph = dict(cfg.graph)
        if graph.get("kind") == "random_geometric":
            graph["seed"] = s
        cfg = replace(cfg, problem=problem, graph=graph, init_seed=s)
    if args.max_iter is not None:
        if args.max_iter < 1:
            raise ConfigError("--max-iter must be >= 1")
        cfg = replace(cfg, max_iterations=args.max_iter)
    return cfg


def _out(cfg, args):
    return args.out or cfg.out_dir


def cmd_run(args, cfgs):
    cfg = cfgs[0]
    if args.dry_run:
        ex.Setup(cfg)
        print(json.dumps({"dry_run": True, "config": cfg.describe()}, indent=2))
        return EXIT_OK
    res, csv_path, summ = ex.run_experiment(cfg, _out(cfg, args), args.figures)
    print(json.dumps(summ, indent=2))
    log.info("trajectory written to %s", csv_path)
    return EXIT_OK if res.ok else EXIT_NUMERIC


def cmd_sweep(args, cfgs):
    cfg = cfgs[0]
    if not cfg.sweep_parameter:
        raise ConfigError("missing [sweep] section")
    if args.dry_run:
        ex.Setup(cfg)
        print(json.dumps({"dry_run": True, "sweep": cfg.sweep_parameter, "values": len(cfg.sweep_values)}))
        return EXIT_OK
    runs, table, doc = ex.run_sweep(cfg, _out(cfg, args), args.figures)
    print(json.dumps({"table": str(table), "members": [
        {"value": m["value"], "iterations": m.get("iterations"), "failure": m.get("failure"),
         "final_solution_error": m.get("final", {}).get("solution_error")} for m in doc["members"]]}, indent=2))
    failed = any(m.get("failure") for m in doc["members"])
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_compare(args, cfgs):
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two --config files")
    if args.dry_run:
        for c in cfgs:
            ex.Setup(c)
        keys = {c.fairness_key() for c in cfgs}
        if len(keys) != 1:
            raise ConfigError("problem, graph and initial iterate must match across compared configs")
        print(json.dumps({"dry_run": True, "configs": len(cfgs)}))
        return EXIT_OK
    runs, path = ex.compare_algorithms(cfgs, args.out or cfgs[0].out_dir, args.name, args.figures)
    final = {lab: {"iterations": r.iterations, "solution_error": r.metrics[-1].solution_error,
                   "failure": r.failure} for lab, r in runs.items()}
    print(json.dumps({"table": str(path), "final": final}, indent=2))
    return EXIT_OK if all(r.ok for r in runs.values()) else EXIT_NUMERIC


def cmd_validate_graph(args, cfgs):
    cfg = cfgs[0]
    doc = ex.validate_graph(cfg, None if args.dry_run else _out(cfg, args))
    print(json.dumps(doc, indent=2, default=float))
    return EXIT_OK if doc["passed"] else EXIT_NUMERIC


def cmd_audit(args, cfgs):
    cfg = cfgs[0]
    doc = ex.audit(cfg, None if args.dry_run else _out(cfg, args))
    checks = doc["checks"]
    print(json.dumps({"alpha": doc["alpha"], "phi_distance_at_lift": doc["phi_distance_at_lift"],
                      "checks": checks, "worst": doc["transition_audit"]["worst"]}, indent=2))
    ok = doc["lift_ok"] and all(checks[k] for k in ("a", "b", "c", "etilde"))
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "validate-graph": cmd_validate_graph,
    "audit": cmd_audit,
}


def build_parser():
    p = argparse.ArgumentParser(prog="proxcorr", description="Distributed Proximal-Correction experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", action="append", required=True, metavar="PATH",
                       help="experiment config (repeat for compare)")
        s.add_argument("--out", metavar="DIR", help="output directory (overrides [output] dir)")
        s.add_argument("--seed-override", type=int, metavar="N",
                       help="replace the graph, problem and initial-iterate seeds")
        s.add_argument("--max-iter", type=int, metavar="N")
        s.add_argument("--dry-run", action="store_true", help="validate the config and write nothing")
        s.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSVs")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "compare":
            s.add_argument("--name", default="compare", help="basename of the comparison table")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command != "compare" and len(args.config) > 1:
            raise ConfigError(f"{args.command} takes a single --config")
        cfgs = [_apply_overrides(load_config(c), args) for c in args.config]
        return COMMANDS[args.command](args, cfgs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResolventFailure, DisconnectedGraphError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
