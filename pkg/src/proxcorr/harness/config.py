"""Experiment configuration: flat ``key = value`` text in sections.

Sections and keys (defaults in brackets)::

    [problem]    kind = ns1 | coupled_qp | file;  N [50 / 5];  seed [7];  p [3];  q [2];  path
    [graph]      kind = random_geometric | edge_list | path | cycle | complete;  N [problem N];
                 seed [42];  path
    [algorithm]  name = proximal-correction | proximal-correction-zy | dppa;  alpha [2];
                 alpha0 [tune];  dppa_power [0.6];  init_seed [0];  max_iterations [1000];
                 error_target [none];  inner_max_iterations [20000];  inner_step [auto]
    [criterion]  mode = exact | A | B;  family = power | geometric;  c [1];  p [2];  q [0.5]
    [output]     dir [out];  name [run]
    [sweep]      parameter = alpha | schedule;  values = comma separated
                 (schedule values look like ``power:1:1.5`` or ``geometric:0.5:0.8``)
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

SECTIONS = ("problem", "graph", "algorithm", "criterion", "output", "sweep")
DPPA_GRID = (0.5, 1.0, 2.0, 4.0)

_KEYS = {
    "problem": {"kind", "n", "seed", "p", "q", "path"},
    "graph": {"kind", "n", "seed", "path"},
    "algorithm": {"name", "alpha", "alpha0", "dppa_power", "init_seed", "max_iterations",
                  "error_target", "inner_max_iterations", "inner_step"},
    "criterion": {"mode", "family", "c", "p", "q"},
    "output": {"dir", "name"},
    "sweep": {"parameter", "values"},
}


class ConfigError(ValueError):
    """Bad configuration; the message names the line and field when known."""


@dataclass(frozen=True)
class ScheduleSpec:
    family: str = "power"
    c: float = 1.0
    p: float = 2.0
    q: float = 0.5

    def label(self):
        if self.family == "power":
            return f"power:{self.c:g}:{self.p:g}"
        return f"geometric:{self.c:g}:{self.q:g}"


@dataclass
class ExperimentConfig:
    problem: dict
    graph: dict
    algorithm: str = "proximal-correction"
    alpha: float = 2.0
    alpha0: Optional[float] = None
    dppa_power: float = 0.6
    init_seed: int = 0
    max_iterations: int = 1000
    error_target: Optional[float] = None
    inner_max_iterations: int = 20000
    inner_step: Optional[float] = None
    mode: str = "exact"
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    out_dir: str = "out"
    name: str = "run"
    sweep_parameter: Optional[str] = None
    sweep_values: list = field(default_factory=list)
    source: Optional[str] = None

    def fairness_key(self):
        """What must agree across configs compared side by side."""
        return (tuple(sorted(self.problem.items())), tuple(sorted(self.graph.items())), self.init_seed)

    def describe(self):
        d = {
            "problem": self.problem, "graph": self.graph, "algorithm": self.algorithm,
            "alpha": self.alpha, "init_seed": self.init_seed, "max_iterations": self.max_iterations,
            "error_target": self.error_target, "criterion": self.mode,
        }
        if self.mode != "exact":
            d["schedule"] = self.schedule.label()
        if self.algorithm == "dppa":
            d["alpha0"] = self.alpha0
            d["dppa_power"] = self.dppa_power
        return d


def _line_of(text, section, key):
    sec = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            sec = m.group(1).strip().lower()
        elif sec == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return no
    return None


class _Reader:
    def __init__(self, parser, text):
        self.parser, self.text = parser, text

    def fail(self, section, key, msg):
        no = _line_of(self.text, section, key)
        where = f"line {no}: " if no else ""
        raise ConfigError(f"{where}[{section}] {key}: {msg}")

    def get(self, section, key, conv=str, default=None):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key).strip()
        if conv is not str and raw.lower() in ("none", "auto", "tune", ""):
            return None
        try:
            return conv(raw)
        except ValueError:
            self.fail(section, key, f"cannot read {raw!r} as {conv.__name__}")

    def choice(self, section, key, options, default):
        v = self.get(section, key, str, default)
        if v is None or v.lower() not in options:
            self.fail(section, key, f"{v!r} is not one of {sorted(options)}")
        return v.lower()


def parse_schedule(text):
    """``power:c:p`` or ``geometric:c:q``."""
    parts = [s.strip() for s in text.split(":")]
    if len(parts) != 3 or parts[0] not in ("power", "geometric"):
        raise ValueError(f"schedule {text!r} should look like power:c:p or geometric:c:q")
    c, x = float(parts[1]), float(parts[2])
    return ScheduleSpec(parts[0], c, p=x) if parts[0] == "power" else ScheduleSpec(parts[0], c, q=x)


def parse_config(text, source=None):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    r = _Reader(parser, text)
    for sec in parser.sections():
        if sec not in SECTIONS:
            no = next((i for i, l in enumerate(text.splitlines(), 1) if l.strip() == f"[{sec}]"), None)
            raise ConfigError(f"line {no}: unknown section [{sec}]")
        for key in parser.options(sec):
            if key not in _KEYS[sec]:
                r.fail(sec, key, "unknown field")
    if not parser.has_section("problem"):
        raise ConfigError("missing [problem] section")

    kind = r.choice("problem", "kind", {"ns1", "coupled_qp", "file"}, None)
    if kind == "ns1":
        problem = {"kind": "ns1", "N": r.get("problem", "N", int, 50)}
        if problem["N"] is None or problem["N"] < 2:
            r.fail("problem", "N", "needs N >= 2")
    elif kind == "coupled_qp":
        problem = {"kind": "coupled_qp", "seed": r.get("problem", "seed", int, 7),
                   "N": r.get("problem", "N", int, 5), "p": r.get("problem", "p", int, 3),
                   "q": r.get("problem", "q", int, 2)}
        for k in ("N", "p", "q"):
            if problem[k] is None or problem[k] < 1:
                r.fail("problem", k, "must be a positive integer")
    else:
        path = r.get("problem", "path")
        if not path:
            r.fail("problem", "path", "required for kind = file")
        problem = {"kind": "file", "path": _resolve(path, source)}

    gkind = r.choice("graph", "kind", {"random_geometric", "edge_list", "path", "cycle", "complete"},
                     "random_geometric")
    graph = {"kind": gkind}
    if gkind == "edge_list":
        path = r.get("graph", "path")
        if not path:
            r.fail("graph", "path", "required for kind = edge_list")
        graph["path"] = _resolve(path, source)
    else:
        n = r.get("graph", "N", int, None)
        if n is not None:
            graph["N"] = n
        if gkind == "random_geometric":
            graph["seed"] = r.get("graph", "seed", int, 42)

    name = r.choice("algorithm", "name", {"proximal-correction", "proximal-correction-zy", "dppa"},
                    "proximal-correction")
    cfg = ExperimentConfig(problem, graph, name, source=source)
    cfg.alpha = r.get("algorithm", "alpha", float, 2.0)
    if cfg.alpha is None or not cfg.alpha > 0:
        r.fail("algorithm", "alpha", "must be positive")
    cfg.alpha0 = r.get("algorithm", "alpha0", float, None)
    if cfg.alpha0 is not None and not cfg.alpha0 > 0:
        r.fail("algorithm", "alpha0", "must be positive or 'tune'")
    cfg.dppa_power = r.get("algorithm", "dppa_power", float, 0.6)
    if cfg.dppa_power is None or not 0 < cfg.dppa_power <= 1:
        r.fail("algorithm", "dppa_power", "needs 0 < p <= 1 (diminishing, non-summable)")
    cfg.init_seed = r.get("algorithm", "init_seed", int, 0)
    cfg.max_iterations = r.get("algorithm", "max_iterations", int, 1000)
    if cfg.max_iterations is None or cfg.max_iterations < 1:
        r.fail("algorithm", "max_iterations", "must be >= 1")
    cfg.error_target = r.get("algorithm", "error_target", float, None)
    cfg.inner_max_iterations = r.get("algorithm", "inner_max_iterations", int, 20000)
    cfg.inner_step = r.get("algorithm", "inner_step", float, None)

    cfg.mode = {"exact": "exact", "a": "A", "b": "B"}[r.choice("criterion", "mode", {"exact", "a", "b"}, "exact")]
    family = r.choice("criterion", "family", {"power", "geometric"}, "power")
    cfg.schedule = ScheduleSpec(family, r.get("criterion", "c", float, 1.0),
                                r.get("criterion", "p", float, 2.0), r.get("criterion", "q", float, 0.5))
    if cfg.mode != "exact":
        if family == "power" and cfg.schedule.p is None:
            r.fail("criterion", "p", "required for the power family")
        if family == "geometric" and cfg.schedule.q is None:
            r.fail("criterion", "q", "required for the geometric family")

    cfg.out_dir = r.get("output", "dir", str, "out")
    cfg.name = r.get("output", "name", str, "run")

    if parser.has_section("sweep"):
        cfg.sweep_parameter = r.choice("sweep", "parameter", {"alpha", "schedule"}, None)
        raw = [v.strip() for v in (r.get("sweep", "values") or "").split(",") if v.strip()]
        if not raw:
            r.fail("sweep", "values", "empty sweep list")
        try:
            vals = [float(v) for v in raw] if cfg.sweep_parameter == "alpha" else [parse_schedule(v) for v in raw]
        except ValueError as exc:
            r.fail("sweep", "values", str(exc))
        if len(set(vals)) != len(vals):
            r.fail("sweep", "values", "sweep values must be distinct")
        if cfg.sweep_parameter == "alpha" and any(v <= 0 for v in vals):
            r.fail("sweep", "values", "alpha values must be positive")
        cfg.sweep_values = vals
    return cfg


def _resolve(path, source):
    p = Path(path)
    if not p.is_absolute() and source:
        p = Path(source).parent / p
    return str(p)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
