"""Undirected agent networks and the mixing matrices used for neighbor averaging."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

STOCHASTIC_TOL = 1e-12
EIG_TOL = 1e-10
SQRT_CLAMP = 1e-12


class DisconnectedGraphError(ValueError):
    """Raised when a graph that must be connected is not."""

    def __init__(self, unreachable):
        self.unreachable = frozenset(unreachable)
        super().__init__(f"graph is disconnected; unreachable from vertex 1: {sorted(self.unreachable)}")


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected graph on vertices ``1..num_agents``.

    Edges are stored as sorted pairs so ``(i, j)`` and ``(j, i)`` are the same edge.
    Connectivity is not enforced here; call :meth:`unreachable` or
    :func:`build_metropolis_weights` to check it.
    """

    num_agents: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_agents < 1:
            raise ValueError("num_agents must be positive")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (1 <= i <= self.num_agents and 1 <= j <= self.num_agents):
                raise ValueError(f"edge ({i}, {j}) outside 1..{self.num_agents}")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    @classmethod
    def from_edges(cls, num_agents, edges):
        return cls(num_agents, frozenset(edges))

    def to_networkx(self):
        g = nx.Graph()
        g.add_nodes_from(range(1, self.num_agents + 1))
        g.add_edges_from(self.edges)
        return g

    def adjacency(self):
        A = np.zeros((self.num_agents, self.num_agents))
        for i, j in self.edges:
            A[i - 1, j - 1] = A[j - 1, i - 1] = 1.0
        return A

    def degrees(self):
        return self.adjacency().sum(axis=1).astype(int)

    def unreachable(self):
        """Vertices not reachable from vertex 1 by breadth-first search."""
        reached = nx.node_connected_component(self.to_networkx(), 1)
        return set(range(1, self.num_agents + 1)) - reached

    def is_connected(self):
        return not self.unreachable()


def path_graph(n):
    return NetworkGraph(n, frozenset((i, i + 1) for i in range(1, n)))


def complete_graph(n):
    return NetworkGraph(n, frozenset((i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)))


def cycle_graph(n):
    edges = {(i, i + 1) for i in range(1, n)}
    if n > 2:
        edges.add((1, n))
    return NetworkGraph(n, frozenset(edges))


def random_geometric_graph(n=50, seed=42, radius_step=0.05):
    """Seeded random geometric graph in the unit square.

    Node positions are fixed by ``seed``; the connection radius is the smallest
    multiple of ``radius_step`` that yields a connected graph.
    """
    pos = np.random.default_rng(seed).random((n, 2))
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    k = 1
    while True:
        radius = k * radius_step
        iu, ju = np.nonzero(np.triu(dist <= radius, k=1))
        g = NetworkGraph(n, frozenset(zip((iu + 1).tolist(), (ju + 1).tolist())))
        if g.is_connected():
            return g
        k += 1


def read_edge_list(path):
    """Parse the edge-list text format: first line ``N``, then ``i j`` per line (1-based)."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty edge list")
    try:
        n = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}:1: expected agent count, got {lines[0]!r}") from None
    edges = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'i j', got {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return NetworkGraph(n, frozenset(edges))


def write_edge_list(graph, path):
    rows = [str(graph.num_agents)] + [f"{i} {j}" for i, j in sorted(graph.edges)]
    Path(path).write_text("\n".join(rows) + "\n")


@dataclass(frozen=True)
class MixingPair:
    """Mixing matrices ``W`` and ``Wt`` with ``C = Wt - W`` and its PSD square root."""

    W: np.ndarray
    Wt: np.ndarray
    C: np.ndarray
    sqrtC: np.ndarray

    @property
    def num_agents(self):
        return self.W.shape[0]

    @classmethod
    def from_matrices(cls, W, Wt=None):
        W = np.asarray(W, dtype=float)
        Wt = (np.eye(W.shape[0]) + W) / 2 if Wt is None else np.asarray(Wt, dtype=float)
        C = Wt - W
        return cls(W, Wt, C, psd_sqrt(C))

    def to_csv(self, directory, prefix="mixing"):
        """Write W, Wt, C and sqrtC as row-major CSV files with 17 significant digits."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name in ("W", "Wt", "C", "sqrtC"):
            p = directory / f"{prefix}_{name}.csv"
            with p.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                for row in getattr(self, name):
                    w.writerow([f"{v:.17g}" for v in row])
            paths[name] = p
        return paths


def psd_sqrt(M, clamp=SQRT_CLAMP):
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in ``[-clamp, clamp]`` are treated as roundoff and set to zero
    (a ``1e-16`` eigenvalue would otherwise leave ``1e-8`` in the square root);
    anything more negative means ``M`` is not PSD.
    """
    M = np.asarray(M, dtype=float)
    M = (M + M.T) / 2
    lam, U = np.linalg.eigh(M)
    if lam.min() < -clamp:
        raise ValueError(f"matrix is not PSD: min eigenvalue {lam.min():.3e}")
    lam = np.where(lam <= clamp, 0.0, lam)
    S = (U * np.sqrt(lam)) @ U.T
    return (S + S.T) / 2


def metropolis_matrix(graph):
    """Metropolis weight matrix of ``graph`` without any connectivity check."""
    n = graph.num_agents
    deg = graph.degrees()
    W = np.zeros((n, n))
    for i, j in graph.edges:
        w = 1.0 / (max(deg[i - 1], deg[j - 1]) + 1)
        W[i - 1, j - 1] = W[j - 1, i - 1] = w
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    return W


def build_metropolis_weights(graph):
    """Metropolis weights ``w_ij = 1/(max(deg i, deg j) + 1)`` on edges, ``Wt = (I + W)/2``."""
    missing = graph.unreachable()
    if missing:
        raise DisconnectedGraphError(missing)
    return MixingPair.from_matrices(metropolis_matrix(graph))


def spectral_radius(M):
    """Largest absolute eigenvalue of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got shape {M.shape}")
    if np.allclose(M, M.T, rtol=0, atol=1e-14 * max(1.0, np.abs(M).max())):
        return float(np.abs(np.linalg.eigvalsh((M + M.T) / 2)).max())
    return float(np.abs(np.linalg.eigvals(M)).max())


@dataclass
class ClauseResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class ValidationReport:
    clauses: list

    @property
    def passed(self):
        return all(c.passed for c in self.clauses)

    def __getitem__(self, name):
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self):
        return "\n".join(
            f"{c.name}: {'pass' if c.passed else 'FAIL'} (margin {c.margin:.3e}) {c.detail}".rstrip()
            for c in self.clauses
        )


def _min_eig(M):
    return float(np.linalg.eigvalsh((M + M.T) / 2).min())


def validate_mixing_assumptions(pair, graph):
    """Check the four mixing-matrix conditions (a)-(d) plus the square-root identity.

    Margins are signed: positive means the clause holds with room to spare.
    """
    n = graph.num_agents
    W, Wt, C, S = pair.W, pair.Wt, pair.C, pair.sqrtC
    if W.shape != (n, n) or Wt.shape != (n, n):
        raise ValueError(f"mixing matrices must be {n}x{n}")
    clauses = []

    off = ~np.eye(n, dtype=bool) & (graph.adjacency() == 0)
    worst = max(np.abs(W[off]).max(initial=0.0), np.abs(Wt[off]).max(initial=0.0))
    clauses.append(ClauseResult("a", worst == 0.0, -worst, "sparsity outside edges"))

    one = np.ones(n)
    dev = max(
        np.abs(W @ one - one).max(), np.abs(one @ W - one).max(),
        np.abs(Wt @ one - one).max(), np.abs(one @ Wt - one).max(),
    )
    clauses.append(ClauseResult("b", dev <= STOCHASTIC_TOL, STOCHASTIC_TOL - dev, "double stochasticity"))

    lam = np.linalg.eigvalsh((C + C.T) / 2)
    second = float(lam[1]) if n > 1 else np.inf
    null_dim = int(np.sum(np.abs(lam) <= EIG_TOL))
    c1 = float(np.abs(C @ one).max())
    ok_c = (second > EIG_TOL) and c1 <= STOCHASTIC_TOL and (n == 1 or abs(lam[0]) <= EIG_TOL)
    if n == 1:
        ok_c, second = c1 <= STOCHASTIC_TOL, 0.0
    clauses.append(ClauseResult("c", ok_c, second - EIG_TOL, f"dim null(C) = {null_dim}"))

    m = min(_min_eig(Wt), _min_eig((np.eye(n) + W) / 2 - Wt), _min_eig(Wt - W))
    pos = _min_eig(Wt)
    ok_d = m >= -EIG_TOL and pos > 0
    clauses.append(ClauseResult("d", ok_d, m + EIG_TOL, f"min eig(Wt) = {pos:.3e}"))

    sq = float(np.abs(S @ S - C).max())
    sym = float(np.abs(S - S.T).max())
    ok_s = sq <= EIG_TOL and sym <= EIG_TOL and _min_eig(S) >= -EIG_TOL
    clauses.append(ClauseResult("sqrtC", ok_s, EIG_TOL - max(sq, sym), "sqrtC @ sqrtC = C"))
    return ValidationReport(clauses)
