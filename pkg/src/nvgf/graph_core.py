"""Graphs, shift operators and symmetric eigendecomposition."""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SHIFT_KINDS = ("adjacency", "scaled_adjacency", "laplacian", "normalized_laplacian")


class GraphFormatError(ValueError):
    pass


class ConnectivityError(RuntimeError):
    pass


class EigenConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Graph:
    """Weighted undirected graph without self-loops.

    ``edges`` holds each unordered pair once as ``(i, j, weight)`` with ``i < j``.
    """

    num_nodes: int
    edges: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError(f"num_nodes must be positive, got {self.num_nodes}")
        seen = {}
        for i, j, w in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ValueError(f"edge ({i}, {j}) outside [0, {self.num_nodes})")
            if not w > 0:
                raise ValueError(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen[key] = float(w)
        object.__setattr__(
            self, "edges", tuple((i, j, w) for (i, j), w in sorted(seen.items()))
        )

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.zeros((self.num_nodes, self.num_nodes))
        for i, j, wij in self.edges:
            w[i, j] = w[j, i] = wij
        w.flags.writeable = False
        return w

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj = [[] for _ in range(self.num_nodes)]
        for i, j, _ in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    def to_text(self) -> str:
        lines = [f"graph {self.num_nodes}"]
        lines += [f"{i} {j} {w!r}" for i, j, w in self.edges]
        return "\n".join(lines) + "\n"

    @cached_property
    def digest(self) -> str:
        return "sha256:" + hashlib.sha256(self.to_text().encode()).hexdigest()


@dataclass(frozen=True)
class ShiftOperator:
    matrix: np.ndarray
    kind: str
    source_graph: Graph = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def generate_connected_er(n: int, p: float, seed: int, max_attempts: int = 1000) -> Graph:
    """Erdos-Renyi graph with unit weights, resampled until connected."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0 < p <= 1:
        raise ValueError(f"edge probability must be in (0, 1], got {p}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(max_attempts):
        mask = rng.random(iu.size) < p
        g = Graph(n, tuple((int(i), int(j), 1.0) for i, j in zip(iu[mask], ju[mask])))
        if len(hop_distances(g, 0)) == n:
            return g
    raise ConnectivityError(
        f"no connected ER graph with n={n}, p={p} after {max_attempts} attempts"
    )


def build_shift(g: Graph, kind: str) -> ShiftOperator:
    kind = kind.replace("-", "_")
    w = np.array(g.weights)
    if kind == "adjacency":
        s = w
    elif kind == "scaled_adjacency":
        # W / lambda_max(W); same filter class as W, bounded powers
        s = w / spectral_radius(w)
    elif kind == "laplacian":
        s = np.diag(w.sum(axis=1)) - w
    elif kind == "normalized_laplacian":
        d = w.sum(axis=1)
        inv_sqrt = np.zeros_like(d)
        nz = d > 0
        inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
        s = np.diag(nz.astype(float)) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    else:
        raise ValueError(f"unknown shift kind {kind!r}; expected one of {SHIFT_KINDS}")
    s.flags.writeable = False
    return ShiftOperator(s, kind, g)


def spectral_radius(m: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvalsh(m)).max())


def degrees(g: Graph) -> np.ndarray:
    return g.weights.sum(axis=1)


def hop_distances(g: Graph, source: int) -> dict[int, int]:
    """BFS hop distance from ``source`` to every reachable node."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in g.neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def k_hop_neighborhood(g: Graph, node: int, k: int) -> set[int]:
    if not 0 <= node < g.num_nodes:
        raise IndexError(f"node {node} outside [0, {g.num_nodes})")
    if k < 0:
        raise ValueError("k must be non-negative")
    return {v for v, d in hop_distances(g, node).items() if d <= k}


def eigendecompose(
    s: ShiftOperator | np.ndarray, tol: float = 1e-12, max_sweeps: int = 100
) -> EigenDecomposition:
    """Cyclic Jacobi eigendecomposition of a real symmetric matrix.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol * ||S||_F``. Eigenvalues are returned ascending, eigenvectors
    as the matching orthonormal columns.
    """
    a = np.array(s.matrix if isinstance(s, ShiftOperator) else s, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("eigendecompose requires a square symmetric matrix")
    v = np.eye(n)
    threshold = tol * max(np.linalg.norm(a), np.finfo(float).tiny)
    for _ in range(max_sweeps + 1):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                sn = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - sn * aq
                a[q, :] = sn * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    else:
        raise EigenConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (n={n})")
    order = np.argsort(np.diag(a), kind="stable")
    return EigenDecomposition(np.diag(a)[order].copy(), v[:, order].copy())


def read_graph(path: str | Path) -> Graph:
    return parse_graph(Path(path).read_text())


def parse_graph(text: str) -> Graph:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise GraphFormatError("empty graph file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "graph":
        raise GraphFormatError(f"bad header {lines[0]!r}; expected 'graph <N>'")
    try:
        n = int(head[1])
        edges = []
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != 3:
                raise GraphFormatError(f"bad edge line {ln!r}")
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        return Graph(n, tuple(edges))
    except GraphFormatError:
        raise
    except ValueError as exc:
        raise GraphFormatError(str(exc)) from exc


def write_graph(g: Graph, path: str | Path) -> None:
    Path(path).write_text(g.to_text())
