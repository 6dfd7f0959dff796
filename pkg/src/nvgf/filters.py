"""Node-invariant, node-varying and hybrid graph filters.

All filters are evaluated by repeated shift-and-accumulate, so ``S**t`` is
never formed. Signals are arrays whose first axis indexes nodes; any trailing
axes (features, batch columns) are filtered independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .graph_core import EigenDecomposition, Graph, ShiftOperator, degrees, hop_distances


@dataclass(frozen=True)
class MembershipMatrix:
    """Grouping of nodes for hybrid filters.

    ``assignment[i]`` is the group of node ``i``; ``selected[b]`` is the node
    that owns group ``b``.
    """

    assignment: np.ndarray
    selected: tuple[int, ...]

    @property
    def num_groups(self) -> int:
        return len(self.selected)

    @property
    def num_nodes(self) -> int:
        return self.assignment.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        c = np.zeros((self.num_nodes, self.num_groups))
        c[np.arange(self.num_nodes), self.assignment] = 1.0
        return c

    @classmethod
    def identity(cls, n: int) -> "MembershipMatrix":
        return cls(np.arange(n), tuple(range(n)))


def _as_matrix(s: ShiftOperator | np.ndarray) -> np.ndarray:
    return s.matrix if isinstance(s, ShiftOperator) else np.asarray(s)


def _check_signal(s: np.ndarray, x: np.ndarray) -> None:
    if x.ndim == 0 or x.shape[0] != s.shape[0]:
        raise ValueError(f"signal of shape {x.shape} does not match a {s.shape[0]}-node shift")


def shifted_signals(s: ShiftOperator | np.ndarray, x: np.ndarray, order: int) -> Iterator[np.ndarray]:
    """Yield ``x, Sx, S^2 x, ..., S^(order-1) x``."""
    s = _as_matrix(s)
    z = np.asarray(x, dtype=float)
    for t in range(order):
        if t:
            z = s @ z
        yield z


def _tap_shape(x: np.ndarray) -> tuple[int, ...]:
    return (-1,) + (1,) * (x.ndim - 1)


def apply_node_invariant(s, taps, x) -> np.ndarray:
    """sum_t h_t S^t x."""
    taps = np.asarray(taps, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    _check_signal(_as_matrix(s), x)
    if taps.size < 1:
        raise ValueError("filter needs at least one tap")
    out = np.zeros_like(x)
    for h, z in zip(taps, shifted_signals(s, x, taps.size)):
        out += h * z
    return out


def apply_node_varying(s, taps, x) -> np.ndarray:
    """sum_t diag(h_t) S^t x with ``taps`` of shape (N, T)."""
    taps = np.asarray(taps, dtype=float)
    x = np.asarray(x, dtype=float)
    mat = _as_matrix(s)
    _check_signal(mat, x)
    if taps.ndim != 2 or taps.shape[0] != mat.shape[0] or taps.shape[1] < 1:
        raise ValueError(f"node-varying taps must be (N={mat.shape[0]}, T), got {taps.shape}")
    out = np.zeros_like(x)
    shape = _tap_shape(x)
    for t, z in enumerate(shifted_signals(mat, x, taps.shape[1])):
        out += taps[:, t].reshape(shape) * z
    return out


def apply_hybrid(s, taps, membership: MembershipMatrix, x) -> np.ndarray:
    """sum_t diag(C_B h_{B,t}) S^t x with ``taps`` of shape (B, T).

    ``C_B h`` is a gather of ``h`` through the membership assignment.
    """
    taps = np.asarray(taps, dtype=float)
    if taps.ndim != 2 or taps.shape[0] != membership.num_groups:
        raise ValueError(
            f"hybrid taps must be (B={membership.num_groups}, T), got {taps.shape}"
        )
    return apply_node_varying(s, taps[membership.assignment], x)


def build_membership(g: Graph, b: int, seed: int) -> MembershipMatrix:
    """Group nodes around the ``b`` highest-degree nodes.

    Every other node copies the group of the selected node it shares the
    heaviest edge with. Nodes with no edge into the selected set fall back to
    the nearest selected node in hops. All ties are broken by a seeded draw.
    """
    n = g.num_nodes
    if not 1 <= b <= n:
        raise ValueError(f"number of groups must be in [1, {n}], got {b}")
    rng = np.random.default_rng(seed)
    deg = degrees(g)
    tiebreak = rng.random(n)
    # lexsort: last key is primary
    order = np.lexsort((tiebreak, -deg))
    selected = tuple(int(v) for v in order[:b])
    group_of = {v: k for k, v in enumerate(selected)}

    w = g.weights
    sel = np.array(selected)
    assignment = np.empty(n, dtype=np.int64)
    for i in range(n):
        if i in group_of:
            assignment[i] = group_of[i]
            continue
        wi = w[i, sel]
        if wi.max() > 0:
            candidates = np.flatnonzero(wi == wi.max())
        else:
            dist = hop_distances(g, i)
            hops = np.array([dist.get(int(v), np.inf) for v in sel])
            candidates = np.flatnonzero(hops == hops.min())
        assignment[i] = candidates[rng.integers(candidates.size)] if candidates.size > 1 else candidates[0]
    assignment.flags.writeable = False
    return MembershipMatrix(assignment, selected)


def gft(decomp: EigenDecomposition, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_signal(decomp.eigenvectors, x)
    return decomp.eigenvectors.T @ x


def inverse_gft(decomp: EigenDecomposition, xf) -> np.ndarray:
    xf = np.asarray(xf, dtype=float)
    _check_signal(decomp.eigenvectors, xf)
    return decomp.eigenvectors @ xf


def frequency_response(taps, eigenvalues) -> np.ndarray:
    """sum_t h_t lambda_k^t for every eigenvalue, by Horner's rule."""
    taps = np.asarray(taps, dtype=float).ravel()
    lam = np.asarray(eigenvalues, dtype=float)
    out = np.zeros_like(lam)
    for h in taps[::-1]:
        out = out * lam + h
    return out
