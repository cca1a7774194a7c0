"""Adjacency containers, the row-normalized peer operator, and summary statistics.

The statistics here (global clustering, dispersion of row means, greedy
modularity) are the comparison metrics used by the goodness-of-fit suite,
so each one is deterministic: same graph in, same number out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError

#: tolerance for symmetry when reading adjacency from disk
SYMMETRY_TOL = 1e-9


# =============================================================================
# Containers
# =============================================================================


@dataclass(frozen=True)
class Graph:
    """An undirected, loop-free weighted graph stored as a dense adjacency matrix.

    The matrix is validated on construction: square, finite, nonnegative,
    exactly symmetric, zero diagonal. The stored array is read-only.
    """

    a: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DataError(f"adjacency must be square, got shape {a.shape}")
        if a.shape[0] == 0:
            raise DegenerateInputError("adjacency has no nodes")
        if not np.all(np.isfinite(a)):
            raise DataError("adjacency contains non-finite entries")
        if np.any(a < 0):
            raise DataError("adjacency contains negative entries")
        if not np.array_equal(a, a.T):
            raise DataError("adjacency must be exactly symmetric")
        if np.any(np.diagonal(a) != 0):
            raise DataError("adjacency diagonal must be zero (no self loops)")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        """Weighted degree (row sum) of each node."""
        return self.a.sum(axis=1)

    def is_binary(self) -> bool:
        return bool(np.all((self.a == 0) | (self.a == 1)))


@dataclass(frozen=True)
class PeerOperator:
    """Row-normalized adjacency: each row sums to one, or is all zero (isolates)."""

    g: np.ndarray
    isolated: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        g = np.asarray(self.g, dtype=float)
        sums = g.sum(axis=1)
        zero_rows = np.all(g == 0, axis=1)
        ok = zero_rows | (np.abs(sums - 1.0) <= 1e-12)
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise DataError(
                f"peer operator row {bad} sums to {sums[bad]!r}; rows must sum to 1 or be zero"
            )
        g = g.copy()
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "isolated", zero_rows)

    @property
    def n(self) -> int:
        return self.g.shape[0]


def row_normalize(graph: Graph) -> PeerOperator:
    """Divide each adjacency row by its sum; rows of isolates stay zero."""
    deg = graph.degrees
    g = np.zeros_like(graph.a)
    nz = deg > 0
    g[nz] = graph.a[nz] / deg[nz, None]
    return PeerOperator(g)


# =============================================================================
# Summary statistics
# =============================================================================


def _require_binary(graph: Graph, stat: str) -> np.ndarray:
    if not graph.is_binary():
        raise DataError(f"{stat} is defined for binary graphs; found non 0/1 weights")
    return graph.a


def transitivity(graph: Graph) -> float:
    """Global clustering coefficient: 3 * triangles / connected triples."""
    a = _require_binary(graph, "transitivity")
    deg = a.sum(axis=1)
    triples = 0.5 * float(np.sum(deg * (deg - 1)))
    if triples == 0:
        raise DegenerateInputError("graph has no connected triples")
    triangles = float(np.trace(a @ a @ a)) / 6.0
    return 3.0 * triangles / triples


def sd_row_means(graph: Graph) -> float:
    """Standard deviation (divisor n-1) of the adjacency row means."""
    if graph.n < 2:
        raise DegenerateInputError("sd of row means needs at least two nodes")
    return float(np.std(graph.a.mean(axis=1), ddof=1))


def partition_modularity(graph: Graph, labels: np.ndarray) -> float:
    """Newman modularity of a given node partition.

    Q = sum over communities of (within-edge fraction - squared degree fraction).
    """
    a = _require_binary(graph, "modularity")
    labels = np.asarray(labels)
    deg = a.sum(axis=1)
    two_m = float(deg.sum())
    if two_m == 0:
        raise DegenerateInputError("modularity of an edgeless graph is undefined")
    q = 0.0
    for c in np.unique(labels):
        members = labels == c
        e_c = float(a[np.ix_(members, members)].sum()) / 2.0  # within edges
        d_c = float(deg[members].sum())
        q += e_c / (two_m / 2.0) - (d_c / two_m) ** 2
    return q


def greedy_communities(graph: Graph) -> tuple[np.ndarray, float]:
    """Agglomerative modularity maximization.

    Starts from singleton communities and repeatedly merges the pair with the
    largest modularity gain, breaking ties toward the lexicographically
    smallest community-index pair, until no merge improves modularity.

    Returns
    -------
    labels : ndarray of int
        Community label per node, re-indexed to 0..C-1 by first appearance.
    q : float
        Modularity of the returned partition.
    """
    a = _require_binary(graph, "modularity")
    n = graph.n
    deg = a.sum(axis=1)
    two_m = float(deg.sum())
    if two_m == 0:
        raise DegenerateInputError("modularity of an edgeless graph is undefined")
    m_edges = two_m / 2.0

    # cross[i, j]: edges between communities i and j; within[i]: edges inside i
    cross = a.astype(float).copy()
    within = np.zeros(n)
    frac = deg / two_m  # degree fraction per community
    active = np.ones(n, dtype=bool)
    labels = np.arange(n)

    # gain[i, j] for active i < j; -inf elsewhere
    gain = cross / m_edges - 2.0 * np.outer(frac, frac)
    gain[np.tril_indices(n)] = -np.inf

    q = -float(np.sum(frac**2))  # modularity of the all-singleton partition
    while True:
        flat = int(np.argmax(gain))
        i, j = divmod(flat, n)
        best = gain[i, j]
        if not best > 0:
            break
        # merge community j into i (i < j by construction)
        q += best
        within[i] += within[j] + cross[i, j]
        cross[i, :] += cross[j, :]
        cross[:, i] += cross[:, j]
        cross[i, i] = 0.0
        frac[i] += frac[j]
        active[j] = False
        labels[labels == j] = i
        gain[j, :] = -np.inf
        gain[:, j] = -np.inf
        idx = np.flatnonzero(active)
        idx = idx[idx != i]
        lo = np.minimum(idx, i)
        hi = np.maximum(idx, i)
        gain[lo, hi] = cross[i, idx] / m_edges - 2.0 * frac[i] * frac[idx]

    # stable relabel to 0..C-1
    _, relabeled = np.unique(labels, return_inverse=True)
    order = {}
    out = np.empty(n, dtype=int)
    for k, lab in enumerate(relabeled):
        out[k] = order.setdefault(int(lab), len(order))
    return out, q


def modularity(graph: Graph) -> float:
    """Modularity of the greedy community partition."""
    return greedy_communities(graph)[1]


# =============================================================================
# Adjacency CSV round trip
# =============================================================================


def load_adjacency_csv(path) -> Graph:
    """Read a headerless n x n adjacency CSV.

    Asymmetry beyond 1e-9 or any nonzero diagonal entry is rejected; smaller
    asymmetries (from decimal round trips) are symmetrized away.
    """
    a = np.loadtxt(path, delimiter=",", ndmin=2)
    if a.shape[0] != a.shape[1]:
        raise DataError(f"adjacency file is {a.shape[0]}x{a.shape[1]}, expected square")
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL:
        raise DataError(f"adjacency file asymmetric beyond {SYMMETRY_TOL}")
    if np.any(np.diagonal(a) != 0):
        raise DataError("adjacency file has nonzero diagonal entries")
    a = 0.5 * (a + a.T)
    return Graph(a)


def save_adjacency_csv(path, graph: Graph) -> None:
    """Write the adjacency matrix as a headerless CSV with full precision."""
    np.savetxt(path, graph.a, delimiter=",", fmt="%.17g")
