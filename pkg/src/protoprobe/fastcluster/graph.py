"""Cosine similarity graphs over unit-norm feature rows.

Graphs are stored as symmetric CSR (every undirected edge appears as two
directed arcs with equal weight). The clustering pipeline is
build -> threshold filter (strict >) -> per-node top-k pruning with union
re-symmetrization; ``build_pruned_graph`` fuses the three steps in row
blocks so the dense N x N similarity matrix never materialises.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation, ParameterError

_NORM_TOL = 1e-8


@dataclass(frozen=True)
class SimilarityGraph:
    """Weighted undirected graph in symmetric CSR form."""

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if len(self.indptr) != self.num_nodes + 1:
            raise ContractViolation("indptr length must be num_nodes + 1")
        if len(self.indices) != len(self.weights):
            raise ContractViolation("indices/weights length mismatch")

    @property
    def num_edges(self):
        """Undirected edge count."""
        return len(self.indices) // 2

    def degree(self, i):
        return int(self.indptr[i + 1] - self.indptr[i])

    def neighbors(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def edge_array(self):
        """(i, j, w) rows with i < j, sorted lexicographically."""
        src = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        mask = src < self.indices
        return np.column_stack(
            [src[mask], self.indices[mask], self.weights[mask]]
        )

    def total_weight(self):
        """Sum of undirected edge weights."""
        return float(self.weights.sum()) / 2.0

    def strengths(self):
        """Weighted degree per node."""
        return _strengths(self.indptr, self.weights, self.num_nodes)


def _strengths(indptr, weights, n):
    out = np.zeros(n)
    counts = np.diff(indptr)
    nonempty = counts > 0
    if weights.size:
        sums = np.add.reduceat(weights, indptr[:-1][nonempty])
        out[nonempty] = sums
    return out


def graph_from_pairs(n, rows, cols, weights):
    """Build a SimilarityGraph from directed arc triplets (already
    containing both directions of every edge)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.lexsort((cols, rows))
    rows, cols, weights = rows[order], cols[order], weights[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return SimilarityGraph(n, indptr, cols, weights)


def graph_from_edges(n, edges):
    """Build from undirected (i, j, w) triples; both arcs are added."""
    if len(edges) == 0:
        return graph_from_pairs(n, [], [], [])
    e = np.asarray(edges, dtype=np.float64)
    i = e[:, 0].astype(np.int64)
    j = e[:, 1].astype(np.int64)
    w = e[:, 2]
    if np.any(i == j):
        raise ContractViolation("self-loops are not allowed")
    return graph_from_pairs(
        n, np.concatenate([i, j]), np.concatenate([j, i]), np.concatenate([w, w])
    )


def _check_normalized(features):
    norms = np.linalg.norm(features, axis=1)
    if np.any(np.abs(norms - 1.0) > _NORM_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise ContractViolation(
            f"features must be L2-normalized; row {bad} has norm {norms[bad]:.6f}"
        )


def build_graph(features):
    """Complete cosine-similarity graph over normalized feature rows.

    Quadratic in the number of rows; intended for moderate sizes. The
    clustering pipeline uses ``build_pruned_graph`` instead.
    """
    features = np.asarray(features, dtype=np.float64)
    _check_normalized(features)
    n = features.shape[0]
    sims = np.clip(features @ features.T, -1.0, 1.0)
    np.fill_diagonal(sims, 0.0)
    rows, cols = np.nonzero(~np.eye(n, dtype=bool))
    return graph_from_pairs(n, rows, cols, sims[rows, cols])


def filter_edges(graph, tau_f):
    """Drop every edge whose weight is not strictly above ``tau_f``."""
    src = np.repeat(np.arange(graph.num_nodes), np.diff(graph.indptr))
    keep = graph.weights > tau_f
    return graph_from_pairs(
        graph.num_nodes, src[keep], graph.indices[keep], graph.weights[keep]
    )


def _topk_of_row(indices, weights, k):
    if len(indices) <= k:
        return indices
    # weight descending, neighbor index ascending on ties
    order = np.lexsort((indices, -weights))
    return indices[order[:k]]


def knn_prune(graph, k):
    """Keep each node's k strongest incident edges, union-symmetrized.

    An edge survives if either endpoint ranks it in its own top k, which
    keeps the graph denser than mutual-kNN and never strands a node that
    still has edges.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    n = graph.num_nodes
    kept = set()
    for i in range(n):
        nbr, w = graph.neighbors(i)
        for j in _topk_of_row(nbr, w, k):
            kept.add((min(i, int(j)), max(i, int(j))))
    if not kept:
        return graph_from_pairs(n, [], [], [])
    pairs = np.array(sorted(kept), dtype=np.int64)
    # recover weights from the original graph
    lut = {}
    src = np.repeat(np.arange(n), np.diff(graph.indptr))
    for s, d, w in zip(src, graph.indices, graph.weights):
        if s < d:
            lut[(int(s), int(d))] = w
    weights = np.array([lut[(int(a), int(b))] for a, b in pairs])
    return graph_from_edges(n, np.column_stack([pairs, weights]))


def build_pruned_graph(features, tau_f, k, block_size=512):
    """Fused build -> filter -> prune, block-wise over rows.

    Produces exactly the graph of
    ``knn_prune(filter_edges(build_graph(f), tau_f), k)`` without holding
    the full similarity matrix (verified by an equivalence test).
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    features = np.asarray(features, dtype=np.float64)
    _check_normalized(features)
    n = features.shape[0]
    kept_i, kept_j, kept_w = [], [], []
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        sims = np.clip(features[start:stop] @ features.T, -1.0, 1.0)
        for local in range(stop - start):
            i = start + local
            row = sims[local]
            cand = np.flatnonzero(row > tau_f)
            cand = cand[cand != i]
            if len(cand) == 0:
                continue
            w = row[cand]
            if len(cand) > k:
                order = np.lexsort((cand, -w))[:k]
                cand, w = cand[order], w[order]
            kept_i.append(np.full(len(cand), i, dtype=np.int64))
            kept_j.append(cand.astype(np.int64))
            kept_w.append(w)
    if not kept_i:
        return graph_from_pairs(n, [], [], [])
    src = np.concatenate(kept_i)
    dst = np.concatenate(kept_j)
    w = np.concatenate(kept_w)
    # union symmetrization: dedupe on the unordered pair
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    key = lo * n + hi
    _, first = np.unique(key, return_index=True)
    return graph_from_edges(
        n, np.column_stack([lo[first], hi[first], w[first]])
    )


def dump_edges(graph, path):
    """Debug dump: one 'i j w' line per undirected edge, i < j."""
    with open(path, "w") as fh:
        for i, j, w in graph.edge_array():
            fh.write(f"{int(i)} {int(j)} {float(w)!r}\n")
