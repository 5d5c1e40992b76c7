"""Map-equation community search and cluster-count estimation.

The hot partition search lives in a compiled kernel (``_map_core``) with a
pure-Python twin (``_map_core_py``); both implement the same seeded
algorithm and return identical partitions. Selection happens at import:
the compiled kernel is preferred unless it is unavailable or the
``PROTOPROBE_PURE_PYTHON=1`` environment variable forces the fallback.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation
from .graph import build_pruned_graph
from .mapeq import flow_arrays, map_equation

if os.environ.get("PROTOPROBE_PURE_PYTHON") == "1":
    from . import _map_core_py as _kernel
else:
    try:
        from . import _map_core as _kernel
    except ImportError:  # pragma: no cover - depends on build environment
        from . import _map_core_py as _kernel


def kernel_name():
    """Name of the active partition-search kernel: 'cython' or 'python'."""
    return _kernel.KERNEL_NAME


@dataclass(frozen=True)
class ClusterResult:
    """A hard partition of nodes into contiguously-labelled clusters."""

    assignment: np.ndarray
    num_clusters: int
    codelength: float
    kernel: str = field(default="", compare=False)

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", assignment)
        if assignment.size:
            seen = np.unique(assignment)
            if seen[0] != 0 or seen[-1] != self.num_clusters - 1 \
                    or len(seen) != self.num_clusters:
                raise ContractViolation("cluster ids must be contiguous 0..K-1")
        elif self.num_clusters != 0:
            raise ContractViolation("empty assignment with nonzero cluster count")

    @property
    def labels(self):
        """The estimated label space: ids 0..K^e-1."""
        return np.arange(self.num_clusters)

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.num_clusters)


def _first_occurrence_relabel(assignment):
    _, first, inverse = np.unique(
        assignment, return_index=True, return_inverse=True
    )
    lut = np.empty(len(first), dtype=np.int64)
    lut[np.argsort(first, kind="stable")] = np.arange(len(first))
    return lut[inverse]


def infomap(graph, seed, num_restarts=8, tol=1e-12):
    """Minimum-description-length partition of a similarity graph.

    Seeded local moves plus module aggregation, repeated over
    ``num_restarts`` independent restarts; the best codelength wins and
    ties keep the first-found partition. Isolated nodes stay singletons.
    Graphs with no positive edge weight carry no walk at all; they come
    back as all singletons with codelength 0.0 rather than an error.
    """
    n = graph.num_nodes
    if n == 0:
        return ClusterResult(np.zeros(0, np.int64), 0, 0.0, kernel_name())
    if graph.num_edges == 0 or graph.total_weight() <= 0:
        return ClusterResult(np.arange(n, dtype=np.int64), n, 0.0,
                             kernel_name())
    node_flow, arc_flow = flow_arrays(graph)
    assignment, _ = _kernel.partition_search(
        graph.indptr, graph.indices, arc_flow, node_flow,
        np.zeros(n), int(seed), int(num_restarts), float(tol),
    )
    assignment = _first_occurrence_relabel(assignment)
    value = map_equation(graph, assignment)
    # never report a partition worse than the trivial ones
    for trivial in (np.zeros(n, dtype=np.int64), np.arange(n, dtype=np.int64)):
        alt = map_equation(graph, trivial)
        if alt < value - tol:
            assignment, value = trivial, alt
    return ClusterResult(
        assignment, int(assignment.max()) + 1, value, kernel_name()
    )


def estimate_k(features, tau_f, k, seed, num_restarts=8):
    """Cluster unlabelled features and estimate the category count.

    Composes the similarity graph (cosine weights above ``tau_f``,
    pruned to each node's top-``k`` neighbours, union-symmetrised) with
    the map-equation search; runs only on the rows passed in.
    """
    graph = build_pruned_graph(features, tau_f, k)
    return infomap(graph, seed, num_restarts=num_restarts)
