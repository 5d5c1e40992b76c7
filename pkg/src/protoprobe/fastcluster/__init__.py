"""Unlabelled-only clustering: similarity graph + map-equation search."""

from .graph import (
    SimilarityGraph,
    build_graph,
    build_pruned_graph,
    dump_edges,
    filter_edges,
    graph_from_edges,
    graph_from_pairs,
    knn_prune,
)
from .mapeq import flow_arrays, map_equation, module_flows, plogp
from .search import ClusterResult, estimate_k, infomap, kernel_name

__all__ = [
    "SimilarityGraph",
    "ClusterResult",
    "build_graph",
    "build_pruned_graph",
    "filter_edges",
    "knn_prune",
    "graph_from_edges",
    "graph_from_pairs",
    "dump_edges",
    "flow_arrays",
    "module_flows",
    "map_equation",
    "plogp",
    "infomap",
    "estimate_k",
    "kernel_name",
]
