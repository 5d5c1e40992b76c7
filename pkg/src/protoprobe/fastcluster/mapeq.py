"""Two-level map-equation codelength for a partitioned flow graph.

The random walk is the undirected weight-proportional one: node visit
rates are strengths normalized by twice the total edge weight, and flow
along an arc (i, j) is w_ij / 2W. No teleportation; on a disconnected
graph this stationary measure is exactly the per-component flow weighted
by component strength. Codelength is reported in bits:

    L = plogp(q) - 2 * sum_m plogp(q_m)
        + sum_m plogp(q_m + p_m) - sum_a plogp(p_a)

with plogp(x) = x log2 x, q_m the exit flow of module m, p_m its visit
rate mass and p_a the node visit rates. With a single module the first
three terms vanish and L is the entropy of the visit rates.
"""

import numpy as np

from ..errors import ContractViolation, DegenerateGraphError, ParameterError


def plogp(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out


def flow_arrays(graph):
    """Node visit rates and per-arc flows of the stationary walk.

    Raises on graphs without positive total weight; negative edge weights
    have no random-walk interpretation and are rejected.
    """
    if np.any(graph.weights < 0):
        raise ParameterError(
            "map equation needs non-negative edge weights; filter first"
        )
    strengths = graph.strengths()
    total = strengths.sum()
    if total <= 0:
        raise DegenerateGraphError("graph has zero total edge weight")
    return strengths / total, graph.weights / total


def _validate_partition(graph, assignment):
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape != (graph.num_nodes,):
        raise ContractViolation(
            f"partition covers {assignment.shape} nodes, graph has {graph.num_nodes}"
        )
    if assignment.size and assignment.min() < 0:
        raise ContractViolation("negative module id in partition")
    return assignment


def module_flows(graph, assignment):
    """(p_m, q_m): visit-rate mass and exit flow per module."""
    assignment = _validate_partition(graph, assignment)
    node_flow, arc_flow = flow_arrays(graph)
    num_modules = int(assignment.max()) + 1 if assignment.size else 0
    p_m = np.bincount(assignment, weights=node_flow, minlength=num_modules)
    src = np.repeat(np.arange(graph.num_nodes), np.diff(graph.indptr))
    internal = assignment[src] == assignment[graph.indices]
    internal_flow = np.bincount(
        assignment[src[internal]],
        weights=arc_flow[internal],
        minlength=num_modules,
    )
    # no self-loops in similarity graphs, so exit = strength - internal flow
    q_m = p_m - internal_flow
    np.clip(q_m, 0.0, None, out=q_m)  # round-off guard
    return p_m, q_m


def map_equation(graph, assignment):
    """Two-level description length (bits) of the walk under a partition.

    ``assignment`` may be a per-node module-id array or any object with an
    ``assignment`` attribute (e.g. a ClusterResult).
    """
    assignment = getattr(assignment, "assignment", assignment)
    p_m, q_m = module_flows(graph, assignment)
    node_flow, _ = flow_arrays(graph)
    q = q_m.sum()
    codelength = (
        plogp(np.array([q]))[0]
        - 2.0 * plogp(q_m).sum()
        + plogp(q_m + p_m).sum()
        - plogp(node_flow).sum()
    )
    return float(codelength)
