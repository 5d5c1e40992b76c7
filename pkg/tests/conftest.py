"""Shared fixtures and brute-force oracles for the test suite."""

from itertools import permutations

import numpy as np
import pytest

from protoprobe import datagen
from protoprobe.fastcluster import graph_from_edges, map_equation


def make_planted(num_classes=6, dim=16, per_class=40, class_sep=6.0,
                 noise_sd=1.0, seed=0, old_fraction=0.5,
                 labelled_fraction=0.5):
    raw = datagen.generate_mixture(
        num_classes=num_classes, dim=dim, per_class=per_class,
        class_sep=class_sep, noise_sd=noise_sd, seed=seed,
    )
    return datagen.split_gcd(
        raw, old_fraction=old_fraction,
        labelled_fraction=labelled_fraction, seed=seed,
    )


@pytest.fixture
def planted_dataset():
    return make_planted()


def random_graph(rng, n, density=0.5, self_loop_prob=0.0):
    """Random symmetric weighted graph as a SimilarityGraph."""
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                edges.append((i, j, float(rng.uniform(0.05, 1.0))))
    if not edges and n >= 2:
        edges.append((0, 1, 1.0))
    return graph_from_edges(n, edges)


def ring_of_cliques(num_cliques=4, clique_size=6, intra=0.9, bridge=0.65):
    """Cliques joined in a ring by single weak bridge edges, plus the
    planted ground-truth assignment."""
    edges = []
    n = num_cliques * clique_size
    for c in range(num_cliques):
        base = c * clique_size
        for i in range(clique_size):
            for j in range(i + 1, clique_size):
                edges.append((base + i, base + j, intra))
        nxt = ((c + 1) % num_cliques) * clique_size
        edges.append((base, nxt, bridge))
    planted = np.repeat(np.arange(num_cliques), clique_size)
    return graph_from_edges(n, edges), planted


def iter_partitions(n):
    """All set partitions of range(n) as restricted-growth strings."""
    a = [0] * n
    b = [0] * n  # b[i] = max(a[:i+1])
    while True:
        yield np.array(a, dtype=np.int64)
        # next restricted-growth string
        i = n - 1
        while i > 0 and a[i] == b[i - 1] + 1:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        b[i] = max(b[i - 1], a[i])
        for j in range(i + 1, n):
            a[j] = 0
            b[j] = b[i]


def brute_force_codelength(graph):
    """Exhaustive map-equation minimum over all partitions."""
    best_value, best_assign = np.inf, None
    for assign in iter_partitions(graph.num_nodes):
        value = map_equation(graph, assign)
        if value < best_value:
            best_value, best_assign = value, assign.copy()
    return best_value, best_assign


def brute_force_assignment(cost):
    """Minimum-cost assignment on the zero-padded square by enumeration."""
    cost = np.asarray(cost, dtype=np.float64)
    size = max(cost.shape)
    padded = np.zeros((size, size))
    padded[: cost.shape[0], : cost.shape[1]] = cost
    best = np.inf
    for perm in permutations(range(size)):
        total = sum(padded[i, perm[i]] for i in range(size))
        best = min(best, total)
    return best


def brute_force_acc(y_true, y_pred):
    """Best achievable matched accuracy by enumerating matchings."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    true_vals = np.unique(y_true)
    pred_vals = np.unique(y_pred)
    size = max(len(true_vals), len(pred_vals))
    counts = np.zeros((size, size))
    for t, c in zip(y_true, y_pred):
        counts[np.where(pred_vals == c)[0][0], np.where(true_vals == t)[0][0]] += 1
    best = 0.0
    for perm in permutations(range(size)):
        best = max(best, sum(counts[i, perm[i]] for i in range(size)))
    return best / len(y_true)
