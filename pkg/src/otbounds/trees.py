"""Randomly shifted quadtrees, sparse L1 embeddings, and tree-guided matchings.

A quadtree over a point set induces a tree metric: the distance between two
points is the total weight of the edges on the path between their leaves,
where the edge above a node weighs the side length of its parent cell. Writing
each point as a sparse vector whose coordinate at node v equals that edge
weight turns the tree metric into a plain L1 distance, and the transport cost
between two measures under the tree metric into the L1 distance between their
embedded vectors. Those two identities are exact and are tested as such.

The matchers use the tree as a cheap guide for which batch pairs deserve a
real OT solve:

    flowtree_match  greedy bottom-up pairing of X-batches with Y-batches
    bhot_tree       flowtree matching + a few extra tree-nearest pairs
    bhot_star       union of per-cell stars over several independent trees
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .batch_matrix import BatchCostMatrix, BatchMatching, solve_meta
from .bounds import BoundReport, Method, _fill_cells, _prepare, _weighted_mean
from .errors import DegenerateAspectRatio, NonFiniteInput
from .measures import EmpiricalMeasure, GroundCost
from .solvers import EXACT_KERNEL, KernelConfig

__all__ = [
    "Quadtree",
    "SparseL1Embedding",
    "StarGraph",
    "build_quadtree",
    "tree_distance",
    "embed_point",
    "embed_measure",
    "flowtree_match",
    "bhot_tree",
    "bhot_star",
    "star_edges",
]

_ASPECT_SAMPLE = 1000
_MAX_LEVELS = 40
_MIN_LEVELS = 2


@dataclass
class _Node:
    node_id: int
    level: int
    key: tuple
    indices: np.ndarray
    parent: int
    children: list


class Quadtree:
    """Hierarchy of shifted hypercube cells over a fixed point set.

    Level 0 is the root cell of side 2 * phi; every level halves the side.
    Points sharing a cell at every level (coincident points) share a leaf.
    Cells are only materialized when non-empty.
    """

    def __init__(self, points, root_shift, phi, levels, aspect_ratio, nodes, paths):
        self.points = points
        self.root_shift = root_shift
        self.phi = phi
        self.levels = levels
        self.aspect_ratio = aspect_ratio
        self.nodes = nodes
        # paths[i, l] is the node id containing point i at level l
        self.paths = paths
        self.leaf_of = paths[:, -1]
        # weight of the edge entering a level-l node is the parent cell side
        self._edge_weight = np.array(
            [self.side_length(level - 1) for level in range(1, levels)]
        )
        suffix = np.cumsum(self._edge_weight[::-1])[::-1]
        self._suffix_weight = np.concatenate([suffix, [0.0]])

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def side_length(self, level: int) -> float:
        return 2.0 * self.phi / (2.0**level)

    def edge_weight(self, level: int) -> float:
        """Weight of the edge above any level-`level` node."""
        if level < 1 or level >= self.levels:
            raise IndexError(f"no edge enters a node at level {level}")
        return float(self._edge_weight[level - 1])

    def level_nodes(self, level: int) -> list:
        return [node for node in self.nodes if node.level == level]

    def _check_index(self, i: int) -> int:
        i = int(i)
        if not 0 <= i < self.n_points:
            raise IndexError(f"point index {i} out of range for {self.n_points} points")
        return i


def _estimate_aspect_ratio(points: np.ndarray, rng) -> float:
    """Max-over-min-nonzero L1 cost on a random pair sample."""
    n = points.shape[0]
    left = rng.integers(0, n, size=_ASPECT_SAMPLE)
    right = rng.integers(0, n, size=_ASPECT_SAMPLE)
    costs = np.abs(points[left] - points[right]).sum(axis=1)
    nonzero = costs[costs > 0.0]
    if nonzero.size == 0:
        return 1.0
    return float(costs.max() / nonzero.min())


def build_quadtree(points: np.ndarray, seed=0) -> Quadtree:
    """Randomly shifted quadtree; deterministic for a given seed.

    The cell grid is offset by a uniform shift in [0, phi]^d, where phi is
    the smallest power of two covering the point extent. The level count
    scales with the log of the estimated cost aspect ratio, floored at
    2 and capped at 40.

    Raises:
        DegenerateAspectRatio: all points coincide, so no cost scale exists.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError(f"points must be a non-empty 2-D array, got shape {points.shape}")
    if not np.isfinite(points).all():
        raise NonFiniteInput("points contain NaN or infinity")
    n, d = points.shape
    shifted = points - points.min(axis=0)
    extent = float(shifted.max()) if n > 0 else 0.0
    if extent == 0.0:
        raise DegenerateAspectRatio("all points coincide; the cost aspect ratio is undefined")

    rng = np.random.default_rng(seed)
    aspect = _estimate_aspect_ratio(points, rng)
    levels = math.ceil(math.log2(d * aspect)) + 1
    levels = int(min(max(levels, _MIN_LEVELS), _MAX_LEVELS))
    phi = 2.0 ** math.ceil(math.log2(extent))
    sigma = rng.uniform(0.0, phi, size=d)

    deepest = levels - 1
    cell = 2.0 * phi / (2.0**deepest)
    deep_keys = np.floor((shifted - (sigma - phi)) / cell).astype(np.int64)
    np.clip(deep_keys, 0, 2**deepest - 1, out=deep_keys)

    nodes = []
    paths = np.zeros((n, levels), dtype=np.intp)
    root = _Node(0, 0, (0,) * d, np.arange(n, dtype=np.intp), -1, [])
    nodes.append(root)
    frontier = [root]
    for level in range(1, levels):
        keys = deep_keys >> (deepest - level)
        next_frontier = []
        for parent in frontier:
            groups = {}
            for i in parent.indices:
                groups.setdefault(tuple(keys[i]), []).append(i)
            for key in sorted(groups):
                node = _Node(
                    len(nodes), level, key, np.asarray(groups[key], dtype=np.intp),
                    parent.node_id, [],
                )
                nodes.append(node)
                parent.children.append(node.node_id)
                paths[node.indices, level] = node.node_id
                next_frontier.append(node)
        frontier = next_frontier

    return Quadtree(points, sigma, phi, levels, aspect, nodes, paths)


def tree_distance(tree: Quadtree, i: int, j: int) -> float:
    """Total edge weight on the leaf-to-leaf path between points i and j."""
    i, j = tree._check_index(i), tree._check_index(j)
    if i == j:
        return 0.0
    differs = tree.paths[i] != tree.paths[j]
    if not differs.any():
        return 0.0
    first = int(np.argmax(differs))
    # both sides contribute every edge below the deepest shared node
    return float(2.0 * tree._suffix_weight[first - 1])


@dataclass(frozen=True)
class SparseL1Embedding:
    """Sparse nonnegative vector indexed by tree nodes.

    Coordinate v holds the weight of the edge above node v, scaled by how much
    mass sits below v. L1 distances between embeddings reproduce the tree
    metric (for points) and the tree transport cost (for measures).
    """

    coordinates: dict

    def __post_init__(self):
        if any(value < 0 for value in self.coordinates.values()):
            raise ValueError("embedding coordinates must be nonnegative")

    @property
    def nnz(self) -> int:
        return len(self.coordinates)

    def l1_distance(self, other: "SparseL1Embedding") -> float:
        keys = self.coordinates.keys() | other.coordinates.keys()
        return float(
            sum(abs(self.coordinates.get(v, 0.0) - other.coordinates.get(v, 0.0)) for v in keys)
        )


def embed_point(tree: Quadtree, i: int) -> SparseL1Embedding:
    """One coordinate per non-root node on the point's root-to-leaf path."""
    i = tree._check_index(i)
    coords = {
        int(tree.paths[i, level]): tree.edge_weight(level)
        for level in range(1, tree.levels)
    }
    return SparseL1Embedding(coords)


def embed_measure(tree: Quadtree, indices, weights) -> SparseL1Embedding:
    """Convex combination of point embeddings: mass below each node, weighted."""
    indices = np.asarray(indices, dtype=np.intp)
    weights = np.asarray(weights, dtype=np.float64)
    if indices.shape != weights.shape or indices.ndim != 1:
        raise ValueError("indices and weights must be equal-length vectors")
    coords = {}
    for i, w in zip(indices, weights):
        i = tree._check_index(i)
        for level in range(1, tree.levels):
            node = int(tree.paths[i, level])
            coords[node] = coords.get(node, 0.0) + float(w) * tree.edge_weight(level)
    return SparseL1Embedding(coords)


def _densify(embeddings) -> np.ndarray:
    active = sorted(set().union(*(e.coordinates.keys() for e in embeddings)))
    column = {node: c for c, node in enumerate(active)}
    out = np.zeros((len(embeddings), max(len(active), 1)))
    for r, e in enumerate(embeddings):
        for node, value in e.coordinates.items():
            out[r, column[node]] = value
    return out


def _as_vectors(side) -> np.ndarray:
    if isinstance(side, np.ndarray):
        return np.asarray(side, dtype=np.float64)
    side = list(side)
    if side and isinstance(side[0], SparseL1Embedding):
        return _densify(side)
    return np.asarray(side, dtype=np.float64)


def _route_pairs(tree: Quadtree, k: int) -> list:
    """Greedy bottom-up pairing: ids < k are X-batches, ids >= k are Y-batches.

    Within every cell, deepest cells first, unmatched X members pair with
    unmatched Y members in ascending index order; the root pairs whatever
    remains, so the result is always a full permutation.
    """
    x_free = np.ones(k, dtype=bool)
    y_free = np.ones(k, dtype=bool)
    pairs = []
    for level in range(tree.levels - 1, -1, -1):
        for node in tree.level_nodes(level):
            members = node.indices
            xs = [int(i) for i in members if i < k and x_free[i]]
            ys = [int(i) - k for i in members if i >= k and y_free[i - k]]
            for s, t in zip(xs, ys):
                pairs.append((s, t))
                x_free[s] = False
                y_free[t] = False
        if not x_free.any():
            break
    return sorted(pairs)


def _permutation_matching(k: int, pairs) -> BatchMatching:
    W = np.zeros((k, k))
    for s, t in pairs:
        W[s, t] = 1.0 / k
    return BatchMatching(tuple(pairs), W)


def flowtree_match(x_vectors, y_vectors, seed=0) -> BatchMatching:
    """Permutation matching of X-batch embeddings to Y-batch embeddings.

    Builds a shifted quadtree over the 2k embedding vectors and pairs batches
    greedily from the deepest cells upward. Accepts dense (k, D) arrays or
    lists of SparseL1Embedding.
    """
    X = _as_vectors(x_vectors)
    Y = _as_vectors(y_vectors)
    if X.shape != Y.shape:
        raise ValueError(f"need equally many equally-sized embeddings, got {X.shape}, {Y.shape}")
    k = X.shape[0]
    if k < 1:
        raise ValueError("need at least one batch per side")
    if k == 1:
        return _permutation_matching(1, [(0, 0)])
    tree = build_quadtree(np.vstack([X, Y]), seed)
    return _permutation_matching(k, _route_pairs(tree, k))


def _batch_vectors(xs, ys, X, Y, part_x, part_y, embedding, seed) -> np.ndarray:
    """Stack the 2k batch embeddings: means by default, tree vectors on request."""
    if embedding == "mean":
        return np.vstack(
            [[_weighted_mean(m) for m in xs], [_weighted_mean(m) for m in ys]]
        )
    if embedding != "sparse":
        raise ValueError(f"unknown embedding {embedding!r}; expected 'mean' or 'sparse'")
    union = np.vstack([X.points, Y.points])
    tree = build_quadtree(union, seed)
    offset = X.n_points
    vecs = [
        embed_measure(tree, part_x.batches[s], xs[s].weights) for s in range(len(xs))
    ] + [
        embed_measure(tree, offset + part_y.batches[t], ys[t].weights) for t in range(len(ys))
    ]
    return _densify(vecs)


def bhot_tree(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x,
    part_y,
    kernel: KernelConfig = EXACT_KERNEL,
    extra_budget: int = 0,
    seed: int = 0,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    embedding: str = "mean",
    jobs: int = 1,
) -> BoundReport:
    """Tree-guided bound: solve the flowtree-matched pairs plus a few tree-near extras.

    extra_budget additional batch pairs are chosen by ascending tree distance
    between the unmatched embeddings (ties by index). With
    extra_budget = k^2 - k every entry is solved and the bound coincides with
    the full batch-coupling bound.
    """
    t0 = time.perf_counter()
    extra_budget = int(extra_budget)
    if extra_budget < 0:
        raise ValueError(f"extra_budget must be >= 0, got {extra_budget}")
    k, xs, ys, marginal = _prepare(X, Y, part_x, part_y)
    embed_seed, route_seed = np.random.SeedSequence(seed).spawn(2)
    vectors = _batch_vectors(xs, ys, X, Y, part_x, part_y, embedding, embed_seed)

    if k == 1:
        pairs, tree = [(0, 0)], None
    else:
        tree = build_quadtree(vectors, route_seed)
        pairs = _route_pairs(tree, k)

    D = BatchCostMatrix(k)
    _fill_cells(D, pairs, xs, ys, kernel, ground_cost, jobs)
    if tree is not None and extra_budget > 0:
        taken = set(pairs)
        candidates = sorted(
            ((tree_distance(tree, s, k + t), s, t)
             for s in range(k) for t in range(k) if (s, t) not in taken),
        )
        extras = [(s, t) for _, s, t in candidates[:extra_budget]]
        _fill_cells(D, extras, xs, ys, kernel, ground_cost, jobs)

    value, matching = solve_meta(D, marginal, marginal)
    return BoundReport(Method.TREE, value, D.solved_count, matching, (time.perf_counter() - t0) * 1e3)


@dataclass(frozen=True)
class StarGraph:
    """Cross-side star edges gathered over quadtree repetitions."""

    edges: tuple
    repetitions: int
    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        edges = tuple((int(s), int(t)) for s, t in self.edges)
        if any(s < 0 or t < 0 for s, t in edges):
            raise ValueError("edges must join an X-batch index to a Y-batch index")
        object.__setattr__(self, "edges", edges)


def star_edges(cells, k: int) -> set:
    """Cross-side edges induced by a collection of cells.

    cells is an iterable of (member_ids, is_deepest) with ids < k meaning
    X-batches and ids >= k meaning Y-batches (shifted by k). A deepest cell
    contributes every cross pair it contains; any other cell contributes two
    stars, one around its first listed member of each side (member order is
    honored so callers can rotate in a random representative).
    """
    edges = set()
    for member_ids, is_deepest in cells:
        members = np.asarray([int(i) for i in member_ids], dtype=np.intp)
        xs = members[members < k]
        ys = members[members >= k] - k
        if xs.size == 0 or ys.size == 0:
            continue
        if is_deepest:
            edges.update((int(s), int(t)) for s in xs for t in ys)
        else:
            edges.update((int(xs[0]), int(t)) for t in ys)
            edges.update((int(s), int(ys[0])) for s in xs)
    return edges


def _tree_cells(tree: Quadtree, rng=None):
    deepest = tree.levels - 1
    for node in tree.nodes:
        members = node.indices
        if rng is not None and node.level != deepest:
            # seeded-random representative: rotate so a random member comes first
            members = np.roll(members, -int(rng.integers(members.size)))
        yield members, node.level == deepest


def _mask_has_perfect_matching(edges, k: int) -> bool:
    rows, cols = zip(*edges)
    graph = csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(k, k))
    match = maximum_bipartite_matching(graph, perm_type="column")
    return bool((match >= 0).all())


def bhot_star(
    X: EmpiricalMeasure,
    Y: EmpiricalMeasure,
    part_x,
    part_y,
    kernel: KernelConfig = EXACT_KERNEL,
    rho: float = 0.5,
    seed: int = 0,
    ground_cost: GroundCost = GroundCost.EUCLIDEAN,
    embedding: str = "mean",
    representative: str = "first",
    jobs: int = 1,
) -> BoundReport:
    """Star-graph bound: solve the union of per-cell stars over ceil(k^rho) trees.

    Each repetition builds an independently shifted quadtree over the 2k batch
    embeddings and contributes the star edges of its cells. Unsolved diagonal
    cells are added if the union would not support a full batch matching.
    """
    t0 = time.perf_counter()
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if representative not in ("first", "random"):
        raise ValueError(f"unknown representative rule {representative!r}")
    k, xs, ys, marginal = _prepare(X, Y, part_x, part_y)
    repetitions = max(math.ceil(k**rho), 1)

    if k == 1:
        edges = {(0, 0)}
    else:
        seeds = np.random.SeedSequence(seed).spawn(repetitions + 2)
        vectors = _batch_vectors(xs, ys, X, Y, part_x, part_y, embedding, seeds[-1])
        rep_rng = np.random.default_rng(seeds[-2]) if representative == "random" else None
        edges = set()
        for r in range(repetitions):
            tree = build_quadtree(vectors, seeds[r])
            edges |= star_edges(_tree_cells(tree, rep_rng), k)
        if not _mask_has_perfect_matching(edges, k):
            edges |= {(s, s) for s in range(k)}

    graph = StarGraph(tuple(sorted(edges)), repetitions, rho)
    D = BatchCostMatrix(k)
    _fill_cells(D, graph.edges, xs, ys, kernel, ground_cost, jobs)
    value, matching = solve_meta(D, marginal, marginal)
    return BoundReport(Method.STAR, value, D.solved_count, matching, (time.perf_counter() - t0) * 1e3)
