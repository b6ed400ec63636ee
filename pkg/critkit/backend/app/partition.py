"""Two-stage recursive bisection of a matrix row graph into logical ranks.

Each bisection orders the (sub)graph breadth-first from a pseudo-peripheral
vertex and cuts the ordering so the two halves get work proportional to the
number of parts they still have to produce.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from app.errors import DimensionError, InfeasiblePartitionError
from app.sparse import SparseMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Partition:
    owner: np.ndarray
    np1: int
    np2: int

    @property
    def n_ranks(self) -> int:
        return self.np1 * self.np2

    @property
    def n_rows(self) -> int:
        return int(self.owner.size)

    def part_sizes(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.n_ranks)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"row": np.arange(self.n_rows), "rank": self.owner})


def _graph(adjacency) -> sp.csr_array:
    """Symmetric, diagonal-free pattern with sorted neighbour lists"""
    if isinstance(adjacency, SparseMatrix):
        if adjacency.n_rows != adjacency.n_cols:
            raise DimensionError("partitioning needs a square adjacency pattern")
        pattern = adjacency.symmetric_pattern()
    else:
        pattern = sp.csr_array(adjacency)
        pattern = (pattern != 0).astype(np.int8)
        pattern = (pattern + pattern.T).tocsr()
    coo = pattern.tocoo()
    off = coo.row != coo.col
    graph = sp.csr_array(
        (np.ones(off.sum(), dtype=np.int8), (coo.row[off], coo.col[off])), shape=pattern.shape
    )
    graph.sum_duplicates()
    return graph


def _levels(graph: sp.csr_array, root: int):
    """BFS visiting order and level of each reached vertex (-1 if unreached)"""
    order, predecessors = breadth_first_order(graph, root, directed=False)
    level = np.full(graph.shape[0], -1, dtype=np.int64)
    level[root] = 0
    for v in order[1:]:
        level[v] = level[predecessors[v]] + 1
    return order, level


def pseudo_peripheral_vertex(graph: sp.csr_array, start: int) -> int:
    """George-Liu search: move to a minimum-degree vertex of the last level
    while that strictly increases the eccentricity."""
    degree = np.diff(graph.indptr)
    current = start
    _, level = _levels(graph, current)
    eccentricity = level.max()
    while True:
        last = np.flatnonzero(level == eccentricity)
        candidate = int(last[np.lexsort((last, degree[last]))[0]])
        _, cand_level = _levels(graph, candidate)
        if cand_level.max() <= eccentricity:
            return current
        current, level, eccentricity = candidate, cand_level, cand_level.max()


def level_structure_order(graph: sp.csr_array) -> np.ndarray:
    """BFS ordering of every vertex; each disconnected piece restarts at its
    lowest-index vertex."""
    n = graph.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    pieces: List[np.ndarray] = []
    root = pseudo_peripheral_vertex(graph, 0)
    while True:
        order, _ = breadth_first_order(graph, root, directed=False, return_predecessors=True)
        order = order[~visited[order]]
        visited[order] = True
        pieces.append(order)
        remaining = np.flatnonzero(~visited)
        if remaining.size == 0:
            break
        root = int(remaining[0])
    return np.concatenate(pieces)


def _bisect(graph: sp.csr_array, vertices: np.ndarray, n_parts: int, out: np.ndarray, base: int):
    if n_parts == 1:
        out[vertices] = base
        return
    sub = graph[vertices][:, vertices]
    order = vertices[level_structure_order(sub)]
    k_left = n_parts // 2
    # ceil keeps the left half at least as large as the right one
    n_left = -(-vertices.size * k_left // n_parts)
    _bisect(graph, np.sort(order[:n_left]), k_left, out, base)
    _bisect(graph, np.sort(order[n_left:]), n_parts - k_left, out, base + k_left)


def bisect_parts(adjacency, n_parts: int) -> np.ndarray:
    graph = _graph(adjacency)
    n = graph.shape[0]
    if n_parts < 1:
        raise InfeasiblePartitionError("number of parts must be at least 1")
    if n_parts > n:
        raise InfeasiblePartitionError(f"cannot split {n} rows into {n_parts} nonempty parts")
    out = np.zeros(n, dtype=np.int64)
    _bisect(graph, np.arange(n), n_parts, out, 0)
    return out


def hierarchical_partition(adjacency, np1: int, np2: int) -> Partition:
    """Split into np1 parts, then each part into np2; rank = part1 * np2 + part2"""
    graph = _graph(adjacency)
    n = graph.shape[0]
    if np1 < 1 or np2 < 1:
        raise InfeasiblePartitionError("np1 and np2 must be at least 1")
    if np1 * np2 > n:
        raise InfeasiblePartitionError(
            f"np1*np2 = {np1 * np2} ranks exceed the {n} rows to distribute"
        )

    first = np.zeros(n, dtype=np.int64)
    _bisect(graph, np.arange(n), np1, first, 0)
    owner = np.zeros(n, dtype=np.int64)
    for part in range(np1):
        rows = np.flatnonzero(first == part)
        second = np.zeros(n, dtype=np.int64)
        _bisect(graph, rows, np2, second, 0)
        owner[rows] = part * np2 + second[rows]

    sizes = np.bincount(owner, minlength=np1 * np2)
    logger.debug("partitioned %d rows into %dx%d ranks, sizes %s", n, np1, np2, sizes.tolist())
    return Partition(owner=owner, np1=np1, np2=np2)


def replicate_partition(partition: Partition, n_comp: int) -> Partition:
    """Extend a partition of one spatial component to n_comp stacked components"""
    return Partition(owner=np.tile(partition.owner, n_comp), np1=partition.np1, np2=partition.np2)
