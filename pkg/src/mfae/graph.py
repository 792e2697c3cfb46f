"""Sparse undirected graphs: SNAP edge-list I/O, edge splits, candidate pools."""

from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class EdgeListParseError(ValueError):
    """Raised for a malformed edge-list line; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Undirected simple graph stored as sorted neighbor arrays.

    ``id_map`` maps the original integer labels to dense indices, and
    ``labels[k]`` is the original label of node ``k``.
    """

    num_nodes: int
    neighbors: tuple[np.ndarray, ...]
    labels: tuple[int, ...]
    _degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.neighbors) != self.num_nodes or len(self.labels) != self.num_nodes:
            raise ValueError("neighbors and labels must have one entry per node")
        deg = np.array([len(nb) for nb in self.neighbors], dtype=np.int64)
        object.__setattr__(self, "_degree", deg)

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[tuple[int, int]],
                   labels: Sequence[int] | None = None) -> "SparseGraph":
        """Build a graph from dense-index pairs, dropping self-loops and duplicates."""
        buckets: list[set[int]] = [set() for _ in range(num_nodes)]
        for u, w in edges:
            u, w = int(u), int(w)
            if not (0 <= u < num_nodes and 0 <= w < num_nodes):
                raise IndexError(f"edge ({u}, {w}) out of range for {num_nodes} nodes")
            if u == w:
                continue
            buckets[u].add(w)
            buckets[w].add(u)
        nbrs = tuple(np.array(sorted(b), dtype=np.int64) for b in buckets)
        if labels is None:
            labels = range(num_nodes)
        return cls(num_nodes, nbrs, tuple(int(x) for x in labels))

    @property
    def id_map(self) -> dict[int, int]:
        return {lab: k for k, lab in enumerate(self.labels)}

    @property
    def degree(self) -> np.ndarray:
        return self._degree

    @property
    def num_edges(self) -> int:
        return int(self._degree.sum()) // 2

    def edges(self) -> np.ndarray:
        """All undirected edges as an ``(E, 2)`` array with ``u < w``, lexicographically sorted."""
        out = [(u, w) for u in range(self.num_nodes) for w in self.neighbors[u] if u < w]
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    def has_edge(self, u: int, w: int) -> bool:
        nb = self.neighbors[u]
        k = np.searchsorted(nb, w)
        return bool(k < len(nb) and nb[k] == w)

    def adjacency(self, dtype=np.float64) -> sp.csr_matrix:
        indptr = np.concatenate([[0], np.cumsum(self._degree)])
        indices = np.concatenate(self.neighbors) if self.num_nodes else np.zeros(0, np.int64)
        data = np.ones(len(indices), dtype=dtype)
        return sp.csr_matrix((data, indices, indptr), shape=(self.num_nodes, self.num_nodes))

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency().toarray()

    def with_edges(self, edges: Iterable[tuple[int, int]]) -> "SparseGraph":
        """A graph on the same node set and labels but with a different edge set."""
        return SparseGraph.from_edges(self.num_nodes, edges, self.labels)

    def validate(self) -> None:
        """Raise ``AssertionError`` unless the structural invariants hold."""
        total = 0
        for u, nb in enumerate(self.neighbors):
            assert np.all(np.diff(nb) > 0), f"neighbors of {u} not strictly increasing"
            assert u not in set(nb.tolist()), f"self-loop at {u}"
            for w in nb:
                assert 0 <= w < self.num_nodes
                assert self.has_edge(int(w), u), f"asymmetric edge {u}-{w}"
            total += len(nb)
        assert total % 2 == 0 and total // 2 == self.num_edges


@dataclass(frozen=True)
class SplitResult:
    train: SparseGraph
    test: SparseGraph
    seed: int


def _parse_lines(text: str | bytes):
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise EdgeListParseError(lineno, f"expected 2 fields, got {len(parts)}")
        try:
            yield int(parts[0]), int(parts[1])
        except ValueError:
            raise EdgeListParseError(lineno, f"non-integer token in {line!r}") from None


def parse_edge_list(text: str | bytes, id_map: dict[int, int] | None = None) -> SparseGraph:
    """Parse a SNAP-style edge list.

    Labels are remapped to dense indices in first-appearance order unless
    ``id_map`` is given, in which case that labelling (and its node count)
    is used and unknown labels are an error. Direction, duplicates and
    self-loops are discarded.
    """
    pairs = list(_parse_lines(text))
    if id_map is None:
        mapping: dict[int, int] = {}
        for u, w in pairs:
            for lab in (u, w):
                if lab not in mapping:
                    mapping[lab] = len(mapping)
    else:
        mapping = dict(id_map)
        if sorted(mapping.values()) != list(range(len(mapping))):
            raise ValueError("id_map values must be a permutation of 0..N-1")
        unknown = {lab for pair in pairs for lab in pair if lab not in mapping}
        if unknown:
            raise KeyError(f"labels not in id_map: {sorted(unknown)[:5]}")
    labels = [0] * len(mapping)
    for lab, k in mapping.items():
        labels[k] = lab
    return SparseGraph.from_edges(len(mapping), ((mapping[u], mapping[w]) for u, w in pairs), labels)


def read_edge_list(path, id_map: dict[int, int] | None = None) -> SparseGraph:
    with open(path, "rb") as fh:
        data = fh.read()
    if str(path).endswith(".gz"):
        import gzip
        data = gzip.decompress(data)
    return parse_edge_list(data, id_map)


def format_edge_list(g: SparseGraph, header: str | None = None) -> str:
    """Serialize edges with original labels, one ``u<TAB>w`` pair per line."""
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    for u, w in g.edges():
        buf.write(f"{g.labels[u]}\t{g.labels[w]}\n")
    return buf.getvalue()


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_train_test(g: SparseGraph, train_fraction: float, seed: int) -> SplitResult:
    """Uniformly random edge partition with ``round(train_fraction * |E|)`` training edges."""
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    from .numerics import STREAM_SPLIT, make_rng

    edges = g.edges()
    n_train = round_half_up(train_fraction * len(edges))
    perm = make_rng(seed, STREAM_SPLIT).permutation(len(edges))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return SplitResult(g.with_edges(edges[train_idx]), g.with_edges(edges[test_idx]), seed)


def two_hop_candidates(g: SparseGraph, i: int) -> np.ndarray:
    """Nodes at shortest-path distance exactly 2 from ``i``, sorted."""
    if not 0 <= i < g.num_nodes:
        raise IndexError(i)
    nb = g.neighbors[i]
    if len(nb) == 0:
        return np.zeros(0, dtype=np.int64)
    reach = np.unique(np.concatenate([g.neighbors[n] for n in nb]))
    return np.setdiff1d(reach, np.append(nb, i), assume_unique=False)


def sample_non_links(g: SparseGraph, i: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement from the non-neighbors of ``i`` (excluding ``i``).

    Ranks ``r`` are drawn from ``range(#non-links)`` and mapped to the
    ``r``-th non-excluded node, so no length-N mask is built. Sorted output.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    nb = g.neighbors[i]
    excluded = np.insert(nb, np.searchsorted(nb, i), i)
    room = g.num_nodes - len(excluded)
    if count >= room:
        keep = np.ones(g.num_nodes, dtype=bool)
        keep[excluded] = False
        return np.flatnonzero(keep)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    ranks = np.sort(rng.choice(room, size=count, replace=False))
    shifted = excluded - np.arange(len(excluded))
    return ranks + np.searchsorted(shifted, ranks, side="right")


def connected_components(g: SparseGraph) -> list[np.ndarray]:
    seen = np.zeros(g.num_nodes, dtype=bool)
    comps = []
    for s in range(g.num_nodes):
        if seen[s]:
            continue
        seen[s] = True
        queue, members = deque([s]), [s]
        while queue:
            u = queue.popleft()
            for w in g.neighbors[u]:
                if not seen[w]:
                    seen[w] = True
                    members.append(int(w))
                    queue.append(int(w))
        comps.append(np.array(sorted(members), dtype=np.int64))
    return comps


def induced_subgraph(g: SparseGraph, nodes: Sequence[int]) -> SparseGraph:
    """Subgraph on ``nodes`` (kept in the given order), reindexed densely."""
    nodes = [int(n) for n in nodes]
    index = {n: k for k, n in enumerate(nodes)}
    edges = [(index[u], index[int(w)]) for u in nodes for w in g.neighbors[u]
             if int(w) in index and u < w]
    return SparseGraph.from_edges(len(nodes), edges, [g.labels[n] for n in nodes])


def extract_dense_subgraph(g: SparseGraph, min_core: int) -> SparseGraph:
    """``min_core``-core of ``g`` restricted to its largest connected component.

    Raises ``ValueError`` if no node survives the peeling.
    """
    if min_core < 1:
        raise ValueError("min_core must be >= 1")
    deg = g.degree.copy()
    alive = np.ones(g.num_nodes, dtype=bool)
    stack = [u for u in range(g.num_nodes) if deg[u] < min_core]
    alive[stack] = False
    while stack:
        u = stack.pop()
        for w in g.neighbors[u]:
            if alive[w]:
                deg[w] -= 1
                if deg[w] < min_core:
                    alive[w] = False
                    stack.append(int(w))
    core = induced_subgraph(g, np.flatnonzero(alive))
    if core.num_nodes == 0:
        raise ValueError(f"no node survives {min_core}-core peeling; min_core too large")
    comps = connected_components(core)
    # ties resolved toward the component containing the smallest index
    largest = max(comps, key=lambda c: (len(c), -c[0]))
    return induced_subgraph(core, largest)


def planted_partition(num_nodes: int, communities: int, p_in: float, p_out: float,
                      seed: int) -> SparseGraph:
    """Stochastic block model with equal-sized blocks (node ``u`` is in block ``u % communities``)."""
    from .numerics import make_rng

    rng = make_rng(seed)
    block = np.arange(num_nodes) % communities
    same = block[:, None] == block[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((num_nodes, num_nodes)) < prob
    edges = np.argwhere(np.triu(draw, 1))
    return SparseGraph.from_edges(num_nodes, edges)
