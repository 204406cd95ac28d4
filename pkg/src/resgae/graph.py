"""Undirected graphs, self-loop normalisation, ingestion and edge splits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .tensor import make_rng

log = logging.getLogger(__name__)

# split streams are kept apart from the training stream of the same seed
SPLIT_STREAM = 1


class GraphFormatError(ValueError):
    """Malformed graph file or inconsistent graph data."""


class SplitError(ValueError):
    """Graph too small for the requested edge split."""


def canonical_edges(pairs, num_nodes: int) -> np.ndarray:
    """Deduplicated ``(min, max)`` pairs, sorted, as an ``(M, 2)`` int64 array.

    Self-loops are dropped.
    """
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
        raise GraphFormatError(f"edge endpoint outside [0, {num_nodes})")
    arr = arr[arr[:, 0] != arr[:, 1]]
    arr = np.sort(arr, axis=1)
    if not len(arr):
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(arr, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph with a dense node feature matrix.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``.
    ``stats`` carries loader bookkeeping (raw line counts etc.) and is not
    part of graph identity.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        edges = canonical_edges(self.edges, self.num_nodes)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise GraphFormatError(
                f"feature matrix shape {feats.shape} does not match {self.num_nodes} nodes"
            )
        edges.setflags(write=False)
        feats = feats.copy()
        feats.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", feats)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency without self-loops."""
        n = self.num_nodes
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        return sp.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))

    def edge_set(self) -> set[tuple[int, int]]:
        return set(map(tuple, self.edges.tolist()))

    def with_edges(self, edges) -> "Graph":
        return Graph(self.num_nodes, edges, self.features)

    def row_normalized(self) -> "Graph":
        """Copy with each feature row scaled to unit L1 norm (zero rows kept)."""
        sums = self.features.sum(axis=1, keepdims=True)
        sums[sums == 0] = 1.0
        return Graph(self.num_nodes, self.edges, self.features / sums, dict(self.stats))

    def num_components(self) -> int:
        from scipy.sparse.csgraph import connected_components

        return int(connected_components(self.adjacency(), directed=False)[0])


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` stored as CSR."""

    matrix: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def normalize(g: Graph) -> NormalizedAdjacency:
    n = g.num_nodes
    i, j = g.edges[:, 0], g.edges[:, 1]
    deg = np.ones(n)
    np.add.at(deg, i, 1.0)
    np.add.at(deg, j, 1.0)
    # one value per undirected edge, written to both triangles
    w = 1.0 / np.sqrt(deg[i] * deg[j])
    diag = np.arange(n)
    rows = np.r_[i, j, diag]
    cols = np.r_[j, i, diag]
    vals = np.r_[w, w, 1.0 / deg]
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    m.sort_indices()
    return NormalizedAdjacency(m)


# ----------------------------------------------------------------- splitting


@dataclass(frozen=True, eq=False)
class EdgeSplit:
    train_graph: Graph
    val_pos: np.ndarray
    val_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray
    seed: int


def split_quotas(num_edges: int) -> tuple[int, int]:
    """``(n_val, n_test)`` = round-half-up of 5% and 10% of ``num_edges``."""
    return (num_edges + 10) // 20, (num_edges + 5) // 10


def sample_non_edges(
    num_nodes: int, count: int, forbidden: set, rng: np.random.Generator
) -> np.ndarray:
    """``count`` distinct canonical non-edges by rejection sampling.

    ``forbidden`` is updated in place with the drawn pairs.
    """
    max_pairs = num_nodes * (num_nodes - 1) // 2
    if count > max_pairs - len(forbidden):
        raise SplitError(f"cannot draw {count} negatives: graph too dense")
    out = []
    while len(out) < count:
        need = count - len(out)
        batch = rng.integers(0, num_nodes, size=(2 * need + 8, 2))
        for a, b in batch.tolist():
            if a == b:
                continue
            key = (a, b) if a < b else (b, a)
            if key in forbidden:
                continue
            forbidden.add(key)
            out.append(key)
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def split_edges(g: Graph, seed: int) -> EdgeSplit:
    """Hold out 5% / 10% of edges for validation / test with matched negatives."""
    n_val, n_test = split_quotas(g.num_edges)
    if n_val < 1 or n_test < 1 or n_val + n_test >= g.num_edges:
        raise SplitError(f"{g.num_edges} edges are too few for a validation/test split")
    rng = make_rng(seed, SPLIT_STREAM)
    perm = rng.permutation(g.num_edges)
    shuffled = g.edges[perm]
    test_pos = shuffled[:n_test]
    val_pos = shuffled[n_test : n_test + n_val]
    train = shuffled[n_test + n_val :]
    forbidden = g.edge_set()
    test_neg = sample_non_edges(g.num_nodes, n_test, forbidden, rng)
    val_neg = sample_non_edges(g.num_nodes, n_val, forbidden, rng)
    return EdgeSplit(
        train_graph=g.with_edges(train),
        val_pos=val_pos,
        val_neg=val_neg,
        test_pos=test_pos,
        test_neg=test_neg,
        seed=seed,
    )


# ----------------------------------------------------------------- file I/O


def load_citation_dataset(content_path, cites_path, unknown: str = "skip") -> Graph:
    """Read a ``.content`` / ``.cites`` pair.

    Nodes are indexed in ``.content`` order.  Citation direction is dropped.
    ``unknown="skip"`` ignores citations naming ids absent from ``.content``;
    ``unknown="add"`` appends them as zero-feature nodes instead.
    """
    if unknown not in ("skip", "add"):
        raise ValueError(f"unknown must be 'skip' or 'add', not {unknown!r}")
    index: dict[str, int] = {}
    rows: list[list[float]] = []
    width = None
    with open(content_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) == 1 and not parts[0].strip():
                continue
            if len(parts) < 3:
                raise GraphFormatError(f"{content_path}:{lineno}: expected id, features, label")
            node_id, feats = parts[0].strip(), parts[1:-1]
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise GraphFormatError(
                    f"{content_path}:{lineno}: {len(feats)} features, expected {width}"
                )
            if node_id in index:
                raise GraphFormatError(f"{content_path}:{lineno}: duplicate node id {node_id!r}")
            try:
                rows.append([float(v) for v in feats])
            except ValueError as exc:
                raise GraphFormatError(f"{content_path}:{lineno}: {exc}") from None
            index[node_id] = len(index)
    if width is None:
        raise GraphFormatError(f"{content_path}: no nodes")
    n_content = len(index)

    pairs = []
    raw = skipped = self_cites = 0
    with open(cites_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{cites_path}:{lineno}: expected 'cited citing'")
            raw += 1
            ids = []
            for p in parts:
                if p not in index and unknown == "add":
                    index[p] = len(index)
                ids.append(index.get(p))
            if None in ids:
                skipped += 1
                continue
            if ids[0] == ids[1]:
                self_cites += 1
                continue
            pairs.append(ids)

    n = len(index)
    feats = np.zeros((n, width))
    feats[:n_content] = np.array(rows, dtype=np.float64).reshape(n_content, width)
    if skipped:
        log.warning("skipped %d citation(s) referencing unknown node ids", skipped)
    g = Graph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2), feats)
    g.stats.update(
        raw_citations=raw,
        skipped_unknown=skipped,
        self_citations=self_cites,
        added_nodes=n - n_content,
        directed_edges=len({tuple(p) for p in pairs}),
        undirected_edges=g.num_edges,
    )
    return g


def load_generic_graph(path) -> Graph:
    """Read the plain-text ``graph N F`` / ``node`` / ``edges M`` format."""
    with open(path, encoding="utf-8") as fh:
        lines = [(i, ln.split()) for i, ln in enumerate(fh, 1) if ln.strip()]
    if not lines:
        raise GraphFormatError(f"{path}: empty file")

    def fail(lineno, msg):
        raise GraphFormatError(f"{path}:{lineno}: {msg}")

    lineno, head = lines[0]
    if len(head) != 3 or head[0] != "graph":
        fail(lineno, "expected header 'graph <N> <F>'")
    try:
        n, f = int(head[1]), int(head[2])
    except ValueError:
        fail(lineno, "N and F must be integers")
    if n < 1 or f < 0:
        fail(lineno, "N must be positive and F non-negative")
    if len(lines) < n + 2:
        fail(lines[-1][0], f"header declares {n} nodes but the file is too short")
    feats = np.empty((n, f))
    for k in range(n):
        lineno, parts = lines[1 + k]
        if parts[0] != "node":
            fail(lineno, f"expected node line {k} of {n}")
        if len(parts) != f + 2:
            fail(lineno, f"node line has {len(parts) - 2} features, header says {f}")
        if parts[1] != str(k):
            fail(lineno, f"node ids must run 0..N-1 in order, got {parts[1]!r} at {k}")
        try:
            feats[k] = [float(v) for v in parts[2:]]
        except ValueError as exc:
            fail(lineno, str(exc))
    lineno, parts = lines[1 + n]
    if len(parts) != 2 or parts[0] != "edges":
        fail(lineno, "expected 'edges <M>'")
    m = int(parts[1])
    body = lines[2 + n :]
    if len(body) != m:
        fail(lineno, f"header declares {m} edges, found {len(body)}")
    edges = np.empty((m, 2), dtype=np.int64)
    for k, (lineno, parts) in enumerate(body):
        if len(parts) != 2:
            fail(lineno, "edge lines are '<i> <j>'")
        try:
            edges[k] = int(parts[0]), int(parts[1])
        except ValueError:
            fail(lineno, "edge endpoints must be integers")
    return Graph(n, edges, feats)


def save_generic_graph(g: Graph, path) -> None:
    out = [f"graph {g.num_nodes} {g.num_features}"]
    for k, row in enumerate(g.features.tolist()):
        out.append(" ".join(["node", str(k), *map(repr, row)]))
    out.append(f"edges {g.num_edges}")
    out.extend(f"{i} {j}" for i, j in g.edges.tolist())
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
