"""Attributed graphs, normalized transitions, and multi-scale feature propagation.

A graph is loaded from three TSV files (edges, features, optional labels),
turned into the self-looped symmetric-normalized transition matrix
T = D̃^{-1/2} (A + I) D̃^{-1/2}, and propagated: the l-th view is T^l X,
computed iteratively as sparse-times-dense products, plus the mixed view
(1/L) Σ_l T^l X. Propagation is a one-time preprocessing step, decoupled
from any learned transformation.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError

__all__ = [
    "AttributedGraph",
    "SparseTransition",
    "PropagatedViews",
    "load_graph",
    "normalized_adjacency",
    "propagate",
    "read_matrix",
    "write_matrix",
    "write_edge_file",
    "write_label_file",
    "read_label_file",
    "save_graph",
    "graph_paths",
]


@dataclass
class AttributedGraph:
    """Undirected attributed graph with N nodes.

    ``edges`` holds one row per undirected edge as (lo, hi) with lo < hi;
    duplicates, reversed duplicates, and self-loops are removed at
    construction. ``labels`` is only used by the evaluation harness.
    """

    num_nodes: int
    edges: np.ndarray  # (E, 2) int64, lo < hi
    features: np.ndarray  # (N, D) float64
    labels: np.ndarray | None = None  # (N,) int64

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]


@dataclass
class SparseTransition:
    """Symmetric-normalized transition matrix in compressed-row form.

    Values are nonnegative, the sparsity pattern is symmetric, and each
    off-diagonal value is computed once per unordered pair, so the matrix
    equals its transpose bitwise.
    """

    n: int
    matrix: sp.csr_matrix

    @property
    def nnz(self):
        return self.matrix.nnz

    def dot(self, dense):
        """Sparse-times-dense product T @ M."""
        if dense.shape[0] != self.n:
            raise ValueError(
                f"dimension mismatch: transition is {self.n}x{self.n}, "
                f"operand has {dense.shape[0]} rows"
            )
        return self.matrix @ dense

    def __matmul__(self, dense):
        return self.dot(dense)


@dataclass
class PropagatedViews:
    """The L propagated feature matrices T^1 X .. T^L X plus their average."""

    views: list[np.ndarray]
    mixed: np.ndarray

    @property
    def num_views(self):
        return len(self.views)


def _canonical_edges(pairs, num_nodes):
    """Deduplicate undirected pairs; drop self-loops (the transition adds its own)."""
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.min() < 0 or arr.max() >= num_nodes:
        bad = arr.max() if arr.max() >= num_nodes else arr.min()
        raise DataError(f"edge endpoint {bad} out of range for {num_nodes} nodes")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    keep = lo != hi
    canon = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return canon.astype(np.int64)


def read_matrix(path):
    """Read a dense matrix file: header line ``N<TAB>D`` then N rows of D reals."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:1: expected header 'N<TAB>D', got {header!r}")
        try:
            n, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{path}:1: non-integer matrix header {header!r}") from None
        if n < 0 or d < 0:
            raise DataError(f"{path}:1: negative matrix dimensions {n}x{d}")
        out = np.empty((n, d), dtype=np.float64)
        for i in range(n):
            line = fh.readline()
            if not line:
                raise DataError(f"{path}: truncated after {i} of {n} rows")
            fields = line.rstrip("\n").split("\t")
            if len(fields) != d:
                raise DataError(
                    f"{path}:{i + 2}: expected {d} values, found {len(fields)}"
                )
            try:
                row = np.array(fields, dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{i + 2}: non-numeric value") from None
            if not np.isfinite(row).all():
                raise DataError(f"{path}:{i + 2}: non-finite value")
            out[i] = row
    return out


def write_matrix(path, matrix):
    """Write a dense matrix in the header+rows TSV format, round-trip exact."""
    m = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m.shape[0]}\t{m.shape[1]}\n")
        for row in m:
            fh.write("\t".join(format(v, ".17g") for v in row))
            fh.write("\n")


_BINARY_MAGIC = b"S3CLEMB\x00"
_BINARY_VERSION = 1


def write_matrix_binary(path, matrix):
    """Compact variant: 16-byte magic/version header, u64 dims, raw float64."""
    import struct

    m = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<II", _BINARY_VERSION, 0))
        fh.write(struct.pack("<QQ", m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_matrix_binary(path):
    import struct

    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:8] != _BINARY_MAGIC:
            raise DataError(f"{path}: not a binary matrix file (bad magic header)")
        version, _ = struct.unpack("<II", head[8:])
        if version != _BINARY_VERSION:
            raise DataError(f"{path}: unsupported binary matrix version {version}")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = fh.read(rows * cols * 8)
        if len(data) != rows * cols * 8:
            raise DataError(f"{path}: truncated binary matrix")
        return np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()


def _read_edges(path, num_nodes):
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
            try:
                src, dst = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer node index") from None
            if not (0 <= src < num_nodes and 0 <= dst < num_nodes):
                raise DataError(
                    f"{path}:{lineno}: node index out of range [0, {num_nodes})"
                )
            pairs.append((src, dst))
    return pairs


def write_edge_file(path, edges):
    with open(path, "w", encoding="utf-8") as fh:
        for src, dst in np.asarray(edges, dtype=np.int64):
            fh.write(f"{src}\t{dst}\n")


def read_label_file(path, num_nodes):
    labels = np.empty(num_nodes, dtype=np.int64)
    with open(path, "r", encoding="utf-8") as fh:
        for i in range(num_nodes):
            line = fh.readline()
            if not line:
                raise DataError(f"{path}: expected {num_nodes} labels, found {i}")
            try:
                value = int(line.strip())
            except ValueError:
                raise DataError(f"{path}:{i + 1}: non-integer label") from None
            if value < 0:
                raise DataError(f"{path}:{i + 1}: negative class id {value}")
            labels[i] = value
    return labels


def write_label_file(path, labels):
    with open(path, "w", encoding="utf-8") as fh:
        for value in np.asarray(labels, dtype=np.int64):
            fh.write(f"{value}\n")


def load_graph(edge_path, feature_path, label_path=None):
    """Load and validate an attributed graph from its TSV files.

    Isolated nodes are permitted; they still gain a self-loop in the
    transition matrix. Edges are treated as undirected and deduplicated.
    """
    features = read_matrix(feature_path)
    num_nodes = features.shape[0]
    edges = _canonical_edges(_read_edges(edge_path, num_nodes), num_nodes)
    labels = read_label_file(label_path, num_nodes) if label_path else None
    return AttributedGraph(num_nodes, edges, features, labels)


def graph_paths(prefix):
    """The (edge, feature, label) file paths for a dataset prefix."""
    return f"{prefix}.edges.tsv", f"{prefix}.features.tsv", f"{prefix}.labels.tsv"


def save_graph(graph, prefix):
    """Write a graph to ``prefix``.edges/.features(/.labels).tsv."""
    edge_path, feature_path, label_path = graph_paths(prefix)
    write_edge_file(edge_path, graph.edges)
    write_matrix(feature_path, graph.features)
    if graph.labels is not None:
        write_label_file(label_path, graph.labels)


def normalized_adjacency(graph):
    """Build T = D̃^{-1/2} (A + I) D̃^{-1/2} with deterministic CSR layout."""
    n = graph.num_nodes
    degrees = np.ones(n, dtype=np.float64)  # self-loop contributes 1 everywhere
    if graph.num_edges:
        np.add.at(degrees, graph.edges[:, 0], 1.0)
        np.add.at(degrees, graph.edges[:, 1], 1.0)
    inv_sqrt = 1.0 / np.sqrt(degrees)

    lo, hi = graph.edges[:, 0], graph.edges[:, 1]
    off_vals = inv_sqrt[lo] * inv_sqrt[hi]  # one value per unordered pair
    rows = np.concatenate([lo, hi, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([hi, lo, np.arange(n, dtype=np.int64)])
    vals = np.concatenate([off_vals, off_vals, inv_sqrt * inv_sqrt])

    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    matrix.sort_indices()
    return SparseTransition(n=n, matrix=matrix)


def propagate(transition, features, steps):
    """Propagate features ``steps`` times; never materializes a matrix power.

    Returns the per-scale views [T X, T^2 X, ..., T^steps X] and their
    entrywise average.
    """
    if steps < 1:
        raise ConfigError(f"propagation steps must be >= 1, got {steps}")
    current = np.asarray(features, dtype=np.float64)
    if current.shape[0] != transition.n:
        raise ValueError(
            f"dimension mismatch: transition is {transition.n}x{transition.n}, "
            f"features have {current.shape[0]} rows"
        )
    views = []
    accum = np.zeros_like(current)
    for _ in range(steps):
        current = transition.dot(current)
        views.append(current)
        accum += current
    return PropagatedViews(views=views, mixed=accum / steps)
