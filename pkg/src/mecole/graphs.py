"""Graph data model, dataset ingestion, and synthetic-graph generation.

Graphs are undirected, self-loop free, and immutable after construction.
Auxiliary content graphs (k-NN similarity, tf-idf attribute features) are
built here; the planted-partition generator provides a verifiable test
substrate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError

logger = logging.getLogger("mecole.graphs")

__all__ = [
    "Graph",
    "GraphBundle",
    "AttributeBag",
    "SBMConfig",
    "load_edge_list",
    "load_features",
    "load_labels",
    "load_attribute_bags",
    "build_knn_similarity_graph",
    "tfidf_class_features",
    "generate_sbm",
]


class Graph:
    """Immutable sparse undirected graph with optional edge weights."""

    __slots__ = ("n", "edges", "adjacency", "node_kind")

    def __init__(self, n, edges, node_kind=None):
        edges = sorted(
            (min(int(u), int(v)), max(int(u), int(v)), float(w))
            for u, v, w in edges
        )
        seen = set()
        for u, v, _ in edges:
            if u == v:
                raise DataError(f"self-loop ({u},{v}) in edge list")
            if not 0 <= u < n or not 0 <= v < n:
                raise DataError(f"edge ({u},{v}) out of range for n={n}")
            if (u, v) in seen:
                raise DataError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
        self.n = int(n)
        self.edges = tuple(edges)
        if edges:
            us = np.array([e[0] for e in edges])
            vs = np.array([e[1] for e in edges])
            ws = np.array([e[2] for e in edges])
            rows = np.concatenate([us, vs])
            cols = np.concatenate([vs, us])
            data = np.concatenate([ws, ws])
            self.adjacency = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        else:
            self.adjacency = sp.csr_matrix((n, n), dtype=np.float64)
        self.node_kind = tuple(node_kind) if node_kind is not None else None

    @classmethod
    def from_pairs(cls, n, pairs, weight=1.0, node_kind=None):
        return cls(n, [(u, v, weight) for u, v in pairs], node_kind=node_kind)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def degrees(self):
        """Number of stored neighbors per node."""
        deg = np.zeros(self.n, dtype=np.int64)
        for u, v, _ in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    @property
    def weighted_degrees(self):
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def neighbors(self, u):
        return self.adjacency.indices[
            self.adjacency.indptr[u]:self.adjacency.indptr[u + 1]]

    def with_weights(self, weights):
        """Same topology with new per-edge weights (in self.edges order)."""
        if len(weights) != len(self.edges):
            raise DataError("weight count does not match edge count")
        return Graph(self.n, [(u, v, w) for (u, v, _), w
                              in zip(self.edges, weights)],
                     node_kind=self.node_kind)

    def subgraph(self, keep):
        """Induced subgraph on sorted node ids `keep`, reindexed densely."""
        keep = np.asarray(sorted(keep))
        remap = -np.ones(self.n, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        edges = [(remap[u], remap[v], w) for u, v, w in self.edges
                 if remap[u] >= 0 and remap[v] >= 0]
        kind = None
        if self.node_kind is not None:
            kind = [self.node_kind[i] for i in keep]
        return Graph(len(keep), edges, node_kind=kind)


@dataclass(frozen=True)
class GraphBundle:
    """Primary graph plus named auxiliary relation graphs."""

    primary: Graph
    auxiliary: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, g in self.auxiliary.items():
            if g.n != self.primary.n:
                raise DataError(
                    f"auxiliary graph '{name}' has {g.n} nodes, "
                    f"primary has {self.primary.n}")

    @property
    def n(self):
        return self.primary.n


@dataclass(frozen=True)
class AttributeBag:
    """Per-node token-id lists plus a token embedding table."""

    bags: tuple
    vocabulary: np.ndarray  # (vocab, emb_dim)

    def __post_init__(self):
        for i, bag in enumerate(self.bags):
            for tok in bag:
                if not 0 <= tok < self.vocabulary.shape[0]:
                    raise DataError(
                        f"node {i}: token {tok} missing from vocabulary")


@dataclass(frozen=True)
class SBMConfig:
    blocks: int
    block_sizes: tuple
    p_in: float
    p_out: float
    dep_dim: int = 8
    inv_dim: int = 8
    noise_sigma: float = 0.5
    confound_strength: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ConfigError("require 0 <= p_out <= p_in <= 1")
        if len(self.block_sizes) != self.blocks:
            raise ConfigError("block_sizes length must equal blocks")
        if self.dep_dim < self.blocks:
            raise ConfigError("dep_dim must be >= number of blocks")

    @property
    def n(self):
        return int(sum(self.block_sizes))


# ingestion ----------------------------------------------------------

def load_edge_list(path, n_hint=None):
    pairs = set()
    max_idx = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'u v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer node id in {line!r}")
            if u < 0 or v < 0:
                raise DataError(f"{path}:{lineno}: negative node id")
            max_idx = max(max_idx, u, v)
            if u == v:
                continue
            pairs.add((min(u, v), max(u, v)))
    if not pairs:
        raise DataError(f"{path}: empty edge set")
    n = n_hint if n_hint is not None else max_idx + 1
    return Graph.from_pairs(n, pairs)


def load_features(path, n):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.replace(",", " ").split()
            try:
                rows.append([float(t) for t in toks])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric token")
    if len(rows) != n:
        raise DataError(f"{path}: row count mismatch (got {len(rows)}, want {n})")
    X = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature value")
    return X


def load_labels(path):
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer label")
    return np.asarray(labels, dtype=np.int64)


def load_attribute_bags(path):
    bags = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.startswith("#"):
                continue
            try:
                bags.append(tuple(int(t) for t in line.split()))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer token id")
    return tuple(bags)


# auxiliary graph construction ---------------------------------------

def build_knn_similarity_graph(X, k, eta_sim):
    """Cosine k-NN graph, thresholded at eta_sim, symmetrized by union."""
    if k < 0:
        raise ConfigError("k must be >= 0")
    if not -1.0 <= eta_sim <= 1.0:
        raise ConfigError("eta_sim must lie in [-1, 1]")
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k == 0 or n < 2:
        return Graph(n, [])
    norms = np.linalg.norm(X, axis=1)
    zero_rows = int((norms == 0).sum())
    if zero_rows:
        logger.warning("%d zero-norm feature rows contribute no k-NN edges",
                       zero_rows)
    safe = np.where(norms > 0, norms, 1.0)
    Xn = X / safe[:, None]
    sims = Xn @ Xn.T
    sims[norms == 0, :] = -np.inf
    sims[:, norms == 0] = -np.inf
    np.fill_diagonal(sims, -np.inf)
    kk = min(k, n - 1)
    edges = {}
    top = np.argpartition(-sims, kk - 1, axis=1)[:, :kk]
    for i in range(n):
        for j in top[i]:
            s = sims[i, j]
            if not np.isfinite(s) or s < eta_sim:
                continue
            key = (min(i, int(j)), max(i, int(j)))
            edges[key] = s
    return Graph(n, [(u, v, w) for (u, v), w in edges.items()])


def tfidf_class_features(bags: AttributeBag, assignment):
    """Weighted token-embedding features from per-class tf-idf scores.

    Each class forms one document from the bags of its confidently
    (hard-)assigned relevant nodes; a node's row mixes its tokens'
    class-wise scores by its soft assignment.
    """
    R = np.asarray(assignment.R, dtype=np.float64)
    relevant = np.asarray(assignment.relevant, dtype=bool)
    n, K = R.shape
    vocab = bags.vocabulary
    V, dim = vocab.shape
    hard = R.argmax(axis=1)

    counts = np.zeros((K, V))
    for i in range(n):
        if not relevant[i]:
            continue
        for tok in bags.bags[i]:
            counts[hard[i], tok] += 1

    doc_len = counts.sum(axis=1)
    tf = np.divide(counts, doc_len[:, None],
                   out=np.zeros_like(counts), where=doc_len[:, None] > 0)
    df = (counts > 0).sum(axis=0)
    idf = np.where(df > 0, np.log(K / np.maximum(df, 1)), 0.0)
    S = tf * idf[None, :]

    out = np.zeros((n, dim))
    for i in range(n):
        bag = bags.bags[i]
        if not bag:
            continue
        toks = np.asarray(bag)
        emb = vocab[toks]
        for k in range(K):
            s = S[k, toks]
            denom = s.sum()
            if denom > 0:
                out[i] += R[i, k] * (s @ emb) / denom
    return out


# synthetic graphs ---------------------------------------------------

def generate_sbm(cfg: SBMConfig):
    """Planted-partition graph with block-structured dep/inv features."""
    rng = np.random.default_rng(cfg.seed)
    sizes = [int(s) for s in cfg.block_sizes]
    n = sum(sizes)
    labels = np.repeat(np.arange(cfg.blocks), sizes)

    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    probs = np.where(same, cfg.p_in, cfg.p_out)
    mask = rng.random(len(iu)) < probs
    pairs = list(zip(iu[mask].tolist(), ju[mask].tolist()))
    graph = Graph.from_pairs(n, pairs)

    dep = np.zeros((n, cfg.dep_dim))
    dep[np.arange(n), labels] = 1.0
    dep += rng.normal(0.0, cfg.noise_sigma, size=(n, cfg.dep_dim))

    inv = rng.normal(0.0, 1.0, size=(n, cfg.inv_dim))
    if cfg.confound_strength > 0 and cfg.inv_dim > 0:
        # spurious coarse grouping of blocks leaks into the invariant dims
        groups = labels // 2
        n_groups = int(groups.max()) + 1
        width = min(n_groups, cfg.inv_dim)
        onehot = np.zeros((n, cfg.inv_dim))
        onehot[np.arange(n), groups % width] = 1.0
        inv += cfg.confound_strength * onehot

    X = np.concatenate([dep, inv], axis=1)
    return graph, X, labels
