"""Decoupled embedding learning: two-channel GCN encoder, factorized link
prediction, reconstruction and discrepancy losses, and edge rewiring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError
from .graphs import Graph

logger = logging.getLogger("mecole.decoupling")

__all__ = [
    "DecoupledEmbeddings",
    "DecoupledEncoder",
    "DISCREPANCY_METRICS",
    "predict_link",
    "link_scores",
    "reconstruction_loss",
    "discrepancy_loss",
    "rewire",
    "sample_non_edges",
]

EPS = 1e-8

DISCREPANCY_METRICS = ("l1", "l2", "cosine", "l_inf")


@dataclass
class DecoupledEmbeddings:
    """Class-dependent (H_d) and class-invariant (H_o) node embeddings."""

    H_d: ad.Tensor
    H_o: ad.Tensor

    @property
    def n(self):
        return self.H_d.shape[0]

    @property
    def hd(self):
        return self.H_d.values

    @property
    def ho(self):
        return self.H_o.values

    @classmethod
    def from_arrays(cls, hd, ho, requires_grad=False):
        hd = np.atleast_2d(np.asarray(hd, dtype=np.float64))
        ho = np.asarray(ho, dtype=np.float64).reshape(hd.shape[0], -1)
        return cls(ad.Tensor(hd, requires_grad=requires_grad),
                   ad.Tensor(ho, requires_grad=requires_grad))


def _sigmoid(x):
    x = np.clip(x, -500, 500)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)),
                    np.exp(x) / (1.0 + np.exp(x)))


class DecoupledEncoder:
    """Two independent 2-layer GCNs over (possibly multiple) adjacency
    channels, mixed with softmax-normalized learned scalars.

    The class-dependent channel list may differ from the class-invariant
    one (the former sees the rewired primary graph).
    """

    def __init__(self, in_dim, hidden, dim_d, dim_o, n_channels, seed, n=None):
        if dim_d < 1:
            raise ConfigError("dim_d must be >= 1")
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.dim_o = dim_o
        self.n_channels = n_channels
        self.n = n

        def glorot(rows, cols):
            scale = np.sqrt(6.0 / (rows + cols))
            return ad.parameter(rng.uniform(-scale, scale, size=(rows, cols)))

        first_rows = in_dim if in_dim is not None else n
        self.w1_d = glorot(first_rows, hidden)
        self.w2_d = glorot(hidden, dim_d)
        self.mix_d = ad.parameter(np.zeros((1, n_channels)))
        if dim_o > 0:
            self.w1_o = glorot(first_rows, hidden)
            self.w2_o = glorot(hidden, dim_o)
            self.mix_o = ad.parameter(np.zeros((1, n_channels)))
        else:
            self.w1_o = self.w2_o = self.mix_o = None

    def parameters(self):
        params = [self.w1_d, self.w2_d]
        if self.n_channels > 1:
            params.append(self.mix_d)
        if self.dim_o > 0:
            params += [self.w1_o, self.w2_o]
            if self.n_channels > 1:
                params.append(self.mix_o)
        return params

    def _branch(self, a_hats, X, w1, w2, mix):
        def propagate(h):
            if len(a_hats) == 1:
                return ad.spmm(a_hats[0], h)
            weights = ad.softmax_rows(mix)
            parts = None
            for c, a_hat in enumerate(a_hats):
                sel = np.zeros((len(a_hats), 1))
                sel[c, 0] = 1.0
                w_c = ad.matmul(weights, ad.constant(sel))  # (1,1)
                term = ad.mul(ad.spmm(a_hat, h), w_c)
                parts = term if parts is None else ad.add(parts, term)
            return parts

        if X is not None:
            h1 = ad.tanh(ad.matmul(propagate(ad.constant(X)), w1))
        else:
            h1 = ad.tanh(propagate(w1))
        return ad.matmul(propagate(h1), w2)

    def encode(self, a_hats_d, a_hats_o, X):
        """Forward pass; `a_hats_*` are lists of normalized adjacencies."""
        if len(a_hats_d) != self.n_channels or len(a_hats_o) != self.n_channels:
            raise ConfigError("channel count mismatch with encoder")
        h_d = self._branch(a_hats_d, X, self.w1_d, self.w2_d, self.mix_d)
        if self.dim_o > 0:
            h_o = self._branch(a_hats_o, X, self.w1_o, self.w2_o, self.mix_o)
        else:
            h_o = ad.constant(np.zeros((h_d.shape[0], 0)))
        return DecoupledEmbeddings(h_d, h_o)


# link prediction ----------------------------------------------------

def predict_link(u, v, E):
    """Factorized edge probability for one pair (frozen embeddings)."""
    if u == v:
        raise DataError("predict_link requires u != v")
    zd = float(_sigmoid(E.hd[u] @ E.hd[v]))
    zo = float(_sigmoid(E.ho[u] @ E.ho[v])) if E.ho.shape[1] else 0.5
    return zd * zo, zd, zo


def predict_links_against(hd_vec, ho_vec, E):
    """Vectorized Z(x, u) of one embedding pair against every node."""
    zd = _sigmoid(E.hd @ hd_vec)
    zo = _sigmoid(E.ho @ ho_vec) if E.ho.shape[1] else np.full(E.n, 0.5)
    return zd * zo


def link_scores(E, pairs, mlp=None):
    """Differentiable Z over an array of (u, v) pairs."""
    pairs = np.asarray(pairs)
    u, v = pairs[:, 0], pairs[:, 1]
    if mlp is not None:
        return mlp.score(E, u, v)
    hd_u, hd_v = ad.take_rows(E.H_d, u), ad.take_rows(E.H_d, v)
    zd = ad.sigmoid(ad.tsum(ad.mul(hd_u, hd_v), axis=1))
    if E.ho.shape[1]:
        ho_u, ho_v = ad.take_rows(E.H_o, u), ad.take_rows(E.H_o, v)
        zo = ad.sigmoid(ad.tsum(ad.mul(ho_u, ho_v), axis=1))
    else:
        zo = ad.constant(np.full((len(pairs), 1), 0.5))
    return ad.mul(zd, zo)


class MlpPredictor:
    """Ablation head: 2-layer perceptron on concatenated pair embeddings."""

    def __init__(self, dim_d, dim_o, hidden, seed):
        rng = np.random.default_rng(seed)
        in_dim = 2 * (dim_d + dim_o)

        def glorot(rows, cols):
            scale = np.sqrt(6.0 / (rows + cols))
            return ad.parameter(rng.uniform(-scale, scale, size=(rows, cols)))

        self.w1 = glorot(in_dim, hidden)
        self.b1 = ad.parameter(np.zeros((1, hidden)))
        self.w2 = glorot(hidden, 1)
        self.b2 = ad.parameter(np.zeros((1, 1)))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def score(self, E, u, v):
        cols = [ad.take_rows(E.H_d, u), ad.take_rows(E.H_d, v)]
        if E.ho.shape[1]:
            cols += [ad.take_rows(E.H_o, u), ad.take_rows(E.H_o, v)]
        feat = cols[0]
        for c in cols[1:]:
            feat = _hconcat(feat, c)
        h = ad.tanh(ad.add(ad.matmul(feat, self.w1), self.b1))
        return ad.sigmoid(ad.add(ad.matmul(h, self.w2), self.b2))


def _hconcat(a, b):
    """Horizontal concat of two tensors via constant selector matmuls."""
    ca, cb = a.shape[1], b.shape[1]
    sa = np.zeros((ca, ca + cb))
    sa[:, :ca] = np.eye(ca)
    sb = np.zeros((cb, ca + cb))
    sb[:, ca:] = np.eye(cb)
    return ad.add(ad.matmul(a, ad.constant(sa)), ad.matmul(b, ad.constant(sb)))


# losses -------------------------------------------------------------

def sample_non_edges(graph, count, rng):
    """Uniform sample of unordered non-adjacent pairs (with replacement)."""
    n = graph.n
    max_pairs = n * (n - 1) // 2
    if graph.num_edges >= max_pairs:
        raise DataError("graph is complete: no non-edges to sample")
    edge_set = {(u, v) for u, v, _ in graph.edges}
    out = []
    while len(out) < count:
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in edge_set:
            continue
        out.append(key)
    return np.asarray(out)


def reconstruction_loss(graph, E, neg_ratio, rng, mlp=None):
    """Binary cross-entropy of Z over edges and sampled non-edges."""
    if neg_ratio < 1:
        raise ConfigError("neg_ratio must be >= 1")
    pos = np.asarray([(u, v) for u, v, _ in graph.edges])
    neg = sample_non_edges(graph, neg_ratio * len(pos), rng)
    pairs = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])[:, None]
    z = ad.clip(link_scores(E, pairs, mlp=mlp), 1e-7, 1.0 - 1e-7)
    y_t = ad.constant(y)
    ll = ad.add(ad.mul(y_t, ad.log(z)),
                ad.mul(1.0 - y_t, ad.log(ad.sub(1.0, z))))
    return ad.mul(ad.tmean(ll), -1.0)


def _metric_tensor(a, b, metric):
    diff = ad.sub(a, b)
    if metric == "l1":
        return ad.tsum(ad.absolute(diff), axis=1)
    if metric == "l2":
        return ad.row_norm2(diff)
    if metric == "l_inf":
        return ad.row_max(ad.absolute(diff))
    if metric == "cosine":
        na = ad.row_norm2(a)
        nb = ad.row_norm2(b)
        dot = ad.tsum(ad.mul(a, b), axis=1)
        cos = ad.div(dot, ad.add(ad.mul(na, nb), EPS))
        return ad.sub(1.0, cos)
    raise ConfigError(f"unknown discrepancy metric '{metric}'")


def discrepancy_loss(E, assignment, metric, pairs, rng):
    """Mean ratio d(h_o1, h_o2) / (d(h_d1, h_d2) + eps) over sampled
    cross-class node pairs (relevant nodes only)."""
    if pairs < 1:
        raise ConfigError("pairs must be >= 1")
    if metric not in DISCREPANCY_METRICS:
        raise ConfigError(f"unknown discrepancy metric '{metric}'")
    groups = [assignment.members(k) for k in range(assignment.K)]
    nonempty = [g for g in groups if g.size > 0]
    if len(nonempty) < 2:
        raise DataError("discrepancy loss needs >= 2 non-empty classes")

    class_pairs = [(i, j) for i in range(len(nonempty))
                   for j in range(i + 1, len(nonempty))]
    idx = rng.integers(len(class_pairs), size=pairs)
    left = np.empty(pairs, dtype=np.int64)
    right = np.empty(pairs, dtype=np.int64)
    for t, ci in enumerate(idx):
        g1, g2 = class_pairs[ci]
        left[t] = nonempty[g1][rng.integers(nonempty[g1].size)]
        right[t] = nonempty[g2][rng.integers(nonempty[g2].size)]

    num = _metric_tensor(ad.take_rows(E.H_o, left),
                         ad.take_rows(E.H_o, right), metric)
    den = _metric_tensor(ad.take_rows(E.H_d, left),
                         ad.take_rows(E.H_d, right), metric)
    return ad.tmean(ad.div(num, ad.add(den, EPS)))


# rewiring -----------------------------------------------------------

def rewire(graph, E, eta):
    """Reweight each edge by min(eta, e / e_o) using frozen H_o.

    Weights are treated as constants downstream: the invariant channel
    scales the gradient of the dependent channel, not vice versa.
    """
    if eta <= 0:
        raise ConfigError("eta must be > 0")
    if E.ho.shape[1] == 0:
        return graph
    weights = []
    for u, v, w in graph.edges:
        e_o = float(_sigmoid(E.ho[u] @ E.ho[v]))
        weights.append(min(eta, w / max(e_o, EPS)))
    return graph.with_weights(weights)
