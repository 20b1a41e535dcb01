"""Anchor selection, counterfactual virtual-node synthesis, hard-negative
sampling, and the contrastive loss over class-dependent embeddings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .decoupling import predict_links_against
from .errors import ConfigError, DataError

logger = logging.getLogger("mecole.contrastive")

__all__ = [
    "VirtualNode",
    "ContrastiveBatch",
    "sample_anchors",
    "synthesize_virtual_node",
    "sample_negatives",
    "sample_positives",
    "contrastive_loss",
]


@dataclass(frozen=True)
class VirtualNode:
    """Synthesized embedding pair: anchor's invariant features with
    class-dependent dimensions partially swapped in from a donor node."""

    h_d: np.ndarray
    h_o: np.ndarray
    anchor: int
    donor: int
    mask: np.ndarray  # bool per class-dependent dim; True = donor value


@dataclass(frozen=True)
class ContrastiveBatch:
    anchor: int
    positives: np.ndarray
    pos_p: np.ndarray
    negatives: np.ndarray
    neg_p: np.ndarray

    def __post_init__(self):
        if len(self.positives) < 1 or len(self.negatives) < 1:
            raise DataError("batch needs at least one positive and negative")
        for p in (self.pos_p, self.neg_p):
            if abs(float(np.sum(p)) - 1.0) > 1e-9:
                raise DataError("sampling probabilities must sum to 1")


def sample_anchors(assignment, per_class, rng):
    """Boundary-favoring anchor sample: within each class, weight members
    by exp(-r^2 / (2 s^2)) so low-confidence nodes are picked more often."""
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    anchors = []
    for k in range(assignment.K):
        members = assignment.members(k)
        if members.size == 0:
            continue
        if members.size <= per_class:
            anchors.extend(members.tolist())
            continue
        p = _boundary_weights(assignment.R[members, k])
        chosen = rng.choice(members, size=per_class, replace=False, p=p)
        anchors.extend(int(c) for c in chosen)
    return anchors


def _boundary_weights(r):
    """Normalized exp(-r^2 / 2s^2) weights, shifted to avoid underflow."""
    s = max(float(r.std()), 1e-3)
    expo = -r ** 2 / (2 * s ** 2)
    w = np.exp(expo - expo.max()) + 1e-12  # floor keeps all nodes drawable
    return w / w.sum()


def anchor_weights(assignment, k):
    """Closed-form selection weights for class k (exposed for tests)."""
    members = assignment.members(k)
    return members, _boundary_weights(assignment.R[members, k])


def synthesize_virtual_node(v, assignment, E, p_ce, rng):
    """Blend the anchor's class-dependent dims toward a donor drawn
    uniformly from the opposing classes; invariant dims stay the anchor's."""
    if not 0.0 < p_ce <= 1.0:
        raise ConfigError("p_ce must lie in (0, 1]")
    hard = assignment.hard
    opposing = np.flatnonzero(hard != hard[v])
    if opposing.size == 0:
        raise DataError("no opposing class to draw a donor from")
    donor = int(rng.choice(opposing))
    dim_d = E.hd.shape[1]
    mask = rng.random(dim_d) < p_ce
    while not mask.any():
        mask = rng.random(dim_d) < p_ce
    h_d = np.where(mask, E.hd[donor], E.hd[v])
    return VirtualNode(h_d=h_d, h_o=E.ho[v].copy(), anchor=int(v),
                       donor=donor, mask=mask)


def _weighted_draw_without_replacement(items, weights, m, rng):
    """Sequential weighted draws; the first draw is exactly proportional
    to the weights."""
    items = list(items)
    weights = np.asarray(weights, dtype=np.float64).copy()
    out = []
    for _ in range(m):
        p = weights / weights.sum()
        i = int(rng.choice(len(items), p=p))
        out.append(items.pop(i))
        weights = np.delete(weights, i)
    return out


def sample_negatives(virt, E, graph, m, rng, pool_factor=10, uniform=False):
    """Hard negatives: the virtual node's likeliest interaction partners
    outside the anchor's neighborhood, drawn proportionally to Z."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    v = virt.anchor
    excluded = set(graph.neighbors(v).tolist())
    excluded.add(v)
    candidates = np.array([u for u in range(graph.n) if u not in excluded])
    if candidates.size == 0:
        raise DataError("no candidate negatives: anchor neighborhood is full")
    if uniform:
        # ablation: any non-neighbor, no hardness ranking
        take = min(m, candidates.size)
        chosen = np.asarray(sorted(int(u) for u in
                                   rng.choice(candidates, size=take,
                                              replace=False)))
        return chosen, np.full(take, 1.0 / take)
    z = predict_links_against(virt.h_d, virt.h_o, E)[candidates]
    c = min(pool_factor * m, candidates.size)
    pool_idx = np.argsort(-z, kind="stable")[:c]
    pool = candidates[pool_idx]
    pool_z = z[pool_idx]
    if pool.size <= m:
        chosen = [int(u) for u in pool]
    else:
        chosen = _weighted_draw_without_replacement(pool, pool_z, m, rng)
    chosen = np.asarray(chosen)
    zmap = dict(zip(pool.tolist(), pool_z.tolist()))
    zc = np.array([zmap[int(u)] for u in chosen])
    return chosen, zc / zc.sum()


def sample_positives(v, graph, count, rng):
    """Uniform draws from the anchor's 1-hop neighborhood."""
    nbrs = graph.neighbors(v)
    if nbrs.size == 0:
        raise DataError(f"anchor {v} has no neighbors to sample positives")
    take = min(count, nbrs.size)
    chosen = rng.choice(nbrs, size=take, replace=False)
    return np.asarray(sorted(int(u) for u in chosen)), \
        np.full(take, 1.0 / take)


def contrastive_loss(batches, E, tau, include_positive_in_denominator=False):
    """Mean over batches/positives of -log(exp(s+/tau) / sum_k exp(s-_k/tau)).

    As written the positive term is absent from the denominator, so the
    loss can go negative; the standard form is available behind a flag.
    """
    if tau <= 0:
        raise ConfigError("temperature tau must be > 0")
    if not batches:
        raise DataError("contrastive loss needs at least one batch")
    total = None
    count = 0
    for b in batches:
        f_v = ad.take_rows(E.H_d, [b.anchor])
        neg = ad.take_rows(E.H_d, b.negatives)
        s_neg = ad.div(ad.tsum(ad.mul(neg, f_v), axis=1), tau)
        denom = ad.tsum(ad.exp(s_neg))
        pos = ad.take_rows(E.H_d, b.positives)
        s_pos = ad.div(ad.tsum(ad.mul(pos, f_v), axis=1), tau)
        if include_positive_in_denominator:
            for j in range(len(b.positives)):
                s_j = ad.take_rows(s_pos, [j])
                term = ad.sub(ad.log(ad.add(denom, ad.exp(s_j))), s_j)
                total = term if total is None else ad.add(total, term)
                count += 1
        else:
            log_denom = ad.log(denom)
            for j in range(len(b.positives)):
                term = ad.sub(log_denom, ad.take_rows(s_pos, [j]))
                total = term if total is None else ad.add(total, term)
                count += 1
    return ad.div(total, float(count))
