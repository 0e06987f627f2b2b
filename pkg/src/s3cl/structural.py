"""Structural InfoNCE over the local view and the L-1 high-order views.

Each node's local-view row is the anchor; its rows in the high-order views
are the positives. The softmax denominator for anchor i ranges over a
candidate set of size M + L - 1: all L - 1 of i's own high-order rows
(including the numerator term) plus M sampled negative rows, each taken at
a uniformly drawn view. Negatives may be filtered by pseudo-labels so that
no negative shares the anchor's cluster.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericalError

__all__ = ["ContrastBatch", "sample_negatives", "sample_negative_batch", "structural_loss"]

# cap on the scratch buffer used for batched row dots (in float64 elements)
_CHUNK_BUDGET = 8_000_000


@dataclass
class ContrastBatch:
    """Per-anchor negative sample indices for one epoch.

    ``neg_nodes``/``neg_views`` are (N, M) integer arrays; view indices are
    0-based positions into the propagated-view list. ``fallback_anchors``
    counts anchors whose pseudo-label filter left no eligible node and that
    reverted to label-free sampling.
    """

    neg_nodes: np.ndarray
    neg_views: np.ndarray
    fallback_anchors: int = 0

    @property
    def num_negatives(self):
        return self.neg_nodes.shape[1]


def _label_free(anchor, num_nodes, count, rng):
    draws = rng.integers(0, num_nodes - 1, size=count)
    draws[draws >= anchor] += 1
    return draws


def sample_negatives(anchor, num_nodes, num_views, count, rng, labels=None):
    """Sample ``count`` (node, view) negatives for one anchor, with replacement.

    Eligible nodes carry a pseudo-label different from the anchor's; without
    labels every other node is eligible. Returns ((count, 2) array, fallback)
    where ``fallback`` reports that label filtering found no eligible node
    and label-free sampling was used instead.
    """
    if count < 1:
        raise ConfigError(f"negative count must be >= 1, got {count}")
    if num_nodes < 2:
        raise ConfigError("need at least two nodes to sample negatives")
    fallback = False
    if labels is None:
        nodes = _label_free(anchor, num_nodes, count, rng)
    else:
        eligible = np.flatnonzero(labels != labels[anchor])
        if eligible.size == 0:
            fallback = True
            nodes = _label_free(anchor, num_nodes, count, rng)
        else:
            nodes = rng.choice(eligible, size=count, replace=True)
    views = rng.integers(0, num_views, size=count)
    return np.stack([nodes, views], axis=1), fallback


def sample_negative_batch(num_nodes, num_views, count, rng, labels=None):
    """Negatives for every anchor, visiting anchors in ascending index order."""
    neg_nodes = np.empty((num_nodes, count), dtype=np.int64)
    neg_views = np.empty((num_nodes, count), dtype=np.int64)
    fallbacks = 0
    for anchor in range(num_nodes):
        pairs, fell_back = sample_negatives(anchor, num_nodes, num_views, count, rng, labels)
        neg_nodes[anchor] = pairs[:, 0]
        neg_views[anchor] = pairs[:, 1]
        fallbacks += fell_back
    return ContrastBatch(neg_nodes=neg_nodes, neg_views=neg_views, fallback_anchors=fallbacks)


def _negative_similarities_gather(anchors, stacked, flat_idx):
    """Row dots anchor_i . stacked[flat_idx[i, m]], chunked over anchors."""
    n, m = flat_idx.shape
    d = anchors.shape[1]
    sims = np.empty((n, m), dtype=np.float64)
    chunk = max(1, _CHUNK_BUDGET // max(1, m * d))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        rows = stacked[flat_idx[start:stop].ravel()].reshape(stop - start, m, d)
        sims[start:stop] = np.einsum("cd,cmd->cm", anchors[start:stop], rows)
    return sims


def _negative_similarities_pairwise(views, batch):
    """All-pairs similarities per view, then a scalar gather. Cheaper than the
    row gather whenever N*L is small against the negative budget."""
    anchors = views[0]
    n = anchors.shape[0]
    sims = np.empty((n, batch.num_negatives), dtype=np.float64)
    for view_index, view in enumerate(views):
        rows, slots = np.nonzero(batch.neg_views == view_index)
        if rows.size:
            pairwise = anchors @ view.T
            sims[rows, slots] = pairwise[rows, batch.neg_nodes[rows, slots]]
    return sims


def _negative_similarities(views, batch):
    anchors = views[0]
    n = anchors.shape[0]
    if n * len(views) <= 8 * batch.num_negatives:
        return _negative_similarities_pairwise(views, batch)
    stacked = np.concatenate(views, axis=0)
    flat_idx = batch.neg_views * n + batch.neg_nodes
    return _negative_similarities_gather(anchors, stacked, flat_idx)


def structural_loss(views, batch, tau1):
    """Structural contrastive loss and its gradients w.r.t. every view row.

    ``views`` is the list of L projected representation matrices (N, D_p),
    local view first. Returns (loss, [grad per view]); rows that appear in
    no candidate set receive an exactly-zero gradient. Log-sum-exp is
    stabilized by max subtraction.
    """
    if tau1 <= 0:
        raise ConfigError(f"temperature tau1 must be > 0, got {tau1}")
    num_views = len(views)
    anchors = views[0]
    n, d = anchors.shape
    grads = [np.zeros_like(v) for v in views]
    if num_views < 2:
        return 0.0, grads

    pos_sims = np.stack([(anchors * views[l]).sum(axis=1) for l in range(1, num_views)], axis=1)
    neg_sims = _negative_similarities(views, batch)
    if not (np.isfinite(pos_sims).all() and np.isfinite(neg_sims).all()):
        raise NumericalError("non-finite similarity in structural loss")

    s_pos = pos_sims / tau1
    s_neg = neg_sims / tau1
    peak = np.maximum(s_pos.max(axis=1), s_neg.max(axis=1))
    z = np.exp(s_pos - peak[:, None]).sum(axis=1) + np.exp(s_neg - peak[:, None]).sum(axis=1)
    lse = peak + np.log(z)
    n_pos = num_views - 1
    loss = float((n_pos * lse - s_pos.sum(axis=1)).sum())

    # d loss / d s: every candidate acquires (L-1)*softmax weight; each
    # positive additionally appears once as a numerator.
    p_pos = np.exp(s_pos - lse[:, None])
    p_neg = np.exp(s_neg - lse[:, None])
    w_pos = (n_pos * p_pos - 1.0) / tau1
    w_neg = (n_pos * p_neg) / tau1

    for l in range(1, num_views):
        w = w_pos[:, l - 1 : l]
        grads[l] += w * anchors
        grads[0] += w * views[l]
    anchor_rows = np.repeat(np.arange(n), batch.num_negatives)
    for l in range(num_views):
        mask = (batch.neg_views == l).ravel()
        if not mask.any():
            continue
        weight_matrix = sp.coo_matrix(
            (w_neg.ravel()[mask], (anchor_rows[mask], batch.neg_nodes.ravel()[mask])),
            shape=(n, n),
        ).tocsr()
        grads[l] += weight_matrix.T @ anchors
        grads[0] += weight_matrix @ views[l]
    return loss, grads
