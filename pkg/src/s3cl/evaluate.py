"""Downstream evaluation: linear probe, k-means, and clustering metrics.

The probe is multinomial logistic regression with an optional l2 penalty,
trained full-batch by Adam on frozen representations. Clustering quality is
measured by Hungarian-matched accuracy, arithmetic-mean NMI, and the
adjusted Rand index, averaged over seeded k-means executions.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, NumericalError
from .nn import AdamState, adam_step
from .seeding import stream_rng

__all__ = [
    "SplitSpec",
    "ClusterMetrics",
    "linear_probe",
    "kmeans",
    "clustering_metrics",
    "cluster_eval",
    "classify_eval",
]


@dataclass
class SplitSpec:
    """Disjoint train/validation/test node-index lists."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def validate(self, num_nodes):
        joined = np.concatenate([self.train, self.val, self.test])
        if joined.size and (joined.min() < 0 or joined.max() >= num_nodes):
            raise ValueError(f"split indices out of range [0, {num_nodes})")
        if np.unique(joined).size != joined.size:
            raise ValueError("train/val/test splits overlap")
        return self

    @classmethod
    def random(cls, num_nodes, train_frac, val_frac, rng):
        order = rng.permutation(num_nodes)
        n_train = int(round(train_frac * num_nodes))
        n_val = int(round(val_frac * num_nodes))
        return cls(
            train=np.sort(order[:n_train]),
            val=np.sort(order[n_train : n_train + n_val]),
            test=np.sort(order[n_train + n_val :]),
        )

    def subsample_train(self, labels, per_class, rng):
        """Few-label protocol: keep at most ``per_class`` train nodes per class."""
        kept = []
        train_labels = labels[self.train]
        for cls_id in np.unique(train_labels):
            members = self.train[train_labels == cls_id]
            if members.size > per_class:
                members = rng.choice(members, size=per_class, replace=False)
            kept.append(members)
        return SplitSpec(train=np.sort(np.concatenate(kept)), val=self.val, test=self.test)


@dataclass
class ClusterMetrics:
    acc: float  # in [0, 1]
    nmi: float  # in [0, 1]
    ari: float  # in [-1, 1]

    def as_dict(self):
        return {"acc": self.acc, "nmi": self.nmi, "ari": self.ari}


def _softmax(logits):
    peak = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - peak)
    return e / e.sum(axis=1, keepdims=True)


def fit_logistic(x, y, num_classes, reg_lambda=0.0, epochs=300, lr=1e-2):
    """Full-batch Adam on mean cross-entropy + (lambda/2)||W||^2 from zero init.

    Returns the fitted parameter dict and the per-epoch training objective
    (evaluated before each step).
    """
    n, d = x.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    params = {"w": np.zeros((d, num_classes)), "b": np.zeros(num_classes)}
    adam = AdamState.create(params, lr)
    losses = []
    for _ in range(epochs):
        logits = x @ params["w"] + params["b"]
        peak = logits.max(axis=1)
        lse = peak + np.log(np.exp(logits - peak[:, None]).sum(axis=1))
        ce = float((lse - logits[np.arange(n), y]).mean())
        losses.append(ce + 0.5 * reg_lambda * float((params["w"] ** 2).sum()))
        probs = _softmax(logits)
        delta = (probs - onehot) / n
        grads = {"w": x.T @ delta + reg_lambda * params["w"], "b": delta.sum(axis=0)}
        adam_step(adam, params, grads)
    return params, losses


def linear_probe(h, labels, split, reg_lambda=0.0, epochs=300, lr=1e-2):
    """Test accuracy of a logistic-regression probe on frozen representations.

    The objective is convex and starts from zero weights; the l2 penalty
    applies to weights only. Test nodes whose class never appears in the
    train split are counted as wrong and reported via a warning.
    """
    h = np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    split.validate(h.shape[0])
    classes = np.unique(labels[split.train])
    class_index = {c: i for i, c in enumerate(classes)}
    unseen = set(np.unique(labels[split.test])) - set(classes)
    if unseen:
        warnings.warn(
            f"classes {sorted(unseen)} appear in the test split but not in train; "
            "they are scored as always wrong"
        )

    x = h[split.train]
    y = np.array([class_index[c] for c in labels[split.train]])
    params, _ = fit_logistic(x, y, classes.size, reg_lambda=reg_lambda, epochs=epochs, lr=lr)

    logits = h[split.test] @ params["w"] + params["b"]
    predicted = classes[np.argmax(logits, axis=1)]
    return float(np.mean(predicted == labels[split.test]))


def _squared_distances(points, centers):
    d2 = (
        (points**2).sum(axis=1, keepdims=True)
        - 2.0 * points @ centers.T
        + (centers**2).sum(axis=1)
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(0, n)]
    closest = _squared_distances(points, centers[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[j] = points[rng.integers(0, n)]
        else:
            centers[j] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _squared_distances(points, centers[j : j + 1]).ravel())
    return centers


def _lloyd(points, k, rng, max_iters=300):
    centers = _kmeans_pp_init(points, k, rng)
    labels = np.argmin(_squared_distances(points, centers), axis=1)
    previous_wcss = np.inf
    for _ in range(max_iters):
        # empty clusters are reseeded at the point farthest from its centroid
        counts = np.bincount(labels, minlength=k)
        if (counts == 0).any():
            residuals = ((points - centers[labels]) ** 2).sum(axis=1)
            for empty in np.flatnonzero(counts == 0):
                farthest = int(np.argmax(residuals))
                centers[empty] = points[farthest]
                residuals[farthest] = 0.0
            labels = np.argmin(_squared_distances(points, centers), axis=1)
            counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                centers[j] = points[labels == j].mean(axis=0)
        new_labels = np.argmin(_squared_distances(points, centers), axis=1)
        wcss = float(((points - centers[new_labels]) ** 2).sum())
        if wcss > previous_wcss * (1 + 1e-9) + 1e-12:
            raise NumericalError("k-means objective increased across an iteration")
        previous_wcss = wcss
        if (new_labels == labels).all():
            labels = new_labels
            break
        labels = new_labels
    return labels, previous_wcss


def kmeans(h, k, restarts=10, seed=0):
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by WCSS."""
    points = np.asarray(h, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"cluster count must lie in [1, {n}], got {k}")
    best_labels, best_wcss = None, np.inf
    for restart in range(restarts):
        labels, wcss = _lloyd(points, k, stream_rng(seed, "kmeans", restart))
        if wcss < best_wcss:
            best_labels, best_wcss = labels, wcss
    return best_labels


def _contingency(pred, truth):
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def _comb2(values):
    v = values.astype(np.int64)
    return (v * (v - 1)) // 2


def clustering_metrics(pred, truth):
    """Hungarian-matched accuracy, arithmetic-mean NMI, and adjusted Rand index."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.size == 0 or pred.shape != truth.shape:
        raise ValueError("predictions and ground truth must be equal-length, nonempty")
    table = _contingency(pred, truth)
    n = pred.size

    rows, cols = linear_sum_assignment(-table)
    acc = float(table[rows, cols].sum()) / n

    p = table / n
    p_pred = p.sum(axis=1)
    p_truth = p.sum(axis=0)
    nz = p > 0
    mi = float((p[nz] * np.log(p[nz] / np.outer(p_pred, p_truth)[nz])).sum())
    h_pred = float(-(p_pred[p_pred > 0] * np.log(p_pred[p_pred > 0])).sum())
    h_truth = float(-(p_truth[p_truth > 0] * np.log(p_truth[p_truth > 0])).sum())
    if h_pred == 0.0 and h_truth == 0.0:
        nmi = 1.0  # both partitions are a single cluster
    else:
        nmi = max(0.0, mi) / ((h_pred + h_truth) / 2.0)
        nmi = float(min(1.0, max(0.0, nmi)))

    sum_cells = int(_comb2(table).sum())
    sum_pred = int(_comb2(table.sum(axis=1)).sum())
    sum_truth = int(_comb2(table.sum(axis=0)).sum())
    total = n * (n - 1) // 2
    expected = sum_pred * sum_truth / total
    maximum = (sum_pred + sum_truth) / 2.0
    ari = 1.0 if maximum == expected else float((sum_cells - expected) / (maximum - expected))
    return ClusterMetrics(acc=acc, nmi=nmi, ari=ari)


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def cluster_eval(h, clusters, truth, runs=10, restarts=10, seed=0):
    """Average clustering metrics over ``runs`` seeded k-means executions."""
    results = []
    for run in range(runs):
        labels = kmeans(h, clusters, restarts=restarts, seed=int(stream_rng(seed, "cluster-eval", run).integers(2**31)))
        results.append(clustering_metrics(labels, truth))
    return {
        "acc": _mean_std([r.acc for r in results]),
        "nmi": _mean_std([r.nmi for r in results]),
        "ari": _mean_std([r.ari for r in results]),
        "runs": runs,
    }


def classify_eval(
    h,
    labels,
    runs=10,
    seed=0,
    train_frac=0.1,
    val_frac=0.1,
    reg_lambda=0.0,
    epochs=300,
    lr=1e-2,
):
    """Average probe accuracy over ``runs`` random splits."""
    scores = []
    for run in range(runs):
        split = SplitSpec.random(h.shape[0], train_frac, val_frac, stream_rng(seed, "classify-eval", run))
        scores.append(linear_probe(h, labels, split, reg_lambda=reg_lambda, epochs=epochs, lr=lr))
    return {"accuracy": _mean_std(scores), "runs": runs}
