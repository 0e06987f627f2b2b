"""Non-parametric prototype inference and the semantic prototype loss.

Prototypes are inferred by the small-variance limit of a Dirichlet-process
Gaussian mixture: a sequential sweep assigns each node to its nearest
prototype by squared Euclidean distance unless every distance exceeds the
margin, in which case the node spawns a new prototype at its own position.
Pseudo-labels can then be smoothed by personalized-PageRank-style label
propagation over the graph, and the loss contrasts each node against its
prototype through a K-way softmax on cosine similarities.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import l2_normalize_rows

__all__ = [
    "PrototypeState",
    "PrototypeInferenceConfig",
    "LabelPropagationConfig",
    "infer_prototypes",
    "refine_labels",
    "recompute_prototypes",
    "semantic_loss",
    "dump_prototypes",
    "load_prototypes",
]


@dataclass
class PrototypeState:
    """Inferred prototypes: matrix C (K, D), pseudo-labels Z (N,), count K.

    Every prototype row is the arithmetic mean of its assigned rows (before
    any normalization); empty prototypes are dropped with indices compacted.
    ``objective_trace`` records the DP-means objective after each inference
    iteration when produced by :func:`infer_prototypes`.
    """

    c: np.ndarray
    z: np.ndarray
    k: int
    converged: bool = True
    objective_trace: list[float] = field(default_factory=list)


@dataclass
class PrototypeInferenceConfig:
    """Margin and stopping rule for prototype inference.

    ``xi`` is the squared-Euclidean distance above which a node spawns a new
    prototype; ``math.inf`` is a valid sentinel that disables spawning.
    ``tolerance`` is the fraction of labels allowed to change in a sweep for
    the sweep to count as converged.
    """

    xi: float
    max_iters: int = 100
    tolerance: float = 0.0

    def validate(self):
        if not self.xi > 0:
            raise ConfigError(f"spawn margin xi must be > 0, got {self.xi}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 <= self.tolerance < 1.0:
            raise ConfigError(f"tolerance must lie in [0, 1), got {self.tolerance}")


@dataclass
class LabelPropagationConfig:
    """Steps and teleport probability for pseudo-label refinement."""

    steps: int = 10
    teleport: float = 0.15

    def validate(self):
        if self.steps < 0:
            raise ConfigError(f"propagation steps must be >= 0, got {self.steps}")
        if not 0.0 < self.teleport <= 1.0:
            raise ConfigError(f"teleport probability must lie in (0, 1], got {self.teleport}")


def _compact_labels(z, k):
    """Remap labels onto 0..K'-1 after dropping empty clusters."""
    counts = np.bincount(z, minlength=k)
    keep = np.flatnonzero(counts > 0)
    if keep.size == k:
        return z, k
    remap = np.full(k, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    return remap[z], int(keep.size)


def _objective(h, c_arr, z, xi, k):
    spread = float(((h - c_arr[z]) ** 2).sum())
    penalty = 0.0 if np.isinf(xi) else xi * k
    return spread + penalty


def infer_prototypes(h, cfg, initial_prototypes=None):
    """Sequential small-variance mixture inference.

    Starts from a single prototype at the global mean (or from the rows of
    ``initial_prototypes`` when given); nodes are visited in ascending index
    order within each sweep, so spawning is deterministic. Always returns a
    compacted state; hitting ``max_iters`` is reported via ``converged``,
    not an error.
    """
    cfg.validate()
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if n < 1:
        raise ValueError("need at least one row to infer prototypes")
    if initial_prototypes is None:
        c_arr = h.mean(axis=0)[None, :]
    else:
        c_arr = np.atleast_2d(np.asarray(initial_prototypes, dtype=np.float64)).copy()
    z = np.zeros(n, dtype=np.int64)
    trace = []
    converged = False
    for _ in range(cfg.max_iters):
        changes = 0
        for i in range(n):
            dists = ((c_arr - h[i]) ** 2).sum(axis=1)
            nearest = int(np.argmin(dists))
            if dists[nearest] > cfg.xi:
                nearest = c_arr.shape[0]
                c_arr = np.vstack([c_arr, h[i]])
            if z[i] != nearest:
                changes += 1
                z[i] = nearest
        z, k = _compact_labels(z, c_arr.shape[0])
        c_arr = np.asarray([h[z == j].mean(axis=0) for j in range(k)])
        trace.append(_objective(h, c_arr, z, cfg.xi, k))
        if changes <= cfg.tolerance * n:
            converged = True
            break
    return PrototypeState(
        c=c_arr, z=z, k=c_arr.shape[0], converged=converged, objective_trace=trace
    )


def refine_labels(z, k, transition, cfg):
    """Smooth pseudo-labels by propagating their one-hot matrix over the graph.

    Applies cfg.steps rounds of (1 - teleport) T Z + teleport Z0 starting
    from the one-hot encoding, then takes per-row argmax (ties break toward
    the lowest index). Prototypes must be recomputed by the caller.
    """
    cfg.validate()
    z = np.asarray(z, dtype=np.int64)
    if k < 1 or z.max(initial=0) >= k:
        raise ValueError(f"labels exceed prototype count {k}")
    onehot = np.zeros((z.shape[0], k), dtype=np.float64)
    onehot[np.arange(z.shape[0]), z] = 1.0
    current = onehot
    for _ in range(cfg.steps):
        current = (1.0 - cfg.teleport) * transition.dot(current) + cfg.teleport * onehot
    return np.argmax(current, axis=1).astype(np.int64)


def recompute_prototypes(h, z, k):
    """Per-cluster means; empty clusters are dropped and indices compacted."""
    h = np.asarray(h, dtype=np.float64)
    z = np.asarray(z, dtype=np.int64)
    if z.min(initial=0) < 0 or z.max(initial=0) >= k:
        raise ValueError(f"labels out of range for prototype count {k}")
    z, k_new = _compact_labels(z, k)
    rows = np.asarray([h[z == j].mean(axis=0) for j in range(k_new)])
    return PrototypeState(c=rows, z=z, k=k_new)


def semantic_loss(h, state, tau2):
    """Prototype softmax cross-entropy and its gradient w.r.t. the node rows.

    Node and prototype rows are l2-normalized before the dot products, so
    every logit is a cosine similarity over temperature. Prototypes are an
    inference statistic and receive no gradient.
    """
    if tau2 <= 0:
        raise ConfigError(f"temperature tau2 must be > 0, got {tau2}")
    if state.k < 1:
        raise ValueError("prototype state is empty")
    h = np.asarray(h, dtype=np.float64)
    h_norms = np.linalg.norm(h, axis=1)
    h_hat = h / np.where(h_norms > 0, h_norms, 1.0)[:, None]
    c_hat = l2_normalize_rows(state.c)

    logits = (h_hat @ c_hat.T) / tau2
    peak = logits.max(axis=1)
    lse = peak + np.log(np.exp(logits - peak[:, None]).sum(axis=1))
    picked = logits[np.arange(h.shape[0]), state.z]
    loss = float((lse - picked).sum())

    probs = np.exp(logits - lse[:, None])
    probs[np.arange(h.shape[0]), state.z] -= 1.0
    grad_hat = (probs @ c_hat) / tau2
    # back through row normalization; zero rows keep a zero gradient
    grad_h = grad_hat - (grad_hat * h_hat).sum(axis=1, keepdims=True) * h_hat
    nz = h_norms > 0
    grad_h[nz] /= h_norms[nz, None]
    grad_h[~nz] = 0.0
    return loss, grad_h


def dump_prototypes(path, state):
    """Text dump: K, then K prototype rows, then N pseudo-labels."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{state.k}\n")
        for row in state.c:
            fh.write("\t".join(format(v, ".17g") for v in row))
            fh.write("\n")
        for label in state.z:
            fh.write(f"{label}\n")


def load_prototypes(path):
    """Inverse of :func:`dump_prototypes`."""
    with open(path, "r", encoding="utf-8") as fh:
        k = int(fh.readline().strip())
        c = np.array(
            [[float(v) for v in fh.readline().split("\t")] for _ in range(k)], dtype=np.float64
        )
        z = np.array([int(line.strip()) for line in fh if line.strip()], dtype=np.int64)
    return PrototypeState(c=c, z=z, k=k)
