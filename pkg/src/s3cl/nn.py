"""Minimal neural-network stack with hand-derived backprop.

One-layer ReLU encoder, two-layer MLP projection head with optional row
l2-normalization, bias-corrected Adam, EMA parameter copies, and a central
finite-difference gradient checker. Everything is float64 and deterministic
given its inputs; there is no autodiff, gradients for the two fixed loss
compositions are assembled by the trainer from the backward helpers here.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

__all__ = [
    "ModelParams",
    "AdamState",
    "ProjectorCache",
    "init_params",
    "encoder_forward",
    "encoder_backward",
    "projector_forward",
    "projector_backward",
    "l2_normalize_rows",
    "adam_step",
    "ema_update",
    "finite_diff_check",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ModelParams:
    """Live encoder/projector weights plus their EMA (momentum) copies.

    ``momentum`` always carries the encoder copy; projector copies are
    included only when requested at initialization.
    """

    encoder_w: np.ndarray  # (D_in, D_enc)
    proj_w1: np.ndarray  # (D_enc, D_hidden)
    proj_b1: np.ndarray  # (D_hidden,)
    proj_w2: np.ndarray  # (D_hidden, D_proj)
    proj_b2: np.ndarray  # (D_proj,)
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable(self):
        """Name -> array view of every trainable tensor (live, not copies)."""
        return {
            "encoder_w": self.encoder_w,
            "proj_w1": self.proj_w1,
            "proj_b1": self.proj_b1,
            "proj_w2": self.proj_w2,
            "proj_b2": self.proj_b2,
        }


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(d_in, d_enc, d_hidden, d_proj, rng, momentum_projector=False):
    """Glorot-uniform weights, zero biases, momentum copies equal to live weights."""
    params = ModelParams(
        encoder_w=_glorot(rng, d_in, d_enc),
        proj_w1=_glorot(rng, d_enc, d_hidden),
        proj_b1=np.zeros(d_hidden),
        proj_w2=_glorot(rng, d_hidden, d_proj),
        proj_b2=np.zeros(d_proj),
    )
    params.momentum["encoder_w"] = params.encoder_w.copy()
    if momentum_projector:
        for key in ("proj_w1", "proj_b1", "proj_w2", "proj_b2"):
            params.momentum[key] = getattr(params, key).copy()
    return params


def encoder_forward(encoder_w, xbar):
    """H = ReLU(X̄ W). Returns H and the positive-preactivation mask.

    The mask is strict (preactivation > 0): the ReLU subgradient at exactly
    zero is taken as zero.
    """
    if xbar.shape[1] != encoder_w.shape[0]:
        raise ValueError(
            f"dimension mismatch: features have {xbar.shape[1]} columns, "
            f"encoder expects {encoder_w.shape[0]}"
        )
    pre = xbar @ encoder_w
    mask = pre > 0
    return pre * mask, mask


def encoder_backward(grad_h, xbar, mask):
    """Gradient of the encoder weight given dL/dH and the forward mask."""
    return xbar.T @ (grad_h * mask)


@dataclass
class ProjectorCache:
    """Forward intermediates needed to backpropagate through the projector."""

    h_in: np.ndarray
    hidden_mask: np.ndarray  # bool, preactivation > 0
    hidden: np.ndarray  # ReLU(H W1 + b1)
    norms: np.ndarray | None  # row norms of the pre-normalization output
    output: np.ndarray  # the returned (possibly normalized) rows


def projector_forward(params, h, normalize=True):
    """U = W2·ReLU(H W1 + b1) + b2, optionally l2-normalized per row."""
    if h.shape[1] != params.proj_w1.shape[0]:
        raise ValueError(
            f"dimension mismatch: representations have {h.shape[1]} columns, "
            f"projector expects {params.proj_w1.shape[0]}"
        )
    pre = h @ params.proj_w1 + params.proj_b1
    mask = pre > 0
    hidden = pre * mask
    out = hidden @ params.proj_w2 + params.proj_b2
    norms = None
    if normalize:
        out, norms = _normalize_rows_with_norms(out)
    return out, ProjectorCache(h_in=h, hidden_mask=mask, hidden=hidden, norms=norms, output=out)


def projector_backward(grad_u, params, cache):
    """Backprop dL/dU through the projector.

    Returns (grad_h, grad_w1, grad_b1, grad_w2, grad_b2). Zero-norm rows of
    the normalization pass gradient zero by convention.
    """
    if cache.norms is not None:
        grad_s = np.zeros_like(grad_u)
        nz = cache.norms > 0
        u = cache.output[nz]
        g = grad_u[nz]
        grad_s[nz] = (g - (g * u).sum(axis=1, keepdims=True) * u) / cache.norms[nz, None]
    else:
        grad_s = grad_u
    grad_w2 = cache.hidden.T @ grad_s
    grad_b2 = grad_s.sum(axis=0)
    grad_q = (grad_s @ params.proj_w2.T) * cache.hidden_mask
    grad_w1 = cache.h_in.T @ grad_q
    grad_b1 = grad_q.sum(axis=0)
    grad_h = grad_q @ params.proj_w1.T
    return grad_h, grad_w1, grad_b1, grad_w2, grad_b2


def _normalize_rows_with_norms(m):
    norms = np.linalg.norm(m, axis=1)
    scale = np.where(norms > 0, norms, 1.0)
    return m / scale[:, None], norms


def l2_normalize_rows(m):
    """Divide each nonzero row by its Euclidean norm; zero rows pass through."""
    normalized, _ = _normalize_rows_with_norms(np.asarray(m, dtype=np.float64))
    return normalized


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for a named parameter set."""

    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for key, value in params.items():
            state.m[key] = np.zeros_like(value)
            state.v[key] = np.zeros_like(value)
        return state


def adam_step(state, params, grads):
    """One in-place Adam update; raises on non-finite gradients."""
    for key, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NumericalError(f"non-finite gradient for parameter {key!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for key, grad in grads.items():
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        params[key] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def ema_update(target, source, momentum):
    """target <- momentum * target + (1 - momentum) * source, in place."""
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    target *= momentum
    target += (1.0 - momentum) * source


def finite_diff_check(loss_and_grad, params, h=1e-5, entries_per_param=20, rng=None):
    """Worst relative error between analytic and central-difference gradients.

    ``loss_and_grad(params)`` must return (scalar loss, dict of gradients
    keyed like ``params``) and be deterministic: the loss is evaluated twice
    up front and any discrepancy is a contract violation. A random subsample
    of entries per parameter is probed; the relative-error denominator is
    floored at 1e-5 of the loss magnitude so that exact-zero gradient
    entries are not swamped by difference rounding noise.
    """
    rng = rng or np.random.default_rng(0)
    value0, grads = loss_and_grad(params)
    value1, _ = loss_and_grad(params)
    if value0 != value1:
        raise NumericalError(
            f"loss is not deterministic under fixed inputs: {value0!r} != {value1!r}"
        )
    floor = max(1e-12, 1e-5 * abs(value0))
    worst = 0.0
    for key, param in params.items():
        flat = param.reshape(-1)
        size = flat.shape[0]
        picks = rng.choice(size, size=min(entries_per_param, size), replace=False)
        for idx in np.sort(picks):
            original = flat[idx]
            flat[idx] = original + h
            up, _ = loss_and_grad(params)
            flat[idx] = original - h
            down, _ = loss_and_grad(params)
            flat[idx] = original
            fd = (up - down) / (2.0 * h)
            an = grads[key].reshape(-1)[idx]
            rel = abs(fd - an) / max(abs(fd), abs(an), floor)
            worst = max(worst, rel)
    return worst
