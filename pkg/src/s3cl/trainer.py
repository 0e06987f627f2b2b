"""EM training loop: warm-start structural pretraining, then alternating
prototype inference (E-step) and joint contrastive descent (M-step).

Per main epoch: the momentum encoder embeds the mixed-order features,
prototypes and pseudo-labels are inferred and refined on those
representations, negatives are resampled (filtered by the fresh
pseudo-labels), one full-batch Adam step minimizes
gamma * structural + (1 - gamma) * semantic, and the momentum copy is
EMA-updated. Runs are deterministic given the seed in single-thread mode.
"""

import math
import time

import numpy as np

from .checkpoint import save_checkpoint
from .config import EpochRecord, TrainConfig, TrainReport
from .errors import NumericalError
from .graph import normalized_adjacency, propagate
from .nn import (
    AdamState,
    ModelParams,
    adam_step,
    ema_update,
    encoder_backward,
    encoder_forward,
    init_params,
    l2_normalize_rows,
    projector_backward,
    projector_forward,
)
from .seeding import stream_rng
from .semantic import (
    LabelPropagationConfig,
    PrototypeInferenceConfig,
    infer_prototypes,
    recompute_prototypes,
    refine_labels,
    semantic_loss,
)
from .structural import sample_negative_batch, structural_loss

__all__ = [
    "pretrain",
    "embed",
    "joint_loss_and_grads",
    "effective_negative_count",
    "run_e_step",
]


def effective_negative_count(cfg, num_nodes):
    """Configured M clamped to the label-free eligible pool (small graphs)."""
    pool = max(1, (num_nodes - 1) * cfg.prop_steps)
    return min(cfg.negatives, pool)


def joint_loss_and_grads(params, pviews, batch, proto, cfg, gamma_eff):
    """Forward/backward pass of the weighted joint objective.

    Returns (total, structural, semantic, grads-by-name). The semantic term
    is evaluated only when it carries weight and a prototype state exists;
    otherwise it contributes exactly zero.
    """
    grads = {key: np.zeros_like(value) for key, value in params.trainable().items()}

    views_u = []
    enc_masks = []
    proj_caches = []
    for xv in pviews.views:
        h, mask = encoder_forward(params.encoder_w, xv)
        u, cache = projector_forward(params, h, normalize=cfg.normalize_projection)
        views_u.append(u)
        enc_masks.append(mask)
        proj_caches.append(cache)
    loss_str, grad_views = structural_loss(views_u, batch, cfg.tau1)
    if gamma_eff != 0.0:
        for l, grad_u in enumerate(grad_views):
            grad_h, gw1, gb1, gw2, gb2 = projector_backward(grad_u, params, proj_caches[l])
            grads["encoder_w"] += gamma_eff * encoder_backward(
                grad_h, pviews.views[l], enc_masks[l]
            )
            grads["proj_w1"] += gamma_eff * gw1
            grads["proj_b1"] += gamma_eff * gb1
            grads["proj_w2"] += gamma_eff * gw2
            grads["proj_b2"] += gamma_eff * gb2

    loss_sem = 0.0
    if proto is not None and gamma_eff < 1.0:
        h_mix, mask_mix = encoder_forward(params.encoder_w, pviews.mixed)
        loss_sem, grad_h = semantic_loss(h_mix, proto, cfg.tau2)
        grads["encoder_w"] += (1.0 - gamma_eff) * encoder_backward(
            grad_h, pviews.mixed, mask_mix
        )

    total = gamma_eff * loss_str + (1.0 - gamma_eff) * loss_sem
    return total, loss_str, loss_sem, grads


def run_e_step(params, pviews, transition, cfg):
    """Prototype inference on l2-normalized momentum-encoder representations,
    followed by label-propagation refinement and prototype recomputation."""
    h_m, _ = encoder_forward(params.momentum["encoder_w"], pviews.mixed)
    h_m = l2_normalize_rows(h_m)
    state = infer_prototypes(h_m, PrototypeInferenceConfig(xi=cfg.xi))
    refined = refine_labels(
        state.z,
        state.k,
        transition,
        LabelPropagationConfig(steps=cfg.lp_steps, teleport=cfg.lp_teleport),
    )
    return recompute_prototypes(h_m, refined, state.k)


def pretrain(graph, cfg, checkpoint_path=None, checkpoint_every=0, resume=None):
    """Run the full pretraining schedule on one graph.

    Epochs below ``warmup_epochs`` optimize the structural loss alone with
    label-free negatives and never touch prototype inference. ``resume``
    takes a loaded :class:`~s3cl.checkpoint.Checkpoint` and continues from
    its epoch; with per-epoch random streams keyed on the absolute epoch
    index, a resumed run reproduces an uninterrupted one bitwise.

    Returns (params, prototype state or None, report).
    """
    cfg.validate()
    transition = normalized_adjacency(graph)
    pviews = propagate(transition, graph.features, cfg.prop_steps)
    m_eff = effective_negative_count(cfg, graph.num_nodes)

    if resume is not None:
        params, adam, proto = resume.params, resume.adam, resume.prototypes
        start_epoch = resume.epoch
    else:
        params = init_params(
            graph.feature_dim,
            cfg.encoder_dim,
            cfg.proj_hidden,
            cfg.proj_dim,
            stream_rng(cfg.seed, "init"),
            momentum_projector=cfg.momentum_projector,
        )
        adam = AdamState.create(params.trainable(), cfg.lr)
        proto = None
        start_epoch = 0

    report = TrainReport()
    last_saved = None
    for epoch in range(start_epoch, cfg.epochs):
        started = time.perf_counter()
        warm = epoch < cfg.warmup_epochs
        gamma_eff = 1.0 if warm else cfg.gamma

        if epoch == cfg.warmup_epochs:
            # the EM phase starts from the warm-started weights: momentum
            # copies are (re)initialized here, not carried from random init
            live = params.trainable()
            for key in params.momentum:
                params.momentum[key] = live[key].copy()

        e_step = False
        label_change = 0.0
        if not warm and (epoch - cfg.warmup_epochs) % cfg.e_step_period == 0:
            new_proto = run_e_step(params, pviews, transition, cfg)
            label_change = (
                1.0 if proto is None else float(np.mean(new_proto.z != proto.z))
            )
            proto = new_proto
            e_step = True

        labels = proto.z if (not warm and proto is not None) else None
        rng = stream_rng(cfg.seed, "negatives", epoch)
        batch = sample_negative_batch(
            graph.num_nodes, cfg.prop_steps, m_eff, rng, labels=labels
        )

        total, loss_str, loss_sem, grads = joint_loss_and_grads(
            params, pviews, batch, None if warm else proto, cfg, gamma_eff
        )
        if not math.isfinite(total):
            hint = f" (last checkpoint: {last_saved})" if last_saved else ""
            raise NumericalError(
                f"non-finite loss at epoch {epoch}: structural={loss_str!r}, "
                f"semantic={loss_sem!r}{hint}"
            )
        adam_step(adam, params.trainable(), grads)
        live = params.trainable()
        for key, copy in params.momentum.items():
            ema_update(copy, live[key], cfg.momentum)

        report.records.append(
            EpochRecord(
                epoch=epoch,
                loss_str=loss_str,
                loss_sem=loss_sem,
                loss_total=total,
                gamma_eff=gamma_eff,
                k=proto.k if proto is not None else 0,
                label_change=label_change,
                e_step=e_step,
                fallback_anchors=batch.fallback_anchors,
                wall_time=time.perf_counter() - started,
            )
        )

        if checkpoint_path and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, cfg, epoch + 1, params, adam, proto)
            last_saved = checkpoint_path

        if cfg.early_stop and len(report.records) > cfg.early_stop_window and not warm:
            then = report.records[-1 - cfg.early_stop_window].loss_total
            if abs(total - then) < cfg.early_stop_rel_tol * max(abs(then), 1e-12):
                break

    if checkpoint_path:
        save_checkpoint(
            checkpoint_path,
            cfg,
            report.records[-1].epoch + 1 if report.records else start_epoch,
            params,
            adam,
            proto,
        )
    return params, proto, report


def embed(params, graph, cfg):
    """Final representations: mixed-order features through the live encoder.

    The projection head is not applied; output is entrywise nonnegative.
    """
    transition = normalized_adjacency(graph)
    pviews = propagate(transition, graph.features, cfg.prop_steps)
    h, _ = encoder_forward(params.encoder_w, pviews.mixed)
    return h
