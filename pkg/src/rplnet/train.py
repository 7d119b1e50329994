"""Training loop, scoring, and the multi-trial experiment protocol."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import rpl
from .config import RunConfig, config_digest
from .data import LabeledImages, OpenSetSplit, batches, known_subset, make_split
from .encoder import Encoder, EncoderConfig, encoder_init
from .errors import ConfigError, DataError, NonFiniteError
from .metrics import (
    MetricsReport,
    ScoreTable,
    auroc,
    aupr_known,
    aupr_unknown,
    closed_accuracy,
    f1_at_threshold,
    openness,
)
from .optim import lr_schedule, make_optimizer
from .rng import named_rng

SCORE_CHUNK = 512


@dataclass
class Model:
    mode: str
    encoder: Encoder
    gamma: float = 0.5
    rps: rpl.ReciprocalSet | None = None
    protos: rpl.PrototypeSet | None = None
    head_w: T.Tensor | None = None  # softmax baseline linear head
    head_b: T.Tensor | None = None

    def named_params(self):
        params = self.encoder.named_params()
        if self.rps is not None:
            params += [("rp.points", self.rps.points), ("rp.margins", self.rps.margins)]
        if self.protos is not None:
            params += [("proto.points", self.protos.points)]
        if self.head_w is not None:
            params += [("head.weight", self.head_w), ("head.bias", self.head_b)]
        return params


def build_model(cfg: RunConfig, in_shape, n_known, run_seed) -> Model:
    enc = encoder_init(
        EncoderConfig(kind=cfg.encoder, in_shape=tuple(in_shape), seed=run_seed)
    )
    d = enc.config.resolved_dim()
    model = Model(mode=cfg.mode, encoder=enc, gamma=cfg.gamma)
    if cfg.mode in ("rpl", "rpl++"):
        model.rps = rpl.rp_init(n_known, cfg.m_points, d, run_seed, gamma=cfg.gamma)
    if cfg.mode == "softmax-baseline":
        rng = named_rng("head-init", run_seed)
        model.head_w = T.Tensor(rng.normal(0.0, np.sqrt(1.0 / d), size=(d, n_known)), requires_grad=True)
        model.head_b = T.Tensor(np.zeros(n_known), requires_grad=True)
    # prototypes for rpl++/gcpl are attached after data-dependent init
    return model


def init_prototypes(model: Model, cfg: RunConfig, images, labels, n_known):
    model.protos = rpl.prototype_init(
        model.encoder, images, labels, n_known, cfg.c_protos, cfg.beta
    )


def batch_loss(model: Model, images, labels, cfg: RunConfig):
    """Forward pass producing the mode's total loss and its parts."""
    emb = model.encoder.embed(T.Tensor(images))
    parts = {}
    if model.mode in ("rpl", "rpl++"):
        dist = rpl.rp_distance(emb, model.rps)
        l_cls = rpl.loss_classification(dist, labels, cfg.gamma)
        l_open = rpl.loss_open(emb, labels, model.rps)
        l_proto = rpl.loss_prototype(emb, labels, model.protos) if model.mode == "rpl++" else None
        parts = {"cls": l_cls.item(), "open": l_open.item()}
        if l_proto is not None:
            parts["proto"] = l_proto.item()
        total = rpl.total_loss(l_cls, l_open, l_proto, lam=cfg.lam, beta=cfg.beta, mode=model.mode)
    elif model.mode == "gcpl-baseline":
        dist = rpl.per_point_sqdist(emb, model.protos.points).mean(axis=2)
        l_cls = rpl.loss_classification(-dist, labels, cfg.gamma)
        l_proto = rpl.loss_prototype(emb, labels, model.protos)
        parts = {"cls": l_cls.item(), "proto": l_proto.item()}
        total = rpl.total_loss(l_cls, None, l_proto, beta=cfg.beta, mode=model.mode)
    else:  # softmax-baseline: plain cross-entropy over a linear head
        logits = T.matmul(emb, model.head_w) + model.head_b
        total = rpl.loss_classification(logits, labels, 1.0)
        parts = {"cls": total.item()}
    return total, parts


def train_model(cfg: RunConfig, train_data: LabeledImages, split: OpenSetSplit,
                run_seed, log_lines=None) -> Model:
    """Run the joint update loop over known-class batches."""
    in_shape = train_data.images.shape[1:]
    model = build_model(cfg, in_shape, split.n_known, run_seed)
    if cfg.mode in ("rpl++", "gcpl-baseline"):
        images, labels = known_subset(train_data, split)
        if len(labels) == 0:
            raise DataError("no known-class samples to train on")
        init_prototypes(model, cfg, images, labels, split.n_known)
    opt = make_optimizer(cfg.optimizer, model.named_params(), cfg.lr, momentum=cfg.momentum)
    for epoch in range(cfg.epochs):
        opt.lr = lr_schedule(epoch, cfg.lr)
        t0 = time.perf_counter()
        losses = []
        for step, (images, labels) in enumerate(
            batches(train_data, split, cfg.batch_size, run_seed, epoch)
        ):
            try:
                total, _ = batch_loss(model, images, labels, cfg)
            except NonFiniteError as e:
                raise NonFiniteError(f"epoch {epoch} step {step}: {e}") from e
            opt.zero_grad()
            T.backward(total)
            opt.step()
            losses.append(total.item())
        if log_lines is not None:
            log_lines.append(
                f"epoch={epoch} loss={np.mean(losses):.6f} lr={opt.lr:g} "
                f"time={time.perf_counter() - t0:.3f}"
            )
    return model


def score_samples(model: Model, images):
    """Known-ness scores, predicted classes, and posteriors for a batch of images."""
    scores, preds, posts = [], [], []
    for start in range(0, images.shape[0], SCORE_CHUNK):
        chunk = images[start : start + SCORE_CHUNK]
        emb = model.encoder.embed(T.Tensor(chunk))
        if model.mode in ("rpl", "rpl++"):
            dist = rpl.rp_distance(emb, model.rps).data
            s, p = rpl.detect_score(dist)
            post = rpl.class_posterior(dist, model.gamma)
        elif model.mode == "gcpl-baseline":
            dist = rpl.per_point_sqdist(emb, model.protos.points).mean(axis=2).data
            s, p = rpl.detect_score(-dist)
            post = rpl.class_posterior(-dist, model.gamma)
        else:
            logits = (T.matmul(emb, model.head_w) + model.head_b).data
            post = rpl.class_posterior(logits, 1.0)
            s = post.max(axis=1)
            p = logits.argmax(axis=1)
        scores.append(s)
        preds.append(p)
        posts.append(post)
    return np.concatenate(scores), np.concatenate(preds), np.concatenate(posts)


def embed_all(model: Model, images):
    out = []
    for start in range(0, images.shape[0], SCORE_CHUNK):
        out.append(model.encoder.embed(T.Tensor(images[start : start + SCORE_CHUNK])).data)
    return np.concatenate(out) if out else np.zeros((0, model.encoder.config.resolved_dim()))


def build_score_table(model: Model, known_images, known_labels, unknown_images) -> ScoreTable:
    """Score known test samples (relabeled) and unknown test samples."""
    ks, kp, kpost = score_samples(model, known_images)
    if unknown_images is not None and len(unknown_images):
        us, up, upost = score_samples(model, unknown_images)
    else:
        us = np.zeros(0)
        up = np.zeros(0, dtype=np.int64)
        upost = np.zeros((0, kpost.shape[1]))
    return ScoreTable(
        is_known=np.concatenate([np.ones(len(ks), dtype=bool), np.zeros(len(us), dtype=bool)]),
        score=np.concatenate([ks, us]),
        pred=np.concatenate([kp, up]).astype(np.int64),
        true_label=np.concatenate([np.asarray(known_labels), np.full(len(us), -1)]).astype(np.int64),
        posterior=np.concatenate([kpost, upost]),
    )


def report_from_table(table: ScoreTable, n_known, n_unknown_classes,
                      f1_threshold=0.1, seed=0, digest="", runtime=0.0) -> MetricsReport:
    known = table.is_known
    known_table = ScoreTable(
        is_known=table.is_known[known],
        score=table.score[known],
        pred=table.pred[known],
        true_label=table.true_label[known],
    )
    acc = closed_accuracy(known_table) if known.any() else None
    if known.any() and (~known).any():
        roc = auroc(table.score[known], table.score[~known])
        apk = aupr_known(table)
        apu = aupr_unknown(table)
        f1_rows = [
            (openness(n_known, n_known + n_unknown_classes), f1_at_threshold(table, f1_threshold))
        ]
    else:
        roc = apk = apu = None
        f1_rows = []
    return MetricsReport(
        closed_accuracy=acc,
        auroc=roc,
        aupr_known=apk,
        aupr_unknown=apu,
        f1_rows=f1_rows,
        seed=seed,
        config_digest=digest,
        runtime_sec=runtime,
    )


def run_seed_for(cfg: RunConfig, trial: int) -> int:
    # distinct per-trial model seed without colliding neighboring base seeds
    return cfg.seed * 100003 + trial


def run_trial(cfg: RunConfig, trial, train_data, test_data,
              unknown_test: LabeledImages | None = None, total_classes=10):
    """Split, train, and evaluate one trial.

    ``unknown_test`` switches to the cross-dataset protocol: every sample of
    that set is unknown and the base dataset contributes knowns only.
    """
    t0 = time.perf_counter()
    if unknown_test is not None:
        split = make_split(total_classes, cfg.n_known, cfg.seed, trial, unknown_pool=())
    else:
        split = make_split(total_classes, cfg.n_known, cfg.seed, trial)
    run_seed = run_seed_for(cfg, trial)
    model = train_model(cfg, train_data, split, run_seed)
    known_images, known_labels = known_subset(test_data, split)
    if unknown_test is not None:
        unknown_images = unknown_test.images
        n_unknown_classes = len(np.unique(unknown_test.labels))
    else:
        mask = np.isin(test_data.labels, split.unknown_classes)
        unknown_images = test_data.images[mask]
        n_unknown_classes = len(split.unknown_classes)
    table = build_score_table(model, known_images, known_labels, unknown_images)
    report = report_from_table(
        table, split.n_known, n_unknown_classes,
        seed=cfg.seed, digest=config_digest(cfg), runtime=time.perf_counter() - t0,
    )
    return model, split, table, report


def aggregate_reports(reports):
    """Per-metric mean and sample standard deviation across trials."""
    agg = {}
    for name in ("closed_accuracy", "auroc", "aupr_known", "aupr_unknown"):
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if vals:
            agg[name] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                "per_trial": [float(v) for v in vals],
            }
    return agg


def mean_margin(model: Model) -> float:
    if model.rps is None:
        raise ConfigError("model has no reciprocal-point margins")
    return float(model.rps.margins.data.mean())
