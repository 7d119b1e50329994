"""Reciprocal points, prototypes, margins, and the losses built on them.

A reciprocal point set holds, for each of N known classes, M learnable
points representing the *extra-class* region plus one learnable scalar
margin.  Classification probability grows with the distance to a class's
reciprocal points; the open-space term ties that per-point distance to the
class margin; prototypes (optional) pull embeddings toward per-class
centers.  Unknown detection scores a sample by its distance to the
farthest class's reciprocal points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DataError, ShapeError
from .rng import named_rng

RP_INIT_STD = 0.1


@dataclass
class ReciprocalSet:
    points: T.Tensor  # N x M x d, learnable
    margins: T.Tensor  # N, learnable, zero-initialized
    gamma: float  # probability hardness, fixed

    @property
    def n_classes(self):
        return self.points.data.shape[0]

    @property
    def n_points(self):
        return self.points.data.shape[1]

    @property
    def dim(self):
        return self.points.data.shape[2]


@dataclass
class PrototypeSet:
    points: T.Tensor  # N x C x d, learnable
    beta: float  # prototype-loss weight, fixed

    @property
    def n_classes(self):
        return self.points.data.shape[0]


def rp_init(n_classes, n_points, dim, seed, gamma=0.5) -> ReciprocalSet:
    """Points ~ Normal(0, 0.1^2), margins all zero, deterministic in seed."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 known classes, got {n_classes}")
    if n_points < 1 or dim < 1:
        raise ConfigError(f"invalid reciprocal set dims M={n_points}, d={dim}")
    rng = named_rng("rp-init", seed)
    pts = rng.normal(0.0, RP_INIT_STD, size=(n_classes, n_points, dim))
    return ReciprocalSet(
        points=T.Tensor(pts, requires_grad=True),
        margins=T.Tensor(np.zeros(n_classes), requires_grad=True),
        gamma=float(gamma),
    )


def _check_labels(labels, n_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels.astype(np.int64)


def _one_hot(labels, n_classes):
    eye = np.zeros((labels.size, n_classes))
    eye[np.arange(labels.size), labels] = 1.0
    return T.Tensor(eye)


def per_point_sqdist(emb: T.Tensor, points: T.Tensor) -> T.Tensor:
    """Squared euclidean distance of each embedding to every point: B x N x M."""
    if emb.data.shape[-1] != points.data.shape[-1]:
        raise ShapeError(
            f"embedding dim {emb.data.shape[-1]} != point dim {points.data.shape[-1]}"
        )
    b, d = emb.data.shape
    n, m, _ = points.data.shape
    diff = emb.reshape((b, 1, 1, d)) - points.reshape((1, n, m, d))
    return T.square(diff).sum(axis=3)


def rp_distance(emb: T.Tensor, rps: ReciprocalSet) -> T.Tensor:
    """Mean over the M per-point squared distances: B x N."""
    return per_point_sqdist(emb, rps.points).mean(axis=2)


def class_posterior(dist: np.ndarray, gamma: float) -> np.ndarray:
    """Softmax over gamma-scaled distances, computed via stable log-sum-exp."""
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    logits = gamma * np.asarray(dist, dtype=np.float64)
    m = logits.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    return np.exp(logits - lse)


def loss_classification(dist: T.Tensor, labels, gamma: float) -> T.Tensor:
    """Mean negative log-probability of the true class under the distance softmax."""
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    n = dist.data.shape[1]
    labels = _check_labels(labels, n)
    logits = gamma * dist
    true_logit = (logits * _one_hot(labels, n)).sum(axis=1)
    return (T.logsumexp(logits, axis=1) - true_logit).mean()


def loss_open(emb: T.Tensor, labels, rps: ReciprocalSet) -> T.Tensor:
    """Mean over the batch of (1/M) sum_i (||f - p_i^k||^2 - R^k)^2, k the true class."""
    labels = _check_labels(labels, rps.n_classes)
    sq = per_point_sqdist(emb, rps.points)  # B x N x M
    b, n, m = sq.data.shape
    sel = _one_hot(labels, n).reshape((b, n, 1))
    own = (sq * sel).sum(axis=1)  # B x M, distances to the true class's points
    margin = (rps.margins.reshape((1, n)) * _one_hot(labels, n)).sum(axis=1)  # B
    return T.square(own - margin.reshape((b, 1))).mean(axis=1).mean()


def loss_prototype(emb: T.Tensor, labels, protos: PrototypeSet) -> T.Tensor:
    """Mean over the batch of (1/C) sum_i ||f - m_i^k||^2, k the true class."""
    labels = _check_labels(labels, protos.n_classes)
    sq = per_point_sqdist(emb, protos.points)  # B x N x C
    b, n, _ = sq.data.shape
    sel = _one_hot(labels, n).reshape((b, n, 1))
    return (sq * sel).sum(axis=1).mean(axis=1).mean()


def prototype_init(encoder, images, labels, n_classes, n_protos, beta) -> PrototypeSet:
    """Prototypes start at the class-mean embedding, replicated over the C slots."""
    labels = _check_labels(labels, n_classes)
    emb = encoder.embed(T.Tensor(images)).data
    d = emb.shape[1]
    centers = np.zeros((n_classes, d))
    for k in range(n_classes):
        mask = labels == k
        if not mask.any():
            raise DataError(f"class {k} has no training samples for prototype init")
        centers[k] = emb[mask].mean(axis=0)
    pts = np.repeat(centers[:, None, :], n_protos, axis=1)
    return PrototypeSet(points=T.Tensor(pts, requires_grad=True), beta=float(beta))


def total_loss(l_cls, l_open=None, l_proto=None, lam=0.0, beta=0.0, mode="rpl") -> T.Tensor:
    """Combine loss terms per training mode."""
    if mode in ("rpl", "rpl++") and l_open is None:
        raise ContractError(f"mode '{mode}' needs the open-space term")
    if mode in ("rpl++", "gcpl-baseline") and l_proto is None:
        raise ContractError(f"mode '{mode}' needs the prototype term")
    total = l_cls
    if mode in ("rpl", "rpl++"):
        total = total + lam * l_open
    if mode in ("rpl++", "gcpl-baseline"):
        total = total + beta * l_proto
    if mode not in ("rpl", "rpl++", "gcpl-baseline", "softmax-baseline"):
        raise ContractError(f"unknown mode '{mode}'")
    return total


def detect_score(dist: np.ndarray):
    """Known-ness score and predicted class per sample.

    Score is the distance to the farthest class's reciprocal points (higher
    means more likely known); prediction is the argmax, lowest index on ties.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[1] < 2:
        raise ContractError(f"distance table must be B x N with N >= 2, got {dist.shape}")
    return dist.max(axis=1), dist.argmax(axis=1)
