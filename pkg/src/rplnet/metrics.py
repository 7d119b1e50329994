"""Open-set evaluation metrics and CSV exports.

AUROC is computed from rank statistics (Mann-Whitney), which handles ties
exactly; AUPR uses the average-precision step formulation with tied scores
processed as one block.  All functions are pure.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ContractError

UNKNOWN_LABEL = -1


@dataclass
class ScoreTable:
    """Per-sample evaluation rows.

    ``score`` is the known-ness score (higher = more likely known);
    ``true_label`` is -1 for unknown samples; ``posterior`` rows, when
    present, are softmax-normalized over the known classes.
    """

    is_known: np.ndarray  # bool
    score: np.ndarray  # float
    pred: np.ndarray  # int, argmax known class
    true_label: np.ndarray  # int, -1 for unknowns
    posterior: np.ndarray | None = None  # B x N or None

    def __post_init__(self):
        if not np.all(np.isfinite(self.score)):
            raise ContractError("scores must be finite")
        if np.any(self.is_known != (self.true_label != UNKNOWN_LABEL)):
            raise ContractError("is_known flags inconsistent with the -1 sentinel")


@dataclass
class MetricsReport:
    closed_accuracy: float | None
    auroc: float | None
    aupr_known: float | None
    aupr_unknown: float | None
    f1_rows: list = field(default_factory=list)  # (openness, macro_f1)
    seed: int = 0
    config_digest: str = ""
    runtime_sec: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _midranks(x):
    """Average ranks (1-based) with ties sharing their midrank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(known_scores, unknown_scores) -> float:
    """Probability a known sample outranks an unknown one; ties count half."""
    known_scores = np.asarray(known_scores, dtype=np.float64)
    unknown_scores = np.asarray(unknown_scores, dtype=np.float64)
    if known_scores.size == 0 or unknown_scores.size == 0:
        raise ContractError("auroc needs non-empty known and unknown score sets")
    n_k, n_u = known_scores.size, unknown_scores.size
    ranks = _midranks(np.concatenate([known_scores, unknown_scores]))
    u = ranks[:n_k].sum() - n_k * (n_k + 1) / 2.0
    return u / (n_k * n_u)


def aupr(scores, positive_mask) -> float:
    """Average precision with the given mask as the positive class.

    Tied scores are processed as one block: precision at the block's end is
    credited for every positive inside the block.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive_mask = np.asarray(positive_mask, dtype=bool)
    n_pos = int(positive_mask.sum())
    if n_pos == 0 or n_pos == positive_mask.size:
        raise ContractError("aupr needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = positive_mask[order].astype(np.float64)
    # block boundaries: last index of each tied-score run
    last = np.nonzero(np.append(s[:-1] != s[1:], True))[0]
    tp = np.cumsum(y)[last]
    pp = last + 1.0
    block_pos = np.diff(np.concatenate([[0.0], tp]))
    return float(np.sum((tp / pp) * block_pos) / n_pos)


def aupr_known(table: ScoreTable) -> float:
    return aupr(table.score, table.is_known)


def aupr_unknown(table: ScoreTable) -> float:
    # unknowns as positives: low known-ness score means positive, so flip sign
    return aupr(-table.score, ~table.is_known)


def closed_accuracy(table: ScoreTable) -> float:
    """Fraction of known samples whose predicted class is correct."""
    if np.any(~table.is_known):
        raise ContractError("closed_accuracy must be evaluated on known samples only")
    if table.score.size == 0:
        raise ContractError("closed_accuracy on an empty table")
    return float(np.mean(table.pred == table.true_label))


def openness(n_train_classes, n_test_classes) -> float:
    """1 - sqrt(2*train / (train + test))."""
    if n_train_classes < 1 or n_test_classes < n_train_classes:
        raise ContractError(
            f"need n_test >= n_train >= 1, got ({n_train_classes}, {n_test_classes})"
        )
    return 1.0 - np.sqrt(2.0 * n_train_classes / (n_train_classes + n_test_classes))


def f1_at_threshold(table: ScoreTable, threshold) -> float:
    """Macro-F1 over the N known classes plus one rejected-unknown class.

    A sample is predicted unknown when its max posterior falls below the
    threshold, else it gets the argmax class.
    """
    if table.posterior is None:
        raise ContractError("f1_at_threshold needs posterior columns")
    post = np.asarray(table.posterior, dtype=np.float64)
    sums = post.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError("posterior rows must be softmax-normalized")
    n_classes = post.shape[1]
    pred = np.where(post.max(axis=1) < threshold, UNKNOWN_LABEL, post.argmax(axis=1))
    f1s = []
    for cls in list(range(n_classes)) + [UNKNOWN_LABEL]:
        tp = np.sum((pred == cls) & (table.true_label == cls))
        fp = np.sum((pred == cls) & (table.true_label != cls))
        fn = np.sum((pred != cls) & (table.true_label == cls))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


# -- exports ----------------------------------------------------------------

def histogram_rows(scores, bins):
    """(bin_lo, bin_hi, count) rows covering [min, max] inclusively."""
    scores = np.asarray(scores, dtype=np.float64)
    if bins < 1:
        raise ContractError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(scores, bins=bins)
    return [(edges[i], edges[i + 1], int(counts[i])) for i in range(bins)]


def write_histogram_csv(path, scores, bins):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, n in histogram_rows(scores, bins):
            w.writerow([f"{lo:.17g}", f"{hi:.17g}", n])


def write_scores_csv(path, table: ScoreTable):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "is_known", "score", "pred", "true"])
        for i in range(table.score.size):
            w.writerow(
                [i, int(table.is_known[i]), f"{table.score[i]:.17g}",
                 int(table.pred[i]), int(table.true_label[i])]
            )


def write_embeddings_csv(path, emb, labels, rp_points=None, proto_points=None):
    """Sample rows plus tagged reciprocal-point / prototype rows."""
    emb = np.asarray(emb, dtype=np.float64)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "class"] + [f"dim{i}" for i in range(emb.shape[1])])
        for row, lab in zip(emb, labels):
            w.writerow(["sample", int(lab)] + [f"{v:.17g}" for v in row])
        if rp_points is not None:
            for k, cls_pts in enumerate(np.asarray(rp_points)):
                for p in cls_pts:
                    w.writerow(["rp", k] + [f"{v:.17g}" for v in p])
        if proto_points is not None:
            for k, cls_pts in enumerate(np.asarray(proto_points)):
                for p in cls_pts:
                    w.writerow(["proto", k] + [f"{v:.17g}" for v in p])
