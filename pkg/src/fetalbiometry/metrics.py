"""Segmentation overlap scores, the two training losses, classification report.

Conventions pinned here and in the tests: two empty masks agree perfectly
(IoU = Dice = 1.0), and precision/recall with a zero denominator are 0.
Both choices keep background-only frames and absent classes finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import BadInput, BadSize, InfiniteLoss


def _as_region(mask: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise BadSize(f"{name} must be 2D, got shape {m.shape}")
    return m != 0


def _check_same_size(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise BadSize(f"size mismatch: {a.shape} vs {b.shape}")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    ra, rb = _as_region(a, "a"), _as_region(b, "b")
    _check_same_size(ra, rb)
    union = int(np.count_nonzero(ra | rb))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(ra & rb)) / union


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice coefficient 2|A∩B|/(|A|+|B|); 1.0 when both masks are empty."""
    ra, rb = _as_region(a, "a"), _as_region(b, "b")
    _check_same_size(ra, rb)
    total = int(np.count_nonzero(ra)) + int(np.count_nonzero(rb))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(ra & rb)) / total


def dice_loss(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-6) -> float:
    """Soft dice loss 1 - (2*sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps)."""
    if eps <= 0:
        raise BadInput(f"eps must be positive, got {eps}")
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.ndim != 2 or g.ndim != 2:
        raise BadSize("pred and gt must be 2D")
    _check_same_size(p, g)
    num = 2.0 * float((p * g).sum()) + eps
    den = float((p * p).sum()) + float((g * g).sum()) + eps
    return 1.0 - num / den


def ce_loss(pred_probs: Sequence[float], true_class: int) -> float:
    """Cross-entropy -log(p_true) for a one-hot target."""
    p = np.asarray(pred_probs, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise BadInput("pred_probs must be a non-empty vector")
    if (p < 0).any() or (p > 1).any() or abs(float(p.sum()) - 1.0) > 1e-6:
        raise BadInput(f"pred_probs must be a probability simplex, got {p}")
    if not 0 <= true_class < len(p):
        raise BadInput(f"true_class {true_class} out of range for {len(p)} classes")
    pt = float(p[true_class])
    if pt == 0.0:
        raise InfiniteLoss("true class has zero predicted probability")
    return -math.log(pt)


@dataclass(frozen=True)
class ConfusionTally:
    """One-vs-rest counts for one class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        den = self.tp + self.fp
        return self.tp / den if den else 0.0

    @property
    def recall(self) -> float:
        den = self.tp + self.fn
        return self.tp / den if den else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if (p + r) else 0.0


def tally_class(preds: Sequence[Hashable], labels: Sequence[Hashable], cls: Hashable) -> ConfusionTally:
    tp = fp = tn = fn = 0
    for p, t in zip(preds, labels):
        if t == cls:
            if p == cls:
                tp += 1
            else:
                fn += 1
        else:
            if p == cls:
                fp += 1
            else:
                tn += 1
    return ConfusionTally(tp=tp, fp=fp, tn=tn, fn=fn)


def classification_report(
    preds: Sequence[Hashable], labels: Sequence[Hashable]
) -> Mapping[str, object]:
    """Per-class one-vs-rest metrics plus unweighted macro averages.

    Classes are the sorted union of everything seen in preds and labels, so
    a class predicted but never true still contributes (precision 0) to the
    macro means.
    """
    if len(preds) != len(labels):
        raise BadSize(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    if len(preds) == 0:
        raise BadInput("empty sequences")
    classes = sorted(set(preds) | set(labels), key=str)
    per_class = {}
    for cls in classes:
        t = tally_class(preds, labels, cls)
        per_class[cls] = {
            "tp": t.tp, "fp": t.fp, "tn": t.tn, "fn": t.fn,
            "accuracy": t.accuracy,
            "precision": t.precision,
            "recall": t.recall,
            "f1": t.f1,
        }
    macro = {
        key: sum(per_class[c][key] for c in classes) / len(classes)
        for key in ("accuracy", "precision", "recall", "f1")
    }
    return {"classes": classes, "per_class": per_class, "macro": macro}
