"""Masked multi-task cross-entropy and segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IGNORE = 255


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the class axis (axis 0) of (K, H, W) logits."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def ce_parts(logits: np.ndarray, labels: np.ndarray):
    """Unnormalized cross-entropy pieces for one task on one example.

    Returns (nll_sum, n_valid, grad_sum) where grad_sum is softmax minus
    one-hot at valid pixels and zero at IGNORE; callers divide by the
    valid-pixel count pooled over their batch.
    """
    k = logits.shape[0]
    valid = labels != IGNORE
    n_valid = int(valid.sum())
    grad = softmax(logits)
    if n_valid == 0:
        return 0.0, 0, np.zeros_like(logits)
    ys, xs = np.nonzero(valid)
    cls = labels[ys, xs].astype(np.int64)
    p_true = grad[cls, ys, xs]
    nll = -float(np.log(p_true.astype(np.float64)).sum())
    grad[cls, ys, xs] -= 1
    grad[:, ~valid] = 0
    return nll, n_valid, grad


def loss_and_grad(logits_by_task: dict, label_planes: np.ndarray, tasks):
    """Single-example loss (task losses summed) and per-logit gradients."""
    total = 0.0
    grads = {}
    for i, (name, _) in enumerate(tasks):
        nll, n, gsum = ce_parts(logits_by_task[name], label_planes[i])
        if n:
            total += nll / n
            grads[name] = gsum / n
        else:
            grads[name] = gsum
    return total, grads


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricsRecord:
    epoch: int
    split: str                         # "train" | "val"
    tasks: dict = field(default_factory=dict)
    total_loss: float = 0.0

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "split": self.split,
                "total_loss": self.total_loss, "tasks": self.tasks}

    @classmethod
    def from_json(cls, d: dict) -> "MetricsRecord":
        return cls(int(d["epoch"]), d["split"], dict(d["tasks"]),
                   float(d["total_loss"]))


def _safe_div(num: float, den: float, empty: float) -> float:
    return num / den if den else empty


def _metrics_from_confusion(tp, fp, fn, true_counts, correct, n_valid, k,
                            nll_sum) -> dict:
    iou = [_safe_div(tp[c], tp[c] + fp[c] + fn[c], 1.0) for c in range(k)]
    fiou = (sum((true_counts[c] / n_valid) * iou[c] for c in range(k))
            if n_valid else 1.0)
    if k == 2:
        classes = [1]
    else:
        classes = list(range(1, k))
    precs = [_safe_div(tp[c], tp[c] + fp[c], 1.0) for c in classes]
    recs = [_safe_div(tp[c], tp[c] + fn[c], 1.0) for c in classes]
    f1s = [_safe_div(2 * p * r, p + r, 0.0) for p, r in zip(precs, recs)]
    return {
        "accuracy": _safe_div(correct, n_valid, 1.0),
        "precision": sum(precs) / len(precs),
        "recall": sum(recs) / len(recs),
        "f1": sum(f1s) / len(f1s),
        "iou": iou,
        "fiou": fiou,
        "mean_loss": _safe_div(nll_sum, n_valid, 0.0),
        "n_valid": n_valid,
    }


def evaluate_predictions(pred_and_labels, tasks, *, epoch: int = 0,
                         split: str = "val") -> MetricsRecord:
    """Metrics from (per-task logits, label planes) pairs.

    Predicted class is the argmax over logits, ties resolving to the lowest
    index; pixels labeled IGNORE never enter the counts. Confusion counts
    and loss pool over the whole example list.
    """
    record = MetricsRecord(epoch=epoch, split=split)
    for i, (name, k) in enumerate(tasks):
        tp = np.zeros(k, dtype=np.int64)
        fp = np.zeros(k, dtype=np.int64)
        fn = np.zeros(k, dtype=np.int64)
        true_counts = np.zeros(k, dtype=np.int64)
        correct = 0
        n_valid = 0
        nll_sum = 0.0
        for logits_by_task, label_planes in pred_and_labels:
            logits = logits_by_task[name]
            labels = label_planes[i]
            valid = labels != IGNORE
            if not valid.any():
                continue
            pred = logits.argmax(axis=0)
            t = labels[valid].astype(np.int64)
            p = pred[valid]
            n_valid += t.size
            correct += int((t == p).sum())
            for c in range(k):
                tp[c] += int(((t == c) & (p == c)).sum())
                fp[c] += int(((t != c) & (p == c)).sum())
                fn[c] += int(((t == c) & (p != c)).sum())
                true_counts[c] += int((t == c).sum())
            nll, _, _ = ce_parts(logits, labels)
            nll_sum += nll
        record.tasks[name] = _metrics_from_confusion(
            tp, fp, fn, true_counts, correct, n_valid, k, nll_sum)
        record.total_loss += record.tasks[name]["mean_loss"]
    return record


def evaluate(spec, params: dict, examples, *, epoch: int = 0,
             split: str = "val") -> MetricsRecord:
    """Run the model over examples and score against their labels."""
    from .model import forward
    pairs = [(forward(spec, params, ex.image), ex.labels.planes) for ex in examples]
    return evaluate_predictions(pairs, spec.tasks, epoch=epoch, split=split)
