"""Losses with gradients, class weighting and evaluation metrics."""

from __future__ import annotations

import numpy as np


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray,
                       weights: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean over pixels/samples of ``w[t] * -log softmax(logits)[t]``, with its gradient.

    Batched logits are ``(n, k)`` or ``(n, k, h, w)``; a single sample is
    ``(k,)`` or ``(k, h, w)``. Labels drop the class axis.
    """
    labels = np.asarray(labels)
    single = logits.ndim in (1, 3)
    if single:
        logits, labels = logits[None], labels[None]
    if labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    k = logits.shape[1]
    rows = np.moveaxis(logits, 1, -1).reshape(-1, k)
    t = labels.reshape(-1).astype(np.int64)
    if t.size and (t.min() < 0 or t.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    shifted = rows - rows.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    idx = np.arange(t.size)
    nll = logz - shifted[idx, t]
    w = np.ones(t.size, dtype=rows.dtype) if weights is None else np.asarray(weights, dtype=rows.dtype)[t]
    count = max(t.size, 1)
    loss = float(np.sum(w * nll) / count)
    g = np.exp(shifted - logz[:, None])
    g[idx, t] -= 1.0
    g *= (w / count)[:, None]
    g = np.moveaxis(g.reshape((logits.shape[0],) + logits.shape[2:] + (k,)), -1, 1)
    return loss, (g[0] if single else g)


def weighted_cross_entropy(logits, labels, weights=None) -> float:
    return cross_entropy_loss(logits, labels, weights)[0]


def l2_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient ``2 (pred - target) / N``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    r = pred - target
    return float(np.mean(r * r)), (2.0 / r.size) * r


def mean_frequency_weights(hist) -> np.ndarray:
    """``mean(freq over present classes) / freq_c``; absent classes get 0."""
    hist = np.asarray(hist, dtype=np.float64)
    if hist.size == 0 or np.any(hist < 0) or hist.sum() <= 0:
        raise ValueError("histogram must be non-negative with at least one present class")
    freq = hist / hist.sum()
    present = freq > 0
    w = np.zeros_like(freq)
    w[present] = freq[present].mean() / freq[present]
    return w


def label_histogram(labels: np.ndarray, k: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64).reshape(-1), minlength=k)[:k]


def metrics(pred: np.ndarray, true: np.ndarray, k: int) -> dict[str, float]:
    """Global accuracy and the mean per-class recall over classes present in ``true``."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    true = np.asarray(true).reshape(-1).astype(np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    if true.size == 0:
        return {"global_accuracy": float("nan"), "class_average_accuracy": float("nan")}
    correct = pred == true
    hits = np.bincount(true[correct], minlength=k)[:k]
    support = np.bincount(true, minlength=k)[:k]
    present = support > 0
    return {
        "global_accuracy": float(correct.mean()),
        "class_average_accuracy": float(np.mean(hits[present] / support[present])),
    }
