"""Evaluation metrics and tabular exports.

AUC, Bernoulli log-likelihood, and logit-scale correlation are how fits are
judged against ground truth; ROC curves and per-class score histograms are
emitted as delimited text for external plotting.
"""

from __future__ import annotations

import csv
import math

import numpy as np
from scipy.stats import rankdata

PROB_CLAMP = 1e-12


class MetricError(ValueError):
    pass


def _as_binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype == bool:
        return y.astype(np.int8)
    y = y.astype(float)
    out = np.where(y > 0, 1, 0).astype(np.int8)
    if not np.all(np.isin(y, (0.0, 1.0, -1.0))):
        raise MetricError("labels must be 0/1 or +/-1")
    return out


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted half, via one rank pass."""
    s = np.asarray(scores, dtype=float)
    y = _as_binary_labels(labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auc_roc needs both classes present")
    ranks = rankdata(s)  # average ranks on ties
    rank_sum_pos = float(ranks[y == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def loglik(probabilities, labels) -> float:
    """Sum of Bernoulli log-likelihoods, probabilities clamped at 1e-12."""
    p = np.clip(np.asarray(probabilities, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = _as_binary_labels(labels)
    return float(np.sum(np.where(y == 1, np.log(p), np.log1p(-p))))


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def logit_corr(true_probs, est_probs, mask=None) -> float:
    """Pearson correlation of the two probability sets on the logit scale.

    ``mask`` restricts to a dyad subset (e.g. never-observed dyads).  Inputs
    must lie strictly inside (0, 1).
    """
    t = np.asarray(true_probs, dtype=float).ravel()
    e = np.asarray(est_probs, dtype=float).ravel()
    if t.shape != e.shape:
        raise MetricError("true/est shapes differ")
    if mask is not None:
        m = np.asarray(mask, dtype=bool).ravel()
        t, e = t[m], e[m]
    if len(t) < 2:
        raise MetricError("need at least two dyads")
    if np.any(t <= 0) or np.any(t >= 1) or np.any(e <= 0) or np.any(e >= 1):
        raise MetricError("probabilities must be strictly inside (0,1)")
    lt, le = _logit(t), _logit(e)
    if lt.std() == 0.0 or le.std() == 0.0:
        raise MetricError("zero variance on the logit scale")
    return float(np.corrcoef(lt, le)[0, 1])


def never_observed_mask(edges_by_period, n_nodes: int) -> np.ndarray:
    """(n, n) bool mask of off-diagonal dyads that never fired in any period."""
    seen = np.zeros((n_nodes, n_nodes), dtype=bool)
    for e in edges_by_period:
        if len(e):
            seen[e[:, 0], e[:, 1]] = True
    out = ~seen
    np.fill_diagonal(out, False)
    return out


# ---------------------------------------------------------------------------
# curve/table exports


def roc_curve(scores, labels):
    """(fpr, tpr, thresholds) sweeping the decision threshold downward."""
    s = np.asarray(scores, dtype=float)
    y = _as_binary_labels(labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc_curve needs both classes present")
    order = np.argsort(-s, kind="stable")
    ys = y[order]
    ss = s[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(1 - ys)
    # collapse runs of equal scores to their last index
    keep = np.r_[ss[1:] != ss[:-1], True]
    tpr = np.r_[0.0, tp[keep] / n_pos]
    fpr = np.r_[0.0, fp[keep] / n_neg]
    thresholds = np.r_[math.inf, ss[keep]]
    return fpr, tpr, thresholds


def roc_export(path, scores, labels) -> None:
    fpr, tpr, thr = roc_curve(scores, labels)  # raises before any file I/O
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, h in zip(fpr, tpr, thr):
            w.writerow([f"{f:.10g}", f"{t:.10g}", f"{h:.10g}"])


def score_histograms(scores, labels, bins: int = 50):
    """Per-class histogram over shared bin edges; returns (edges, h_neg, h_pos)."""
    s = np.asarray(scores, dtype=float)
    y = _as_binary_labels(labels)
    if y.sum() == 0 or y.sum() == len(y):
        raise MetricError("score_histograms needs both classes present")
    edges = np.histogram_bin_edges(s, bins=bins)
    h_neg, _ = np.histogram(s[y == 0], bins=edges)
    h_pos, _ = np.histogram(s[y == 1], bins=edges)
    return edges, h_neg, h_pos


def score_histograms_export(path, scores, labels, bins: int = 50) -> None:
    edges, h_neg, h_pos = score_histograms(scores, labels, bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count_normal", "count_anomalous"])
        for k in range(len(h_neg)):
            w.writerow([f"{edges[k]:.10g}", f"{edges[k + 1]:.10g}",
                        int(h_neg[k]), int(h_pos[k])])
