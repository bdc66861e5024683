"""Ranking and probability metrics, plus attribute-matrix export.

AUC is computed globally over all scored samples (ties get half credit);
NDCG@k is computed per user over that user's items, with ties broken by
stable input order, then averaged over users that have at least one
relevant item.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .autodiff import stable_sigmoid
from .data import EmbeddingTable, sample_user_key
from .errors import UndefinedMetricError
from .model import CANONICAL, ModelParams, VariantConfig, score_samples

PROB_EPS = 1e-12


@dataclass(frozen=True)
class ScoredSample:
    user: Hashable
    score: float
    label: float


def _arrays(scored: Sequence[ScoredSample]):
    scores = np.array([s.score for s in scored], dtype=np.float64)
    labels = np.array([s.label for s in scored], dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise UndefinedMetricError("scores must be finite")
    return scores, labels


def auc(scored: Sequence[ScoredSample]) -> float:
    """Probability that a random (positive, negative) pair is ordered correctly.

    Rank-based: with average ranks for ties, the count of correctly ordered
    pairs (ties half) equals rank_sum(positives) - n_pos*(n_pos+1)/2, which
    this computes exactly in floats (all terms are multiples of 1/2).
    """
    scores, labels = _arrays(scored)
    n_pos = int((labels == 1.0).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks_sorted = np.empty(scores.size, dtype=np.float64)
    start = 0
    while start < scores.size:
        stop = start
        while stop + 1 < scores.size and sorted_scores[stop + 1] == sorted_scores[start]:
            stop += 1
        # average of ranks start+1 .. stop+1, an exact multiple of 1/2
        ranks_sorted[start:stop + 1] = (start + stop + 2) / 2.0
        start = stop + 1
    ranks = np.empty_like(ranks_sorted)
    ranks[order] = ranks_sorted
    rank_sum = float(ranks[labels == 1.0].sum())
    numerator = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(numerator / (n_pos * n_neg))


def logloss(scored: Sequence[ScoredSample]) -> float:
    """Mean binary cross entropy, scores interpreted as probabilities."""
    scores, labels = _arrays(scored)
    p = np.clip(scores, PROB_EPS, 1.0 - PROB_EPS)
    losses = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    return float(losses.mean())


def ndcg_at_k(scored: Sequence[ScoredSample], k: int) -> float:
    """Mean per-user NDCG at cutoff k with binary relevance.

    Users without a relevant item are excluded; if no user qualifies the
    metric is undefined.
    """
    if k < 1:
        raise UndefinedMetricError(f"k must be >= 1, got {k}")
    by_user: dict[Hashable, list[ScoredSample]] = {}
    for s in scored:
        by_user.setdefault(s.user, []).append(s)
    total, eligible = 0.0, 0
    for items in by_user.values():
        labels = np.array([s.label for s in items], dtype=np.float64)
        n_pos = int((labels == 1.0).sum())
        if n_pos == 0:
            continue
        scores = np.array([s.score for s in items], dtype=np.float64)
        order = np.argsort(-scores, kind="stable")
        cutoff = min(k, len(items))
        dcg = sum(float(labels[order[r]]) / math.log2(r + 2) for r in range(cutoff))
        ideal = sum(1.0 / math.log2(r + 2) for r in range(min(k, n_pos)))
        total += dcg / ideal
        eligible += 1
    if eligible == 0:
        raise UndefinedMetricError("NDCG needs at least one user with a relevant item")
    return float(total / eligible)


def probability_from_score(score: np.ndarray) -> np.ndarray:
    """Sigmoid link applied to raw matching scores."""
    return stable_sigmoid(np.asarray(score, dtype=np.float64))


def score_dataset(samples, mp: ModelParams, variant: VariantConfig = CANONICAL) -> list[ScoredSample]:
    """Score samples with the model and wrap them with their user keys.

    The stored score is the sigmoid probability; AUC and NDCG are invariant
    under the monotone link and logloss needs the probability anyway.
    """
    raw = score_samples(samples, mp, variant)
    probs = probability_from_score(raw)
    return [
        ScoredSample(user=sample_user_key(s), score=float(p), label=float(s.label))
        for s, p in zip(samples, probs)
    ]


def evaluate_model(samples, mp: ModelParams, variant: VariantConfig = CANONICAL, ks=(5, 10)) -> dict:
    scored = score_dataset(samples, mp, variant)
    report = {"auc": auc(scored), "logloss": logloss(scored)}
    for k in ks:
        report[f"ndcg@{k}"] = ndcg_at_k(scored, k)
    return report


def format_metric_report(report: dict) -> str:
    return " ".join(f"{key}={value!r}" for key, value in report.items())


def per_user_report(scored: Sequence[ScoredSample], ks=(5, 10)) -> str:
    """One line per user: sample count, positives, and per-user NDCG values."""
    by_user: dict[Hashable, list[ScoredSample]] = {}
    for s in scored:
        by_user.setdefault(s.user, []).append(s)
    lines = []
    for user, items in by_user.items():
        n_pos = sum(1 for s in items if s.label == 1.0)
        parts = [f"user={user!r}", f"n={len(items)}", f"positives={n_pos}"]
        if n_pos:
            for k in ks:
                parts.append(f"ndcg@{k}={ndcg_at_k(items, k)!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Attribute similarity and matching grids
# --------------------------------------------------------------------------


def export_matrices(table: EmbeddingTable, group_a, group_b):
    """Cosine similarities within group A and matching strengths A x B.

    similarity(a, a') is the cosine of the two embedding vectors (0 if
    either is the zero vector); matching(a, b) is the summed elementwise
    product, the same quantity node matching aggregates.
    """
    if not group_a or not group_b:
        raise UndefinedMetricError("attribute groups must be nonempty")
    va = np.stack([table.vector(a) for a in group_a])
    vb = np.stack([table.vector(b) for b in group_b])
    norms = np.linalg.norm(va, axis=1)
    sim = va @ va.T
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = sim / norms[:, None] / norms[None, :]
    sim[~np.isfinite(sim)] = 0.0
    match = va @ vb.T
    return sim, match


def format_matrix(matrix: np.ndarray, row_labels, col_labels, title: str) -> str:
    width = max([len(str(c)) for c in col_labels] + [8])
    row_width = max(len(str(r)) for r in row_labels)
    lines = [title]
    header = " " * row_width + " " + " ".join(f"{str(c):>{width}}" for c in col_labels)
    lines.append(header)
    for label, row in zip(row_labels, matrix):
        cells = " ".join(f"{v:>{width}.4f}" for v in row)
        lines.append(f"{str(label):<{row_width}} {cells}")
    return "\n".join(lines) + "\n"
