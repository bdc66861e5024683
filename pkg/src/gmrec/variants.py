"""Ablation variants and the analytic factorization-machine reduction.

The FM identity used as a correctness oracle: when every interaction is an
elementwise product over the union of both node sets, the fused node is
u_i + half the summed products, and the match is the sum of both graph
representations' elements, the score equals

    sum_i sum(v_i) * val_i  +  sum_{i<j} <v_i, v_j> * val_i * val_j

over all attributes of the sample (no bias term), because
sum(u_i * u_j) = <v_i, v_j> * val_i * val_j.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .autodiff import Parameter
from .data import DataSample, EmbeddingTable
from .model import (
    CANONICAL,
    FM_REDUCTION,
    ForwardResult,
    ModelParams,
    VariantConfig,
    format_variant,
    parse_variant,
    predict,
)

__all__ = [
    "VariantConfig",
    "CANONICAL",
    "FM_REDUCTION",
    "parse_variant",
    "format_variant",
    "apply_variant",
    "fm_predict",
    "fm_reduction_predict",
]


def apply_variant(config: VariantConfig, mp: ModelParams, sample: DataSample) -> ForwardResult:
    """Forward one sample under an ablation configuration.

    The canonical configuration reproduces predict() exactly: it is the
    same engine.
    """
    return predict(sample, mp, config)


def fm_predict(
    sample: DataSample,
    table: EmbeddingTable,
    weights: Mapping[int, float] | None = None,
) -> float:
    """Factorization-machine score over the union of both attribute sets.

    The per-attribute linear weight is the sum of the attribute's embedding
    entries unless an explicit mapping from attribute id to weight is given;
    the bias term is omitted.
    """
    pairs = sample.user_chars + sample.item_chars
    vectors = [table.vector(p.att) for p in pairs]
    total = 0.0
    for p, v in zip(pairs, vectors):
        w = weights[p.att.id] if weights is not None else float(v.sum())
        total += w * p.val
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            total += float(np.dot(vectors[i], vectors[j])) * pairs[i].val * pairs[j].val
    return total


def fm_reduction_predict(sample: DataSample, table: EmbeddingTable) -> float:
    """Score of the reduced pipeline; must equal fm_predict up to rounding.

    Runs the real engine in its fm mode (union-set elementwise products,
    linear fusing, element-sum match) rather than re-deriving the closed
    form, so the identity actually exercises the model path.
    """
    mp = ModelParams(table=table, emb=Parameter(table.matrix, "embeddings"))
    return predict(sample, mp, FM_REDUCTION).score
