"""Fusing local similarity vectors with the global one into soft pseudo labels.

The min-max rule works per class: take the best snippet score alpha_i if it
clears the threshold zeta (some snippet is confident the class is there),
otherwise fall back to the worst snippet score beta_i. The fused local
vector is then averaged with the global vector to give the final soft
pseudo label. The avg/max baselines instead pool the global vector together
with all local vectors elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import SimilarityVector

STRATEGIES = ("minmax", "avg", "max", "global")
DEFAULT_ZETA = 0.5


@dataclass(frozen=True)
class AggregationConfig:
    zeta: float = DEFAULT_ZETA
    strategy: str = "minmax"

    def __post_init__(self):
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in [0,1], got {self.zeta}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")


def _stack_locals(local_vectors: list[SimilarityVector]) -> np.ndarray:
    if not local_vectors:
        raise ValueError("no local similarity vectors to aggregate")
    c = local_vectors[0].num_classes
    for v in local_vectors:
        if v.num_classes != c:
            raise ValueError("local similarity vectors disagree on class count")
    return np.stack([v.scores for v in local_vectors])


def aggregate_minmax(local_vectors: list[SimilarityVector], zeta: float) -> SimilarityVector:
    """Per class: alpha if alpha >= zeta else beta, over the N snippets."""
    stacked = _stack_locals(local_vectors)
    alpha = stacked.max(axis=0)
    beta = stacked.min(axis=0)
    gamma = alpha >= zeta
    scores = np.where(gamma, alpha, beta)
    return SimilarityVector(scores=scores, kind="aggregate",
                            source_id=local_vectors[0].source_id)


def aggregate_avg(local_vectors: list[SimilarityVector],
                  global_vector: SimilarityVector) -> SimilarityVector:
    """Elementwise mean over the N local vectors and the global vector."""
    pool = np.vstack([_stack_locals(local_vectors), global_vector.scores])
    return SimilarityVector(scores=pool.mean(axis=0), kind="aggregate",
                            source_id=global_vector.source_id)


def aggregate_max(local_vectors: list[SimilarityVector],
                  global_vector: SimilarityVector) -> SimilarityVector:
    """Elementwise max over the N local vectors and the global vector."""
    pool = np.vstack([_stack_locals(local_vectors), global_vector.scores])
    return SimilarityVector(scores=pool.max(axis=0), kind="aggregate",
                            source_id=global_vector.source_id)


def final_pseudo_labels(global_vector: SimilarityVector,
                        aggregate: SimilarityVector) -> SimilarityVector:
    """Elementwise average of the global and aggregated-local vectors."""
    if global_vector.kind != "global":
        raise ValueError(f"expected a global vector, got kind {global_vector.kind!r}")
    if aggregate.kind != "aggregate":
        raise ValueError(f"expected an aggregate vector, got kind {aggregate.kind!r}")
    if global_vector.num_classes != aggregate.num_classes:
        raise ValueError("global/aggregate class count mismatch")
    scores = 0.5 * (global_vector.scores + aggregate.scores)
    return SimilarityVector(scores=scores, kind="final",
                            source_id=global_vector.source_id)


def pseudo_label_scores(global_vector: SimilarityVector,
                        local_vectors: list[SimilarityVector],
                        config: AggregationConfig) -> SimilarityVector:
    """Soft pseudo-label vector for one image under the configured strategy.

    ``minmax`` pools snippets only and folds the global vector in through the
    final averaging step; ``avg``/``max`` pool the global vector directly;
    ``global`` is the whole-image baseline.
    """
    if config.strategy == "minmax":
        return final_pseudo_labels(global_vector,
                                   aggregate_minmax(local_vectors, config.zeta))
    if config.strategy == "avg":
        agg = aggregate_avg(local_vectors, global_vector)
    elif config.strategy == "max":
        agg = aggregate_max(local_vectors, global_vector)
    else:  # global-only baseline
        agg = None
    scores = global_vector.scores if agg is None else agg.scores
    return SimilarityVector(scores=scores.copy(), kind="final",
                            source_id=global_vector.source_id)
