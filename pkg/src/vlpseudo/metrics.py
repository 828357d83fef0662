"""Per-class average precision, mAP, score histograms, aggregator ablation.

AP is precision averaged at the positive ranks after a stable descending
sort (ties keep input order). Classes with no positives in the evaluated
split are excluded from mAP and listed in the report. Ground-truth
annotations feed this module only; the training path never sees them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregation import AggregationConfig, pseudo_label_scores
from .alignment import SimilarityVector, global_similarity, local_similarities
from .encoders import EmbeddingRecord, TextEmbeddingMatrix
from .labelstore import PseudoLabelSet


@dataclass
class GroundTruthSet:
    """Binary label vectors keyed by image id; evaluation-only data."""

    class_names: list[str]
    labels: dict[str, np.ndarray]

    def __post_init__(self):
        c = len(self.class_names)
        for image_id, vec in self.labels.items():
            vec = np.asarray(vec)
            if vec.shape != (c,):
                raise ValueError(f"{image_id}: label vector shape {vec.shape}, expected ({c},)")
            if not np.all((vec == 0) | (vec == 1)):
                raise ValueError(f"{image_id}: labels must be binary")
            self.labels[image_id] = vec.astype(np.int8)

    def matrix(self, image_ids: list[str]) -> np.ndarray:
        missing = [i for i in image_ids if i not in self.labels]
        if missing:
            raise ValueError(f"no ground truth for {len(missing)} images, e.g. {missing[:3]}")
        return np.stack([self.labels[i] for i in image_ids])


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean precision at each positive's rank, scores sorted descending."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and same length")
    npos = int((labels == 1).sum())
    if npos == 0:
        raise ValueError("average precision undefined without positive labels")
    order = np.argsort(-scores, kind="stable")  # ties keep original order
    hits = (labels[order] == 1).astype(np.float64)
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    precision_at_pos = (cum_hits / ranks)[hits == 1]
    return float(precision_at_pos.mean())


def mean_ap(per_class_aps) -> float:
    aps = list(per_class_aps)
    if not aps:
        raise ValueError("no per-class APs to average")
    return float(np.mean(aps))


def score_histogram(scores: np.ndarray, bins: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Counts over uniform bins on [0, 1]; counts sum to the sample count."""
    if bins < 1:
        raise ValueError("need at least one bin")
    scores = np.asarray(scores, dtype=np.float64)
    counts, edges = np.histogram(scores, bins=bins, range=(0.0, 1.0))
    return edges, counts


@dataclass
class EvaluationReport:
    strategy: str
    class_names: list[str]
    per_class_ap: dict[str, float]
    excluded_classes: list[str]
    map_score: float
    histograms: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def render_table(self) -> str:
        width = max([len("class")] + [len(n) for n in self.class_names])
        lines = [f"strategy: {self.strategy}", f"{'class'.ljust(width)}  AP"]
        for name in self.class_names:
            if name in self.per_class_ap:
                lines.append(f"{name.ljust(width)}  {self.per_class_ap[name]:.4f}")
            else:
                lines.append(f"{name.ljust(width)}  excluded (no positives)")
        lines.append(f"{'mAP'.ljust(width)}  {self.map_score:.4f}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "map": self.map_score,
            "per_class_ap": {k: self.per_class_ap[k] for k in sorted(self.per_class_ap)},
            "excluded_classes": self.excluded_classes,
            "histograms": {
                name: {"bin_edges": edges.tolist(), "counts": counts.tolist()}
                for name, (edges, counts) in self.histograms.items()
            },
        }


def _score_matrix(scored, image_ids: list[str] | None = None) -> tuple[list[str], np.ndarray]:
    if isinstance(scored, PseudoLabelSet):
        return list(scored.image_ids), scored.probabilities
    ids = [image_id for image_id, _ in scored]
    matrix = np.stack([vec.scores for _, vec in scored])
    return ids, matrix


def evaluate_scores(
    image_ids: list[str],
    scores: np.ndarray,
    truth: GroundTruthSet,
    strategy: str = "",
    histogram_bins: int = 10,
) -> EvaluationReport:
    """AP/mAP of a score matrix against ground truth, plus per-class histograms."""
    if scores.shape != (len(image_ids), len(truth.class_names)):
        raise ValueError(
            f"score matrix {scores.shape} does not match "
            f"{len(image_ids)} images x {len(truth.class_names)} classes"
        )
    labels = truth.matrix(image_ids)
    per_class_ap: dict[str, float] = {}
    excluded: list[str] = []
    histograms = {}
    for c, name in enumerate(truth.class_names):
        histograms[name] = score_histogram(scores[:, c], bins=histogram_bins)
        if labels[:, c].sum() == 0:
            excluded.append(name)
            continue
        per_class_ap[name] = average_precision(scores[:, c], labels[:, c])
    if not per_class_ap:
        raise ValueError("every class lacked positives; nothing to evaluate")
    return EvaluationReport(
        strategy=strategy,
        class_names=list(truth.class_names),
        per_class_ap=per_class_ap,
        excluded_classes=excluded,
        map_score=mean_ap(per_class_ap.values()),
        histograms=histograms,
    )


def pseudo_label_quality(scored, truth: GroundTruthSet, strategy: str = "") -> EvaluationReport:
    """Treat pseudo-label scores as rankings and measure AP/mAP against truth.

    ``scored`` is either a PseudoLabelSet or a list of (image_id, final
    SimilarityVector) pairs.
    """
    ids, matrix = _score_matrix(scored)
    return evaluate_scores(ids, matrix, truth, strategy=strategy)


def strategy_scores(
    records: list[EmbeddingRecord],
    text: TextEmbeddingMatrix,
    temperature: float,
    strategy: str,
    zeta: float,
) -> list[tuple[str, SimilarityVector]]:
    """Per-image pseudo-label score vectors under one aggregation strategy."""
    config = AggregationConfig(zeta=zeta, strategy=strategy)
    out = []
    for record in records:
        g = global_similarity(record, text, temperature)
        locals_ = local_similarities(record, text, temperature)
        out.append((record.image_id, pseudo_label_scores(g, locals_, config)))
    return out


def ablation_report(
    records: list[EmbeddingRecord],
    text: TextEmbeddingMatrix,
    temperature: float,
    truth: GroundTruthSet,
    strategies: list[str] = ("global", "avg", "max", "minmax"),
    zeta: float = 0.5,
) -> list[EvaluationReport]:
    """Pseudo-label quality per aggregation strategy, one report per row."""
    reports = []
    for strategy in strategies:
        scored = strategy_scores(records, text, temperature, strategy, zeta)
        reports.append(pseudo_label_quality(scored, truth, strategy=strategy))
    return reports


def render_ablation_table(reports: list[EvaluationReport]) -> str:
    label = {"global": "global-only", "avg": "avg", "max": "max", "minmax": "minmax+final"}
    names = [label.get(r.strategy, r.strategy) for r in reports]
    width = max(len("aggregator"), max(len(n) for n in names))
    lines = [f"{'aggregator'.ljust(width)}  pseudo-label mAP"]
    for name, report in zip(names, reports):
        lines.append(f"{name.ljust(width)}  {report.map_score:.4f}")
    return "\n".join(lines) + "\n"


def write_reports_json(reports: list[EvaluationReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"reports": [r.to_json_dict() for r in reports]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
