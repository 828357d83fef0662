"""Per-image soft pseudo labels and their latent (pre-sigmoid) parameters.

Latents are the source of truth: probabilities are always derived through
the sigmoid and never stored independently, which keeps every probability
strictly inside (0, 1) no matter how many refinement updates run.
Initialization clamps scores into [eps, 1-eps] before the logit so latents
stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import SimilarityVector
from .envelope import EnvelopeError, read_envelope, take, write_envelope

DEFAULT_EPSILON = 1e-6

# float64 sigmoid saturates to exactly 0.0/1.0 around |x| ~ 37.5; keep
# latents inside this so derived probabilities stay strictly interior
LATENT_LIMIT = 36.0


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("logit needs arguments strictly inside (0,1)")
    return np.log(p) - np.log1p(-p)


@dataclass
class PseudoLabelState:
    """One image's pseudo label: latent vector and its sigmoid image."""

    image_id: str
    latent: np.ndarray  # (C,) float64

    @property
    def probabilities(self) -> np.ndarray:
        return sigmoid(self.latent)


@dataclass
class PseudoLabelSet:
    """Ordered latents for all training images plus the epoch counter."""

    image_ids: list[str]
    latents: np.ndarray  # (M, C) float64
    epoch: int = 0
    _row: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.latents = np.atleast_2d(np.asarray(self.latents, dtype=np.float64))
        if len(self.image_ids) != self.latents.shape[0]:
            raise ValueError(
                f"{len(self.image_ids)} ids but {self.latents.shape[0]} latent rows"
            )
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValueError("duplicate image ids in pseudo-label set")
        if not np.all(np.isfinite(self.latents)):
            raise ValueError("non-finite latent")
        self._row = {i: r for r, i in enumerate(self.image_ids)}

    @property
    def size(self) -> int:
        return len(self.image_ids)

    @property
    def num_classes(self) -> int:
        return int(self.latents.shape[1])

    @property
    def probabilities(self) -> np.ndarray:
        return sigmoid(self.latents)

    def state(self, image_id: str) -> PseudoLabelState:
        return PseudoLabelState(image_id=image_id, latent=self.latents[self._row[image_id]])

    def row(self, image_id: str) -> int:
        return self._row[image_id]

    def copy(self) -> "PseudoLabelSet":
        return PseudoLabelSet(list(self.image_ids), self.latents.copy(), self.epoch)


def init_from_scores(
    finals: list[tuple[str, SimilarityVector]],
    epsilon: float = DEFAULT_EPSILON,
    hard: bool = False,
) -> PseudoLabelSet:
    """Build the label set from final similarity vectors: clamp then logit.

    ``hard=True`` binarizes scores at 0.5 before clamping (ablation only;
    soft labels are the primary path).
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError(f"epsilon must lie in (0, 0.5), got {epsilon}")
    if not finals:
        raise ValueError("no final score vectors")
    ids = [image_id for image_id, _ in finals]
    scores = np.stack([vec.scores for _, vec in finals])
    if np.any(scores < 0.0) or np.any(scores > 1.0):
        raise ValueError("pseudo-label scores outside [0,1]")
    if hard:
        scores = (scores >= 0.5).astype(np.float64)
    clamped = np.clip(scores, epsilon, 1.0 - epsilon)
    return PseudoLabelSet(image_ids=ids, latents=logit(clamped), epoch=0)


def snapshot(label_set: PseudoLabelSet, base: str | Path) -> Path:
    """Persist latents bit-exactly (float64 payload) for mid-run resume."""
    meta: list[tuple[str, str]] = [
        ("C", str(label_set.num_classes)),
        ("count", str(label_set.size)),
        ("epoch", str(label_set.epoch)),
    ]
    meta += [("image_id", i) for i in label_set.image_ids]
    return write_envelope(base, "latent_snapshot", meta, [label_set.latents], dtype="float64")


def restore(base: str | Path, expected_ids: list[str] | None = None) -> PseudoLabelSet:
    manifest, flat = read_envelope(base, expect_kind="latent_snapshot")
    c = manifest.get_int("C")
    count = manifest.get_int("count")
    ids = manifest.get_all("image_id")
    if len(ids) != count:
        raise EnvelopeError(f"snapshot count={count} but {len(ids)} ids listed")
    if expected_ids is not None and list(expected_ids) != ids:
        extra = sorted(set(ids) - set(expected_ids))
        missing = sorted(set(expected_ids) - set(ids))
        raise EnvelopeError(
            f"snapshot ids do not match the active dataset "
            f"(extra={extra[:5]}, missing={missing[:5]})"
        )
    latents, _ = take(flat, 0, count * c, "latents")
    if flat.size != count * c:
        raise EnvelopeError(f"snapshot blob holds {flat.size} floats, expected {count * c}")
    return PseudoLabelSet(image_ids=ids, latents=latents.reshape(count, c).copy(),
                          epoch=manifest.get_int("epoch"))


def write_score_file(
    finals: list[tuple[str, SimilarityVector]],
    class_names: list[str],
    base: str | Path,
    strategy: str = "",
    zeta: float | None = None,
) -> Path:
    """Pseudo-label score file: one C-vector per image, float32 envelope."""
    if not finals:
        raise ValueError("no final score vectors")
    c = len(class_names)
    for image_id, vec in finals:
        if vec.num_classes != c:
            raise ValueError(f"{image_id}: {vec.num_classes} scores for {c} classes")
    meta: list[tuple[str, str]] = [
        ("C", str(c)),
        ("count", str(len(finals))),
        ("strategy", strategy),
        ("zeta", "" if zeta is None else repr(float(zeta))),
    ]
    meta += [("image_id", i) for i, _ in finals]
    meta += [("class_name", n) for n in class_names]
    arrays = [vec.scores for _, vec in finals]
    return write_envelope(base, "pseudo_labels", meta, arrays, dtype="float32")


def read_score_file(base: str | Path) -> tuple[list[tuple[str, SimilarityVector]], list[str]]:
    manifest, flat = read_envelope(base, expect_kind="pseudo_labels")
    c = manifest.get_int("C")
    ids = manifest.get_all("image_id")
    names = manifest.get_all("class_name")
    if len(ids) != manifest.get_int("count"):
        raise EnvelopeError("score file count does not match listed ids")
    if len(names) != c:
        raise EnvelopeError("score file C does not match listed class names")
    finals = []
    offset = 0
    for image_id in ids:
        row, offset = take(flat, offset, c, f"scores of {image_id}")
        finals.append(
            (image_id,
             SimilarityVector(scores=row.astype(np.float64), kind="final", source_id=image_id))
        )
    return finals, names
