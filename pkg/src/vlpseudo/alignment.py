"""Image-text similarity vectors.

For one image the whole-image (global) route is: cosine of the visual
embedding against each class text row, then a temperature-scaled softmax
over classes. The local route applies the same two steps to every snippet
embedding independently, giving one normalized C-vector per snippet.
Softmax uses max-subtraction; at temperatures around 0.01 naive
exponentiation overflows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import ConfigurationError, EmbeddingRecord, TextEmbeddingMatrix
from .envelope import EnvelopeError, read_envelope, take, write_envelope

NORMALIZED_KINDS = ("global", "local")
KINDS = ("global", "local", "aggregate", "final")
SUM_TOLERANCE = 1e-6


@dataclass
class SimilarityVector:
    """C class scores for one image or snippet.

    ``global``/``local`` vectors are softmax outputs: strictly positive,
    summing to 1. ``aggregate``/``final`` vectors live in [0, 1] with no sum
    constraint.
    """

    scores: np.ndarray  # (C,) float64
    kind: str
    source_id: str = ""
    snippet_index: int | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.kind not in KINDS:
            raise ValueError(f"unknown similarity kind {self.kind!r}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"non-finite scores in {self.kind} vector for {self.source_id!r}")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
            raise ValueError(f"{self.kind} scores must lie in [0,1]")
        if self.kind in NORMALIZED_KINDS:
            if abs(self.scores.sum() - 1.0) > SUM_TOLERANCE:
                raise ValueError(
                    f"{self.kind} scores sum to {self.scores.sum()!r}, expected 1"
                )

    @property
    def num_classes(self) -> int:
        return int(self.scores.shape[0])


def cosine(f: np.ndarray, w: np.ndarray) -> float:
    """Cosine similarity; inputs are normalized here, not upstream."""
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    nf = np.linalg.norm(f)
    nw = np.linalg.norm(w)
    if nf == 0.0 or nw == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    return float(np.dot(f, w) / (nf * nw))


def cosine_rows(f: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Cosine of one embedding against every row of a matrix."""
    f = np.asarray(f, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    nf = np.linalg.norm(f)
    nrows = np.linalg.norm(rows, axis=1)
    if nf == 0.0 or np.any(nrows == 0.0):
        raise ValueError("cosine of a zero-norm vector is undefined")
    return (rows @ f) / (nrows * nf)


def class_softmax(raw: np.ndarray, temperature: float, kind: str = "global",
                  source_id: str = "", snippet_index: int | None = None) -> SimilarityVector:
    """Softmax over classes of raw/temperature, max-subtracted."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite raw similarity scores")
    z = raw / temperature
    z = z - z.max()
    e = np.exp(z)
    scores = e / e.sum()
    # cosine raws lie in [-1, 1]; for tau above ~0.003 no float64 underflow,
    # so softmax output is strictly positive
    if np.any(scores <= 0.0):
        raise ValueError(f"softmax underflow at temperature {temperature}")
    return SimilarityVector(scores=scores, kind=kind, source_id=source_id,
                            snippet_index=snippet_index)


def _check_dims(record: EmbeddingRecord, text: TextEmbeddingMatrix):
    if record.visual_dim != text.visual_dim:
        raise ConfigurationError(
            f"{record.image_id}: embedding K={record.visual_dim} vs text K={text.visual_dim}"
        )


def global_similarity(
    record: EmbeddingRecord, text: TextEmbeddingMatrix, temperature: float
) -> SimilarityVector:
    _check_dims(record, text)
    raw = cosine_rows(record.global_embedding, text.matrix)
    return class_softmax(raw, temperature, kind="global", source_id=record.image_id)


def local_similarities(
    record: EmbeddingRecord, text: TextEmbeddingMatrix, temperature: float
) -> list[SimilarityVector]:
    """One normalized vector per snippet, in row-major snippet order."""
    _check_dims(record, text)
    out = []
    for j in range(record.snippet_count):
        raw = cosine_rows(record.snippet_embeddings[j], text.matrix)
        out.append(class_softmax(raw, temperature, kind="local",
                                 source_id=record.image_id, snippet_index=j))
    return out


def write_similarity_dump(
    per_image: list[tuple[str, SimilarityVector, list[SimilarityVector]]],
    base: str | Path,
) -> Path:
    """Dump global + local vectors per image (same envelope as the cache)."""
    if not per_image:
        raise ValueError("nothing to dump")
    c = per_image[0][1].num_classes
    n = len(per_image[0][2])
    meta: list[tuple[str, str]] = [
        ("C", str(c)),
        ("N", str(n)),
        ("count", str(len(per_image))),
    ]
    arrays = []
    for image_id, global_vec, local_vecs in per_image:
        if global_vec.num_classes != c or len(local_vecs) != n:
            raise ConfigurationError(f"inconsistent similarity shapes at {image_id}")
        meta.append(("image_id", image_id))
        arrays.append(global_vec.scores)
        arrays.extend(v.scores for v in local_vecs)
    return write_envelope(base, "similarity_dump", meta, arrays, dtype="float32")


def read_similarity_dump(base: str | Path):
    manifest, flat = read_envelope(base, expect_kind="similarity_dump")
    c = manifest.get_int("C")
    n = manifest.get_int("N")
    ids = manifest.get_all("image_id")
    if len(ids) != manifest.get_int("count"):
        raise EnvelopeError("similarity dump count does not match listed ids")
    out = []
    offset = 0
    for image_id in ids:
        block, offset = take(flat, offset, (1 + n) * c, f"similarities of {image_id}")
        block = block.reshape(1 + n, c).astype(np.float64)
        g = SimilarityVector(scores=block[0], kind="global", source_id=image_id)
        locals_ = [
            SimilarityVector(scores=block[j + 1], kind="local",
                             source_id=image_id, snippet_index=j)
            for j in range(n)
        ]
        out.append((image_id, g, locals_))
    return out
