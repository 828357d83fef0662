"""Vision-language encoder interface, implementations, and embedding cache.

Two encoders ship with the package:

* :class:`PlantedEncoder` — a deterministic synthetic encoder. Each class
  owns a fixed orthonormal direction in embedding space; an image is a 2-D
  integer map whose pixel value ``v`` marks class ``v - 1`` (0 = background).
  The embedding of an image is the pixel-fraction-weighted mix of the class
  directions plus a small hash-seeded perturbation, so a patch showing only
  class ``i`` embeds almost exactly onto direction ``i``. Everything
  downstream can be exercised and verified against planted ground truth
  without any model download.

* :class:`HuggingFaceClipEncoder` — adapter over a real CLIP checkpoint via
  ``transformers`` (optional extra). Preprocessing follows the model's own
  published processor.

Embeddings are stored unnormalized; cosine normalization happens at
similarity time. The cache is the manifest+float32 envelope: per image K
floats (whole-image embedding) then N*K floats (snippet embeddings,
row-major), and after all images the C*K text matrix.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .envelope import EnvelopeError, format_float, read_envelope, take, write_envelope
from .snippets import split

DEFAULT_PROMPT_TEMPLATE = "a photo of the [class]"


class ConfigurationError(ValueError):
    """Incompatible dimensions or encoder/cache mismatch."""


@runtime_checkable
class Encoder(Protocol):
    """Handle onto a vision-language encoder pair.

    ``visual_dim`` and ``temperature`` are constant for the handle's
    lifetime; ``encode_image`` is a pure function of (handle, pixels).
    """

    visual_dim: int
    temperature: float
    identity: str

    def encode_image(self, image: np.ndarray) -> np.ndarray: ...

    def encode_prompts(self, prompts: list[str]) -> np.ndarray: ...


@dataclass
class EmbeddingRecord:
    """Cached embeddings for one image: whole-image vector plus snippet grid."""

    image_id: str
    global_embedding: np.ndarray  # (K,) float32
    snippet_embeddings: np.ndarray  # (N, K) float32, row-major snippet order
    grid_rows: int
    grid_cols: int

    def __post_init__(self):
        self.global_embedding = np.asarray(self.global_embedding, dtype=np.float32)
        self.snippet_embeddings = np.atleast_2d(
            np.asarray(self.snippet_embeddings, dtype=np.float32)
        )
        if self.snippet_embeddings.shape[0] != self.grid_rows * self.grid_cols:
            raise ConfigurationError(
                f"{self.image_id}: {self.snippet_embeddings.shape[0]} snippet embeddings "
                f"for a {self.grid_rows}x{self.grid_cols} grid"
            )
        if self.snippet_embeddings.shape[1] != self.global_embedding.shape[0]:
            raise ConfigurationError(f"{self.image_id}: snippet/global dimension mismatch")
        for name, arr in (("global", self.global_embedding), ("snippet", self.snippet_embeddings)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{self.image_id}: non-finite {name} embedding")
        norms = np.linalg.norm(self.snippet_embeddings, axis=1)
        if np.linalg.norm(self.global_embedding) == 0.0 or np.any(norms == 0.0):
            raise ValueError(f"{self.image_id}: zero-norm embedding, cosine undefined")

    @property
    def visual_dim(self) -> int:
        return int(self.global_embedding.shape[0])

    @property
    def snippet_count(self) -> int:
        return int(self.snippet_embeddings.shape[0])


@dataclass
class TextEmbeddingMatrix:
    """One row per class, in vocabulary order, from the prompt template."""

    class_names: list[str]
    matrix: np.ndarray  # (C, K) float32
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float32))
        if len(self.class_names) != self.matrix.shape[0]:
            raise ConfigurationError(
                f"{len(self.class_names)} class names but {self.matrix.shape[0]} text rows"
            )
        if np.any(np.linalg.norm(self.matrix, axis=1) == 0.0):
            raise ValueError("zero-norm text embedding row")

    @property
    def num_classes(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def visual_dim(self) -> int:
        return int(self.matrix.shape[1])


def build_prompts(class_names: list[str], template: str) -> list[str]:
    if not class_names:
        raise ValueError("class vocabulary is empty")
    if len(set(class_names)) != len(class_names):
        dupes = sorted({n for n in class_names if class_names.count(n) > 1})
        raise ValueError(f"duplicate class names: {dupes}")
    if "[class]" not in template:
        raise ValueError(f"prompt template missing [class] placeholder: {template!r}")
    return [template.replace("[class]", name) for name in class_names]


def encode_class_prompts(
    encoder: Encoder,
    class_names: list[str],
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> TextEmbeddingMatrix:
    """Encode one prompt per class, rows in vocabulary order."""
    prompts = build_prompts(class_names, template)
    matrix = encoder.encode_prompts(prompts)
    return TextEmbeddingMatrix(
        class_names=list(class_names), matrix=matrix, prompt_template=template
    )


def compute_record(
    encoder: Encoder, image_id: str, image: np.ndarray, rows: int, cols: int
) -> EmbeddingRecord:
    """Whole-image embedding plus one embedding per grid snippet."""
    global_vec = encoder.encode_image(image)
    snippet_vecs = np.stack([encoder.encode_image(s) for s in split(image, rows, cols)])
    return EmbeddingRecord(
        image_id=image_id,
        global_embedding=global_vec,
        snippet_embeddings=snippet_vecs,
        grid_rows=rows,
        grid_cols=cols,
    )


class PlantedEncoder:
    """Deterministic synthetic encoder over planted class directions.

    Directions are the first ``num_classes + 1`` rows of a seeded random
    orthonormal basis; the extra row embeds background-only images. The
    perturbation applied to each embedding is derived by hashing the pixel
    bytes, so identical inputs always encode identically with no shared
    RNG state.
    """

    def __init__(
        self,
        num_classes: int = 10,
        dim: int = 64,
        seed: int = 0,
        noise: float = 0.05,
        temperature: float = 0.1,
    ):
        if dim < num_classes + 1:
            raise ConfigurationError(f"dim {dim} too small for {num_classes} classes")
        if temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {temperature}")
        rng = np.random.default_rng(seed)
        basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        self.directions = basis[: num_classes + 1].astype(np.float32)
        self.num_classes = num_classes
        self.visual_dim = dim
        self.temperature = float(temperature)
        self.noise = float(noise)
        self.seed = seed
        self.identity = f"planted:seed={seed}:classes={num_classes}:dim={dim}:noise={noise}"

    def class_direction(self, index: int) -> np.ndarray:
        return self.directions[index]

    def _perturbation(self, payload: bytes) -> np.ndarray:
        digest = hashlib.blake2b(payload, digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        vec = rng.standard_normal(self.visual_dim)
        return vec / np.linalg.norm(vec)

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        if image.size == 0:
            raise ValueError("cannot encode a zero-area image")
        values = np.ascontiguousarray(image[..., 0] if image.ndim == 3 else image)
        labels = np.rint(values).astype(np.int64).ravel()
        counts = np.bincount(
            np.clip(labels, 0, self.num_classes), minlength=self.num_classes + 1
        )
        class_counts = counts[1:].astype(np.float64)
        total = class_counts.sum()
        if total == 0:
            base = self.directions[self.num_classes].astype(np.float64)
        else:
            base = (class_counts / total) @ self.directions[: self.num_classes].astype(np.float64)
        payload = values.astype(np.float32).tobytes() + bytes(str(values.shape), "ascii")
        vec = base + self.noise * self._perturbation(payload + str(self.seed).encode())
        return vec.astype(np.float32)

    def encode_prompts(self, prompts: list[str]) -> np.ndarray:
        # Positional: prompt i maps onto planted direction i. This keeps the
        # text row for class i exactly equal to the direction its images mix.
        if len(prompts) > self.num_classes:
            raise ConfigurationError(
                f"{len(prompts)} prompts exceed the {self.num_classes} planted classes"
            )
        return self.directions[: len(prompts)].copy()


class HuggingFaceClipEncoder:
    """Adapter over a CLIP checkpoint loaded through ``transformers``.

    Requires the ``clip`` extra (torch + transformers). The temperature is
    the model's own learned one (1 / exp(logit_scale)), and image
    preprocessing is the checkpoint's published processor, applied to whole
    images and snippets alike.
    """

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32", device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ConfigurationError(
                "the real encoder needs the 'clip' extra: pip install vlpseudo[clip]"
            ) from exc
        self._torch = torch
        self._model = CLIPModel.from_pretrained(model_name).to(device).eval()
        self._processor = CLIPProcessor.from_pretrained(model_name)
        self._device = device
        self.visual_dim = int(self._model.config.projection_dim)
        self.temperature = float(1.0 / self._model.logit_scale.exp().item())
        self.identity = f"hf-clip:{model_name}"

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        from PIL import Image

        arr = np.asarray(image)
        if arr.size == 0:
            raise ValueError("cannot encode a zero-area image")
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        pil = Image.fromarray(arr.astype(np.uint8))
        inputs = self._processor(images=pil, return_tensors="pt").to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats[0].cpu().numpy().astype(np.float32)

    def encode_prompts(self, prompts: list[str]) -> np.ndarray:
        inputs = self._processor(
            text=prompts, return_tensors="pt", padding=True, truncation=True
        ).to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)


@dataclass
class CacheContents:
    records: list[EmbeddingRecord]
    text: TextEmbeddingMatrix
    temperature: float
    encoder_id: str = ""
    by_id: dict[str, EmbeddingRecord] = field(init=False)

    def __post_init__(self):
        self.by_id = {r.image_id: r for r in self.records}


def write_cache(
    records: list[EmbeddingRecord],
    text: TextEmbeddingMatrix,
    temperature: float,
    base: str | Path,
    encoder_id: str = "",
) -> Path:
    """Persist embeddings + text matrix; byte-stable for identical input."""
    if not records:
        raise ValueError("no embedding records to write")
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    first = records[0]
    for rec in records:
        if rec.visual_dim != first.visual_dim:
            raise ConfigurationError(
                f"mixed embedding dims: {rec.image_id} has K={rec.visual_dim}, "
                f"{first.image_id} has K={first.visual_dim}"
            )
        if (rec.grid_rows, rec.grid_cols) != (first.grid_rows, first.grid_cols):
            raise ConfigurationError(f"mixed grid shapes at {rec.image_id}")
    if text.visual_dim != first.visual_dim:
        raise ConfigurationError(
            f"text matrix K={text.visual_dim} does not match embeddings K={first.visual_dim}"
        )
    ids = [r.image_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in cache")

    meta: list[tuple[str, str]] = [
        ("encoder_id", encoder_id),
        ("K", str(first.visual_dim)),
        ("N", str(first.snippet_count)),
        ("C", str(text.num_classes)),
        ("tau", format_float(temperature)),
        ("count", str(len(records))),
        ("grid_rows", str(first.grid_rows)),
        ("grid_cols", str(first.grid_cols)),
    ]
    meta += [("image_id", i) for i in ids]
    meta += [("class_name", n) for n in text.class_names]
    meta.append(("prompt_template", text.prompt_template))

    arrays: list[np.ndarray] = []
    for rec in records:
        arrays.append(rec.global_embedding)
        arrays.append(rec.snippet_embeddings)
    arrays.append(text.matrix)
    return write_envelope(base, "embedding_cache", meta, arrays, dtype="float32")


def read_cache(base: str | Path) -> CacheContents:
    """Reconstruct exactly what :func:`write_cache` stored."""
    manifest, flat = read_envelope(base, expect_kind="embedding_cache")
    k = manifest.get_int("K")
    n = manifest.get_int("N")
    c = manifest.get_int("C")
    count = manifest.get_int("count")
    rows = manifest.get_int("grid_rows")
    cols = manifest.get_int("grid_cols")
    tau = manifest.get_float("tau")
    ids = manifest.get_all("image_id")
    names = manifest.get_all("class_name")
    if len(ids) != count:
        raise EnvelopeError(f"manifest count={count} but {len(ids)} image ids listed")
    if len(names) != c:
        raise EnvelopeError(f"manifest C={c} but {len(names)} class names listed")

    expected = count * (k + n * k) + c * k
    if flat.size != expected:
        raise EnvelopeError(
            f"blob holds {flat.size} floats, manifest implies {expected}"
        )
    records = []
    offset = 0
    for image_id in ids:
        g, offset = take(flat, offset, k, f"global embedding of {image_id}")
        s, offset = take(flat, offset, n * k, f"snippets of {image_id}")
        records.append(
            EmbeddingRecord(
                image_id=image_id,
                global_embedding=g.copy(),
                snippet_embeddings=s.reshape(n, k).copy(),
                grid_rows=rows,
                grid_cols=cols,
            )
        )
    m, offset = take(flat, offset, c * k, "text matrix")
    text = TextEmbeddingMatrix(
        class_names=names,
        matrix=m.reshape(c, k).copy(),
        prompt_template=manifest.get("prompt_template"),
    )
    return CacheContents(records=records, text=text, temperature=tau,
                         encoder_id=manifest.get("encoder_id"))
