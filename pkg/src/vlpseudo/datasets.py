"""Dataset manifests, image loading, and annotation parsing.

Annotations (VOC XML or COCO JSON) are parsed into binary label vectors
used strictly for evaluation; the training pipeline never reads them.
The planted dataset generator writes a fully synthetic dataset (class-map
PNGs, VOC-style XML annotations, a manifest) whose ground truth is exact
by construction, so every pipeline stage can run and be scored without
downloading anything.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ElementTree
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import GroundTruthSet


class IngestError(ValueError):
    """Unreadable image or malformed annotation/manifest input."""


@dataclass
class DatasetManifest:
    split: str
    image_paths: list[Path]
    class_names: list[str]
    annotations: str = ""  # "", "voc:<dir>" or "coco:<json file>"

    def __post_init__(self):
        ids = self.image_ids
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise IngestError(f"duplicate image ids in manifest: {dupes[:5]}")
        if len(set(self.class_names)) != len(self.class_names):
            raise IngestError("duplicate class names in manifest")

    @property
    def image_ids(self) -> list[str]:
        return [p.stem for p in self.image_paths]

    def save(self, path: str | Path) -> Path:
        """Write the manifest; paths under its directory are stored relative,
        so a dataset directory stays relocatable."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        base = path.resolve().parent

        def portable(p: Path) -> str:
            resolved = Path(p).resolve()
            try:
                return str(resolved.relative_to(base))
            except ValueError:
                return str(resolved)

        annotations = self.annotations
        if annotations:
            scheme, sep, location = annotations.partition(":")
            if sep:
                annotations = f"{scheme}:{portable(Path(location))}"
        lines = [f"split={self.split}", f"annotations={annotations}"]
        lines += [f"class={n}" for n in self.class_names]
        lines += [f"image={portable(p)}" for p in self.image_paths]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise IngestError(f"dataset manifest not found: {path}")
        split = ""
        annotations = ""
        classes: list[str] = []
        images: list[Path] = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise IngestError(f"{path}:{lineno}: expected key=value, got {line!r}")
            if key == "split":
                split = value
            elif key == "annotations":
                annotations = value
            elif key == "class":
                classes.append(value)
            elif key == "image":
                p = Path(value)
                images.append(p if p.is_absolute() else path.parent / p)
            else:
                raise IngestError(f"{path}:{lineno}: unknown manifest key {key!r}")
        if not images:
            raise IngestError(f"{path}: manifest lists no images")
        if not classes:
            raise IngestError(f"{path}: manifest lists no classes")
        if annotations:
            scheme, sep, location = annotations.partition(":")
            if sep and not Path(location).is_absolute():
                annotations = f"{scheme}:{path.parent / location}"
        return cls(split=split, image_paths=images, class_names=classes,
                   annotations=annotations)

    def load_truth(self) -> GroundTruthSet | None:
        """Parse the configured annotation source, if any."""
        if not self.annotations:
            return None
        scheme, sep, location = self.annotations.partition(":")
        if not sep:
            raise IngestError(
                f"annotation source must look like voc:<dir> or coco:<file>, "
                f"got {self.annotations!r}"
            )
        if scheme == "voc":
            return parse_voc(location, self.class_names)
        if scheme == "coco":
            return parse_coco(location, self.class_names)
        raise IngestError(f"unknown annotation scheme {scheme!r}")


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file (or .npy array) into a pixel array."""
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"image not found: {path}")
    if path.suffix == ".npy":
        try:
            arr = np.load(path)
        except Exception as exc:
            raise IngestError(f"cannot decode {path}: {exc}") from exc
    else:
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(path) as img:
                arr = np.asarray(img)
        except (UnidentifiedImageError, OSError) as exc:
            raise IngestError(f"cannot decode {path}: {exc}") from exc
    if arr.size == 0:
        raise IngestError(f"zero-area image: {path}")
    return arr


def parse_voc(annotation_dir: str | Path, class_names: list[str]) -> GroundTruthSet:
    """Binary label vectors from a directory of VOC-style XML files.

    Multiple instances of one class collapse to a single positive.
    """
    annotation_dir = Path(annotation_dir)
    if not annotation_dir.is_dir():
        raise IngestError(f"annotation directory not found: {annotation_dir}")
    index = {name: i for i, name in enumerate(class_names)}
    labels: dict[str, np.ndarray] = {}
    for xml_path in sorted(annotation_dir.glob("*.xml")):
        try:
            root = ElementTree.parse(xml_path).getroot()
        except ElementTree.ParseError as exc:
            raise IngestError(f"malformed XML {xml_path}: {exc}") from exc
        vec = np.zeros(len(class_names), dtype=np.int8)
        for obj in root.iter("object"):
            name_node = obj.find("name")
            if name_node is None or not (name_node.text or "").strip():
                raise IngestError(f"{xml_path}: object without a name")
            name = name_node.text.strip()
            if name not in index:
                raise IngestError(f"{xml_path}: class {name!r} not in vocabulary")
            vec[index[name]] = 1
        labels[xml_path.stem] = vec
    if not labels:
        raise IngestError(f"no XML annotations under {annotation_dir}")
    return GroundTruthSet(class_names=list(class_names), labels=labels)


def parse_coco(json_path: str | Path, class_names: list[str]) -> GroundTruthSet:
    """Binary label vectors from a COCO instances JSON."""
    json_path = Path(json_path)
    if not json_path.is_file():
        raise IngestError(f"COCO annotation file not found: {json_path}")
    try:
        doc = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestError(f"malformed JSON {json_path}: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise IngestError(f"{json_path}: missing top-level {key!r}")
    index = {name: i for i, name in enumerate(class_names)}
    category_to_class: dict[int, int] = {}
    for cat in doc["categories"]:
        name = cat["name"]
        if name not in index:
            raise IngestError(f"{json_path}: category {name!r} not in vocabulary")
        category_to_class[cat["id"]] = index[name]
    image_ids: dict[int, str] = {}
    labels: dict[str, np.ndarray] = {}
    for img in doc["images"]:
        stem = Path(img["file_name"]).stem
        image_ids[img["id"]] = stem
        labels[stem] = np.zeros(len(class_names), dtype=np.int8)
    for ann in doc["annotations"]:
        img_id = ann["image_id"]
        cat_id = ann["category_id"]
        if img_id not in image_ids:
            raise IngestError(f"{json_path}: annotation references unknown image id {img_id}")
        if cat_id not in category_to_class:
            raise IngestError(f"{json_path}: annotation references unknown category {cat_id}")
        labels[image_ids[img_id]][category_to_class[cat_id]] = 1
    if not labels:
        raise IngestError(f"{json_path}: no images listed")
    return GroundTruthSet(class_names=list(class_names), labels=labels)


def _write_voc_xml(path: Path, filename: str, present: list[str]):
    root = ElementTree.Element("annotation")
    ElementTree.SubElement(root, "filename").text = filename
    for name in present:
        obj = ElementTree.SubElement(root, "object")
        ElementTree.SubElement(obj, "name").text = name
    ElementTree.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


def make_planted_dataset(
    out_dir: str | Path,
    num_images: int,
    num_classes: int,
    rows: int = 3,
    cols: int = 3,
    cell: int = 24,
    max_extras: int = 2,
    seed: int = 0,
    split: str = "train",
) -> DatasetManifest:
    """Write a synthetic multi-object dataset with exact ground truth.

    Each image is a class map: one globally dominant class fills the image
    and each of 1..max_extras extra classes takes over exactly one grid
    cell, so the dominant class rules the whole-image embedding while the
    extras surface only in single snippets. Images are grayscale PNGs whose
    pixel value v marks class v-1; VOC-style XMLs carry the ground truth.
    """
    from PIL import Image

    if num_classes < 2:
        raise ValueError("planted datasets need at least two classes")
    if num_classes > 255:
        raise ValueError("class maps are 8-bit; at most 255 classes")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    ann_dir = out_dir / "annotations"
    image_dir.mkdir(parents=True, exist_ok=True)
    ann_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    class_names = [f"class_{i:02d}" for i in range(num_classes)]
    height, width = rows * cell, cols * cell
    paths = []
    for m in range(num_images):
        dominant = int(rng.integers(num_classes))
        n_extras = int(rng.integers(1, max_extras + 1))
        others = [c for c in range(num_classes) if c != dominant]
        extras = list(rng.choice(others, size=min(n_extras, len(others)), replace=False))
        cells = rng.choice(rows * cols, size=len(extras), replace=False)

        pixels = np.full((height, width), dominant + 1, dtype=np.uint8)
        for extra, cell_index in zip(extras, cells):
            r, c = divmod(int(cell_index), cols)
            pixels[r * cell : (r + 1) * cell, c * cell : (c + 1) * cell] = extra + 1

        image_id = f"{split}_{m:04d}"
        png_path = image_dir / f"{image_id}.png"
        Image.fromarray(pixels, mode="L").save(png_path)
        present = [class_names[dominant]] + [class_names[e] for e in sorted(extras)]
        _write_voc_xml(ann_dir / f"{image_id}.xml", png_path.name, present)
        paths.append(png_path)

    manifest = DatasetManifest(
        split=split,
        image_paths=paths,
        class_names=class_names,
        annotations=f"voc:{ann_dir}",
    )
    manifest.save(out_dir / "manifest.txt")
    return manifest
