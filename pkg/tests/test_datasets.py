import json

import numpy as np
import pytest

from vlpseudo.datasets import (
    DatasetManifest,
    IngestError,
    load_image,
    make_planted_dataset,
    parse_coco,
    parse_voc,
)

VOC_TEMPLATE = """<annotation>
  <filename>{name}.png</filename>
  {objects}
</annotation>
"""


def write_voc(dirpath, name, objects):
    body = "".join(f"<object><name>{o}</name></object>" for o in objects)
    (dirpath / f"{name}.xml").write_text(VOC_TEMPLATE.format(name=name, objects=body))


class TestParseVoc:
    def test_hand_built_fixture(self, tmp_path):
        write_voc(tmp_path, "img_a", ["dog", "dog", "person"])
        write_voc(tmp_path, "img_b", [])
        write_voc(tmp_path, "img_c", ["cat"])
        truth = parse_voc(tmp_path, ["cat", "dog", "person"])
        # repeated instances collapse to one positive
        np.testing.assert_array_equal(truth.labels["img_a"], [0, 1, 1])
        np.testing.assert_array_equal(truth.labels["img_b"], [0, 0, 0])
        np.testing.assert_array_equal(truth.labels["img_c"], [1, 0, 0])

    def test_unknown_class_rejected(self, tmp_path):
        write_voc(tmp_path, "img_a", ["zebra"])
        with pytest.raises(IngestError, match="zebra"):
            parse_voc(tmp_path, ["cat"])

    def test_malformed_xml_names_the_file(self, tmp_path):
        (tmp_path / "broken.xml").write_text("<annotation><object>")
        with pytest.raises(IngestError, match="broken.xml"):
            parse_voc(tmp_path, ["cat"])

    def test_missing_directory(self, tmp_path):
        with pytest.raises(IngestError, match="not found"):
            parse_voc(tmp_path / "nope", ["cat"])


class TestParseCoco:
    def coco_doc(self):
        return {
            "images": [
                {"id": 1, "file_name": "img_a.jpg"},
                {"id": 2, "file_name": "img_b.jpg"},
                {"id": 3, "file_name": "img_c.jpg"},
            ],
            "annotations": [
                {"image_id": 1, "category_id": 10},
                {"image_id": 1, "category_id": 10},
                {"image_id": 1, "category_id": 20},
                {"image_id": 3, "category_id": 30},
            ],
            "categories": [
                {"id": 10, "name": "cat"},
                {"id": 20, "name": "dog"},
                {"id": 30, "name": "person"},
            ],
        }

    def test_hand_built_fixture(self, tmp_path):
        path = tmp_path / "instances.json"
        path.write_text(json.dumps(self.coco_doc()))
        truth = parse_coco(path, ["cat", "dog", "person"])
        np.testing.assert_array_equal(truth.labels["img_a"], [1, 1, 0])
        np.testing.assert_array_equal(truth.labels["img_b"], [0, 0, 0])  # no annotations
        np.testing.assert_array_equal(truth.labels["img_c"], [0, 0, 1])

    def test_unknown_category_name_rejected(self, tmp_path):
        doc = self.coco_doc()
        doc["categories"].append({"id": 99, "name": "unmapped"})
        path = tmp_path / "instances.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(IngestError, match="unmapped"):
            parse_coco(path, ["cat", "dog", "person"])

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(IngestError, match="bad.json"):
            parse_coco(path, ["cat"])

    def test_annotation_for_unknown_image_rejected(self, tmp_path):
        doc = self.coco_doc()
        doc["annotations"].append({"image_id": 42, "category_id": 10})
        path = tmp_path / "instances.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(IngestError, match="unknown image"):
            parse_coco(path, ["cat", "dog", "person"])


class TestManifest:
    def test_save_load_round_trip(self, tmp_path):
        for name in ("a", "b"):
            (tmp_path / f"{name}.png").write_bytes(b"")
        manifest = DatasetManifest(
            split="train",
            image_paths=[tmp_path / "a.png", tmp_path / "b.png"],
            class_names=["cat", "dog"],
            annotations="voc:/tmp/ann",
        )
        manifest.save(tmp_path / "manifest.txt")
        loaded = DatasetManifest.load(tmp_path / "manifest.txt")
        assert loaded.split == "train"
        assert loaded.class_names == ["cat", "dog"]
        assert loaded.image_ids == ["a", "b"]
        assert loaded.annotations == "voc:/tmp/ann"

    def test_duplicate_ids_rejected(self, tmp_path):
        with pytest.raises(IngestError, match="duplicate"):
            DatasetManifest(split="t", image_paths=[tmp_path / "x.png", tmp_path / "d/x.png"],
                            class_names=["a"])

    def test_missing_file_and_bad_lines(self, tmp_path):
        with pytest.raises(IngestError, match="not found"):
            DatasetManifest.load(tmp_path / "none.txt")
        bad = tmp_path / "bad.txt"
        bad.write_text("split=x\nbogus_key=1\n")
        with pytest.raises(IngestError, match="bogus_key"):
            DatasetManifest.load(bad)


class TestLoadImage:
    def test_png_round_trip(self, tmp_path):
        from PIL import Image

        pixels = np.random.default_rng(0).integers(0, 255, size=(9, 12), dtype=np.uint8)
        Image.fromarray(pixels, mode="L").save(tmp_path / "img.png")
        np.testing.assert_array_equal(load_image(tmp_path / "img.png"), pixels)

    def test_npy_supported(self, tmp_path):
        arr = np.arange(6.0).reshape(2, 3)
        np.save(tmp_path / "arr.npy", arr)
        np.testing.assert_array_equal(load_image(tmp_path / "arr.npy"), arr)

    def test_undecodable_file_names_the_path(self, tmp_path):
        bad = tmp_path / "corrupt.png"
        bad.write_bytes(b"this is not a png")
        with pytest.raises(IngestError, match="corrupt.png"):
            load_image(bad)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError, match="not found"):
            load_image(tmp_path / "ghost.png")


class TestPlantedDataset:
    def test_pixels_agree_with_annotations(self, tmp_path):
        manifest = make_planted_dataset(tmp_path, num_images=12, num_classes=6, seed=3)
        truth = manifest.load_truth()
        for image_id, path in zip(manifest.image_ids, manifest.image_paths):
            pixels = load_image(path)
            present_from_pixels = {int(v) - 1 for v in np.unique(pixels) if v > 0}
            present_from_truth = {i for i, bit in enumerate(truth.labels[image_id]) if bit}
            assert present_from_pixels == present_from_truth
            assert 2 <= len(present_from_truth) <= 3  # dominant plus 1..2 extras

    def test_extras_fill_whole_grid_cells(self, tmp_path):
        manifest = make_planted_dataset(tmp_path, num_images=5, num_classes=5,
                                        rows=3, cols=3, cell=8, seed=1)
        pixels = load_image(manifest.image_paths[0])
        assert pixels.shape == (24, 24)
        for r in range(3):
            for c in range(3):
                tile = pixels[r * 8 : (r + 1) * 8, c * 8 : (c + 1) * 8]
                assert len(np.unique(tile)) == 1  # each cell is a single class

    def test_deterministic_given_seed(self, tmp_path):
        m1 = make_planted_dataset(tmp_path / "a", num_images=6, num_classes=4, seed=9)
        m2 = make_planted_dataset(tmp_path / "b", num_images=6, num_classes=4, seed=9)
        for p1, p2 in zip(m1.image_paths, m2.image_paths):
            np.testing.assert_array_equal(load_image(p1), load_image(p2))

    def test_manifest_loadable_and_truth_attached(self, tmp_path):
        make_planted_dataset(tmp_path, num_images=4, num_classes=3, seed=0)
        manifest = DatasetManifest.load(tmp_path / "manifest.txt")
        assert len(manifest.image_paths) == 4
        truth = manifest.load_truth()
        assert truth is not None and len(truth.labels) == 4
