import numpy as np
import pytest

from vlpseudo.alignment import cosine, global_similarity
from vlpseudo.encoders import (
    ConfigurationError,
    EmbeddingRecord,
    PlantedEncoder,
    TextEmbeddingMatrix,
    build_prompts,
    compute_record,
    encode_class_prompts,
    read_cache,
    write_cache,
)
from vlpseudo.envelope import blob_path, manifest_path


def pure_image(class_index: int, size: int = 48) -> np.ndarray:
    return np.full((size, size), class_index + 1, dtype=np.uint8)


class TestPlantedEncoder:
    def test_pure_class_image_aligns_with_its_text_row(self, small_encoder):
        text = encode_class_prompts(small_encoder, [f"class_{i:02d}" for i in range(10)])
        vec = small_encoder.encode_image(pure_image(3))
        assert cosine(vec, text.matrix[3]) >= 0.9

    def test_every_class_wins_its_own_row(self, small_encoder):
        # exhaustive over the 10 planted classes
        text = encode_class_prompts(small_encoder, [f"class_{i:02d}" for i in range(10)])
        for i in range(10):
            vec = small_encoder.encode_image(pure_image(i))
            own = cosine(vec, text.matrix[i])
            others = [cosine(vec, text.matrix[j]) for j in range(10) if j != i]
            assert own > max(others)

    def test_deterministic_for_identical_input(self, small_encoder):
        image = np.random.default_rng(5).integers(0, 11, size=(30, 30)).astype(np.uint8)
        np.testing.assert_array_equal(
            small_encoder.encode_image(image), small_encoder.encode_image(image)
        )

    def test_all_black_image_is_finite_nonzero(self, small_encoder):
        vec = small_encoder.encode_image(np.zeros((16, 16), dtype=np.uint8))
        assert np.all(np.isfinite(vec))
        assert np.linalg.norm(vec) > 0

    def test_zero_area_image_rejected(self, small_encoder):
        with pytest.raises(ValueError, match="zero-area"):
            small_encoder.encode_image(np.zeros((0, 4)))

    def test_distinct_images_encode_differently(self, small_encoder):
        a = small_encoder.encode_image(pure_image(1))
        b = small_encoder.encode_image(pure_image(2))
        assert not np.array_equal(a, b)

    def test_temperature_positive_and_constant(self):
        encoder = PlantedEncoder(num_classes=4, dim=16, seed=1)
        assert encoder.temperature > 0
        with pytest.raises(ConfigurationError):
            PlantedEncoder(num_classes=4, dim=16, temperature=0.0)


class TestClassPrompts:
    def test_template_substitution(self):
        prompts = build_prompts(["cat", "dog"], "a photo of the [class]")
        assert prompts == ["a photo of the cat", "a photo of the dog"]

    def test_two_class_matrix_shape(self, small_encoder):
        text = encode_class_prompts(small_encoder, ["cat", "dog"])
        assert text.matrix.shape == (2, small_encoder.visual_dim)
        assert text.prompt_template == "a photo of the [class]"

    def test_single_class(self, small_encoder):
        text = encode_class_prompts(small_encoder, ["cat"])
        assert text.matrix.shape == (1, small_encoder.visual_dim)

    def test_rows_equal_planted_directions(self, small_encoder):
        text = encode_class_prompts(small_encoder, [f"c{i}" for i in range(10)])
        np.testing.assert_array_equal(text.matrix, small_encoder.directions[:10])

    def test_empty_vocabulary_rejected(self, small_encoder):
        with pytest.raises(ValueError, match="empty"):
            encode_class_prompts(small_encoder, [])

    def test_duplicate_names_rejected(self, small_encoder):
        with pytest.raises(ValueError, match="duplicate"):
            encode_class_prompts(small_encoder, ["cat", "cat"])


def random_record(rng, image_id, k=4, n=9, rows=3, cols=3) -> EmbeddingRecord:
    return EmbeddingRecord(
        image_id=image_id,
        global_embedding=rng.standard_normal(k).astype(np.float32),
        snippet_embeddings=rng.standard_normal((n, k)).astype(np.float32),
        grid_rows=rows,
        grid_cols=cols,
    )


def random_text(rng, c=3, k=4) -> TextEmbeddingMatrix:
    return TextEmbeddingMatrix(
        class_names=[f"c{i}" for i in range(c)],
        matrix=rng.standard_normal((c, k)).astype(np.float32),
    )


class TestCache:
    def test_blob_float_count_matches_declared_layout(self, tmp_path):
        # 2 records, K=4, N=9, C=3: 2*(4 + 9*4) + 3*4 = 92 binary32 floats
        rng = np.random.default_rng(0)
        records = [random_record(rng, "a"), random_record(rng, "b")]
        write_cache(records, random_text(rng), 0.07, tmp_path / "cache")
        assert blob_path(tmp_path / "cache").stat().st_size == 92 * 4

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        records = [random_record(rng, f"img_{i}") for i in range(3)]
        text = random_text(rng)
        write_cache(records, text, 0.01, tmp_path / "cache", encoder_id="test-enc")
        cache = read_cache(tmp_path / "cache")
        assert cache.temperature == 0.01
        assert cache.encoder_id == "test-enc"
        assert cache.text.class_names == text.class_names
        assert cache.text.prompt_template == text.prompt_template
        np.testing.assert_array_equal(cache.text.matrix, text.matrix)
        for original, loaded in zip(records, cache.records):
            assert loaded.image_id == original.image_id
            assert (loaded.grid_rows, loaded.grid_cols) == (3, 3)
            np.testing.assert_array_equal(loaded.global_embedding, original.global_embedding)
            np.testing.assert_array_equal(loaded.snippet_embeddings, original.snippet_embeddings)

    def test_rewrite_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        records = [random_record(rng, "x")]
        text = random_text(rng)
        write_cache(records, text, 0.5, tmp_path / "one")
        write_cache(records, text, 0.5, tmp_path / "two")
        assert manifest_path(tmp_path / "one").read_bytes() == \
            manifest_path(tmp_path / "two").read_bytes()
        assert blob_path(tmp_path / "one").read_bytes() == \
            blob_path(tmp_path / "two").read_bytes()

    def test_manifest_carries_declared_keys(self, tmp_path):
        rng = np.random.default_rng(3)
        write_cache([random_record(rng, "img_a")], random_text(rng), 0.25,
                    tmp_path / "cache", encoder_id="enc-1")
        text = manifest_path(tmp_path / "cache").read_text()
        for key in ("version=", "encoder_id=enc-1", "K=4", "N=9", "C=3",
                    "tau=0.25", "count=1", "image_id=img_a", "class_name=c0",
                    "prompt_template="):
            assert key in text

    def test_mixed_k_rejected_nothing_written(self, tmp_path):
        rng = np.random.default_rng(4)
        records = [random_record(rng, "a", k=4), random_record(rng, "b", k=5)]
        with pytest.raises(ConfigurationError, match="mixed"):
            write_cache(records, random_text(rng), 0.1, tmp_path / "cache")
        assert not manifest_path(tmp_path / "cache").exists()
        assert not blob_path(tmp_path / "cache").exists()

    def test_truncated_blob_vs_manifest_count(self, tmp_path):
        rng = np.random.default_rng(5)
        write_cache([random_record(rng, "a")], random_text(rng), 0.1, tmp_path / "cache")
        raw = blob_path(tmp_path / "cache").read_bytes()
        blob_path(tmp_path / "cache").write_bytes(raw[:-8])
        with pytest.raises(Exception, match="blob holds"):
            read_cache(tmp_path / "cache")

    def test_tau_round_trips_exactly(self, tmp_path):
        rng = np.random.default_rng(6)
        tau = 0.013246573
        write_cache([random_record(rng, "a")], random_text(rng), tau, tmp_path / "cache")
        assert read_cache(tmp_path / "cache").temperature == tau


def test_live_encoder_and_cache_replay_agree_downstream(tmp_path, small_encoder):
    image = np.full((30, 30), 4, dtype=np.uint8)
    image[0:10, 0:10] = 7
    text = encode_class_prompts(small_encoder, [f"c{i}" for i in range(10)])
    record = compute_record(small_encoder, "img", image, 3, 3)
    write_cache([record], text, small_encoder.temperature, tmp_path / "cache")
    cache = read_cache(tmp_path / "cache")
    live = global_similarity(record, text, small_encoder.temperature)
    replay = global_similarity(cache.records[0], cache.text, cache.temperature)
    np.testing.assert_array_equal(live.scores, replay.scores)
