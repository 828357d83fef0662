import numpy as np
import pytest

from vlpseudo.snippets import grid_for, reassemble, split


def test_224_by_3_boundaries():
    # floor(224/3) = 74, remainder goes to the last tile
    grid = grid_for(224, 224, 3, 3)
    col_spans = [(left, right) for top, bottom, left, right in grid.boundaries[:3]]
    assert col_spans == [(0, 74), (74, 148), (148, 224)]
    assert grid.count == 9


def test_1x1_is_identity():
    image = np.random.default_rng(0).integers(0, 255, size=(17, 23), dtype=np.uint8)
    tiles = split(image, 1, 1)
    assert len(tiles) == 1
    np.testing.assert_array_equal(tiles[0], image)


def test_10x10_into_3x3_hand_enumerated():
    # floor(10/3) = 3 per axis, widths 3,3,4
    image = np.arange(100).reshape(10, 10)
    tiles = split(image, 3, 3)
    shapes = [t.shape for t in tiles]
    assert shapes == [
        (3, 3), (3, 3), (3, 4),
        (3, 3), (3, 3), (3, 4),
        (4, 3), (4, 3), (4, 4),
    ]
    assert sum(t.size for t in tiles) == image.size
    np.testing.assert_array_equal(tiles[0], image[0:3, 0:3])
    np.testing.assert_array_equal(tiles[8], image[6:10, 6:10])


def test_pixel_conservation_randomized():
    rng = np.random.default_rng(42)
    for _ in range(50):
        h = int(rng.integers(1, 40))
        w = int(rng.integers(1, 40))
        rows = int(rng.integers(1, h + 1))
        cols = int(rng.integers(1, w + 1))
        image = rng.integers(0, 255, size=(h, w))
        tiles = split(image, rows, cols)
        assert len(tiles) == rows * cols
        assert all(t.size > 0 for t in tiles)
        assert sum(t.size for t in tiles) == h * w


def test_reassemble_round_trip_bit_exact():
    rng = np.random.default_rng(1)
    image = rng.integers(0, 255, size=(11, 7, 3), dtype=np.uint8)
    tiles = split(image, 3, 2)
    np.testing.assert_array_equal(reassemble(tiles, 3, 2), image)


def test_grid_larger_than_image_errors():
    with pytest.raises(ValueError, match="larger than image"):
        split(np.zeros((2, 5)), 3, 1)
    with pytest.raises(ValueError, match="at least 1x1"):
        split(np.zeros((5, 5)), 0, 3)


def test_row_major_order():
    image = np.arange(36).reshape(6, 6)
    tiles = split(image, 2, 3)
    # first row of tiles comes entirely from the image's top half
    assert all(t.max() < 18 for t in tiles[:3])
    assert all(t.min() >= 18 for t in tiles[3:])
