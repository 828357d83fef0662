"""Grid tiling of images into snippets for local alignment.

The default 3x3 split tiles an image into nine non-overlapping snippets.
Indivisible dimensions use floor division with the remainder absorbed by
the last row/column, so the tiles always cover the image exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SnippetGrid:
    """Row-major tiling: ``boundaries[k] = (top, bottom, left, right)`` half-open."""

    rows: int
    cols: int
    boundaries: tuple[tuple[int, int, int, int], ...]

    @property
    def count(self) -> int:
        return self.rows * self.cols


def _edges(extent: int, parts: int) -> list[int]:
    step = extent // parts
    edges = [i * step for i in range(parts)]
    edges.append(extent)  # last tile absorbs the remainder
    return edges


def grid_for(height: int, width: int, rows: int, cols: int) -> SnippetGrid:
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be at least 1x1, got {rows}x{cols}")
    if height < rows or width < cols:
        raise ValueError(
            f"grid {rows}x{cols} larger than image {height}x{width}"
        )
    row_edges = _edges(height, rows)
    col_edges = _edges(width, cols)
    boundaries = tuple(
        (row_edges[r], row_edges[r + 1], col_edges[c], col_edges[c + 1])
        for r in range(rows)
        for c in range(cols)
    )
    return SnippetGrid(rows=rows, cols=cols, boundaries=boundaries)


def split(image: np.ndarray, rows: int, cols: int) -> list[np.ndarray]:
    """Split ``image`` (H x W[, channels]) into row-major ordered snippets."""
    image = np.asarray(image)
    if image.ndim < 2:
        raise ValueError(f"expected a 2-D or 3-D pixel array, got shape {image.shape}")
    grid = grid_for(image.shape[0], image.shape[1], rows, cols)
    return [image[top:bottom, left:right] for top, bottom, left, right in grid.boundaries]


def reassemble(snippets: list[np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`split` for row-major ordered snippets."""
    if len(snippets) != rows * cols:
        raise ValueError(f"expected {rows * cols} snippets, got {len(snippets)}")
    bands = [
        np.concatenate(snippets[r * cols : (r + 1) * cols], axis=1) for r in range(rows)
    ]
    return np.concatenate(bands, axis=0)
