"""Overlapping patch extraction and mean-overlap stitching.

A patch grid covers an H x W image with p x p patches whose origins step by
the stride s along each axis; if the last stride step does not reach the far
edge, one extra offset at (dim - p) is appended so every pixel is covered.
Stitching averages overlapping patch pixels back into an image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def axis_offsets(dim: int, p: int, s: int) -> list[int]:
    """Patch origins along one axis of length dim: 0, s, 2s, ... plus an
    edge-aligned final offset at dim - p when the grid would fall short."""
    if p < 1 or s < 1:
        raise ValueError(f"patch size and stride must be >= 1, got p={p} s={s}")
    if p > dim:
        raise ValueError(f"patch size {p} exceeds axis length {dim}")
    offsets = list(range(0, dim - p + 1, s))
    if offsets[-1] + p < dim:
        offsets.append(dim - p)
    for prev, nxt in zip(offsets, offsets[1:]):
        if nxt - prev > p:
            raise ValueError(
                f"stride {s} with patch size {p} leaves pixels "
                f"({prev + p}..{nxt - 1}) uncovered on an axis of length {dim}"
            )
    return offsets


@dataclass(frozen=True)
class PatchGrid:
    """Row-major grid of patch origins over an (H, W) image."""

    height: int
    width: int
    patch: int
    stride: int
    row_offsets: tuple[int, ...]
    col_offsets: tuple[int, ...]

    @property
    def origins(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.row_offsets for c in self.col_offsets]

    @property
    def n_patches(self) -> int:
        return len(self.row_offsets) * len(self.col_offsets)


def build_grid(height: int, width: int, patch: int, stride: int) -> PatchGrid:
    return PatchGrid(
        height=height,
        width=width,
        patch=patch,
        stride=stride,
        row_offsets=tuple(axis_offsets(height, patch, stride)),
        col_offsets=tuple(axis_offsets(width, patch, stride)),
    )


def extract(pixels: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Extract all grid patches from a (C, H, W) array as (N, C, p, p),
    in row-major origin order."""
    c, h, w = pixels.shape
    if (h, w) != (grid.height, grid.width):
        raise ValueError(f"grid built for {grid.height}x{grid.width}, image is {h}x{w}")
    p = grid.patch
    out = np.empty((grid.n_patches, c, p, p), dtype=pixels.dtype)
    for i, (r, col) in enumerate(grid.origins):
        out[i] = pixels[:, r : r + p, col : col + p]
    return out


def stitch(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Reassemble (N, C, p, p) patches into a (C, H, W) image, averaging
    pixels covered by more than one patch.

    Sums are accumulated in float64 before dividing by coverage counts, so a
    patch set extracted from an image stitches back to it bit-exactly.
    """
    n, c, ph, pw = patches.shape
    if n != grid.n_patches:
        raise ValueError(f"grid has {grid.n_patches} patches, got {n}")
    if (ph, pw) != (grid.patch, grid.patch):
        raise ValueError(f"expected {grid.patch}x{grid.patch} patches, got {ph}x{pw}")
    total = np.zeros((c, grid.height, grid.width), dtype=np.float64)
    count = np.zeros((grid.height, grid.width), dtype=np.int64)
    p = grid.patch
    for i, (r, col) in enumerate(grid.origins):
        total[:, r : r + p, col : col + p] += patches[i]
        count[r : r + p, col : col + p] += 1
    if (count == 0).any():
        raise ValueError("grid leaves pixels uncovered")  # unreachable by construction
    return (total / count).astype(np.float32)
