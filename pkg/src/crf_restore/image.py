"""Grayscale rasters and overlapping-patch geometry.

An image is a 2-D ``float64`` array indexed ``[row, col]`` with intensities
nominally in ``[0, 255]``.  Values stay unquantized in memory; clamping and
rounding happen only when an image is written to disk.

A patch is a square window vectorized in row-major order: entry ``j`` of the
patch at top-left ``(r, c)`` is pixel ``(r + j // size, c + j % size)``.  The
same convention is used everywhere (extraction, aggregation, statistics).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "PatchSystem",
    "extract_patch",
    "extract_patches",
    "aggregate_patches",
    "psnr",
    "load_image",
    "save_image",
]


def as_image(data) -> np.ndarray:
    """Coerce to a 2-D float64 array, validating the shape."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale array, got shape {img.shape}")
    return img


@dataclass(frozen=True)
class PatchSystem:
    """Geometry of overlapping patch extraction on a fixed image size.

    ``patch_positions`` lists the top-left corner of *every* position where a
    full patch fits, in row-major order, so the union of patches covers every
    pixel.  ``reference_positions`` is the sub-grid with spacing
    ``reference_stride``, always including the last valid row and column so
    that border patches fall inside some search window.
    """

    height: int
    width: int
    patch_size: int
    reference_stride: int
    patch_positions: np.ndarray      # (num_patches, 2) int
    reference_positions: np.ndarray  # (num_references, 2) int, row-major grid

    @classmethod
    def create(cls, height: int, width: int, patch_size: int = 8,
               reference_stride: int = 5) -> "PatchSystem":
        if patch_size < 1 or reference_stride < 1:
            raise ValueError("patch_size and reference_stride must be positive")
        if height < patch_size or width < patch_size:
            raise ValueError(
                f"image {height}x{width} smaller than patch size {patch_size}")
        gh = height - patch_size + 1
        gw = width - patch_size + 1
        rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
        positions = np.stack([rows.ravel(), cols.ravel()], axis=1)

        ref_rows = _strided_with_last(gh, reference_stride)
        ref_cols = _strided_with_last(gw, reference_stride)
        rr, cc = np.meshgrid(ref_rows, ref_cols, indexing="ij")
        references = np.stack([rr.ravel(), cc.ravel()], axis=1)

        return cls(height, width, patch_size, reference_stride,
                   positions, references)

    @property
    def n(self) -> int:
        """Pixels per patch."""
        return self.patch_size * self.patch_size

    @property
    def num_patches(self) -> int:
        return self.patch_positions.shape[0]

    @property
    def num_references(self) -> int:
        return self.reference_positions.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        """Shape of the dense grid of top-left positions."""
        return (self.height - self.patch_size + 1,
                self.width - self.patch_size + 1)

    def position_to_index(self, row: int, col: int) -> int:
        gh, gw = self.grid_shape
        if not (0 <= row < gh and 0 <= col < gw):
            raise IndexError(f"({row}, {col}) is not a valid patch position")
        return row * gw + col

    def flat_pixel_indices(self, indices=None) -> np.ndarray:
        """Flat image indices of every pixel of the selected patches.

        Shape ``(k, n)``; row ``i`` realizes the extraction operator of patch
        ``indices[i]`` as an index map.
        """
        pos = self.patch_positions if indices is None \
            else self.patch_positions[np.asarray(indices, dtype=np.intp)]
        p = self.patch_size
        dr = np.repeat(np.arange(p), p)
        dc = np.tile(np.arange(p), p)
        return (pos[:, :1] + dr) * self.width + (pos[:, 1:] + dc)


def _strided_with_last(limit: int, stride: int) -> np.ndarray:
    """Indices 0, s, 2s, ... plus the final valid index ``limit - 1``."""
    vals = np.arange(0, limit, stride)
    if vals[-1] != limit - 1:
        vals = np.append(vals, limit - 1)
    return vals


def extract_patch(img, sys: PatchSystem, idx: int) -> np.ndarray:
    """Pixels of patch ``idx`` as a length-``n`` vector (row-major window)."""
    if not 0 <= idx < sys.num_patches:
        raise IndexError(f"patch index {idx} out of range [0, {sys.num_patches})")
    img = as_image(img)
    r, c = sys.patch_positions[idx]
    p = sys.patch_size
    return img[r:r + p, c:c + p].ravel()


def extract_patches(img, sys: PatchSystem, indices=None) -> np.ndarray:
    """All (or selected) patches stacked as a ``(k, n)`` matrix."""
    img = np.ascontiguousarray(as_image(img))
    p = sys.patch_size
    win = sliding_window_view(img, (p, p))
    if indices is None:
        return win.reshape(sys.num_patches, sys.n)
    indices = np.asarray(indices, dtype=np.intp)
    pos = sys.patch_positions[indices]
    return win[pos[:, 0], pos[:, 1]].reshape(indices.size, sys.n)


def aggregate_patches(indices, vectors, sys: PatchSystem) -> np.ndarray:
    """Rebuild an image from patch vectors, averaging overlapping entries.

    Every output pixel is the arithmetic mean of all supplied patch entries
    that map to it; duplicate indices are allowed and contribute repeatedly.
    Raises ``ValueError`` naming the first pixel not covered by any patch.
    """
    indices = np.atleast_1d(np.asarray(indices, dtype=np.intp))
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if vectors.shape != (indices.size, sys.n):
        raise ValueError(
            f"expected vectors of shape {(indices.size, sys.n)}, got {vectors.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= sys.num_patches):
        raise IndexError("patch index out of range")

    h, w, p = sys.height, sys.width, sys.patch_size
    gh, gw = sys.grid_shape
    full_grid = indices.size == sys.num_patches and \
        np.array_equal(indices, np.arange(sys.num_patches))
    if full_grid:
        grid = vectors.reshape(gh, gw, p, p)
        acc = np.zeros((h, w))
        cnt = np.zeros((h, w))
        for dr in range(p):
            for dc in range(p):
                acc[dr:dr + gh, dc:dc + gw] += grid[:, :, dr, dc]
                cnt[dr:dr + gh, dc:dc + gw] += 1.0
    else:
        flat = sys.flat_pixel_indices(indices).ravel()
        acc = np.bincount(flat, weights=vectors.ravel(), minlength=h * w).reshape(h, w)
        cnt = np.bincount(flat, minlength=h * w).astype(np.float64).reshape(h, w)

    uncovered = cnt == 0
    if uncovered.any():
        r, c = np.unravel_index(np.argmax(uncovered), (h, w))
        raise ValueError(f"no patch covers pixel ({r}, {c})")
    return acc / cnt


def psnr(reference, test, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are equal."""
    a = as_image(reference)
    b = as_image(test)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# File I/O.  Binary PGM (P5) is parsed natively so 16-bit samples survive as
# raw values; PNG goes through Pillow and must be single-channel.

def load_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        return _parse_pgm(data)
    if data[:2] in (b"P1", b"P2", b"P3", b"P4", b"P6"):
        raise ValueError("only binary P5 PGM files are supported")
    return _load_with_pillow(data, path)


def save_image(img, path) -> None:
    """Write as 8-bit grayscale: values clamped to [0, 255], rounded to nearest."""
    img = as_image(img)
    quantized = np.rint(np.clip(img, 0.0, 255.0)).astype(np.uint8)
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        _write_pgm(quantized, path)
    elif suffix == ".png":
        from PIL import Image
        Image.fromarray(quantized, mode="L").save(path)
    else:
        raise ValueError(f"unsupported output format '{suffix}' (use .pgm or .png)")


def _load_with_pillow(data: bytes, path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except UnidentifiedImageError as exc:
        raise ValueError(f"unsupported image format: {path}") from exc
    if im.mode not in ("L", "I", "I;16", "I;16B", "F"):
        raise ValueError(
            f"images must be single-channel grayscale, got mode '{im.mode}': {path}")
    return np.asarray(im, dtype=np.float64)


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos] not in (0x0A, 0x0D):
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated PGM header")
    return data[start:pos], pos


def _parse_pgm(data: bytes) -> np.ndarray:
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise ValueError(f"bad PGM header token {token!r}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ValueError(f"bad PGM dimensions {width}x{height} maxval {maxval}")
    pos += 1  # single whitespace byte separates header and raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raster = np.frombuffer(data, dtype=dtype, count=-1, offset=pos)
    if raster.size < count:
        raise ValueError("truncated PGM raster")
    return raster[:count].reshape(height, width).astype(np.float64)


def _write_pgm(quantized: np.ndarray, path) -> None:
    header = f"P5\n{quantized.shape[1]} {quantized.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + quantized.tobytes())
