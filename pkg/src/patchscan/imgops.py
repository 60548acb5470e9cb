"""Raster primitives shared by the whole pipeline.

Images are plain numpy arrays: RGB images are (H, W, 3) with 8-bit channels
(float copies appear after filtering), grayscale images are (H, W) float64
with values in [0, 255]. Intensities stay at floating precision internally;
quantization back to 8-bit happens only at file export.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ParameterError

# BT.601 luma weights. Recorded in the model artifact so training and
# inference always agree on the conversion.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle. x is the left column, y the top row."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ParameterError(f"rect sides must be >= 1, got {self.w}x{self.h}")


def check_rect_inside(r: Rect, width: int, height: int) -> None:
    """Raise BoundsError unless r lies fully inside a width x height image."""
    if r.x < 0 or r.y < 0 or r.x + r.w > width or r.y + r.h > height:
        raise BoundsError(f"rect {r} outside {width}x{height} image")


def as_rgb(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"expected (H, W, 3) RGB array, got shape {arr.shape}")
    return arr


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"expected (H, W) grayscale array, got shape {arr.shape}")
    return arr


def to_grayscale(img) -> np.ndarray:
    """BT.601 weighted sum of the three channels, kept at float precision."""
    arr = as_rgb(img).astype(np.float64)
    wr, wg, wb = GRAY_WEIGHTS
    return arr[:, :, 0] * wr + arr[:, :, 1] * wg + arr[:, :, 2] * wb


def build_integral(gray) -> np.ndarray:
    """Summed-area table with a zero top row and left column.

    Entry (i, j) is the sum of all pixels strictly above and left, so the
    table is (H+1, W+1). float64 accumulation is exact for 8-bit sources up
    to 64-megapixel images.
    """
    g = as_gray(gray)
    h, w = g.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    ii[1:, 1:] = g.cumsum(axis=0).cumsum(axis=1)
    return ii


def box_sum(ii: np.ndarray, r: Rect) -> float:
    """Exact sum of the pixels inside r, via four table lookups."""
    height, width = ii.shape[0] - 1, ii.shape[1] - 1
    check_rect_inside(r, width, height)
    x0, y0, x1, y1 = r.x, r.y, r.x + r.w, r.y + r.h
    return float(ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0])


def intensity_range(gray, r: Rect) -> tuple[float, float]:
    """(min, max) intensity over the pixels of r."""
    g = as_gray(gray)
    check_rect_inside(r, g.shape[1], g.shape[0])
    patch = g[r.y : r.y + r.h, r.x : r.x + r.w]
    return float(patch.min()), float(patch.max())


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian of radius ceil(3*sigma), normalized to sum 1."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve1d_reflect(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="reflect")
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.float64)
    for t, kt in enumerate(kernel):
        if axis == 0:
            out += kt * padded[t : t + h, :]
        else:
            out += kt * padded[:, t : t + w]
    return out


def gaussian_blur(gray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter with reflect padding at the borders."""
    g = as_gray(gray)
    kernel = gaussian_kernel(sigma)
    return _convolve1d_reflect(_convolve1d_reflect(g, kernel, 0), kernel, 1)


def rgb_to_hsv(r: float, g: float, b: float) -> tuple[float, float, float]:
    """Hexcone conversion of 8-bit channel values.

    Returns h in degrees [0, 360), s and v in [0, 1]; h is 0 when s is 0.
    """
    r = float(r)
    g = float(g)
    b = float(b)
    maxc = max(r, g, b)
    minc = min(r, g, b)
    delta = maxc - minc
    v = maxc / 255.0
    s = 0.0 if maxc == 0.0 else delta / maxc
    if delta == 0.0:
        h = 0.0
    elif maxc == r:
        h = 60.0 * (((g - b) / delta) % 6.0)
    elif maxc == g:
        h = 60.0 * ((b - r) / delta + 2.0)
    else:
        h = 60.0 * ((r - g) / delta + 4.0)
    return h, s, v


def rgb_to_hsv_planes(rgb) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized rgb_to_hsv over an (H, W, 3) array; bit-identical to the scalar op."""
    arr = as_rgb(rgb).astype(np.float64)
    r, g, b = arr[:, :, 0], arr[:, :, 1], arr[:, :, 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    v = maxc / 255.0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc == 0.0, 0.0, delta / maxc)
        hr = 60.0 * (((g - b) / delta) % 6.0)
        hg = 60.0 * ((b - r) / delta + 2.0)
        hb = 60.0 * ((r - g) / delta + 4.0)
    h = np.select([delta == 0.0, maxc == r, maxc == g], [0.0, hr, hg], default=hb)
    return h, s, v


@dataclass(frozen=True)
class PatchGrid:
    """Tiling of an image into patch_size squares.

    Anchors sit at multiples of patch_size; when a dimension is not an exact
    multiple the last row/column of anchors is clamped to dimension - patch_size,
    so border patches overlap instead of truncating and every pixel is covered.
    """

    patch_size: int
    image_width: int
    image_height: int
    row_anchors: tuple[int, ...]
    col_anchors: tuple[int, ...]

    @property
    def n_rows(self) -> int:
        return len(self.row_anchors)

    @property
    def n_cols(self) -> int:
        return len(self.col_anchors)

    @property
    def anchors(self) -> list[tuple[int, int]]:
        """All (row, col) anchors in row-major order."""
        return [(r, c) for r in self.row_anchors for c in self.col_anchors]

    def rect(self, row: int, col: int) -> Rect:
        return Rect(x=col, y=row, w=self.patch_size, h=self.patch_size)

    def covering(self, y: int, x: int) -> list[tuple[int, int]]:
        """Anchors whose patch contains pixel (row y, col x).

        Border patches overlap, so a pixel near the clamped edge can belong
        to two anchors per axis.
        """
        if not (0 <= y < self.image_height and 0 <= x < self.image_width):
            raise BoundsError(f"point ({x}, {y}) outside image")
        ps = self.patch_size

        def axis_hits(anchors, t):
            cands = {anchors[min(t // ps, len(anchors) - 1)], anchors[-1]}
            return sorted(a for a in cands if a <= t <= a + ps - 1)

        return [(r, c) for r in axis_hits(self.row_anchors, y) for c in axis_hits(self.col_anchors, x)]


def _axis_anchors(extent: int, patch: int) -> tuple[int, ...]:
    n = math.ceil(extent / patch)
    return tuple(min(i * patch, extent - patch) for i in range(n))


def partition(width: int, height: int, patch_size: int) -> PatchGrid:
    """Tile a width x height image into patch_size squares (see PatchGrid)."""
    if patch_size < 1:
        raise ParameterError(f"patch_size must be >= 1, got {patch_size}")
    if width < patch_size or height < patch_size:
        raise ParameterError(
            f"image {width}x{height} smaller than patch size {patch_size}"
        )
    return PatchGrid(
        patch_size=patch_size,
        image_width=width,
        image_height=height,
        row_anchors=_axis_anchors(height, patch_size),
        col_anchors=_axis_anchors(width, patch_size),
    )


def flip_patch(img, axis: str) -> np.ndarray:
    """Exact index-permutation flip; 'horizontal' mirrors columns, 'vertical' rows."""
    arr = np.asarray(img)
    if axis == "horizontal":
        return arr[:, ::-1].copy()
    if axis == "vertical":
        return arr[::-1, :].copy()
    raise ParameterError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")


def _reflect_coords(t: np.ndarray, n: int) -> np.ndarray:
    """Mirror a continuous coordinate into [0, n-1] without repeating the edge."""
    if n == 1:
        return np.zeros_like(t)
    period = 2.0 * (n - 1)
    t = np.abs(t) % period
    return np.where(t > n - 1, period - t, t)


def rotate_patch(img, angle: float) -> np.ndarray:
    """Rotate a square patch about its center, keeping the source dimensions.

    Samples use bilinear interpolation with reflect padding outside the
    source. Multiples of 180 degrees are exact index permutations. Output is
    float64 regardless of input dtype.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.shape[0] != arr.shape[1]:
        raise ParameterError(f"rotate_patch needs a square patch, got shape {arr.shape}")
    a = angle % 360.0
    if a == 0.0:
        return arr.copy()
    if a == 180.0:
        return arr[::-1, ::-1].copy()

    n = arr.shape[0]
    c = (n - 1) / 2.0
    rad = math.radians(a)
    cos_a, sin_a = math.cos(rad), math.sin(rad)
    yy, xx = np.meshgrid(np.arange(n) - c, np.arange(n) - c, indexing="ij")
    sx = _reflect_coords(cos_a * xx + sin_a * yy + c, n)
    sy = _reflect_coords(-sin_a * xx + cos_a * yy + c, n)

    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    fy = sy - y0
    fx = sx - x0
    y1 = np.minimum(y0 + 1, n - 1)
    x1 = np.minimum(x0 + 1, n - 1)
    if arr.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    p00, p01 = arr[y0, x0], arr[y0, x1]
    p10, p11 = arr[y1, x0], arr[y1, x1]
    # lerp form keeps constants exact: a + t*(b - a)
    top = p00 + fx * (p01 - p00)
    bot = p10 + fx * (p11 - p10)
    return top + fy * (bot - top)
