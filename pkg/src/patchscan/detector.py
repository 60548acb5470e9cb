"""Box-filter Hessian interest-point detector and the region-of-interest gate.

Responses are determinant-of-Hessian approximations computed with box filters
on an integral image: det = Dxx*Dyy - (0.9*Dxy)^2, each component normalized
by the filter area (1/L^2, so the determinant carries 1/L^4). The filter
ladder is the standard one: sizes 9/15/21/27 in octave 1, with the size step
and the sampling stride doubling per octave.

The hot loops are JIT-compiled; they only write disjoint cells, so results
are bit-identical regardless of thread count.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit, prange

from .errors import BoundsError, ParameterError
from .imgops import PatchGrid, as_gray, build_integral

LAYERS_PER_OCTAVE = 4

# Calibrated on the synthetic generator defaults: keeps >=95% of ground-truth
# defect patches gated in (measured 100% with ~17% of patches selected, well
# under the 40% budget). Overridable via DetectorParams / --surf-threshold.
DEFAULT_THRESHOLD = 6.0


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    scale: float
    response: float


@dataclass(frozen=True)
class DetectorParams:
    threshold: float = DEFAULT_THRESHOLD
    octaves: int = 3

    def __post_init__(self):
        if self.threshold <= 0:
            raise ParameterError(f"threshold must be > 0, got {self.threshold}")
        if self.octaves < 1:
            raise ParameterError(f"octaves must be >= 1, got {self.octaves}")


def octave_filter_sizes(octave: int) -> list[int]:
    """Filter sizes of one octave (1-based): 9,15,21,27 then 15,27,39,51, ..."""
    step = 6 * 2 ** (octave - 1)
    first = 3 * 2**octave + 3
    return [first + k * step for k in range(LAYERS_PER_OCTAVE)]


@njit(cache=True, inline="always")
def _box(ii, r, c, h, w):
    return ii[r + h, c + w] - ii[r, c + w] - ii[r + h, c] + ii[r, c]


@njit(cache=True, inline="always")
def _det(ii, r, c, L):
    lobe = L // 3
    border = (L - 1) // 2
    inv_area = 1.0 / (L * L)
    dxx = _box(ii, r - lobe + 1, c - border, 2 * lobe - 1, L) - 3.0 * _box(
        ii, r - lobe + 1, c - lobe // 2, 2 * lobe - 1, lobe
    )
    dyy = _box(ii, r - border, c - lobe + 1, L, 2 * lobe - 1) - 3.0 * _box(
        ii, r - lobe // 2, c - lobe + 1, lobe, 2 * lobe - 1
    )
    dxy = (
        _box(ii, r - lobe, c + 1, lobe, lobe)
        + _box(ii, r + 1, c - lobe, lobe, lobe)
        - _box(ii, r - lobe, c - lobe, lobe, lobe)
        - _box(ii, r + 1, c + 1, lobe, lobe)
    )
    dxx *= inv_area
    dyy *= inv_area
    dxy *= inv_area
    return dxx * dyy - 0.81 * dxy * dxy


@njit(cache=True, parallel=True)
def _response_layer(ii, height, width, L, stride, out):
    border = (L - 1) // 2
    hs, ws = out.shape
    for i in prange(hs):
        r = i * stride
        if r < border or r > height - 1 - border:
            for j in range(ws):
                out[i, j] = -np.inf
        else:
            for j in range(ws):
                c = j * stride
                if c < border or c > width - 1 - border:
                    out[i, j] = -np.inf
                else:
                    out[i, j] = _det(ii, r, c, L)


def _check_filter_size(L: int) -> None:
    if L < 9 or L % 6 != 3:
        raise ParameterError(f"filter size must be 9, 15, 21, ... got {L}")


def hessian_response(ii: np.ndarray, x: int, y: int, filter_size: int) -> float:
    """Normalized Hessian determinant at pixel (x, y) for one filter size."""
    _check_filter_size(filter_size)
    height, width = ii.shape[0] - 1, ii.shape[1] - 1
    border = (filter_size - 1) // 2
    if not (border <= y <= height - 1 - border and border <= x <= width - 1 - border):
        raise BoundsError(
            f"{filter_size}x{filter_size} footprint at ({x}, {y}) exits {width}x{height} image"
        )
    return float(_det(ii, y, x, filter_size))


def scale_of(filter_size: int) -> float:
    return 1.2 * filter_size / 9.0


def detect(gray, params: DetectorParams | None = None) -> list[Keypoint]:
    """Interest points: response above threshold and strict 3x3x3 scale-space maxima.

    Maxima are only taken in the two middle layers of each octave, at that
    octave's sampling stride. Responses are not computed where the filter
    footprint exits the image. Output is sorted by (y, x, scale) and
    deduplicated across octaves.
    """
    if params is None:
        params = DetectorParams()
    g = as_gray(gray)
    height, width = g.shape
    if height < 27 or width < 27:
        raise ParameterError(f"image {width}x{height} too small to detect on (needs 27x27)")
    ii = build_integral(g)

    found: dict[tuple[int, int, float], Keypoint] = {}
    for octave in range(1, params.octaves + 1):
        stride = 2 ** (octave - 1)
        sizes = octave_filter_sizes(octave)
        hs = (height + stride - 1) // stride
        ws = (width + stride - 1) // stride
        resp = np.empty((LAYERS_PER_OCTAVE, hs, ws), dtype=np.float64)
        for k, L in enumerate(sizes):
            _response_layer(ii, height, width, L, stride, resp[k])
        for k in (1, 2):
            layer = resp[k]
            for i, j in np.argwhere(layer > params.threshold):
                v = layer[i, j]
                if _is_strict_max(resp, k, int(i), int(j), v):
                    x = int(j) * stride
                    y = int(i) * stride
                    key = (x, y, scale_of(sizes[k]))
                    if key not in found:
                        found[key] = Keypoint(x=x, y=y, scale=key[2], response=float(v))
    kps = sorted(found.values(), key=lambda p: (p.y, p.x, p.scale))
    return kps


def _is_strict_max(resp: np.ndarray, k: int, i: int, j: int, v: float) -> bool:
    _, hs, ws = resp.shape
    for dk in (-1, 0, 1):
        for di in (-1, 0, 1):
            ii_ = i + di
            if ii_ < 0 or ii_ >= hs:
                continue
            for dj in (-1, 0, 1):
                if dk == 0 and di == 0 and dj == 0:
                    continue
                jj = j + dj
                if jj < 0 or jj >= ws:
                    continue
                if resp[k + dk, ii_, jj] >= v:
                    return False
    return True


def gate_patches(grid: PatchGrid, keypoints: list[Keypoint]) -> set[tuple[int, int]]:
    """Anchors of every patch that contains at least one keypoint.

    Clamped border patches overlap, so one keypoint can select more than one
    anchor.
    """
    selected: set[tuple[int, int]] = set()
    for kp in keypoints:
        selected.update(grid.covering(kp.y, kp.x))
    return selected


def save_keypoints_csv(keypoints: list[Keypoint], path) -> None:
    """Debug dump: one `x,y,scale,response` row per keypoint."""
    lines = ["x,y,scale,response"]
    lines += [f"{k.x},{k.y},{k.scale:.6g},{k.response:.10g}" for k in keypoints]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
