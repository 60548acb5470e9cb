"""Fixed-length patch descriptors: color histograms, uniform LBP, an upright
SURF-style descriptor, and externally supplied embedding vectors.

Every descriptor is a pure function of the patch; dimensions depend only on
the descriptor kind (and, for external embeddings, the manifest header).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmbeddingLookupError, FormatError, ParameterError
from .imgops import as_gray, as_rgb, build_integral, rgb_to_hsv_planes, to_grayscale

KIND_RGB_HIST = "rgb-hist"
KIND_HSV_HIST = "hsv-hist"
KIND_LBP = "lbp"
KIND_SURF = "surf"
KIND_EXTERNAL = "external"

FEATURE_KINDS = (KIND_RGB_HIST, KIND_HSV_HIST, KIND_LBP, KIND_SURF, KIND_EXTERNAL)

HIST_BINS = 32  # per channel; 3 channels -> 96-dim histograms
LBP_BINS = 59  # 58 uniform patterns + 1 catch-all
SURF_DIM = 64


def feature_dim(kind: str, embeddings: "EmbeddingManifest | None" = None) -> int:
    if kind in (KIND_RGB_HIST, KIND_HSV_HIST):
        return 3 * HIST_BINS
    if kind == KIND_LBP:
        return LBP_BINS
    if kind == KIND_SURF:
        return SURF_DIM
    if kind == KIND_EXTERNAL:
        if embeddings is None:
            raise ParameterError("external feature kind needs a loaded embedding manifest")
        return embeddings.dim
    raise ParameterError(f"unknown feature kind {kind!r}")


def rgb_histogram(patch) -> np.ndarray:
    """32 uniform bins per channel over [0, 256), concatenated R|G|B, L1-normalized."""
    arr = as_rgb(patch).astype(np.float64)
    idx = np.minimum(np.floor(arr / 8.0), HIST_BINS - 1).astype(np.intp)
    flat = idx + (np.arange(3) * HIST_BINS)[None, None, :]
    hist = np.bincount(flat.ravel(), minlength=3 * HIST_BINS).astype(np.float64)
    return hist / hist.sum()


def hsv_histogram(patch) -> np.ndarray:
    """Hexcone conversion per pixel, then 32 bins per HSV channel, L1-normalized."""
    h, s, v = rgb_to_hsv_planes(patch)
    hi = np.minimum(np.floor(h / (360.0 / HIST_BINS)), HIST_BINS - 1).astype(np.intp)
    si = np.minimum(np.floor(s * HIST_BINS), HIST_BINS - 1).astype(np.intp)
    vi = np.minimum(np.floor(v * HIST_BINS), HIST_BINS - 1).astype(np.intp)
    hist = np.concatenate(
        [
            np.bincount(hi.ravel(), minlength=HIST_BINS),
            np.bincount(si.ravel(), minlength=HIST_BINS),
            np.bincount(vi.ravel(), minlength=HIST_BINS),
        ]
    ).astype(np.float64)
    return hist / hist.sum()


def _circular_transitions(byte: int) -> int:
    bits = [(byte >> k) & 1 for k in range(8)]
    return sum(bits[k] != bits[(k + 1) % 8] for k in range(8))


def _build_uniform_lut() -> np.ndarray:
    lut = np.full(256, LBP_BINS - 1, dtype=np.intp)
    uniform = [b for b in range(256) if _circular_transitions(b) <= 2]
    for i, b in enumerate(uniform):
        lut[b] = i
    assert len(uniform) == 58
    return lut


_UNIFORM_LUT = _build_uniform_lut()

# Neighbor k sits at angle 45*k degrees, radius 1: (dy, dx) with y down.
_SQH = math.sqrt(0.5)
_LBP_OFFSETS = (
    (0.0, 1.0),
    (-_SQH, _SQH),
    (-1.0, 0.0),
    (-_SQH, -_SQH),
    (0.0, -1.0),
    (_SQH, -_SQH),
    (1.0, 0.0),
    (_SQH, _SQH),
)


def lbp_histogram(gray_patch) -> np.ndarray:
    """Uniform LBP(8, 1) histogram over the interior pixels.

    Threshold is neighbor >= center; the four diagonal neighbors are sampled
    bilinearly. 58 uniform-pattern bins plus one catch-all, L1-normalized.
    """
    g = as_gray(gray_patch)
    if g.shape[0] < 3 or g.shape[1] < 3:
        raise ParameterError(f"LBP needs at least 3x3, got {g.shape}")
    center = g[1:-1, 1:-1]
    east, west = g[1:-1, 2:], g[1:-1, :-2]
    north, south = g[:-2, 1:-1], g[2:, 1:-1]
    ne, nw = g[:-2, 2:], g[:-2, :-2]
    se, sw = g[2:, 2:], g[2:, :-2]

    d = _SQH

    def diag(row_same, row_far):
        # lerp form: exact for constant neighborhoods
        return row_same + d * (row_far - row_same)

    samples = (
        east,
        diag(center + d * (east - center), north + d * (ne - north)),
        north,
        diag(center + d * (west - center), north + d * (nw - north)),
        west,
        diag(center + d * (west - center), south + d * (sw - south)),
        south,
        diag(center + d * (east - center), south + d * (se - south)),
    )
    code = np.zeros(center.shape, dtype=np.intp)
    for k, sample in enumerate(samples):
        code |= (sample >= center).astype(np.intp) << k
    hist = np.bincount(_UNIFORM_LUT[code].ravel(), minlength=LBP_BINS).astype(np.float64)
    return hist / hist.sum()


def surf_patch_descriptor(gray_patch) -> np.ndarray:
    """Upright 64-dim SURF-style descriptor with one synthetic center keypoint.

    The patch side defines the scale s = side/20; a 20x20 grid of Haar
    wavelet responses (size 2*round(s)) is accumulated into 4x4 subregions as
    (sum dx, sum dy, sum |dx|, sum |dy|), Gaussian-weighted from the center
    (sigma 3.3*s). Samples whose wavelet support exits the patch contribute
    zero. L2-normalized; a constant patch yields the zero vector.
    """
    g = as_gray(gray_patch)
    n = g.shape[0]
    if g.shape[0] != g.shape[1] or n < 40:
        raise ParameterError(f"descriptor needs a square patch with side >= 40, got {g.shape}")
    s = n / 20.0
    half = max(1, round(s))
    ii = build_integral(g)
    c = (n - 1) / 2.0
    sigma = 3.3 * s

    def haar(py: int, px: int) -> tuple[float, float]:
        if py - half < 0 or py + half > n or px - half < 0 or px + half > n:
            return 0.0, 0.0
        left = float(ii[py + half, px] - ii[py - half, px] - ii[py + half, px - half] + ii[py - half, px - half])
        right = float(ii[py + half, px + half] - ii[py - half, px + half] - ii[py + half, px] + ii[py - half, px])
        top = float(ii[py, px + half] - ii[py - half, px + half] - ii[py, px - half] + ii[py - half, px - half])
        bottom = float(ii[py + half, px + half] - ii[py, px + half] - ii[py + half, px - half] + ii[py, px - half])
        return right - left, bottom - top

    acc = np.zeros((4, 4, 4), dtype=np.float64)
    for u in range(20):
        fy = c + (u - 9.5) * s
        py = round(fy)
        for v in range(20):
            fx = c + (v - 9.5) * s
            px = round(fx)
            dx, dy = haar(py, px)
            if dx == 0.0 and dy == 0.0:
                continue
            w = math.exp(-((fy - c) ** 2 + (fx - c) ** 2) / (2.0 * sigma * sigma))
            cell = acc[u // 5, v // 5]
            cell[0] += w * dx
            cell[1] += w * dy
            cell[2] += w * abs(dx)
            cell[3] += w * abs(dy)
    desc = acc.ravel()
    norm = math.sqrt(float(desc @ desc))
    if norm == 0.0:
        return desc
    return desc / norm


@dataclass(frozen=True)
class EmbeddingManifest:
    """Index over an externally produced vector file.

    The vector file holds N x K little-endian float32 values, contiguous.
    The text manifest is a `K=<int>` header followed by `patch_key<TAB>row`
    lines; `#` starts a comment.
    """

    dim: int
    byte_order: str
    element_width: int
    index: dict[str, int]  # patch key -> byte offset into the vector file
    vectors: np.ndarray  # (N, K) float32

    def keys(self):
        return self.index.keys()


def default_vectors_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".f32")


def load_embeddings(manifest_path, vectors_path=None) -> EmbeddingManifest:
    """Parse an embedding manifest and map its vector file."""
    manifest_path = Path(manifest_path)
    if vectors_path is None:
        vectors_path = default_vectors_path(manifest_path)
    vectors_path = Path(vectors_path)
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    content = [l for l in lines if l.strip() and not l.lstrip().startswith("#")]
    if not content or not content[0].startswith("K="):
        raise FormatError(f"{manifest_path}: first line must be K=<int>")
    try:
        dim = int(content[0][2:])
    except ValueError as e:
        raise FormatError(f"{manifest_path}: bad dimension header {content[0]!r}") from e
    if dim < 1:
        raise FormatError(f"{manifest_path}: dimension must be >= 1, got {dim}")

    width = 4
    index: dict[str, int] = {}
    for lineno, line in enumerate(content[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{manifest_path}:{lineno}: expected key<TAB>row, got {line!r}")
        key, row_s = parts
        try:
            row = int(row_s)
        except ValueError as e:
            raise FormatError(f"{manifest_path}:{lineno}: bad row index {row_s!r}") from e
        if row < 0:
            raise FormatError(f"{manifest_path}:{lineno}: negative row index")
        index[key] = row * dim * width

    size = vectors_path.stat().st_size
    if size % (dim * width) != 0:
        raise FormatError(f"{vectors_path}: size {size} is not a multiple of K*{width}")
    n_rows = size // (dim * width)
    for key, offset in index.items():
        if offset + dim * width > size:
            raise FormatError(
                f"{manifest_path}: key {key!r} points past the end of {vectors_path}"
            )
    vectors = np.fromfile(vectors_path, dtype="<f4").reshape(n_rows, dim)
    return EmbeddingManifest(
        dim=dim, byte_order="<", element_width=width, index=index, vectors=vectors
    )


def lookup_embedding(manifest: EmbeddingManifest, patch_key: str) -> np.ndarray:
    if patch_key not in manifest.index:
        raise EmbeddingLookupError(f"no embedding for patch key {patch_key!r}")
    row = manifest.index[patch_key] // (manifest.dim * manifest.element_width)
    return manifest.vectors[row].copy()


def write_embeddings(manifest_path, keys, matrix, vectors_path=None) -> None:
    """Export vectors + manifest in the format load_embeddings reads."""
    matrix = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if matrix.ndim != 2 or matrix.shape[0] != len(keys):
        raise ParameterError("matrix must be (len(keys), K)")
    manifest_path = Path(manifest_path)
    if vectors_path is None:
        vectors_path = default_vectors_path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    matrix.tofile(vectors_path)
    lines = [f"K={matrix.shape[1]}"]
    lines += [f"{key}\t{row}" for row, key in enumerate(keys)]
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def extract(
    patch,
    kind: str,
    embeddings: EmbeddingManifest | None = None,
    patch_key: str | None = None,
) -> np.ndarray:
    """Compute the descriptor of one RGB patch, converting to grayscale where needed."""
    if kind == KIND_RGB_HIST:
        return rgb_histogram(patch)
    if kind == KIND_HSV_HIST:
        return hsv_histogram(patch)
    if kind == KIND_LBP:
        return lbp_histogram(to_grayscale(patch))
    if kind == KIND_SURF:
        return surf_patch_descriptor(to_grayscale(patch))
    if kind == KIND_EXTERNAL:
        if embeddings is None:
            raise ParameterError("external feature kind requires an embedding manifest")
        if patch_key is None:
            raise ParameterError("external feature kind requires a patch key")
        return lookup_embedding(embeddings, patch_key).astype(np.float64)
    raise ParameterError(f"unknown feature kind {kind!r}")
