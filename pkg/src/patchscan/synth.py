"""Synthetic fuselage-style imagery with exact ground-truth masks.

A generated scene is a smooth illuminated sheet with rivet dots and dark seam
lines as non-defect structure, plus dark defect primitives (wide scratch
bands and dent blobs) that carry both coarse blotchy texture and pixel-scale
grain. The mask marks exactly the pixels a defect primitive modified; dirt
speckle is rendered after the mask is fixed and is deliberately NOT masked,
so dirty scenes genuinely confuse a detector tuned on clean ones.

Everything is a pure function of the config (including its seed): same
config, bit-identical sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Sample
from .errors import DatasetError, ParameterError
from .image_io import quantize_u8

# Per-channel tint applied when expanding gray renders to RGB.
_TINT = (0.985, 1.0, 1.02)

_PLACEMENT_TRIES = 500


@dataclass(frozen=True)
class SynthConfig:
    width: int = 1024
    height: int = 1024
    rivet_spacing: int = 96
    seam_count: int = 3
    defect_count: int = 4
    defect_kinds: tuple[str, ...] = ("scratch", "dent")
    scratch_width: tuple[float, float] = (36.0, 52.0)
    scratch_length: tuple[float, float] = (150.0, 360.0)
    dent_radius: tuple[float, float] = (34.0, 45.0)
    defect_contrast: tuple[float, float] = (55.0, 100.0)
    dirt_level: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ParameterError("image dimensions must be positive")
        if self.rivet_spacing < 1:
            raise ParameterError("rivet spacing must be positive")
        if self.seam_count < 0 or self.defect_count < 0:
            raise ParameterError("counts must be non-negative")
        if not 0.0 <= self.dirt_level <= 1.0:
            raise ParameterError(f"dirt level must be in [0, 1], got {self.dirt_level}")
        for lo, hi in (self.scratch_width, self.scratch_length, self.dent_radius, self.defect_contrast):
            if lo <= 0 or hi < lo:
                raise ParameterError("range bounds must be positive and ordered")
        unknown = set(self.defect_kinds) - {"scratch", "dent"}
        if unknown or not self.defect_kinds:
            raise ParameterError(f"defect kinds must be from {{scratch, dent}}, got {self.defect_kinds}")


@dataclass
class SynthDebug:
    """Float-precision layers kept for tests: background vs background+defects."""

    background: np.ndarray
    with_defects: np.ndarray


def _band_profile(dist: np.ndarray, half: float, edge: float) -> np.ndarray:
    """Flat top out to half-edge, then a cos^2 roll-off; exact 0 beyond half."""
    t = np.clip((dist - (half - edge)) / edge, 0.0, 1.0)
    prof = np.where(dist <= half, np.cos(0.5 * np.pi * t) ** 2, 0.0)
    prof[prof < 1e-3] = 0.0
    return prof


def _blob_noise(rng: np.random.Generator, h: int, w: int, cell: int = 14) -> np.ndarray:
    """Band-limited noise in [-0.9, 0.9]: a coarse grid upsampled bilinearly."""
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.normal(0.0, 1.0, size=(gh, gw))
    ys = np.linspace(0, gh - 1.001, h)
    xs = np.linspace(0, gw - 1.001, w)
    y0 = ys.astype(np.intp)
    x0 = xs.astype(np.intp)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[y0][:, x0] + fx * (grid[y0][:, x0 + 1] - grid[y0][:, x0])
    bot = grid[y0 + 1][:, x0] + fx * (grid[y0 + 1][:, x0 + 1] - grid[y0 + 1][:, x0])
    field_ = top + fy * (bot - top)
    return np.clip(field_ / 2.0, -0.9, 0.9)


def _render_background(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.height, cfg.width
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    yn, xn = yy / h, xx / w

    base = rng.uniform(155.0, 195.0)
    gx, gy = rng.uniform(-20.0, 20.0, size=2)
    amp = rng.uniform(5.0, 12.0)
    fx, fy = rng.uniform(0.4, 1.1, size=2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    bg = base + gx * (xn - 0.5) + gy * (yn - 0.5) + amp * np.sin(2.0 * np.pi * (fx * xn + fy * yn) + phase)
    # surface mottling: weak coarse grain that survives mild blurring, so the
    # texture statistics of a filtered sheet match between clean and dirty
    bg += 3.1 * _blob_noise(rng, h, w, cell=7)

    # dark seam lines spanning the full width, with rivet rows along them
    seam_rows = []
    if cfg.seam_count > 0:
        margin = h // (cfg.seam_count + 1)
        for k in range(cfg.seam_count):
            seam_rows.append((k + 1) * margin + int(rng.integers(-margin // 4, margin // 4 + 1)))
    for sy in seam_rows:
        seam_amp = rng.uniform(13.0, 20.0)
        bg -= seam_amp * np.exp(-((yy - sy) ** 2) / (2.0 * 1.6**2))

    def stamp_rivet(cy: float, cx: float):
        r = rng.uniform(3.5, 5.5)
        a = rng.uniform(8.0, 13.0)
        y0, y1 = max(0, int(cy - r - 2)), min(h, int(cy + r + 3))
        x0, x1 = max(0, int(cx - r - 2)), min(w, int(cx + r + 3))
        if y0 >= y1 or x0 >= x1:
            return
        ly, lx = np.meshgrid(np.arange(y0, y1, dtype=np.float64), np.arange(x0, x1, dtype=np.float64), indexing="ij")
        dist = np.sqrt((ly - cy) ** 2 + (lx - cx) ** 2)
        prof = np.where(dist < r, np.cos(0.5 * np.pi * np.clip(dist / r, 0.0, 1.0)) ** 2, 0.0)
        bg[y0:y1, x0:x1] -= a * prof

    sp = float(cfg.rivet_spacing)
    for sy in seam_rows:
        for cx in np.arange(sp / 2.0, w, sp / 2.0):
            stamp_rivet(sy + rng.uniform(-1.5, 1.5), cx + rng.uniform(-2.0, 2.0))
    for cy in np.arange(sp / 2.0, h, sp):
        if any(abs(cy - s) < sp / 4.0 for s in seam_rows):
            continue
        for cx in np.arange(sp / 2.0, w, sp):
            stamp_rivet(cy + rng.uniform(-2.0, 2.0), cx + rng.uniform(-2.0, 2.0))

    if cfg.noise_sigma > 0:
        bg += rng.normal(0.0, cfg.noise_sigma, size=(h, w))
    return np.clip(bg, 118.0, 224.0)


def _scratch_geometry(cfg: SynthConfig, rng: np.random.Generator):
    total = rng.uniform(*cfg.scratch_length)
    width = rng.uniform(*cfg.scratch_width)
    n_seg = int(rng.integers(2, 4))
    angle = rng.uniform(0.0, 2.0 * np.pi)
    pts = [np.zeros(2)]
    remaining = total
    for k in range(n_seg):
        seg = remaining / (n_seg - k) if k < n_seg - 1 else remaining
        step = np.array([np.cos(angle), np.sin(angle)]) * seg
        pts.append(pts[-1] + step)
        remaining -= seg
        angle += rng.uniform(-0.6, 0.6)
    pts = np.array(pts)
    return pts, width


def _segment_distance(py: np.ndarray, px: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.sqrt((px - a[0]) ** 2 + (py - a[1]) ** 2)
    t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    cx = a[0] + t * ab[0]
    cy = a[1] + t * ab[1]
    return np.sqrt((px - cx) ** 2 + (py - cy) ** 2)


def _render_defect(cfg: SynthConfig, rng: np.random.Generator, kind: str):
    """Returns (delta, mask) local arrays plus the bounding box placement size."""
    if kind == "scratch":
        pts, width = _scratch_geometry(cfg, rng)
        half = width / 2.0
        lo = pts.min(axis=0) - half - 2
        hi = pts.max(axis=0) + half + 2
        pts = pts - lo
        bw, bh = int(np.ceil(hi[0] - lo[0])) + 1, int(np.ceil(hi[1] - lo[1])) + 1
        ly, lx = np.meshgrid(np.arange(bh, dtype=np.float64), np.arange(bw, dtype=np.float64), indexing="ij")
        dist = np.full((bh, bw), np.inf)
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(ly, lx, a, b))
        prof = _band_profile(dist, half, edge=min(7.0, half / 2.0))
    elif kind == "dent":
        radius = rng.uniform(*cfg.dent_radius)
        b = int(np.ceil(radius)) + 2
        bh = bw = 2 * b + 1
        ly, lx = np.meshgrid(np.arange(bh, dtype=np.float64), np.arange(bw, dtype=np.float64), indexing="ij")
        dist = np.sqrt((ly - b) ** 2 + (lx - b) ** 2)
        prof = _band_profile(dist, radius, edge=min(10.0, radius / 2.5))
    else:  # pragma: no cover - guarded by SynthConfig
        raise ParameterError(f"unknown defect kind {kind!r}")

    amp = rng.uniform(*cfg.defect_contrast)
    texture = _blob_noise(rng, bh, bw)
    grain = np.clip(rng.normal(0.0, 10.0, size=(bh, bw)), -20.0, 20.0)
    # amp*(0.75 - 0.30*0.9) > 20 bounds the coarse term away from the grain,
    # so the total can never cancel to exactly zero inside the support
    delta = prof * (-(amp * (0.75 + 0.30 * texture)) + grain)
    return delta, prof > 0.0


def _render_dirt(cfg: SynthConfig, rng: np.random.Generator, canvas: np.ndarray) -> None:
    """Dirt: streak-like clusters of low-amplitude micro-speckle plus a sparse
    uniform scatter. Small radii and amplitudes fool a full-resolution
    pattern classifier while a mild Gaussian pre-filter removes them; none of
    it is recorded in the mask.
    """
    h, w = canvas.shape
    area_mp = (h * w) / 1.0e6

    def stamp(cy: float, cx: float):
        r = rng.uniform(0.8, 1.4)
        a = rng.uniform(10.0, 22.0)
        y0, y1 = max(0, int(cy - r - 1)), min(h, int(cy + r + 2))
        x0, x1 = max(0, int(cx - r - 1)), min(w, int(cx + r + 2))
        if y0 >= y1 or x0 >= x1:
            return
        ly, lx = np.meshgrid(
            np.arange(y0, y1, dtype=np.float64), np.arange(x0, x1, dtype=np.float64), indexing="ij"
        )
        dist = np.sqrt((ly - cy) ** 2 + (lx - cx) ** 2)
        prof = np.where(dist < r, np.cos(0.5 * np.pi * np.clip(dist / r, 0.0, 1.0)) ** 2, 0.0)
        canvas[y0:y1, x0:x1] -= a * prof

    n_clusters = int(round(cfg.dirt_level * 55 * area_mp))
    for _ in range(n_clusters):
        cy = rng.uniform(0, h - 1)
        cx = rng.uniform(0, w - 1)
        spread = rng.uniform(12.0, 26.0)
        for _ in range(int(rng.integers(40, 90))):
            stamp(cy + rng.normal(0, spread), cx + rng.normal(0, spread))
    for _ in range(int(round(cfg.dirt_level * 900 * area_mp))):
        stamp(rng.uniform(0, h - 1), rng.uniform(0, w - 1))


def generate(cfg: SynthConfig, sample_id: str | None = None, debug: bool = False):
    """Generate one Sample (uint8 RGB image + exact {0,1} mask).

    With debug=True also returns the float gray layers used to build it.
    """
    max_extent = max(cfg.scratch_length[1] + cfg.scratch_width[1] + 6, 2 * cfg.dent_radius[1] + 6)
    if max_extent >= min(cfg.width, cfg.height):
        raise ParameterError(
            f"defect primitives (up to {max_extent:.0f}px) do not fit a "
            f"{cfg.width}x{cfg.height} image"
        )
    rng = np.random.default_rng(cfg.seed)
    bg = _render_background(cfg, rng)
    h, w = bg.shape
    canvas = bg.copy()
    mask = np.zeros((h, w), dtype=np.uint8)

    placed: list[tuple[int, int, int, int]] = []
    margin = 4  # keeps components from touching under 8-connectivity
    for _ in range(cfg.defect_count):
        kind = str(rng.choice(cfg.defect_kinds))
        delta, local_mask = _render_defect(cfg, rng, kind)
        bh, bw = delta.shape
        for attempt in range(_PLACEMENT_TRIES):
            y0 = int(rng.integers(2, h - bh - 2)) if h - bh - 4 > 0 else 2
            x0 = int(rng.integers(2, w - bw - 2)) if w - bw - 4 > 0 else 2
            box = (y0 - margin, x0 - margin, y0 + bh + margin, x0 + bw + margin)
            if all(
                box[2] <= p[0] or p[2] <= box[0] or box[3] <= p[1] or p[3] <= box[1]
                for p in placed
            ):
                placed.append(box)
                canvas[y0 : y0 + bh, x0 : x0 + bw] += delta
                mask[y0 : y0 + bh, x0 : x0 + bw] |= local_mask.astype(np.uint8)
                break
        else:
            raise DatasetError(
                f"could not place defect {len(placed) + 1}/{cfg.defect_count} "
                f"after {_PLACEMENT_TRIES} tries"
            )

    with_defects = canvas.copy()

    if cfg.dirt_level > 0:
        _render_dirt(cfg, rng, canvas)

    rgb = np.stack([canvas * t for t in _TINT], axis=2)
    image = quantize_u8(rgb)
    if sample_id is None:
        sample_id = f"synth-{cfg.seed}"
    sample = Sample(id=sample_id, image=image, mask=mask)
    if debug:
        return sample, SynthDebug(background=bg, with_defects=with_defects)
    return sample
