"""Labeled patch datasets: majority labeling from masks, class balancing by
augmentation + undersampling, image-level fold assignment, and manifest I/O.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BoundsError, DatasetError, FormatError, ParameterError
from .image_io import read_mask, read_rgb, write_png
from .imgops import Rect, check_rect_inside, flip_patch, partition, rotate_patch

LABEL_DEFECT = "defect"
LABEL_NO_DEFECT = "no_defect"

# The 8 augmentation variants of a defect patch. rot0 is the original itself;
# flips apply to the original, not to every rotation.
TRANSFORMS = ("rot0", "rot60", "rot120", "rot180", "rot240", "rot300", "flip_h", "flip_v")


@dataclass(frozen=True)
class Sample:
    """One image with its binary defect mask (1 = defect pixel)."""

    id: str
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) in {0, 1}

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ParameterError(f"sample {self.id}: image must be (H, W, 3)")
        if self.mask.shape != self.image.shape[:2]:
            raise ParameterError(
                f"sample {self.id}: mask {self.mask.shape} does not match image {self.image.shape[:2]}"
            )
        vals = np.unique(self.mask)
        if not set(vals.tolist()) <= {0, 1}:
            raise ParameterError(f"sample {self.id}: mask values must be 0/1")


@dataclass(frozen=True)
class LabeledPatch:
    parent_id: str
    anchor: tuple[int, int]  # (row, col)
    label: str
    augmented_from: tuple[tuple[int, int], str] | None = None  # (parent anchor, transform)

    @property
    def is_defect(self) -> bool:
        return self.label == LABEL_DEFECT


def patch_key(patch: LabeledPatch) -> str:
    """Stable key `<image_id>:<row>:<col>[:<transform>]` for embeddings/caches."""
    row, col = patch.anchor
    key = f"{patch.parent_id}:{row}:{col}"
    if patch.augmented_from is not None:
        key += f":{patch.augmented_from[1]}"
    return key


def apply_transform(pixels: np.ndarray, name: str) -> np.ndarray:
    """Realize one augmentation variant of a square patch."""
    if name == "rot0":
        return np.asarray(pixels).copy()
    if name == "flip_h":
        return flip_patch(pixels, "horizontal")
    if name == "flip_v":
        return flip_patch(pixels, "vertical")
    if name.startswith("rot"):
        return rotate_patch(pixels, float(name[3:]))
    raise ParameterError(f"unknown transform {name!r}")


def augment_defect(pixels: np.ndarray) -> list[np.ndarray]:
    """The 8 variants of a defect patch, first one identical to the input."""
    arr = np.asarray(pixels)
    if arr.shape[0] != arr.shape[1]:
        raise ParameterError(f"augmentation needs a square patch, got {arr.shape}")
    return [apply_transform(arr, name) for name in TRANSFORMS]


def label_patch(mask: np.ndarray, r: Rect) -> str:
    """Defect iff strictly more than half of the patch pixels are mask=1."""
    m = np.asarray(mask)
    check_rect_inside(r, m.shape[1], m.shape[0])
    ones = int(np.count_nonzero(m[r.y : r.y + r.h, r.x : r.x + r.w]))
    return LABEL_DEFECT if 2 * ones > r.w * r.h else LABEL_NO_DEFECT


def build_labeled_set(samples: list[Sample], patch_size: int) -> list[LabeledPatch]:
    """One LabeledPatch per grid anchor per sample."""
    out: list[LabeledPatch] = []
    for sample in samples:
        h, w = sample.mask.shape
        grid = partition(w, h, patch_size)
        for row, col in grid.anchors:
            label = label_patch(sample.mask, grid.rect(row, col))
            out.append(LabeledPatch(parent_id=sample.id, anchor=(row, col), label=label))
    return out


def realize_patch(image: np.ndarray, patch: LabeledPatch, patch_size: int) -> np.ndarray:
    """Pixel data for a labeled patch from its parent image (or a processed
    working copy of it), realizing the augmentation transform if any."""
    anchor = patch.anchor if patch.augmented_from is None else patch.augmented_from[0]
    row, col = anchor
    base = image[row : row + patch_size, col : col + patch_size]
    if base.shape[:2] != (patch_size, patch_size):
        raise BoundsError(f"anchor {anchor} + {patch_size} exits {image.shape[1]}x{image.shape[0]} image")
    if patch.augmented_from is None:
        return base
    return apply_transform(base, patch.augmented_from[1])


def extract_patch(sample: Sample, patch: LabeledPatch, patch_size: int) -> np.ndarray:
    return realize_patch(sample.image, patch, patch_size)


def balance(patches: list[LabeledPatch], seed: int) -> list[LabeledPatch]:
    """Equalize the classes: 8x-augment every defect patch, then undersample.

    The no-defect class is uniformly undersampled (seeded) to the augmented
    defect count; if it is already smaller, the augmented defect records are
    undersampled to it instead. Selection preserves input order, so results
    are reproducible bit-for-bit from (input order, seed).
    """
    defects = [p for p in patches if p.is_defect]
    others = [p for p in patches if not p.is_defect]
    if not defects or not others:
        raise DatasetError(
            f"balancing needs both classes, got {len(defects)} defect / {len(others)} no-defect"
        )
    augmented: list[LabeledPatch] = []
    for p in defects:
        augmented.append(p)
        for name in TRANSFORMS[1:]:
            augmented.append(
                LabeledPatch(
                    parent_id=p.parent_id,
                    anchor=p.anchor,
                    label=p.label,
                    augmented_from=(p.anchor, name),
                )
            )
    rng = np.random.default_rng(seed)
    if len(others) >= len(augmented):
        keep = np.sort(rng.choice(len(others), size=len(augmented), replace=False))
        others = [others[i] for i in keep]
    else:
        keep = np.sort(rng.choice(len(augmented), size=len(others), replace=False))
        augmented = [augmented[i] for i in keep]
    return augmented + others


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict[str, int]  # image id -> fold index

    def fold_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignment.items() if f == fold]

    def split(self, fold: int) -> tuple[list[str], list[str]]:
        """(train ids, test ids) for one fold, in assignment order."""
        test = self.fold_ids(fold)
        train = [i for i, f in self.assignment.items() if f != fold]
        return train, test


def group_kfold(image_ids: list[str], k: int, seed: int) -> FoldPlan:
    """Shuffle ids by seed and deal them round-robin into k folds."""
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    if len(image_ids) < k:
        raise ParameterError(f"need at least {k} images for {k} folds, got {len(image_ids)}")
    if len(set(image_ids)) != len(image_ids):
        raise ParameterError("image ids must be unique")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(image_ids))
    assignment = {image_ids[int(idx)]: pos % k for pos, idx in enumerate(order)}
    return FoldPlan(k=k, assignment=assignment)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: str  # relative to the manifest's directory
    mask_path: str
    fold: int | None = None


def write_manifest(entries: list[ManifestEntry], path) -> None:
    """Tab-separated `id image mask [fold]` lines; paths stay relative."""
    lines = ["# patchscan manifest: id\timage\tmask[\tfold]"]
    for e in entries:
        rec = f"{e.id}\t{e.image_path}\t{e.mask_path}"
        if e.fold is not None:
            rec += f"\t{e.fold}"
        lines.append(rec)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[ManifestEntry]:
    """Parse a manifest, verifying that every referenced file exists."""
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"manifest not found: {p}")
    base = p.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise FormatError(f"{p}:{lineno}: expected 3 or 4 tab-separated fields: {raw!r}")
        sample_id, image_path, mask_path = parts[:3]
        fold = None
        if len(parts) == 4:
            try:
                fold = int(parts[3])
            except ValueError as e:
                raise FormatError(f"{p}:{lineno}: bad fold index {parts[3]!r}") from e
        if sample_id in seen:
            raise FormatError(f"{p}:{lineno}: duplicate sample id {sample_id!r}")
        seen.add(sample_id)
        for rel in (image_path, mask_path):
            if not (base / rel).is_file():
                raise FormatError(f"{p}:{lineno}: referenced file missing: {base / rel}")
        entries.append(ManifestEntry(id=sample_id, image_path=image_path, mask_path=mask_path, fold=fold))
    return entries


def load_samples(manifest_path) -> list[Sample]:
    """Read every sample referenced by a manifest."""
    p = Path(manifest_path)
    base = p.parent
    samples = []
    for e in read_manifest(p):
        samples.append(
            Sample(id=e.id, image=read_rgb(base / e.image_path), mask=read_mask(base / e.mask_path))
        )
    return samples


def export_patches(samples: list[Sample], out_dir, patch_size: int, augment: bool = True) -> list[str]:
    """Write every grid patch as PNG named by its patch key (":" -> "_").

    This is the hand-off surface for external feature extractors: with
    augment=True the 7 extra variants of every defect patch are exported too,
    matching the keys the training pipeline will look up.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys: list[str] = []
    for sample in samples:
        labeled = build_labeled_set([sample], patch_size)
        records = list(labeled)
        if augment:
            for p in labeled:
                if p.is_defect:
                    for name in TRANSFORMS[1:]:
                        records.append(
                            LabeledPatch(
                                parent_id=p.parent_id,
                                anchor=p.anchor,
                                label=p.label,
                                augmented_from=(p.anchor, name),
                            )
                        )
        for rec in records:
            key = patch_key(rec)
            write_png(out / (key.replace(":", "_") + ".png"), extract_patch(sample, rec, patch_size))
            keys.append(key)
    return keys
