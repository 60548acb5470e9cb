"""End-to-end orchestration: training, gated inference, intensity-variation
expansion, metrics, grouped cross-validation, and the timing benchmark.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (
    LABEL_DEFECT,
    LabeledPatch,
    Sample,
    balance,
    build_labeled_set,
    group_kfold,
    label_patch,
    patch_key,
    realize_patch,
)
from .detector import DetectorParams, detect, gate_patches
from .errors import DatasetError, ParameterError
from .features import FEATURE_KINDS, KIND_EXTERNAL, EmbeddingManifest, extract
from .imgops import PatchGrid, as_rgb, gaussian_blur, intensity_range, partition, to_grayscale
from .model_file import save_model
from .svm import LinearSvmModel, TrainConfig, predict_batch, train_svm

MODE_WASHED = "washed"
MODE_UNWASHED = "unwashed"

PROV_CLASSIFIER = "classifier"
PROV_EXPANDED = "expanded"
PROV_GATED_OUT = "gated_out"

DECISION_DEFECT = "defect"
DECISION_NO_DEFECT = "no_defect"


@dataclass(frozen=True)
class PipelineConfig:
    patch_size: int = 65
    feature: str = "lbp"
    mode: str = MODE_WASHED
    sigma: float = 1.5  # unwashed pre-filter
    detector: DetectorParams = field(default_factory=DetectorParams)
    iv_threshold: float = 25.0
    svm: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    expand: bool | None = None  # None: follow the mode (on only when unwashed)

    def __post_init__(self):
        if not 20 <= self.patch_size <= 100:
            raise ParameterError(f"patch size must be in [20, 100], got {self.patch_size}")
        if self.feature not in FEATURE_KINDS:
            raise ParameterError(f"feature must be one of {FEATURE_KINDS}, got {self.feature!r}")
        if self.mode not in (MODE_WASHED, MODE_UNWASHED):
            raise ParameterError(f"mode must be washed or unwashed, got {self.mode!r}")
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.iv_threshold < 0:
            raise ParameterError(f"IV threshold must be >= 0, got {self.iv_threshold}")

    @property
    def expand_enabled(self) -> bool:
        return self.mode == MODE_UNWASHED if self.expand is None else self.expand


@dataclass(frozen=True)
class PatchDecision:
    decision: str
    provenance: str
    score: float | None = None


@dataclass
class DefectMap:
    image_id: str
    grid: PatchGrid
    entries: dict[tuple[int, int], PatchDecision]

    def defect_anchors(self) -> list[tuple[int, int]]:
        return sorted(a for a, e in self.entries.items() if e.decision == DECISION_DEFECT)

    def to_json(self) -> dict:
        entries = []
        for (row, col), e in sorted(self.entries.items()):
            rec = {"row": row, "col": col, "decision": e.decision, "provenance": e.provenance}
            if e.score is not None:
                rec["score"] = e.score
            entries.append(rec)
        return {"image_id": self.image_id, "patch_size": self.grid.patch_size, "entries": entries}

    @classmethod
    def from_json(cls, data: dict, image_width: int, image_height: int) -> "DefectMap":
        patch_size = int(data["patch_size"])
        grid = partition(image_width, image_height, patch_size)
        entries: dict[tuple[int, int], PatchDecision] = {}
        for rec in data["entries"]:
            anchor = (int(rec["row"]), int(rec["col"]))
            entries[anchor] = PatchDecision(
                decision=str(rec["decision"]),
                provenance=str(rec["provenance"]),
                score=float(rec["score"]) if "score" in rec else None,
            )
        expected = set(grid.anchors)
        if set(entries) != expected:
            raise ParameterError("defect map entries do not match the image grid")
        return cls(image_id=str(data["image_id"]), grid=grid, entries=entries)


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn > 0 else 0.0

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp > 0 else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total > 0 else 0.0

    @property
    def degenerate(self) -> tuple[str, ...]:
        """Which ratios had a zero denominator and were reported as 0."""
        flags = []
        if self.tp + self.fn == 0:
            flags.append("sensitivity")
        if self.tn + self.fp == 0:
            flags.append("specificity")
        if self.total == 0:
            flags.append("accuracy")
        return tuple(flags)


@dataclass(frozen=True)
class TimingReport:
    full_seconds: float
    gated_seconds: float
    full_patches: int
    gated_patches: int

    @property
    def speedup(self) -> float:
        return self.full_seconds / self.gated_seconds if self.gated_seconds > 0 else float("inf")

    def to_json(self) -> dict:
        return {
            "full_seconds": self.full_seconds,
            "gated_seconds": self.gated_seconds,
            "full_patches": self.full_patches,
            "gated_patches": self.gated_patches,
            "speedup": self.speedup,
        }


def _feature_matrix(
    working_by_id: dict[str, np.ndarray],
    records: list[LabeledPatch],
    cfg: PipelineConfig,
    embeddings: EmbeddingManifest | None,
) -> np.ndarray:
    rows = []
    for rec in records:
        pixels = realize_patch(working_by_id[rec.parent_id], rec, cfg.patch_size)
        rows.append(extract(pixels, cfg.feature, embeddings, patch_key(rec)))
    return np.stack(rows)


def train_model(
    samples: list[Sample],
    cfg: PipelineConfig,
    embeddings: EmbeddingManifest | None = None,
) -> LinearSvmModel:
    """Labeled set -> balanced set -> features -> standardize + train.

    Features come from the mode's working copies (Gaussian-filtered in
    unwashed mode), so training sees patches exactly as inference will.
    """
    if cfg.feature == KIND_EXTERNAL and embeddings is None:
        raise ParameterError("feature kind 'external' requires an embedding manifest")
    labeled = build_labeled_set(samples, cfg.patch_size)
    balanced = balance(labeled, seed=cfg.seed)
    working_by_id = {s.id: _working_copies(s.image, cfg)[1] for s in samples}
    X = _feature_matrix(working_by_id, balanced, cfg, embeddings)
    y = np.array([1 if p.is_defect else -1 for p in balanced])
    model = train_svm(X, y, cfg.svm)
    model.feature_kind = cfg.feature
    return model


def train_pipeline(
    samples: list[Sample],
    cfg: PipelineConfig,
    out_path,
    embeddings: EmbeddingManifest | None = None,
) -> LinearSvmModel:
    """train_model plus persisting the model artifact to out_path."""
    model = train_model(samples, cfg, embeddings)
    save_model(out_path, model, cfg.patch_size)
    return model


def _working_copies(image, cfg: PipelineConfig):
    """(gray, color) working copies; both Gaussian-filtered in unwashed mode."""
    rgb = as_rgb(image)
    gray = to_grayscale(rgb)
    if cfg.mode == MODE_UNWASHED:
        gray = gaussian_blur(gray, cfg.sigma)
        color = np.stack(
            [gaussian_blur(rgb[:, :, c].astype(np.float64), cfg.sigma) for c in range(3)], axis=2
        )
    else:
        color = rgb
    return gray, color


def _classify_anchors(
    model: LinearSvmModel,
    color: np.ndarray,
    grid: PatchGrid,
    anchors: list[tuple[int, int]],
    cfg: PipelineConfig,
    image_id: str,
    embeddings: EmbeddingManifest | None,
) -> dict[tuple[int, int], PatchDecision]:
    if not anchors:
        return {}
    ps = grid.patch_size
    feats = []
    for row, col in anchors:
        patch = color[row : row + ps, col : col + ps]
        feats.append(extract(patch, cfg.feature, embeddings, f"{image_id}:{row}:{col}"))
    labels, scores = predict_batch(model, np.stack(feats))
    return {
        anchor: PatchDecision(
            decision=DECISION_DEFECT if label > 0 else DECISION_NO_DEFECT,
            provenance=PROV_CLASSIFIER,
            score=float(score),
        )
        for anchor, label, score in zip(anchors, labels, scores)
    }


def postprocess_expand(dmap: DefectMap, gray: np.ndarray, iv_threshold: float) -> DefectMap:
    """Flood defect decisions into 8-adjacent neighbor patches with similar
    intensity ranges: |range(i) - range(j)| <= iv_threshold.

    Seeds are the classifier-decided defect patches; each patch is marked at
    most once, so the flood terminates.
    """
    grid = dmap.grid
    rows, cols = grid.row_anchors, grid.col_anchors
    index = {(r, c): (i, j) for i, r in enumerate(rows) for j, c in enumerate(cols)}
    entries = dict(dmap.entries)

    ranges: dict[tuple[int, int], float] = {}

    def iv_range(anchor) -> float:
        if anchor not in ranges:
            lo, hi = intensity_range(gray, grid.rect(*anchor))
            ranges[anchor] = hi - lo
        return ranges[anchor]

    queue = deque(
        a
        for a, e in sorted(entries.items())
        if e.decision == DECISION_DEFECT and e.provenance == PROV_CLASSIFIER
    )
    while queue:
        anchor = queue.popleft()
        gi, gj = index[anchor]
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                ni, nj = gi + di, gj + dj
                if not (0 <= ni < len(rows) and 0 <= nj < len(cols)):
                    continue
                nb = (rows[ni], cols[nj])
                if entries[nb].decision == DECISION_DEFECT:
                    continue
                if abs(iv_range(anchor) - iv_range(nb)) <= iv_threshold:
                    entries[nb] = PatchDecision(
                        decision=DECISION_DEFECT, provenance=PROV_EXPANDED, score=entries[nb].score
                    )
                    queue.append(nb)
    return DefectMap(image_id=dmap.image_id, grid=grid, entries=entries)


def infer(
    model: LinearSvmModel,
    image,
    cfg: PipelineConfig,
    image_id: str = "image",
    embeddings: EmbeddingManifest | None = None,
    gate: bool = True,
) -> DefectMap:
    """Classify one image: detect -> gate -> classify -> optional expansion.

    With gate=False every patch is classified (the full-grid baseline the
    benchmark compares against).
    """
    rgb = as_rgb(image)
    h, w = rgb.shape[:2]
    if h < cfg.patch_size or w < cfg.patch_size:
        raise ParameterError(f"image {w}x{h} smaller than patch size {cfg.patch_size}")
    grid = partition(w, h, cfg.patch_size)
    gray, color = _working_copies(rgb, cfg)

    if gate:
        keypoints = detect(gray, cfg.detector)
        selected = gate_patches(grid, keypoints)
        anchors = [a for a in grid.anchors if a in selected]
    else:
        anchors = grid.anchors

    entries: dict[tuple[int, int], PatchDecision] = {
        a: PatchDecision(decision=DECISION_NO_DEFECT, provenance=PROV_GATED_OUT)
        for a in grid.anchors
    }
    entries.update(_classify_anchors(model, color, grid, anchors, cfg, image_id, embeddings))
    dmap = DefectMap(image_id=image_id, grid=grid, entries=entries)
    if cfg.expand_enabled:
        dmap = postprocess_expand(dmap, gray, cfg.iv_threshold)
    return dmap


def truth_from_mask(mask: np.ndarray, grid: PatchGrid) -> dict[tuple[int, int], str]:
    """Ground-truth per-anchor labels from a {0,1} mask (majority rule)."""
    return {(r, c): label_patch(mask, grid.rect(r, c)) for r, c in grid.anchors}


def evaluate(dmap: DefectMap, truth: dict[tuple[int, int], str]) -> MetricsReport:
    """Patch-level confusion counts; defect is the positive class."""
    if set(truth) != set(dmap.entries):
        raise ParameterError("truth labels do not cover the same grid as the defect map")
    tp = fp = tn = fn = 0
    for anchor, entry in dmap.entries.items():
        predicted = entry.decision == DECISION_DEFECT
        actual = truth[anchor] == LABEL_DEFECT
        if predicted and actual:
            tp += 1
        elif predicted and not actual:
            fp += 1
        elif not predicted and actual:
            fn += 1
        else:
            tn += 1
    return MetricsReport(tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    test_ids: tuple[str, ...]
    metrics: MetricsReport


@dataclass(frozen=True)
class CvResult:
    folds: tuple[FoldResult, ...]

    @property
    def mean_sensitivity(self) -> float:
        return float(np.mean([f.metrics.sensitivity for f in self.folds]))

    @property
    def mean_specificity(self) -> float:
        return float(np.mean([f.metrics.specificity for f in self.folds]))

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.metrics.accuracy for f in self.folds]))


def cross_validate(
    samples: list[Sample],
    k: int,
    cfg: PipelineConfig,
    embeddings: EmbeddingManifest | None = None,
) -> CvResult:
    """Image-grouped k-fold: train on k-1 folds (balanced), classify every
    patch of the held-out images (no gating, no expansion).

    Patches inherit the fold of their parent image, and a runtime guard
    asserts the train/test image sets never intersect. Fold f draws its
    balancing subsample from seed ^ f.
    """
    ids = [s.id for s in samples]
    plan = group_kfold(ids, k, cfg.seed)
    working_by_id = {s.id: _working_copies(s.image, cfg)[1] for s in samples}
    labeled = build_labeled_set(samples, cfg.patch_size)
    by_image: dict[str, list[LabeledPatch]] = {i: [] for i in ids}
    for p in labeled:
        by_image[p.parent_id].append(p)

    # Descriptors are pure functions of the patch, so cache them across folds.
    cache: dict[str, np.ndarray] = {}

    def features_for(records: list[LabeledPatch]) -> np.ndarray:
        rows = []
        for rec in records:
            key = patch_key(rec)
            if key not in cache:
                pixels = realize_patch(working_by_id[rec.parent_id], rec, cfg.patch_size)
                cache[key] = extract(pixels, cfg.feature, embeddings, key)
            rows.append(cache[key])
        return np.stack(rows)

    folds = []
    for fold in range(k):
        train_ids, test_ids = plan.split(fold)
        if set(train_ids) & set(test_ids):
            raise DatasetError(f"fold {fold}: train/test image sets overlap")
        train_records = [p for i in train_ids for p in by_image[i]]
        balanced = balance(train_records, seed=cfg.seed ^ fold)
        X = features_for(balanced)
        y = np.array([1 if p.is_defect else -1 for p in balanced])
        model = train_svm(X, y, cfg.svm)
        model.feature_kind = cfg.feature

        test_records = [p for i in test_ids for p in by_image[i]]
        labels, _ = predict_batch(model, features_for(test_records))
        tp = fp = tn = fn = 0
        for rec, label in zip(test_records, labels):
            predicted = label > 0
            actual = rec.is_defect
            if predicted and actual:
                tp += 1
            elif predicted and not actual:
                fp += 1
            elif not predicted and actual:
                fn += 1
            else:
                tn += 1
        folds.append(
            FoldResult(fold=fold, test_ids=tuple(test_ids), metrics=MetricsReport(tp, fp, tn, fn))
        )
    return CvResult(folds=tuple(folds))


def format_metrics_table(result: CvResult) -> str:
    lines = [f"{'fold':>5} {'tp':>6} {'fp':>6} {'tn':>7} {'fn':>6} {'sens':>7} {'spec':>7} {'acc':>7}"]
    for f in result.folds:
        m = f.metrics
        lines.append(
            f"{f.fold:>5} {m.tp:>6} {m.fp:>6} {m.tn:>7} {m.fn:>6}"
            f" {m.sensitivity:>7.4f} {m.specificity:>7.4f} {m.accuracy:>7.4f}"
        )
    lines.append(
        f"{'mean':>5} {'':>6} {'':>6} {'':>7} {'':>6}"
        f" {result.mean_sensitivity:>7.4f} {result.mean_specificity:>7.4f} {result.mean_accuracy:>7.4f}"
    )
    return "\n".join(lines)


def write_metrics_csv(result: CvResult, path) -> None:
    lines = ["fold,tp,fp,tn,fn,sensitivity,specificity,accuracy"]
    for f in result.folds:
        m = f.metrics
        lines.append(
            f"{f.fold},{m.tp},{m.fp},{m.tn},{m.fn},"
            f"{m.sensitivity:.6f},{m.specificity:.6f},{m.accuracy:.6f}"
        )
    lines.append(
        f"mean,,,,,{result.mean_sensitivity:.6f},{result.mean_specificity:.6f},{result.mean_accuracy:.6f}"
    )
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")


def benchmark(
    model: LinearSvmModel,
    image,
    cfg: PipelineConfig,
    image_id: str = "image",
    embeddings: EmbeddingManifest | None = None,
) -> TimingReport:
    """Time the classify-all-patches path against the gated path.

    Both runs include feature extraction, classification and (per config)
    expansion; the gated run additionally pays for detection. File I/O and
    one-time JIT warm-up are excluded: a tiny throwaway detection happens
    before the clocks start.
    """
    rgb = as_rgb(image)
    detect(np.zeros((32, 32)), cfg.detector)  # warm the compiled kernels

    t0 = time.perf_counter()
    full_map = infer(model, rgb, cfg, image_id=image_id, embeddings=embeddings, gate=False)
    t1 = time.perf_counter()
    gated_map = infer(model, rgb, cfg, image_id=image_id, embeddings=embeddings, gate=True)
    t2 = time.perf_counter()

    gated_patches = sum(1 for e in gated_map.entries.values() if e.provenance == PROV_CLASSIFIER)
    return TimingReport(
        full_seconds=t1 - t0,
        gated_seconds=t2 - t1,
        full_patches=len(full_map.entries),
        gated_patches=gated_patches,
    )


def draw_overlay(image, dmap: DefectMap) -> np.ndarray:
    """Input image with defect patches outlined, color-coded by provenance."""
    colors = {PROV_CLASSIFIER: (220, 40, 40), PROV_EXPANDED: (255, 170, 20)}
    out = as_rgb(image).astype(np.uint8).copy()
    ps = dmap.grid.patch_size
    for (row, col), entry in sorted(dmap.entries.items()):
        if entry.decision != DECISION_DEFECT:
            continue
        color = colors[entry.provenance]
        r1, c1 = row + ps, col + ps
        out[row : row + 2, col:c1] = color
        out[r1 - 2 : r1, col:c1] = color
        out[row:r1, col : col + 2] = color
        out[row:r1, c1 - 2 : c1] = color
    return out


def save_defect_map(dmap: DefectMap, path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(dmap.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_defect_map(path, image_width: int, image_height: int) -> DefectMap:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return DefectMap.from_json(data, image_width, image_height)
