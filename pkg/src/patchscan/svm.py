"""Feature standardization and a from-scratch linear SVM.

The solver is dual coordinate descent on the L1 (hinge) loss objective

    min_w  0.5*||w||^2 + C * sum_i max(0, 1 - y_i * (w . x_i + b))

with the bias absorbed as an appended constant-1 feature (so b is lightly
regularized too; negligible after standardization). Training is
single-threaded and fully deterministic given the input order and the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError, ParameterError


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension mean/std fitted on training data; std floored at 1e-12."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def apply(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[-1] != self.dim:
            raise ParameterError(f"expected dimension {self.dim}, got {arr.shape[-1]}")
        return (arr - self.mean) / self.std


def fit_standardizer(X) -> Standardizer:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ParameterError("standardizer needs a nonempty (n, d) feature matrix")
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)  # population std
    std = np.where(std < 1e-12, 1.0, std)
    return Standardizer(mean=mean, std=std)


@dataclass(frozen=True)
class TrainConfig:
    c: float = 1.0
    tol: float = 1e-4  # relative duality gap
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0:
            raise ParameterError(f"C must be > 0, got {self.c}")
        if self.tol <= 0:
            raise ParameterError(f"tolerance must be > 0, got {self.tol}")
        if self.max_epochs < 1:
            raise ParameterError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass(frozen=True)
class TrainReport:
    epochs: int
    duality_gap: float  # relative, at stop
    stopped_by: str  # "tolerance" | "max_epochs"


@dataclass
class TrainHistory:
    """Per-epoch diagnostics, collected on request; never serialized."""

    primal: list[float] = field(default_factory=list)
    dual: list[float] = field(default_factory=list)
    alpha_min: list[float] = field(default_factory=list)
    alpha_max: list[float] = field(default_factory=list)
    final_alpha: np.ndarray | None = None


@dataclass
class LinearSvmModel:
    w: np.ndarray
    b: float
    c: float
    feature_kind: str
    standardizer: Standardizer
    report: TrainReport
    history: TrainHistory | None = None

    @property
    def dim(self) -> int:
        return self.w.shape[0]


def _primal(w_aug: np.ndarray, Xh: np.ndarray, y: np.ndarray, c: float) -> float:
    margins = y * (Xh @ w_aug)
    hinge = np.maximum(0.0, 1.0 - margins).sum()
    return float(0.5 * (w_aug @ w_aug) + c * hinge)


def _dual(alpha: np.ndarray, w_aug: np.ndarray) -> float:
    return float(alpha.sum() - 0.5 * (w_aug @ w_aug))


def train_svm(X, y, cfg: TrainConfig | None = None, collect_history: bool = False) -> LinearSvmModel:
    """Fit the hinge-loss linear SVM by dual coordinate descent.

    Stops when the relative duality gap drops to cfg.tol or after
    cfg.max_epochs passes; the coordinate order is reshuffled every epoch
    from cfg.seed. Standardization is fitted here and stored on the model.
    """
    if cfg is None:
        cfg = TrainConfig()
    Xa = np.asarray(X, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64).ravel()
    if Xa.ndim != 2 or Xa.shape[0] != ya.shape[0]:
        raise ParameterError(f"X must be (n, d) matching y, got {Xa.shape} vs {ya.shape}")
    if not np.isfinite(Xa).all():
        raise DatasetError("feature matrix contains non-finite values")
    labels = set(np.unique(ya).tolist())
    if not labels <= {-1.0, 1.0}:
        raise ParameterError(f"labels must be in {{-1, +1}}, got {sorted(labels)}")
    if len(labels) < 2:
        raise DatasetError("training data contains a single class")

    scaler = fit_standardizer(Xa)
    n, d = Xa.shape
    Xh = np.empty((n, d + 1), dtype=np.float64)
    Xh[:, :d] = scaler.apply(Xa)
    Xh[:, d] = 1.0

    c = cfg.c
    alpha = np.zeros(n, dtype=np.float64)
    w = np.zeros(d + 1, dtype=np.float64)
    qii = np.einsum("ij,ij->i", Xh, Xh)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory() if collect_history else None

    epochs_run = 0
    rel_gap = np.inf
    stopped_by = "max_epochs"
    for _epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for i in order:
            g = ya[i] * (w @ Xh[i]) - 1.0
            a_old = alpha[i]
            if (a_old == 0.0 and g >= 0.0) or (a_old == c and g <= 0.0):
                continue
            a_new = min(max(a_old - g / qii[i], 0.0), c)
            delta = a_new - a_old
            if delta != 0.0:
                w += (delta * ya[i]) * Xh[i]
                alpha[i] = a_new
        epochs_run += 1
        primal = _primal(w, Xh, ya, c)
        dual = _dual(alpha, w)
        if history is not None:
            history.primal.append(primal)
            history.dual.append(dual)
            history.alpha_min.append(float(alpha.min()))
            history.alpha_max.append(float(alpha.max()))
        rel_gap = (primal - dual) / max(1.0, abs(primal))
        if rel_gap <= cfg.tol:
            stopped_by = "tolerance"
            break
    if history is not None:
        history.final_alpha = alpha.copy()

    report = TrainReport(epochs=epochs_run, duality_gap=float(rel_gap), stopped_by=stopped_by)
    return LinearSvmModel(
        w=w[:d].copy(),
        b=float(w[d]),
        c=c,
        feature_kind="",
        standardizer=scaler,
        report=report,
        history=history,
    )


def decision_scores(model: LinearSvmModel, X) -> np.ndarray:
    """w . standardize(x) + b for one vector or a batch."""
    arr = np.asarray(X, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    scores = model.standardizer.apply(arr) @ model.w + model.b
    return scores[0] if single else scores


def predict(model: LinearSvmModel, x) -> tuple[int, float]:
    """(label, score); label +1 iff score > 0 (exact ties resolve to -1)."""
    score = float(decision_scores(model, x))
    return (1 if score > 0.0 else -1), score


def predict_batch(model: LinearSvmModel, X) -> tuple[np.ndarray, np.ndarray]:
    scores = decision_scores(model, np.asarray(X, dtype=np.float64))
    labels = np.where(scores > 0.0, 1, -1)
    return labels, scores
