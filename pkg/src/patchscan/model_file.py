"""Versioned on-disk format for the trained model.

Layout: 4-byte magic, little-endian uint32 format version, uint32 header
length, UTF-8 JSON header (config, feature kind, dimensions, training
report), then raw little-endian float64 values: standardizer means, stds,
weights, bias. The header is human-inspectable; the numerics are exact, so
reloading reproduces the model bit-for-bit.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .imgops import GRAY_WEIGHTS
from .svm import LinearSvmModel, Standardizer, TrainReport

MAGIC = b"PSCM"
VERSION = 1


def save_model(path, model: LinearSvmModel, patch_size: int) -> bytes:
    """Serialize a model; returns the bytes written (handy for determinism checks)."""
    dim = model.dim
    header = {
        "feature_kind": model.feature_kind,
        "dim": dim,
        "patch_size": patch_size,
        "c": model.c,
        "grayscale_weights": list(GRAY_WEIGHTS),
        "report": {
            "epochs": model.report.epochs,
            "duality_gap": model.report.duality_gap,
            "stopped_by": model.report.stopped_by,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    values = np.concatenate(
        [
            model.standardizer.mean,
            model.standardizer.std,
            model.w,
            np.array([model.b], dtype=np.float64),
        ]
    ).astype("<f8")
    blob = MAGIC + struct.pack("<II", VERSION, len(header_bytes)) + header_bytes + values.tobytes()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(blob)
    return blob


def load_model(path) -> tuple[LinearSvmModel, dict]:
    """Read a model file back; returns (model, header dict)."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a patchscan model file")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    if len(blob) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: bad model header") from e
    dim = int(header["dim"])
    floats = np.frombuffer(blob[12 + header_len :], dtype="<f8")
    if floats.shape[0] != 3 * dim + 1:
        raise FormatError(
            f"{path}: expected {3 * dim + 1} float values for dim {dim}, got {floats.shape[0]}"
        )
    mean = floats[:dim].copy()
    std = floats[dim : 2 * dim].copy()
    w = floats[2 * dim : 3 * dim].copy()
    b = float(floats[3 * dim])
    rep = header.get("report", {})
    model = LinearSvmModel(
        w=w,
        b=b,
        c=float(header["c"]),
        feature_kind=str(header["feature_kind"]),
        standardizer=Standardizer(mean=mean, std=std),
        report=TrainReport(
            epochs=int(rep.get("epochs", 0)),
            duality_gap=float(rep.get("duality_gap", 0.0)),
            stopped_by=str(rep.get("stopped_by", "")),
        ),
    )
    return model, header
