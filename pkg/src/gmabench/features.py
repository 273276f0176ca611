"""Keypoint snippets to normalized classifier feature matrices.

A feature matrix is 250 frames by 2K columns, K the number of selected
keypoints (21 with head, 16 without). Columns interleave (x, y) pairs in
ascending canonical index, a layout frozen in the binary file format so
the two conditions stay comparable.

Preprocessing per snippet: linear interpolation of missing samples, then
min-max normalization per axis over all selected keypoints and frames
(a common scale preserves relative limb amplitudes), then per-column
temporal mean subtraction.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DegenerateSnippet, VersionMismatch
from .keypoints import KeypointMode, SnippetKeypoints, SNIPPET_FRAMES, select_keypoints

FILE_MAGIC = b"GMFM"
FILE_VERSION = 1
_MODE_CODES = {KeypointMode.WITH_HEAD: 1, KeypointMode.WITHOUT_HEAD: 2, KeypointMode.FACE_MASK: 3}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}


def interpolate_missing(series: np.ndarray) -> np.ndarray:
    """Fill zero-valued (missing) samples by linear interpolation.

    Interior zeros interpolate between the nearest nonzero neighbors;
    leading and trailing zeros take the nearest nonzero value. An all-zero
    series is returned unchanged, which callers treat as a quality flag.
    """
    series = np.asarray(series, dtype=np.float64)
    missing = series == 0.0
    if not missing.any():
        return series.copy()
    if missing.all():
        return series.copy()
    idx = np.flatnonzero(~missing)
    return np.interp(np.arange(series.shape[0]), idx, series[idx])


def minmax_normalize(matrix: np.ndarray) -> np.ndarray:
    """Rescale x columns by the joint x range and y columns by the y range.

    Column layout is interleaved (x, y); the extrema are taken over the
    whole snippet so every keypoint shares one scale per axis. A degenerate
    axis (max equals min) maps to all zeros.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    out = np.empty_like(matrix)
    for offset in (0, 1):
        cols = matrix[:, offset::2]
        lo, hi = cols.min(), cols.max()
        if hi > lo:
            out[:, offset::2] = (cols - lo) / (hi - lo)
        else:
            out[:, offset::2] = 0.0
    return out


def subtract_temporal_mean(matrix: np.ndarray) -> np.ndarray:
    """Remove each column's mean across frames."""
    matrix = np.asarray(matrix, dtype=np.float64)
    return matrix - matrix.mean(axis=0, keepdims=True)


@dataclass
class FeatureMatrix:
    """Preprocessed 250 x 2K feature matrix for one snippet."""

    values: np.ndarray
    mode: KeypointMode
    snippet_id: str = ""

    def __post_init__(self):
        self.mode = KeypointMode(self.mode)
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = 2 * len(select_keypoints(self.mode))
        if self.values.shape != (SNIPPET_FRAMES, expected):
            raise ValueError(
                f"mode {self.mode.value} needs shape ({SNIPPET_FRAMES}, {expected}), "
                f"got {self.values.shape}"
            )

    @property
    def column_names(self) -> list[str]:
        names = []
        for idx in select_keypoints(self.mode):
            names.append(f"kp{idx:02d}_x")
            names.append(f"kp{idx:02d}_y")
        return names

    def to_bytes(self) -> bytes:
        rows, cols = self.values.shape
        header = FILE_MAGIC + struct.pack(
            "<HIIB", FILE_VERSION, rows, cols, _MODE_CODES[self.mode]
        )
        payload = self.values.astype("<f4").tobytes(order="C")
        return header + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FeatureMatrix":
        head_len = 4 + struct.calcsize("<HIIB")
        if len(blob) < head_len or blob[:4] != FILE_MAGIC:
            raise VersionMismatch("not a feature matrix blob")
        version, rows, cols, mode_code = struct.unpack("<HIIB", blob[4:head_len])
        if version != FILE_VERSION:
            raise VersionMismatch(f"unsupported feature matrix version {version}")
        values = np.frombuffer(blob[head_len:], dtype="<f4")
        if values.size != rows * cols:
            raise ValueError("feature matrix payload truncated")
        return cls(values.reshape(rows, cols).astype(np.float64), _CODE_MODES[mode_code])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.column_names) + "\n")
        for row in self.values:
            buf.write(",".join(repr(v) for v in row) + "\n")
        return buf.getvalue()


def build_features(snippet: SnippetKeypoints, mode: KeypointMode | str) -> FeatureMatrix:
    """Select, interpolate, normalize and center one snippet's coordinates.

    Raises :class:`DegenerateSnippet` when more than half of the selected
    coordinate series carry no detection at all.
    """
    mode = KeypointMode(mode)
    indices = select_keypoints(mode)
    coords = snippet.data[:, [i - 1 for i in indices], 0:2]  # (250, K, 2)
    raw = coords.reshape(SNIPPET_FRAMES, 2 * len(indices))
    all_zero = 0
    filled = np.empty_like(raw)
    for col in range(raw.shape[1]):
        filled[:, col] = interpolate_missing(raw[:, col])
        if not filled[:, col].any():
            all_zero += 1
    if all_zero * 2 > raw.shape[1]:
        raise DegenerateSnippet(
            f"{all_zero} of {raw.shape[1]} series have no detections"
        )
    values = subtract_temporal_mean(minmax_normalize(filled))
    return FeatureMatrix(values, mode, snippet_id=snippet.snippet_id)


class PoseFeatureTransformer(BaseEstimator, TransformerMixin):
    """Stateless transformer from keypoint snippets to feature tensors.

    ``transform`` maps a sequence of :class:`SnippetKeypoints` to an array
    of shape (n_snippets, 250, 2K). There is nothing to fit; the class
    exists so feature extraction composes with estimator pipelines.
    """

    def __init__(self, mode: str = "with_head"):
        self.mode = mode

    def fit(self, X, y=None):
        KeypointMode(self.mode)  # validate eagerly
        return self

    def transform(self, X) -> np.ndarray:
        mode = KeypointMode(self.mode)
        mats = [build_features(snippet, mode).values for snippet in X]
        return np.stack(mats, axis=0)


__all__ = [
    "FeatureMatrix",
    "PoseFeatureTransformer",
    "build_features",
    "interpolate_missing",
    "minmax_normalize",
    "subtract_temporal_mean",
]
