"""Frame input/output: PNG directories and headerless raw RGB24 streams.

Both layouts carry the same JSON metadata sidecar as keypoint directories
(``snippet.json`` next to the PNGs, or ``<stream>.json`` next to a raw
file). Frames are held in memory as (height, width, 3) uint8 RGB arrays.
"""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np

from .errors import DimensionMismatch, FrameCountMismatch
from .keypoints import SIDECAR_NAME

FRAME_PNG_PATTERN = "frame_%06d.png"


def _read_sidecar(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_sidecar(path: Path, meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)


def write_frames_dir(frames: list[np.ndarray], directory: str | Path, meta: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames, start=1):
        bgr = cv2.cvtColor(frame, cv2.COLOR_RGB2BGR)
        if not cv2.imwrite(str(directory / (FRAME_PNG_PATTERN % i)), bgr):
            raise IOError(f"failed to write frame {i}")
    _write_sidecar(directory / SIDECAR_NAME, meta)
    return directory


def read_frames_dir(directory: str | Path) -> tuple[list[np.ndarray], dict]:
    directory = Path(directory)
    meta = _read_sidecar(directory / SIDECAR_NAME)
    paths = sorted(directory.glob("frame_*.png"))
    if not paths:
        raise FrameCountMismatch(f"no frame PNGs under {directory}")
    frames = []
    for path in paths:
        bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if bgr is None:
            raise IOError(f"cannot read {path}")
        frames.append(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
    return frames, meta


def write_raw_stream(frames: list[np.ndarray], path: str | Path, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for frame in frames:
            fh.write(np.ascontiguousarray(frame).tobytes())
    _write_sidecar(path.with_suffix(path.suffix + ".json"), meta)
    return path


def read_raw_stream(path: str | Path) -> tuple[list[np.ndarray], dict]:
    path = Path(path)
    meta = _read_sidecar(path.with_suffix(path.suffix + ".json"))
    width, height = int(meta["width"]), int(meta["height"])
    frame_bytes = width * height * 3
    blob = path.read_bytes()
    if len(blob) % frame_bytes != 0:
        raise DimensionMismatch(
            f"stream size {len(blob)} is not a multiple of {width}x{height}x3"
        )
    count = len(blob) // frame_bytes
    frames = [
        np.frombuffer(blob, dtype=np.uint8, count=frame_bytes, offset=i * frame_bytes)
        .reshape(height, width, 3)
        .copy()
        for i in range(count)
    ]
    return frames, meta
