"""Elliptic face blurring driven by head keypoints.

The mask trajectory is computed frame by frame: the raw center is the mean
of the five head keypoints horizontally and of the eye/nose keypoints
vertically (leaving the mouth visible), a reliability gate carries the
previous center through low-confidence frames, and an exponential moving
average removes jerk. Each frame is then blurred inside an axis-aligned
ellipse with a normalized box filter and uniform noise.

Pixels outside the (clipped) ellipse are never touched, and the whole
pipeline is a pure function of its inputs including the seed, so parallel
and serial execution produce byte-identical frames.
"""

from __future__ import annotations

import csv
import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, NoValidHeadDetection
from .keypoints import (
    EYE_NOSE_INDICES,
    HEAD_INDICES,
    KeypointFrame,
    SnippetKeypoints,
)


@dataclass(frozen=True)
class BlurParams:
    """All blur constants plus the RNG seed.

    ``mask_width`` and ``mask_height`` are full ellipse extents (the
    semi-axes are half of each).
    """

    mask_width: float = 150.0
    mask_height: float = 68.0
    kernel_size: int = 25
    noise_max: int = 25
    smoothing: float = 0.5
    reliability_threshold: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 1")
        if self.mask_width <= 0 or self.mask_height <= 0:
            raise ValueError("mask extents must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing coefficient must lie in [0, 1)")
        if not 0 <= self.noise_max <= 255:
            raise ValueError("noise_max must lie in [0, 255]")
        if not 0.0 <= self.reliability_threshold <= 1.0:
            raise ValueError("reliability_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class MaskCenter:
    """Per-frame ellipse center; ``carried`` marks a gated frame."""

    frame: int
    cx: float
    cy: float
    carried: bool = False


@dataclass
class MaskTrajectory:
    snippet_id: str
    centers: list[MaskCenter]
    params: BlurParams

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame", "cx", "cy", "carried"])
        for c in self.centers:
            writer.writerow([c.frame, repr(c.cx), repr(c.cy), int(c.carried)])
        return buf.getvalue()

    def save_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def raw_center(frame: KeypointFrame) -> tuple[float, float, float]:
    """Ungated mask center and its gate score for one frame.

    Horizontal center averages all five head keypoints; vertical center and
    the reliability average use only the eyes and nose so the mouth region
    stays visible.
    """
    head = frame.points[[i - 1 for i in HEAD_INDICES]]
    eye_nose = frame.points[[i - 1 for i in EYE_NOSE_INDICES]]
    cx = float(head[:, 0].mean())
    cy = float(eye_nose[:, 1].mean())
    r_avg = float(eye_nose[:, 2].mean())
    return cx, cy, r_avg


def gate_centers(
    raw: Sequence[tuple[float, float, float]], reliability_threshold: float
) -> list[MaskCenter]:
    """Keep a frame's raw center iff its score exceeds the gate.

    A rejected frame repeats the previous emitted center; a rejected prefix
    is backfilled from the first accepted center so no frame goes unmasked.
    """
    first_valid = next(
        (i for i, (_, _, r) in enumerate(raw) if r > reliability_threshold), None
    )
    if first_valid is None:
        raise NoValidHeadDetection("no frame passes the reliability gate")
    centers: list[MaskCenter] = []
    prev = (raw[first_valid][0], raw[first_valid][1])
    for i, (cx, cy, r) in enumerate(raw):
        if r > reliability_threshold:
            prev = (cx, cy)
            centers.append(MaskCenter(i + 1, cx, cy, carried=False))
        else:
            centers.append(MaskCenter(i + 1, prev[0], prev[1], carried=True))
    return centers


def ema_smooth(centers: Sequence[MaskCenter], smoothing: float) -> list[MaskCenter]:
    """In-place recurrence c(f) <- a*c(f-1) + (1-a)*c(f) over smoothed values.

    The first center is unchanged; x and y are filtered independently.
    """
    if not centers:
        raise ValueError("need at least one center")
    out = [centers[0]]
    for c in centers[1:]:
        prev = out[-1]
        out.append(
            replace(
                c,
                cx=smoothing * prev.cx + (1.0 - smoothing) * c.cx,
                cy=smoothing * prev.cy + (1.0 - smoothing) * c.cy,
            )
        )
    return out


class EllipseRegion:
    """Pixel set of an axis-aligned ellipse clipped to the frame bounds."""

    def __init__(self, center: MaskCenter, params: BlurParams, width: int, height: int):
        if width <= 0 or height <= 0:
            raise ValueError("frame dimensions must be positive")
        self.cx = center.cx
        self.cy = center.cy
        self.semi_x = params.mask_width / 2.0
        self.semi_y = params.mask_height / 2.0
        x0 = max(0, int(np.ceil(self.cx - self.semi_x)))
        x1 = min(width - 1, int(np.floor(self.cx + self.semi_x)))
        y0 = max(0, int(np.ceil(self.cy - self.semi_y)))
        y1 = min(height - 1, int(np.floor(self.cy + self.semi_y)))
        if x0 > x1 or y0 > y1:
            self.bbox = (0, 0, 0, 0)  # x0, y0, x1_excl, y1_excl
            self.mask = np.zeros((0, 0), dtype=bool)
            return
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        dx = (xs - self.cx) / self.semi_x
        dy = (ys - self.cy) / self.semi_y
        self.mask = (dy[:, None] ** 2 + dx[None, :] ** 2) <= 1.0
        self.bbox = (x0, y0, x1 + 1, y1 + 1)

    @property
    def empty(self) -> bool:
        return not self.mask.any()

    def contains(self, x: int, y: int) -> bool:
        x0, y0, x1, y1 = self.bbox
        if not (x0 <= x < x1 and y0 <= y < y1):
            return False
        return bool(self.mask[y - y0, x - x0])

    def pixel_count(self) -> int:
        return int(self.mask.sum())


def ellipse_region(
    center: MaskCenter, params: BlurParams, width: int, height: int
) -> EllipseRegion:
    """Membership of pixel (x, y): ((x-cx)/(w/2))^2 + ((y-cy)/(h/2))^2 <= 1."""
    return EllipseRegion(center, params, width, height)


def _check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.dtype != np.uint8:
        raise DimensionMismatch(f"expected (H, W, 3) uint8 frame, got {frame.shape} {frame.dtype}")
    return frame


def _box_sums(patch: np.ndarray, k: int) -> np.ndarray:
    """Exact k x k window sums over a padded patch via an integral image."""
    ii = np.zeros(
        (patch.shape[0] + 1, patch.shape[1] + 1, patch.shape[2]), dtype=np.int64
    )
    np.cumsum(patch, axis=0, dtype=np.int64, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
    return ii[k:, k:] - ii[:-k, k:] - ii[k:, :-k] + ii[:-k, :-k]


def blur_region(frame: np.ndarray, region: EllipseRegion, kernel_size: int) -> np.ndarray:
    """Replace in-region pixels by the rounded k x k box mean.

    Neighborhoods are sampled from the original frame with edge replication
    at the frame borders; rounding is half-up. Out-of-region pixels are
    bit-identical to the input.
    """
    if kernel_size % 2 == 0:
        raise ValueError("kernel size must be odd")
    frame = _check_frame(frame)
    out = frame.copy()
    if region.empty:
        return out
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = region.bbox
    half = kernel_size // 2
    # Crop with a half-kernel margin, replicating only past the frame edges.
    cy0, cy1 = y0 - half, y1 + half
    cx0, cx1 = x0 - half, x1 + half
    pad_top, pad_left = max(0, -cy0), max(0, -cx0)
    pad_bottom, pad_right = max(0, cy1 - h), max(0, cx1 - w)
    crop = frame[max(0, cy0) : min(h, cy1), max(0, cx0) : min(w, cx1)]
    if pad_top or pad_bottom or pad_left or pad_right:
        crop = np.pad(
            crop,
            ((pad_top, pad_bottom), (pad_left, pad_right), (0, 0)),
            mode="edge",
        )
    sums = _box_sums(crop, kernel_size)
    k2 = kernel_size * kernel_size
    means = ((2 * sums + k2) // (2 * k2)).astype(np.uint8)
    view = out[y0:y1, x0:x1]
    view[region.mask] = means[region.mask]
    return out


def frame_rng(seed: int, snippet_id: str, frame_index: int) -> np.random.Generator:
    """Per-frame RNG substream keyed by (seed, snippet id, frame index)."""
    digest = hashlib.blake2s(snippet_id.encode("utf-8"), digest_size=8).digest()
    sid = int.from_bytes(digest, "big")
    return np.random.default_rng(np.random.SeedSequence([seed, sid, frame_index]))


def add_noise(
    frame: np.ndarray,
    region: EllipseRegion,
    noise_max: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Add independent Uniform{0..noise_max} draws per in-region channel.

    Values are clamped to 255; out-of-region pixels are untouched.
    """
    frame = _check_frame(frame)
    out = frame.copy()
    if region.empty or noise_max == 0:
        return out
    x0, y0, x1, y1 = region.bbox
    n_pixels = region.pixel_count()
    draws = rng.integers(0, noise_max + 1, size=(n_pixels, 3), dtype=np.int16)
    view = out[y0:y1, x0:x1]
    noisy = view[region.mask].astype(np.int16) + draws
    view[region.mask] = np.clip(noisy, 0, 255).astype(np.uint8)
    return out


def mask_trajectory(keypoints: SnippetKeypoints, params: BlurParams) -> MaskTrajectory:
    """Gated, smoothed per-frame ellipse centers for a snippet."""
    raw = [raw_center(frame) for frame in keypoints.frames()]
    centers = ema_smooth(gate_centers(raw, params.reliability_threshold), params.smoothing)
    return MaskTrajectory(keypoints.snippet_id, centers, params)


def blur_frame(
    frame: np.ndarray,
    center: MaskCenter,
    params: BlurParams,
    snippet_id: str,
) -> np.ndarray:
    """Blur plus noise for a single frame at a precomputed center."""
    frame = _check_frame(frame)
    h, w = frame.shape[:2]
    region = ellipse_region(center, params, w, h)
    out = blur_region(frame, region, params.kernel_size)
    rng = frame_rng(params.seed, snippet_id, center.frame)
    return add_noise(out, region, params.noise_max, rng)


def blur_snippet(
    frames: Sequence[np.ndarray],
    keypoints: SnippetKeypoints,
    params: BlurParams,
    jobs: int = 1,
) -> tuple[list[np.ndarray], MaskTrajectory]:
    """Blur all 250 frames of a snippet and return the trajectory for audit.

    Trajectory computation is sequential; frame blurring parallelizes over
    ``jobs`` workers with output identical to serial execution.
    """
    if len(frames) != len(keypoints.data):
        raise DimensionMismatch(
            f"got {len(frames)} frames for {len(keypoints.data)} keypoint frames"
        )
    for frame in frames:
        f = _check_frame(frame)
        if f.shape[0] != keypoints.height or f.shape[1] != keypoints.width:
            raise DimensionMismatch(
                f"frame is {f.shape[1]}x{f.shape[0]}, snippet metadata says "
                f"{keypoints.width}x{keypoints.height}"
            )
    trajectory = mask_trajectory(keypoints, params)

    def work(i: int) -> np.ndarray:
        return blur_frame(frames[i], trajectory.centers[i], params, keypoints.snippet_id)

    if jobs <= 1:
        blurred = [work(i) for i in range(len(frames))]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            blurred = list(pool.map(work, range(len(frames))))
    return blurred, trajectory


def write_trajectory_csv(trajectory: MaskTrajectory, path: str | Path) -> None:
    trajectory.save_csv(path)
