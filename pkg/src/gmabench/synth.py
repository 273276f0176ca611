"""Deterministic synthetic snippets and stick-figure frame rendering.

The generator stands in for unavailable infant recordings: class 1 snippets
superimpose band-limited, low-amplitude oscillation on the wrist and ankle
keypoints while class 0 snippets only drift slowly, giving a documented
spectral margin between the classes. The motion makes no clinical claim;
it exists so end-to-end learning and blurring checks mean something.

Rendering draws a stick figure plus a textured face patch on a full-size
canvas so blur locality is visually and numerically checkable.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import cv2
import numpy as np

from .blur import raw_center
from .features import build_features
from .keypoints import (
    DEFAULT_FPS,
    DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
    KeypointFrame,
    KeypointMode,
    N_KEYPOINTS,
    SNIPPET_FRAMES,
    SnippetKeypoints,
    snippet_to_documents,
)
from .neural import LabeledSample

# Canonical supine pose on the 1920x1080 canvas, head toward the top.
BASE_POSE = {
    1: (930.0, 285.0),   # left eye
    2: (990.0, 285.0),   # right eye
    3: (960.0, 310.0),   # nose
    4: (895.0, 300.0),   # left ear
    5: (1025.0, 300.0),  # right ear
    6: (960.0, 395.0),   # neck
    7: (860.0, 420.0),   # right shoulder
    8: (800.0, 520.0),   # right elbow
    9: (770.0, 620.0),   # right wrist
    10: (1060.0, 420.0),  # left shoulder
    11: (1120.0, 520.0),  # left elbow
    12: (1150.0, 620.0),  # left wrist
    13: (960.0, 650.0),   # mid hip
    14: (905.0, 665.0),   # right hip
    15: (880.0, 790.0),   # right knee
    16: (865.0, 915.0),   # right ankle
    17: (1015.0, 665.0),  # left hip
    18: (1040.0, 790.0),  # left knee
    19: (1055.0, 915.0),  # left ankle
    20: (1070.0, 975.0),  # left big toe
    21: (850.0, 975.0),   # right big toe
    22: (1090.0, 980.0),  # excluded foot point
    23: (1040.0, 945.0),
    24: (830.0, 980.0),
    25: (880.0, 945.0),
}

FIDGETY_KEYPOINTS = (9, 12, 16, 19)  # wrists and ankles
HEAD_KEYPOINTS = (1, 2, 3, 4, 5)

SKELETON_EDGES = [
    (1, 3), (2, 3), (1, 4), (2, 5), (3, 6),
    (6, 7), (7, 8), (8, 9),
    (6, 10), (10, 11), (11, 12),
    (6, 13), (13, 14), (13, 17),
    (14, 15), (15, 16), (16, 21),
    (17, 18), (18, 19), (19, 20),
]

FACE_PATCH_SIZE = (80, 170)  # rows, cols


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic snippet."""

    label: int
    seed: int
    oscillation_band: tuple[float, float] = (6.0, 9.0)
    oscillation_amplitude: float = 25.0
    drift_amplitude: float = 15.0
    missing_rate: float = 0.0
    contamination_rate: float = 0.0
    jitter: float = 0.4

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        lo, hi = self.oscillation_band
        nyquist = DEFAULT_FPS / 2.0
        if not (0.0 < lo < hi < nyquist):
            raise ValueError(f"oscillation band must lie inside (0, {nyquist}) Hz")
        for rate in (self.missing_rate, self.contamination_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")


def _snippet_id(spec: SynthSpec) -> str:
    return f"synth{spec.label}-{spec.seed:08d}"


def gen_snippet(spec: SynthSpec) -> SnippetKeypoints:
    """One seeded 250-frame snippet with class-dependent motion."""
    rng = np.random.default_rng(spec.seed)
    t = np.arange(SNIPPET_FRAMES, dtype=np.float64) / DEFAULT_FPS
    data = np.zeros((SNIPPET_FRAMES, N_KEYPOINTS, 3), dtype=np.float64)

    for idx in range(1, N_KEYPOINTS + 1):
        bx, by = BASE_POSE[idx]
        scale = 0.3 if idx in HEAD_KEYPOINTS else 1.0
        for axis, base in ((0, bx), (1, by)):
            freq = rng.uniform(0.08, 0.4)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.4, 1.0) * spec.drift_amplitude * scale
            series = base + amp * np.sin(2.0 * np.pi * freq * t + phase)
            if spec.label == 1 and idx in FIDGETY_KEYPOINTS:
                for _ in range(3):
                    f = rng.uniform(*spec.oscillation_band)
                    ph = rng.uniform(0.0, 2.0 * np.pi)
                    a = rng.uniform(0.5, 1.0) * spec.oscillation_amplitude
                    series = series + a * np.sin(2.0 * np.pi * f * t + ph)
            data[:, idx - 1, axis] = series

    data[:, :, 0:2] += rng.normal(0.0, spec.jitter, size=(SNIPPET_FRAMES, N_KEYPOINTS, 2))
    data[:, :, 0] = np.clip(data[:, :, 0], 1.0, DEFAULT_WIDTH - 2.0)
    data[:, :, 1] = np.clip(data[:, :, 1], 1.0, DEFAULT_HEIGHT - 2.0)
    data[:, :, 2] = rng.uniform(0.55, 0.95, size=(SNIPPET_FRAMES, N_KEYPOINTS))

    if spec.missing_rate > 0.0:
        gone = rng.random((SNIPPET_FRAMES, N_KEYPOINTS)) < spec.missing_rate
        data[gone] = 0.0

    return SnippetKeypoints(snippet_id=_snippet_id(spec), data=data)


def gen_snippets(
    n_per_class: int, seed: int = 0, **spec_kwargs
) -> tuple[list[SnippetKeypoints], np.ndarray]:
    """Balanced snippet collection with per-snippet derived seeds."""
    snippets = []
    labels = []
    for i in range(n_per_class):
        for label in (0, 1):
            spec = SynthSpec(label=label, seed=seed + 2 * i + label, **spec_kwargs)
            snippets.append(gen_snippet(spec))
            labels.append(label)
    return snippets, np.array(labels, dtype=np.int64)


def gen_dataset(
    n_per_class: int,
    seed: int = 0,
    mode: KeypointMode | str = KeypointMode.WITH_HEAD,
    **spec_kwargs,
) -> list[LabeledSample]:
    """Balanced labeled dataset with features built per the given mode."""
    snippets, labels = gen_snippets(n_per_class, seed, **spec_kwargs)
    return [
        LabeledSample(features=build_features(snippet, mode), label=int(label))
        for snippet, label in zip(snippets, labels)
    ]


def _face_texture(snippet_id: str) -> np.ndarray:
    rng = np.random.default_rng(zlib.crc32(snippet_id.encode("utf-8")))
    rows, cols = FACE_PATCH_SIZE
    texture = rng.integers(40, 256, size=(rows, cols, 3), dtype=np.uint8)
    # Checker overlay keeps plenty of high-frequency content for blur checks.
    yy, xx = np.mgrid[0:rows, 0:cols]
    checker = ((yy // 8 + xx // 8) % 2).astype(np.uint8)
    return np.where(checker[..., None] == 1, texture, 255 - texture)


def render_frame(
    points: np.ndarray,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    face_texture: np.ndarray | None = None,
) -> np.ndarray:
    """Draw one keypoint frame as a stick figure on a dark canvas."""
    canvas = np.full((height, width, 3), 24, dtype=np.uint8)

    def visible(idx: int) -> bool:
        x, y, r = points[idx - 1]
        return not (x == 0.0 and y == 0.0 and r == 0.0)

    def at(idx: int) -> tuple[int, int]:
        x, y, _ = points[idx - 1]
        return int(round(x)), int(round(y))

    for a, b in SKELETON_EDGES:
        if visible(a) and visible(b):
            cv2.line(canvas, at(a), at(b), (70, 170, 90), thickness=7, lineType=cv2.LINE_8)
    for idx in range(1, N_KEYPOINTS + 1):
        if visible(idx):
            cv2.circle(canvas, at(idx), 5, (200, 120, 60), thickness=-1, lineType=cv2.LINE_8)

    if face_texture is not None and any(visible(i) for i in HEAD_KEYPOINTS):
        cx, cy, _ = raw_center(KeypointFrame(1, points))
        rows, cols = face_texture.shape[:2]
        y0 = int(round(cy)) - rows // 2
        x0 = int(round(cx)) - cols // 2
        y1, x1 = y0 + rows, x0 + cols
        sy0, sx0 = max(0, -y0), max(0, -x0)
        y0, x0 = max(0, y0), max(0, x0)
        y1, x1 = min(height, y1), min(width, x1)
        if y1 > y0 and x1 > x0:
            canvas[y0:y1, x0:x1] = face_texture[sy0 : sy0 + (y1 - y0), sx0 : sx0 + (x1 - x0)]
    return canvas


def render_frames(snippet: SnippetKeypoints) -> list[np.ndarray]:
    """All 250 frames of a snippet; deterministic for a given snippet."""
    texture = _face_texture(snippet.snippet_id)
    return [
        render_frame(snippet.data[f], snippet.width, snippet.height, texture)
        for f in range(SNIPPET_FRAMES)
    ]


def contaminated_documents(
    snippet: SnippetKeypoints, schema, rate: float, seed: int = 0
) -> dict[int, dict]:
    """Frame documents with a second, lower-reliability person injected."""
    rng = np.random.default_rng(seed)
    docs = snippet_to_documents(snippet, schema)
    n_external = schema.max_external_index + 1
    for ordinal, doc in docs.items():
        if rng.random() >= rate:
            continue
        flat = []
        for _ in range(n_external):
            flat.extend(
                [
                    float(rng.uniform(0, snippet.width)),
                    float(rng.uniform(0, snippet.height)),
                    float(rng.uniform(0.05, 0.3)),
                ]
            )
        doc["people"].append({"pose_keypoints_2d": flat})
    return docs
