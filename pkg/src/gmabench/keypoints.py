"""Pose-estimator output parsing and the canonical 25-keypoint numbering.

Keypoints are addressed by a canonical 1..25 numbering: indices 1-5 are the
head (left eye, right eye, nose, left ear, right ear), 6-21 the body, and
22-25 a toes/heels region that is excluded from analysis. External estimator
layouts (BODY-25 being the shipped default) are mapped onto this numbering
through a configurable :class:`SchemaMap`.

A missing detection is encoded exactly as ``(x=0, y=0, r=0)``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple

import numpy as np

from .errors import FrameCountMismatch, MalformedDocument

N_KEYPOINTS = 25
SNIPPET_FRAMES = 250
DEFAULT_FPS = 50
DEFAULT_WIDTH = 1920
DEFAULT_HEIGHT = 1080

# Canonical indices 1..5 in role order.
HEAD_ROLES = ("left_eye", "right_eye", "nose", "left_ear", "right_ear")
EYE_NOSE_INDICES = (1, 2, 3)
HEAD_INDICES = (1, 2, 3, 4, 5)
EXCLUDED_INDICES = (22, 23, 24, 25)

SIDECAR_NAME = "snippet.json"
FRAME_DOC_PATTERN = "frame_%06d.json"


class KeypointMode(str, Enum):
    """Which keypoint subset feeds an analysis."""

    WITH_HEAD = "with_head"
    WITHOUT_HEAD = "without_head"
    FACE_MASK = "face_mask"


def select_keypoints(mode: KeypointMode | str) -> list[int]:
    """Return the ordered canonical indices for the given analysis mode."""
    mode = KeypointMode(mode)
    if mode is KeypointMode.WITH_HEAD:
        return list(range(1, 22))
    if mode is KeypointMode.WITHOUT_HEAD:
        return list(range(6, 22))
    return list(range(1, 6))


class Keypoint(NamedTuple):
    x: float
    y: float
    r: float

    @property
    def missing(self) -> bool:
        return self.x == 0.0 and self.y == 0.0 and self.r == 0.0


@dataclass(frozen=True)
class SchemaEntry:
    """Maps one external estimator index onto one canonical index."""

    canonical_index: int
    external_index: int
    role: str


class SchemaMap:
    """Injective mapping from an external keypoint layout onto indices 1..25.

    Exactly 25 entries are required, one per canonical index, with all five
    head roles assigned to indices 1-5 and indices 22-25 marked ``excluded``.
    """

    def __init__(self, entries: Iterable[SchemaEntry]):
        self.entries = tuple(sorted(entries, key=lambda e: e.canonical_index))
        self._validate()
        self._external = {e.canonical_index: e.external_index for e in self.entries}

    def _validate(self) -> None:
        if len(self.entries) != N_KEYPOINTS:
            raise ValueError(f"schema map needs {N_KEYPOINTS} entries, got {len(self.entries)}")
        canon = [e.canonical_index for e in self.entries]
        if canon != list(range(1, N_KEYPOINTS + 1)):
            raise ValueError("schema map must cover canonical indices 1..25 exactly once")
        externals = [e.external_index for e in self.entries]
        if len(set(externals)) != len(externals):
            raise ValueError("schema map must be injective over external indices")
        if any(e < 0 for e in externals):
            raise ValueError("external indices must be non-negative")
        roles = {e.canonical_index: e.role for e in self.entries}
        for idx, role in zip(HEAD_INDICES, HEAD_ROLES):
            if roles[idx] != role:
                raise ValueError(f"canonical index {idx} must carry head role {role!r}")
        for idx in EXCLUDED_INDICES:
            if roles[idx] != "excluded":
                raise ValueError(f"canonical index {idx} must be marked excluded")

    def external_index(self, canonical_index: int) -> int:
        return self._external[canonical_index]

    @property
    def max_external_index(self) -> int:
        return max(e.external_index for e in self.entries)

    def to_json(self) -> list[dict]:
        return [
            {"paper_index": e.canonical_index, "external_index": e.external_index, "role": e.role}
            for e in self.entries
        ]

    @classmethod
    def from_json(cls, data: list[dict]) -> "SchemaMap":
        entries = [
            SchemaEntry(int(d["paper_index"]), int(d["external_index"]), str(d["role"]))
            for d in data
        ]
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "SchemaMap":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)


# BODY-25 external layout: 0 nose, 1 neck, 2-4 right arm, 5-7 left arm,
# 8 mid hip, 9-11 right leg, 12-14 left leg, 15/16 eyes, 17/18 ears,
# 19-21 left foot (big toe, small toe, heel), 22-24 right foot.
# BODY-25 carries six foot points but the canonical layout reserves only
# four excluded slots, so the big toes stay in the body region (20, 21)
# and small toes plus heels fill the excluded region (22-25).
_BODY25_LAYOUT = [
    (1, 16, "left_eye"),
    (2, 15, "right_eye"),
    (3, 0, "nose"),
    (4, 18, "left_ear"),
    (5, 17, "right_ear"),
    (6, 1, "neck"),
    (7, 2, "right_shoulder"),
    (8, 3, "right_elbow"),
    (9, 4, "right_wrist"),
    (10, 5, "left_shoulder"),
    (11, 6, "left_elbow"),
    (12, 7, "left_wrist"),
    (13, 8, "mid_hip"),
    (14, 9, "right_hip"),
    (15, 10, "right_knee"),
    (16, 11, "right_ankle"),
    (17, 12, "left_hip"),
    (18, 13, "left_knee"),
    (19, 14, "left_ankle"),
    (20, 19, "left_big_toe"),
    (21, 22, "right_big_toe"),
    (22, 20, "excluded"),
    (23, 21, "excluded"),
    (24, 23, "excluded"),
    (25, 24, "excluded"),
]


def default_body25_schema() -> SchemaMap:
    """The shipped BODY-25 schema map."""
    return SchemaMap(SchemaEntry(c, e, r) for c, e, r in _BODY25_LAYOUT)


@dataclass
class KeypointFrame:
    """One frame: exactly 25 keypoints addressed by canonical index."""

    index: int
    points: np.ndarray  # (25, 3) float64 rows of (x, y, r)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (N_KEYPOINTS, 3):
            raise ValueError(f"frame needs shape (25, 3), got {self.points.shape}")

    def point(self, canonical_index: int) -> Keypoint:
        row = self.points[canonical_index - 1]
        return Keypoint(float(row[0]), float(row[1]), float(row[2]))


@dataclass
class SnippetKeypoints:
    """A 5-second snippet: 250 ordered frames of 25 keypoints each."""

    snippet_id: str
    data: np.ndarray  # (250, 25, 3) float64
    fps: int = DEFAULT_FPS
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (SNIPPET_FRAMES, N_KEYPOINTS, 3):
            raise FrameCountMismatch(
                f"snippet needs shape (250, 25, 3), got {self.data.shape}"
            )

    def frame(self, ordinal: int) -> KeypointFrame:
        """Frame by 1-based ordinal."""
        return KeypointFrame(ordinal, self.data[ordinal - 1])

    def frames(self) -> Iterator[KeypointFrame]:
        for f in range(1, SNIPPET_FRAMES + 1):
            yield self.frame(f)

    def series(self, canonical_index: int) -> np.ndarray:
        """(250, 3) trajectory of one keypoint."""
        return self.data[:, canonical_index - 1, :]


def _person_triplets(person: Mapping, schema: SchemaMap) -> np.ndarray:
    arr = person.get("pose_keypoints_2d")
    if not isinstance(arr, (list, tuple)):
        raise MalformedDocument("person lacks a pose_keypoints_2d array")
    if len(arr) % 3 != 0:
        raise MalformedDocument(f"keypoint array length {len(arr)} is not a multiple of 3")
    available = len(arr) // 3
    if available <= schema.max_external_index:
        raise MalformedDocument(
            f"keypoint array holds {available} triplets, schema needs "
            f"external index {schema.max_external_index}"
        )
    flat = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(flat)):
        raise MalformedDocument("keypoint array contains non-finite values")
    out = np.empty((N_KEYPOINTS, 3), dtype=np.float64)
    for entry in schema.entries:
        out[entry.canonical_index - 1] = flat[3 * entry.external_index : 3 * entry.external_index + 3]
    if np.any(out[:, 2] < 0) or np.any(out[:, 2] > 1):
        raise MalformedDocument("reliability scores must lie in [0, 1]")
    return out


def parse_pose_frame(document: Mapping, schema: SchemaMap, index: int = 1) -> KeypointFrame:
    """Parse one pose frame document into a 25-keypoint frame.

    With multiple detected persons the one with the highest mean reliability
    wins (ties go to the first listed); with none, every keypoint is the
    missing sentinel ``(0, 0, 0)``.
    """
    if not isinstance(document, Mapping):
        raise MalformedDocument("frame document must be a JSON object")
    people = document.get("people")
    if not isinstance(people, list):
        raise MalformedDocument("frame document lacks a people array")
    if not people:
        return KeypointFrame(index, np.zeros((N_KEYPOINTS, 3)))
    candidates = [_person_triplets(p, schema) for p in people]
    scores = [float(c[:, 2].mean()) for c in candidates]
    best = int(np.argmax(scores))
    return KeypointFrame(index, candidates[best])


def load_snippet(
    frame_documents: Mapping[int, Mapping] | Iterable[tuple[int, Mapping]],
    schema: SchemaMap,
    *,
    snippet_id: str,
    fps: int = DEFAULT_FPS,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
) -> SnippetKeypoints:
    """Assemble a snippet from (frame index, document) pairs.

    Input enumeration order is irrelevant: frames are sorted by their numeric
    index and re-numbered 1..250.
    """
    if isinstance(frame_documents, Mapping):
        items = list(frame_documents.items())
    else:
        items = list(frame_documents)
    seen = set()
    for idx, _ in items:
        if idx in seen:
            raise MalformedDocument(f"duplicate frame index {idx}")
        seen.add(idx)
    if len(items) != SNIPPET_FRAMES:
        raise FrameCountMismatch(f"expected {SNIPPET_FRAMES} frames, got {len(items)}")
    items.sort(key=lambda kv: kv[0])
    data = np.zeros((SNIPPET_FRAMES, N_KEYPOINTS, 3), dtype=np.float64)
    for ordinal, (_, doc) in enumerate(items, start=1):
        data[ordinal - 1] = parse_pose_frame(doc, schema, index=ordinal).points
    return SnippetKeypoints(snippet_id=snippet_id, data=data, fps=fps, width=width, height=height)


_INDEX_RE = re.compile(r"(\d+)(?!.*\d)")


def load_snippet_dir(directory: str | Path, schema: SchemaMap) -> SnippetKeypoints:
    """Load a snippet from a directory of per-frame JSON documents.

    The directory must hold one ``*.json`` per frame (frame index taken from
    the last run of digits in the file stem) plus a ``snippet.json`` sidecar
    with ``snippet_id``, ``fps``, ``width`` and ``height``.
    """
    directory = Path(directory)
    sidecar_path = directory / SIDECAR_NAME
    if not sidecar_path.exists():
        raise MalformedDocument(f"missing metadata sidecar {sidecar_path}")
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    pairs = []
    for path in directory.glob("*.json"):
        if path.name == SIDECAR_NAME:
            continue
        m = _INDEX_RE.search(path.stem)
        if m is None:
            raise MalformedDocument(f"cannot extract a frame index from {path.name}")
        with open(path, "r", encoding="utf-8") as fh:
            pairs.append((int(m.group(1)), json.load(fh)))
    return load_snippet(
        pairs,
        schema,
        snippet_id=str(meta["snippet_id"]),
        fps=int(meta.get("fps", DEFAULT_FPS)),
        width=int(meta.get("width", DEFAULT_WIDTH)),
        height=int(meta.get("height", DEFAULT_HEIGHT)),
    )


def snippet_to_documents(snippet: SnippetKeypoints, schema: SchemaMap) -> dict[int, dict]:
    """Inverse of :func:`load_snippet`: emit external-layout frame documents."""
    n_external = schema.max_external_index + 1
    docs: dict[int, dict] = {}
    for ordinal in range(1, SNIPPET_FRAMES + 1):
        flat = [0.0] * (3 * n_external)
        frame = snippet.data[ordinal - 1]
        for entry in schema.entries:
            x, y, r = frame[entry.canonical_index - 1]
            base = 3 * entry.external_index
            flat[base : base + 3] = [float(x), float(y), float(r)]
        docs[ordinal] = {"people": [{"pose_keypoints_2d": flat}]}
    return docs


def write_snippet_dir(
    snippet: SnippetKeypoints,
    schema: SchemaMap,
    directory: str | Path,
    extra_people: Mapping[int, list] | None = None,
) -> Path:
    """Write per-frame documents plus the metadata sidecar.

    ``extra_people`` optionally injects additional person entries into given
    frames (used to exercise multi-person selection).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    docs = snippet_to_documents(snippet, schema)
    for ordinal, doc in docs.items():
        if extra_people and ordinal in extra_people:
            doc["people"].extend(extra_people[ordinal])
        with open(directory / (FRAME_DOC_PATTERN % ordinal), "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
    sidecar = {
        "snippet_id": snippet.snippet_id,
        "fps": snippet.fps,
        "width": snippet.width,
        "height": snippet.height,
    }
    with open(directory / SIDECAR_NAME, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
    return directory
