"""Boxes, tubes, clip annotations and the keyframe interpolation rule.

Coordinates are continuous pixel units, origin top-left, y pointing down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

# Max per-frame GT center displacement, as a fraction of max(width, height).
CONTINUITY_FRACTION = 0.25

VISIBILITIES = ("clear", "vague")
SIZE_CLASSES = ("small", "middle", "big")


class IODError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(IODError, ValueError):
    """Invalid geometry or violated annotation invariant."""


class FormatError(IODError, ValueError):
    """Malformed file header or document."""


class FrameCountError(IODError, ValueError):
    """Number of frames on disk disagrees with the annotation."""


class MissingInputError(IODError, FileNotFoundError):
    """A required input file does not exist."""


class NumericError(IODError, ArithmeticError):
    """Non-finite loss or failed gradient check."""


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2, self.score)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise GeometryError(f"degenerate box {vals[:4]}")
        if not 0.0 <= self.score <= 1.0:
            raise GeometryError(f"score {self.score} outside [0, 1]")

    @property
    def w(self) -> float:
        return self.x2 - self.x1

    @property
    def h(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def center_size(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        return cx, cy, self.w, self.h

    def shifted(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy, self.score)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def from_center_size(cx: float, cy: float, w: float, h: float, score: float = 1.0) -> Box:
    if not (w > 0 and h > 0):
        raise GeometryError(f"non-positive size ({w}, {h})")
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h, score)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two valid boxes."""
    for bx in (a, b):
        if not bx.area > 0:
            raise GeometryError(f"zero-area box {bx}")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Tube:
    start_frame: int
    boxes: tuple[Box, ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.boxes:
            raise GeometryError("empty tube")

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.start_frame + len(self.boxes))

    def box_at(self, frame: int) -> Box:
        return self.boxes[frame - self.start_frame]

    def centers(self) -> list[tuple[float, float]]:
        return [b.center for b in self.boxes]


@dataclass(frozen=True)
class ClipAnnotation:
    clip_id: str
    width: int
    height: int
    n_frames: int
    visibility: str
    scene: str
    size_class: str
    gt: Tube = field(repr=False)

    def validate(self) -> "ClipAnnotation":
        if self.visibility not in VISIBILITIES:
            raise GeometryError(f"{self.clip_id}: bad visibility {self.visibility!r}")
        if self.size_class not in SIZE_CLASSES:
            raise GeometryError(f"{self.clip_id}: bad size_class {self.size_class!r}")
        if self.gt.start_frame != 0 or len(self.gt) != self.n_frames:
            raise GeometryError(
                f"{self.clip_id}: gt spans {len(self.gt)} frames from "
                f"{self.gt.start_frame}, expected [0, {self.n_frames})"
            )
        for t, b in enumerate(self.gt.boxes):
            if b.x1 < 0 or b.y1 < 0 or b.x2 > self.width or b.y2 > self.height:
                raise GeometryError(f"{self.clip_id}: frame {t} box {b.as_tuple()} outside image")
        limit = CONTINUITY_FRACTION * max(self.width, self.height)
        centers = self.gt.centers()
        for t in range(len(centers) - 1):
            d = math.dist(centers[t], centers[t + 1])
            if d > limit:
                raise GeometryError(
                    f"{self.clip_id}: center jumps {d:.1f} px between frames {t} and {t + 1}"
                )
        return self


def _lerp_box(a: Box, b: Box, u: float) -> Box:
    return Box(*(pa + u * (pb - pa) for pa, pb in zip(a.as_tuple(), b.as_tuple())))


def interpolate_annotations(keyframes: Sequence[tuple[int, Box]], n_frames: int) -> Tube:
    """Densify sparse keyframe boxes into a per-frame tube.

    Corners are linearly interpolated between bracketing keyframes; frames
    outside the keyframe range hold the nearest keyframe box.
    """
    if not keyframes:
        raise GeometryError("no keyframes")
    frames = [f for f, _ in keyframes]
    if len(set(frames)) != len(frames):
        raise GeometryError(f"duplicate keyframe index in {frames}")
    if frames != sorted(frames):
        raise GeometryError("keyframes must be sorted by frame")
    if frames[0] < 0 or frames[-1] >= n_frames:
        raise GeometryError(f"keyframes {frames} outside [0, {n_frames})")

    boxes = []
    k = 0
    for t in range(n_frames):
        while k + 1 < len(keyframes) and keyframes[k + 1][0] <= t:
            k += 1
        f0, b0 = keyframes[k]
        if t <= f0 or k + 1 == len(keyframes):
            boxes.append(b0)
            continue
        f1, b1 = keyframes[k + 1]
        boxes.append(_lerp_box(b0, b1, (t - f0) / (f1 - f0)))
    return Tube(0, tuple(boxes))
