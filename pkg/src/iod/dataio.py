"""On-disk formats: 16-bit PGM frames, per-clip annotation.json, manifest.json."""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    Box,
    ClipAnnotation,
    FormatError,
    FrameCountError,
    GeometryError,
    MissingInputError,
    Tube,
)

ANNOTATION_FILE = "annotation.json"
MANIFEST_FILE = "manifest.json"


def frame_name(t: int) -> str:
    return f"frame_{t:05d}.pgm"


def encode_pgm(img: np.ndarray) -> bytes:
    if img.ndim != 2:
        raise FormatError(f"expected 2-D raster, got shape {img.shape}")
    h, w = img.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + np.asarray(img, dtype=">u2").tobytes()


_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def decode_pgm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    m = _HEADER.match(data)
    if m is None:
        raise FormatError(f"{name}: not a binary P5 PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise FormatError(f"{name}: maxval {maxval}, expected 65535")
    body = data[m.end():]
    if len(body) != 2 * w * h:
        raise FormatError(f"{name}: {len(body)} payload bytes for {w}x{h} 16-bit raster")
    return np.frombuffer(body, dtype=">u2").reshape(h, w).astype(np.uint16)


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=False) + "\n").encode("utf-8")


def annotation_to_dict(ann: ClipAnnotation) -> dict:
    return {
        "clip_id": ann.clip_id,
        "width": ann.width,
        "height": ann.height,
        "n_frames": ann.n_frames,
        "visibility": ann.visibility,
        "scene": ann.scene,
        "size_class": ann.size_class,
        "boxes": [
            {"frame": t, "x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2}
            for t, b in zip(ann.gt.frames, ann.gt.boxes)
        ],
    }


def annotation_from_dict(d: dict, name: str = "annotation") -> ClipAnnotation:
    try:
        entries = sorted(d["boxes"], key=lambda e: int(e["frame"]))
        frames = [int(e["frame"]) for e in entries]
        raw = [(float(e["x1"]), float(e["y1"]), float(e["x2"]), float(e["y2"])) for e in entries]
        meta = dict(
            clip_id=str(d["clip_id"]),
            width=int(d["width"]),
            height=int(d["height"]),
            n_frames=int(d["n_frames"]),
            visibility=str(d["visibility"]),
            scene=str(d["scene"]),
            size_class=str(d["size_class"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{name}: malformed annotation ({exc!r})") from None
    if frames != list(range(len(frames))):
        raise GeometryError(f"{name}: box frames are not consecutive from 0")
    boxes = tuple(Box(*r) for r in raw)
    return ClipAnnotation(gt=Tube(0, boxes), **meta).validate()


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    split: int


@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    config_digest: str
    clips: tuple[ManifestEntry, ...]
    root: Path = Path(".")

    def __post_init__(self):
        ids = [c.clip_id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise FormatError("duplicate clip_id in manifest")
        for c in self.clips:
            if c.split not in (1, 2, 3):
                raise FormatError(f"{c.clip_id}: split {c.split} not in 1..3")

    def clip_dir(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def entries(self, split: int | None = None, exclude: int | None = None) -> list[ManifestEntry]:
        return [
            c for c in self.clips
            if (split is None or c.split == split) and (exclude is None or c.split != exclude)
        ]

    def entry(self, clip_id: str) -> ManifestEntry:
        for c in self.clips:
            if c.clip_id == clip_id:
                return c
        raise KeyError(clip_id)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_digest": self.config_digest,
            "clips": [{"clip_id": c.clip_id, "path": c.path, "split": c.split} for c in self.clips],
        }

    def digest(self) -> str:
        return hashlib.sha256(dumps_json(self.to_dict())).hexdigest()


def write_manifest(manifest: DatasetManifest, root: Path) -> Path:
    path = Path(root) / MANIFEST_FILE
    atomic_write(path, dumps_json(manifest.to_dict()))
    return path


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILE
    if not path.exists():
        raise MissingInputError(f"manifest not found: {path}")
    try:
        d = json.loads(path.read_text())
        clips = tuple(
            ManifestEntry(str(c["clip_id"]), str(c["path"]), int(c["split"])) for c in d["clips"]
        )
        manifest = DatasetManifest(int(d["seed"]), str(d["config_digest"]), clips, path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc!r})") from None
    for c in manifest.clips:
        if not manifest.clip_dir(c).is_dir():
            raise MissingInputError(f"clip directory not found: {manifest.clip_dir(c)}")
    return manifest


def write_clip(directory: Path, frames: np.ndarray, ann: ClipAnnotation) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, img in enumerate(frames):
        atomic_write(directory / frame_name(t), encode_pgm(img))
    atomic_write(directory / ANNOTATION_FILE, dumps_json(annotation_to_dict(ann)))


def load_annotation(directory: Path) -> ClipAnnotation:
    path = Path(directory) / ANNOTATION_FILE
    if not path.exists():
        raise MissingInputError(f"annotation not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return annotation_from_dict(d, str(path))


def load_clip_dir(directory: Path) -> tuple[np.ndarray, ClipAnnotation]:
    directory = Path(directory)
    ann = load_annotation(directory)
    frames = []
    for t in range(ann.n_frames):
        p = directory / frame_name(t)
        if not p.exists():
            raise MissingInputError(f"missing frame file: {p}")
        img = decode_pgm(p.read_bytes(), str(p))
        if img.shape != (ann.height, ann.width):
            raise FormatError(f"{p}: raster {img.shape[::-1]} != annotation {ann.width}x{ann.height}")
        frames.append(img)
    extra = directory / frame_name(ann.n_frames)
    if extra.exists():
        raise FrameCountError(f"{directory}: more frame files than n_frames={ann.n_frames}")
    return np.stack(frames), ann


def load_clip(manifest: DatasetManifest, entry: ManifestEntry) -> tuple[np.ndarray, ClipAnnotation]:
    """Frames as a (n_frames, height, width) uint16 array plus validated annotation."""
    frames, ann = load_clip_dir(manifest.clip_dir(entry))
    if ann.clip_id != entry.clip_id:
        raise FormatError(f"{entry.path}: annotation clip_id {ann.clip_id!r} != {entry.clip_id!r}")
    return frames, ann
