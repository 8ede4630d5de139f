"""Deterministic synthetic infrared plume clips.

A plume is a train of isotropic Gaussian puffs emitted from a source,
advected by wind plus a per-puff random walk, growing and fading as they
age. The clean field is composited onto a sensor-like background and
quantized to 16 bits. Ground truth is the bounding box of the clean field
above a fraction of its frame maximum, labeled every few frames and
interpolated in between.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Box, ClipAnnotation, GeometryError, IODError, interpolate_annotations
from .dataio import DatasetManifest, ManifestEntry, write_clip, write_manifest

SCENES = ("pipeline", "factory", "flange", "valve", "experiment", "cylinder", "wild", "others")
SMALL_AREA = 32 * 32
BIG_AREA = 96 * 96
MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    s = splitmix64(seed & MASK64)
    for k in keys:
        s = splitmix64(s ^ (k & MASK64))
    return s


@dataclass(frozen=True)
class SimConfig:
    width: int = 288
    height: int = 288
    n_frames: int = 16
    warmup: int = 20
    emission_rate: float = 0.7
    wind: tuple[float, float] = (1.2, 0.0)
    random_wind_direction: bool = True
    puff_walk_std: float = 0.5
    sigma0: float = 5.0
    size_scale_range: tuple[float, float] = (0.4, 2.6)
    diffusion: float = 0.3
    decay: float = 0.96
    intensity: float = 250.0
    contrast_range: tuple[float, float] = (0.15, 1.0)
    background_level: float = 20000.0
    background_gradient: float = 1500.0
    noise_std: float = 120.0
    fixed_pattern_std: float = 40.0
    clutter_blobs: int = 4
    clutter_amplitude: float = 300.0
    jitter_std: float = 0.4
    gt_tau: float = 0.2
    clear_threshold: float = 2.5
    keyframe_step: int = 5
    max_retries: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.n_frames <= 0:
            raise ValueError("width, height and n_frames must be positive")
        if not 0 < self.gt_tau < 1:
            raise ValueError("gt_tau must lie in (0, 1)")
        for name in ("puff_walk_std", "noise_std", "fixed_pattern_std", "jitter_std", "diffusion"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.sigma0 <= 0 or self.intensity <= 0 or self.keyframe_step < 1:
            raise ValueError("sigma0, intensity and keyframe_step must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class Puff:
    birth: int
    origin: tuple[float, float]
    x: float
    y: float
    sigma: float
    amplitude: float


@dataclass
class PlumeState:
    puffs: list[Puff] = field(default_factory=list)


class RejectedClip(IODError):
    pass


def _gauss_1d(coords: np.ndarray, center: float, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((coords - center) / sigma) ** 2)


def _render(puffs, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    field_ = np.zeros((len(ys), len(xs)))
    for p in puffs:
        gy = p.amplitude * _gauss_1d(ys, p.y, p.sigma)
        if gy.max() < 1e-12:
            continue
        field_ += np.outer(gy, _gauss_1d(xs, p.x, p.sigma))
    return field_


def _gt_box(clean: np.ndarray, tau: float) -> Box | None:
    peak = clean.max()
    if not peak > 0:
        return None
    mask = clean >= tau * peak
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return Box(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def size_class_of(areas) -> str:
    med = float(np.median(areas))
    if med < SMALL_AREA:
        return "small"
    if med > BIG_AREA:
        return "big"
    return "middle"


def _simulate(cfg: SimConfig, seed: int, clip_id: str):
    plume_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    W, H = cfg.width, cfg.height
    xs = np.arange(W, dtype=float)
    ys = np.arange(H, dtype=float)

    # scale acts like viewing distance: all plume geometry shrinks together
    scale = plume_rng.uniform(*cfg.size_scale_range)
    contrast = plume_rng.uniform(*cfg.contrast_range)
    speed = math.hypot(*cfg.wind) * scale
    if cfg.random_wind_direction:
        ang = plume_rng.uniform(0, 2 * math.pi)
        wind = (speed * math.cos(ang), speed * math.sin(ang))
    else:
        wind = (cfg.wind[0] * scale, cfg.wind[1] * scale)
    amp0 = cfg.intensity * contrast
    sigma0 = cfg.sigma0 * scale
    walk = cfg.puff_walk_std * scale
    growth = cfg.diffusion * scale
    # source sits upwind of the frame center so the plume drifts across it
    drift = speed * (cfg.warmup + cfg.n_frames) * 0.25
    ux, uy = (wind[0] / speed, wind[1] / speed) if speed > 0 else (0.0, 0.0)
    sx = W / 2 - ux * drift + plume_rng.uniform(-0.1, 0.1) * W
    sy = H / 2 - uy * drift + plume_rng.uniform(-0.1, 0.1) * H
    scene = SCENES[int(plume_rng.integers(len(SCENES)))]

    ramp_ang = plume_rng.uniform(0, 2 * math.pi)
    ramp = (math.cos(ramp_ang) / W, math.sin(ramp_ang) / H)
    clutter = [
        Puff(0, (0.0, 0.0), plume_rng.uniform(0, W), plume_rng.uniform(0, H),
             sigma0 * plume_rng.uniform(0.7, 2.0), cfg.clutter_amplitude * plume_rng.uniform(0.3, 1.2))
        for _ in range(cfg.clutter_blobs)
    ]
    column_fpn = cfg.fixed_pattern_std * noise_rng.standard_normal(W)

    state = PlumeState([Puff(-cfg.warmup, (sx, sy), sx, sy, sigma0, amp0)])
    frames, clean_boxes, contrasts = [], [], []
    for t in range(-cfg.warmup, cfg.n_frames):
        for p in state.puffs:
            p.x += wind[0] + walk * plume_rng.standard_normal()
            p.y += wind[1] + walk * plume_rng.standard_normal()
            p.sigma += growth
            p.amplitude *= cfg.decay
        state.puffs = [p for p in state.puffs if p.amplitude >= 0.01 * cfg.intensity]
        for _ in range(plume_rng.poisson(cfg.emission_rate)):
            state.puffs.append(Puff(t, (sx, sy), sx, sy, sigma0, amp0))
        jx, jy = cfg.jitter_std * noise_rng.standard_normal(2)
        noise = noise_rng.standard_normal((H, W))
        if t < 0:
            continue

        cam_puffs = [replace(p, x=p.x - jx, y=p.y - jy) for p in state.puffs]
        clean = _render(cam_puffs, xs, ys)
        box = _gt_box(clean, cfg.gt_tau)
        if box is None or clean.max() < 0.05 * cfg.intensity * contrast:
            raise RejectedClip(f"{clip_id}: plume below threshold at frame {t}")
        clean_boxes.append(box)
        x1, y1, x2, y2 = (int(v) for v in box.as_tuple())
        contrasts.append(float(clean[y1:y2, x1:x2].mean()))

        bg = cfg.background_level + cfg.background_gradient * (
            ramp[0] * (xs[None, :] + jx - W / 2) + ramp[1] * (ys[:, None] + jy - H / 2)
        )
        cam_clutter = [replace(c, x=c.x - jx, y=c.y - jy) for c in clutter]
        img = bg + _render(cam_clutter, xs, ys) + column_fpn[None, :] + clean + cfg.noise_std * noise
        frames.append(np.clip(np.rint(img), 0, 65535).astype(np.uint16))

    keys = [(t, clean_boxes[t]) for t in range(0, cfg.n_frames, cfg.keyframe_step)]
    tube = interpolate_annotations(keys, cfg.n_frames)
    ratio = np.mean(contrasts) / cfg.noise_std if cfg.noise_std > 0 else math.inf
    ann = ClipAnnotation(
        clip_id=clip_id,
        width=W,
        height=H,
        n_frames=cfg.n_frames,
        visibility="clear" if ratio >= cfg.clear_threshold else "vague",
        scene=scene,
        size_class=size_class_of([b.area for b in tube.boxes]),
        gt=tube,
    )
    try:
        ann.validate()
    except GeometryError as exc:
        raise RejectedClip(str(exc)) from None
    info = {"seed": seed, "scale": scale, "contrast": contrast, "contrast_ratio": ratio, "wind": wind}
    return np.stack(frames), ann, info


def generate_clip(cfg: SimConfig, clip_seed: int, clip_id: str = "clip"):
    """Render one clip; rejected draws are retried with derived seeds."""
    frames, ann, _ = generate_clip_info(cfg, clip_seed, clip_id)
    return frames, ann


def generate_clip_info(cfg: SimConfig, clip_seed: int, clip_id: str = "clip"):
    """Like generate_clip, plus a dict of the per-clip draws and contrast ratio."""
    last = None
    for attempt in range(cfg.max_retries + 1):
        seed = clip_seed if attempt == 0 else derive_seed(clip_seed, attempt)
        try:
            return _simulate(cfg, seed, clip_id)
        except RejectedClip as exc:
            last = exc
    raise GeometryError(f"{clip_id}: no valid plume after {cfg.max_retries} retries ({last})")


def clip_seed_for(seed: int, index: int) -> int:
    return derive_seed(seed, index)


def _generate_one(args):
    cfg, seed, index, out_dir = args
    clip_id = f"clip_{index:04d}"
    frames, ann = generate_clip(cfg, clip_seed_for(seed, index), clip_id)
    write_clip(Path(out_dir) / clip_id, frames, ann)
    return clip_id, ann.visibility, ann.size_class


def assign_splits(strata: list[tuple[str, str]]) -> list[int]:
    """Round-robin split labels 1..3 within (visibility, size_class) strata.

    The counter carries over between strata, so totals stay balanced.
    """
    order = sorted(range(len(strata)), key=lambda i: (strata[i], i))
    splits = [0] * len(strata)
    for k, i in enumerate(order):
        splits[i] = k % 3 + 1
    return splits


def worker_count() -> int:
    n = int(os.environ.get("IOD_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def generate_dataset(cfg: SimConfig, n_clips: int, seed: int, out_dir, workers: int | None = None) -> DatasetManifest:
    if n_clips < 3:
        raise ValueError("need at least 3 clips for a 3-way split")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory not writable: {out} ({exc})") from None
    jobs = [(cfg, seed, i, str(out)) for i in range(n_clips)]
    workers = min(workers or worker_count(), n_clips)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_generate_one, jobs))
    else:
        results = [_generate_one(j) for j in jobs]
    splits = assign_splits([(vis, size) for _, vis, size in results])
    manifest = DatasetManifest(
        seed=seed,
        config_digest=cfg.digest(),
        clips=tuple(ManifestEntry(cid, cid, s) for (cid, _, _), s in zip(results, splits)),
        root=out,
    )
    write_manifest(manifest, out)
    return manifest


@dataclass(frozen=True)
class OffsetStats:
    displacements: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    cdf: np.ndarray


def center_offset_stats(manifest: DatasetManifest, bin_width: float = 0.5) -> OffsetStats:
    """Pooled per-frame GT center displacement, histogram and empirical CDF."""
    from .dataio import load_annotation

    disp = []
    for entry in manifest.clips:
        ann = load_annotation(manifest.clip_dir(entry))
        c = np.asarray(ann.gt.centers())
        disp.append(np.linalg.norm(np.diff(c, axis=0), axis=1))
    if not disp:
        raise ValueError("empty dataset")
    d = np.concatenate(disp)
    top = max(bin_width, math.ceil((d.max() + 1e-12) / bin_width) * bin_width)
    edges = np.arange(0.0, top + bin_width / 2, bin_width)
    counts, _ = np.histogram(d, bins=edges)
    cdf = np.cumsum(counts) / max(len(d), 1)
    return OffsetStats(d, edges, counts, cdf)
