"""Desk-scale spatio-temporal detector.

Handcrafted per-cell features stand in for a deep backbone; a temporal
aggregation step mixes them across the T-frame window; linear heads predict
a center heatmap, box size and sub-cell center offset for every frame.

Grid convention: cell (i, j) covers pixels [j*R, (j+1)*R) x [i*R, (i+1)*R)
and is centered at pixel ((j + 0.5) * R, (i + 0.5) * R).
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import uniform_filter

from .core import Box, GeometryError, NumericError, from_center_size
from .dataio import DatasetManifest, load_clip
from .detloss import (
    LossBreakdown,
    LossConfig,
    decode_peaks,
    focal_loss_frames,
    peak_cell,
    splat_heatmap,
    total_loss,
)
from .staloss import STAConfig, sta_value_and_grad_xy

AGGREGATIONS = ("static", "concat", "difference", "shift")

FEATURE_CHANNELS = (
    "intensity",
    "abs_diff",
    "temporal_std",
    "grad_mag",
    "grad_x",
    "grad_y",
    "intensity_ctx",
    "intensity_ctx_wide",
    "std_ctx",
    "std_ctx_wide",
)
# channels computable from a single frame; the static baseline sees only these
SPATIAL_CHANNELS = ("intensity", "grad_mag", "grad_x", "grad_y", "intensity_ctx", "intensity_ctx_wide")
TEMPORAL_CHANNELS = ("abs_diff", "temporal_std", "std_ctx", "std_ctx_wide")

CTX = 5
CTX_WIDE = 11
HEAT_PRIOR_BIAS = -math.log((1 - 0.1) / 0.1)  # initial heatmap score 0.1
N_OUT = 5  # heatmap, size w, size h, offset x, offset y
MAGIC = b"STAV1"


@dataclass(frozen=True)
class DetectorConfig:
    T: int = 8
    R: int = 4
    aggregation: str = "shift"
    shift_fraction: float = 1 / 8
    channels: tuple[str, ...] | None = None
    staloss_enabled: bool = True
    sta: STAConfig = field(default_factory=STAConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    input_size: int = 288
    epochs: int = 12
    lr: float = 5e-4
    lr_steps: tuple[int, ...] = (6, 8)
    lr_decay: float = 0.1
    batch_size: int = 16
    windows_per_clip: int = 1
    crop_range: tuple[float, float] = (0.3, 1.0)
    flip_prob: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    top_k: int = 10
    score_thr: float = 0.05

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        unknown = set(self.channel_names) - set(FEATURE_CHANNELS)
        if unknown:
            raise ValueError(f"unknown feature channels {sorted(unknown)}")
        if self.aggregation == "shift" and self.shift_fold < 1:
            raise ValueError("shift_fraction * channels must be >= 1 for shift aggregation")
        if self.input_size % self.R:
            raise ValueError("input_size must be a multiple of R")
        lo, hi = self.crop_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("crop_range must satisfy 0 < lo <= hi <= 1")

    @property
    def channel_names(self) -> tuple[str, ...]:
        if self.channels is not None:
            return tuple(self.channels)
        return SPATIAL_CHANNELS if self.aggregation == "static" else FEATURE_CHANNELS

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    @property
    def shift_fold(self) -> int:
        return int(math.floor(self.shift_fraction * self.n_channels + 1e-9))

    @property
    def n_aggregated(self) -> int:
        C = self.n_channels
        return {"static": C, "shift": C, "difference": 2 * C, "concat": self.T * C}[self.aggregation]

    @property
    def grid(self) -> int:
        return self.input_size // self.R

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channel_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        d["sta"] = STAConfig(**d.get("sta", {}))
        d["loss"] = LossConfig(**d.get("loss", {}))
        for k in ("channels", "lr_steps", "crop_range"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


# --- features ---------------------------------------------------------------


def pool(frames: np.ndarray, R: int) -> np.ndarray:
    """Average-pool (T, H, W) frames by R; trailing rows/cols are dropped."""
    frames = np.asarray(frames, dtype=float)
    T, H, W = frames.shape
    h, w = H // R, W // R
    if h < 1 or w < 1:
        raise GeometryError(f"frames {W}x{H} smaller than R={R}")
    return frames[:, : h * R, : w * R].reshape(T, h, R, w, R).mean(axis=(2, 4))


def _standardized(x: np.ndarray) -> np.ndarray:
    m = x.mean()
    sd = x.std()
    return (x - m) / sd if sd > 1e-12 else np.zeros_like(x)


def _channel_makers(pooled: np.ndarray) -> dict:
    """Lazy builders of the unstandardized (T, h, w) channels of a pooled window."""
    cache = {}

    def once(key, fn):
        if key not in cache:
            cache[key] = fn()
        return cache[key]

    def abs_diff():
        d = np.zeros_like(pooled)
        np.abs(pooled[1:] - pooled[:-1], out=d[1:])
        return d

    std_map = lambda: once("std", lambda: pooled.std(axis=0))  # noqa: E731
    ctx = lambda: once("ctx", lambda: uniform_filter(pooled, size=(1, CTX, CTX), mode="nearest"))  # noqa: E731
    grad = lambda: once("grad", lambda: np.gradient(pooled, axis=(1, 2)))  # noqa: E731
    grad_ctx = lambda: once("grad_ctx", lambda: np.gradient(ctx(), axis=(1, 2)))  # noqa: E731
    return {
        "intensity": lambda: pooled,
        "abs_diff": abs_diff,
        "temporal_std": lambda: std_map()[None],
        "grad_mag": lambda: np.hypot(*grad()),
        "grad_x": lambda: grad_ctx()[1],
        "grad_y": lambda: grad_ctx()[0],
        "intensity_ctx": ctx,
        "intensity_ctx_wide": lambda: uniform_filter(pooled, size=(1, CTX_WIDE, CTX_WIDE), mode="nearest"),
        "std_ctx": lambda: uniform_filter(std_map(), size=CTX, mode="nearest")[None],
        "std_ctx_wide": lambda: uniform_filter(std_map(), size=CTX_WIDE, mode="nearest")[None],
    }


def raw_channels(pooled: np.ndarray, channels=FEATURE_CHANNELS) -> dict[str, np.ndarray]:
    """Unstandardized channels, each (T, h, w), for a pooled window."""
    makers = _channel_makers(np.asarray(pooled, dtype=float))
    return {c: np.broadcast_to(makers[c](), pooled.shape) for c in channels}


def features_from_pooled(pooled: np.ndarray, channels) -> np.ndarray:
    pooled = np.asarray(pooled, dtype=float)
    makers = _channel_makers(pooled)
    out = np.empty((len(channels),) + pooled.shape)
    for k, c in enumerate(channels):
        # time-constant channels are (1, h, w); their stats equal those of the broadcast
        out[k] = _standardized(makers[c]())
    return np.ascontiguousarray(np.moveaxis(out, 0, -1))


def extract_features(frames: np.ndarray, cfg: DetectorConfig) -> np.ndarray:
    """FeatureVolume of shape (T, H/R, W/R, C), standardized per channel over the window."""
    frames = np.asarray(frames)
    if frames.ndim != 3 or len(frames) != cfg.T:
        raise GeometryError(f"expected {cfg.T} frames, got array of shape {frames.shape}")
    return features_from_pooled(pool(frames, cfg.R), cfg.channel_names)


def aggregate(v: np.ndarray, cfg: DetectorConfig) -> np.ndarray:
    T, h, w, C = v.shape
    mode = cfg.aggregation
    if mode == "static":
        return v
    if mode == "concat":
        block = np.concatenate([v[t] for t in range(T)], axis=-1)
        return np.broadcast_to(block, (T, h, w, T * C)).copy()
    if mode == "difference":
        d = np.zeros_like(v)
        d[1:] = v[1:] - v[:-1]
        return np.concatenate([v, d], axis=-1)
    fold = int(math.floor(cfg.shift_fraction * C + 1e-9))
    out = v.copy()
    out[:, :, :, :fold] = 0.0
    out[1:, :, :, :fold] = v[:-1, :, :, :fold]
    out[:, :, :, fold:2 * fold] = 0.0
    out[:-1, :, :, fold:2 * fold] = v[1:, :, :, fold:2 * fold]
    return out


# --- heads --------------------------------------------------------------------


@dataclass
class ModelParams:
    weight: np.ndarray  # (n_in, 5)
    bias: np.ndarray  # (5,)
    m_w: np.ndarray | None = None
    v_w: np.ndarray | None = None
    m_b: np.ndarray | None = None
    v_b: np.ndarray | None = None
    step: int = 0

    @classmethod
    def init(cls, n_in: int, mean_size=(8.0, 8.0)) -> "ModelParams":
        bias = np.zeros(N_OUT)
        bias[0] = HEAT_PRIOR_BIAS
        bias[1:3] = [_softplus_inv(s) for s in mean_size]
        return cls(np.zeros((n_in, N_OUT)), bias)

    def copy(self) -> "ModelParams":
        return ModelParams(self.weight.copy(), self.bias.copy())


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_inv(y: float) -> float:
    return float(y + math.log(-math.expm1(-y)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class HeadOutput:
    heatmap: np.ndarray  # (T, h, w)
    size: np.ndarray  # (T, 2, h, w) grid units
    offset: np.ndarray  # (T, 2, h, w) grid units
    logits: np.ndarray  # (T, h, w, 5)


def forward(agg: np.ndarray, params: ModelParams) -> HeadOutput:
    if agg.shape[-1] != params.weight.shape[0]:
        raise GeometryError(f"aggregated channels {agg.shape[-1]} != head inputs {params.weight.shape[0]}")
    z = agg @ params.weight + params.bias
    return HeadOutput(
        heatmap=_sigmoid(z[..., 0]),
        size=np.moveaxis(_softplus(z[..., 1:3]), -1, 1),
        offset=np.moveaxis(z[..., 3:5], -1, 1),
        logits=z,
    )


# --- targets and losses -------------------------------------------------------


@dataclass
class WindowTargets:
    heatmap: np.ndarray  # (T, h, w)
    cells: np.ndarray  # (T, 2) int (ix, iy)
    sizes: np.ndarray  # (T, 2) grid units
    centers_px: np.ndarray  # (T, 2)


def to_grid(x_px: float, R: int) -> float:
    return x_px / R - 0.5


def cell_center_px(i, R: int):
    return (np.asarray(i, dtype=float) + 0.5) * R


def build_targets(boxes, grid_h: int, grid_w: int, R: int, loss_cfg: LossConfig) -> WindowTargets:
    heat, cells, sizes, centers = [], [], [], []
    for b in boxes:
        cx, cy, w, h = b.center_size()
        gx = min(max(to_grid(cx, R), 0.0), grid_w - 1)
        gy = min(max(to_grid(cy, R), 0.0), grid_h - 1)
        gw, gh = w / R, h / R
        heat.append(splat_heatmap([(gx, gy, gw, gh)], grid_h, grid_w, loss_cfg))
        cells.append(peak_cell(gx, gy, grid_h, grid_w))
        sizes.append((gw, gh))
        centers.append((cx, cy))
    return WindowTargets(np.stack(heat), np.array(cells), np.array(sizes, dtype=float), np.array(centers, dtype=float))


def window_loss(agg: np.ndarray, targets: WindowTargets, params: ModelParams, cfg: DetectorConfig):
    """Total objective for one window and its gradient w.r.t. the head params.

    Per-frame heatmap and size losses are averaged over the T frames.
    """
    T = agg.shape[0]
    flat = agg.reshape(-1, agg.shape[-1])
    z_heat = (flat @ params.weight[:, 0] + params.bias[0]).reshape(agg.shape[:3])
    heat = _sigmoid(z_heat)
    lk, g_heat = focal_loss_frames(heat, targets.heatmap, cfg.loss)
    d_heat = (g_heat * heat * (1.0 - heat)).reshape(-1)

    ix, iy = targets.cells[:, 0], targets.cells[:, 1]
    tt = np.arange(T)
    f_peak = agg[tt, iy, ix]  # (T, n_in)
    z_peak = f_peak @ params.weight + params.bias
    d_peak = np.zeros((T, N_OUT))

    z_size = z_peak[:, 1:3]
    diff = _softplus(z_size) - targets.sizes
    lsize = float(np.abs(diff).sum()) / T
    d_peak[:, 1:3] = cfg.loss.lambda_size * np.sign(diff) * _sigmoid(z_size) / T

    lsta = 0.0
    if cfg.staloss_enabled:
        pred_px = (targets.cells + 0.5 + z_peak[:, 3:5]) * cfg.R
        lsta, g_px = sta_value_and_grad_xy(pred_px, targets.centers_px, cfg.sta)
        d_peak[:, 3:5] = g_px * cfg.R

    grad_w = f_peak.T @ d_peak
    grad_w[:, 0] += flat.T @ d_heat
    grad_b = d_peak.sum(axis=0)
    grad_b[0] += d_heat.sum()
    return total_loss(lk, lsize, lsta, cfg.loss), grad_w, grad_b


# --- augmentation -------------------------------------------------------------


def resize_frames(frames: np.ndarray, size: int) -> np.ndarray:
    frames = np.asarray(frames, dtype=float)
    if frames.shape[1:] == (size, size):
        return frames
    return np.stack([cv2.resize(f, (size, size), interpolation=cv2.INTER_LINEAR) for f in frames])


def scale_box(b: Box, sx: float, sy: float, dx: float = 0.0, dy: float = 0.0) -> Box:
    return Box((b.x1 - dx) * sx, (b.y1 - dy) * sy, (b.x2 - dx) * sx, (b.y2 - dy) * sy, b.score)


def augment(frames: np.ndarray, boxes, rng: np.random.Generator, cfg: DetectorConfig, out_size: int | None = None):
    """Random crop (area fraction in crop_range, resized back) and horizontal flip.

    Frames come back at ``out_size`` (default: unchanged); pass the grid size
    to fuse the resize with average pooling. Boxes stay in input pixels.
    """
    frames = np.asarray(frames, dtype=float)
    _, H, W = frames.shape
    frac = rng.uniform(*cfg.crop_range)
    cw = max(2, int(round(W * math.sqrt(frac))))
    ch = max(2, int(round(H * math.sqrt(frac))))
    xs = [b.center[0] for b in boxes]
    ys = [b.center[1] for b in boxes]
    # widen the crop to the span of GT centers, then keep them all inside it
    cw = min(W, max(cw, math.ceil(max(xs)) - int(min(xs)) + 2))
    ch = min(H, max(ch, math.ceil(max(ys)) - int(min(ys)) + 2))
    x0 = _crop_origin(rng, xs, cw, W)
    y0 = _crop_origin(rng, ys, ch, H)
    flip = rng.uniform() < cfg.flip_prob

    crop = frames[:, y0:y0 + ch, x0:x0 + cw]
    if out_size is None:
        out = np.stack([cv2.resize(f, (W, H), interpolation=cv2.INTER_LINEAR) for f in crop])
    else:
        out = np.stack([cv2.resize(f, (out_size, out_size), interpolation=cv2.INTER_AREA) for f in crop])
    sx, sy = W / cw, H / ch
    new_boxes = []
    for b in boxes:
        x1, y1, x2, y2 = ((b.x1 - x0) * sx, (b.y1 - y0) * sy, (b.x2 - x0) * sx, (b.y2 - y0) * sy)
        x1, x2 = max(x1, 0.0), min(x2, float(W))
        y1, y2 = max(y1, 0.0), min(y2, float(H))
        new_boxes.append(Box(x1, y1, x2, y2))
    if flip:
        out = out[..., ::-1].copy()
        new_boxes = flip_boxes(new_boxes, W)
    return out, new_boxes


def _crop_origin(rng: np.random.Generator, centers, size: int, full: int) -> int:
    lo = max(0, math.ceil(max(centers)) - size + 1)
    hi = min(full - size, int(min(centers)))
    if lo <= hi:
        return int(rng.integers(lo, hi + 1))
    # centers hug the border: center the crop on their mean instead
    return min(max(int(round(float(np.mean(centers)) - size / 2)), 0), full - size)


def flip_boxes(boxes, width: float):
    return [Box(width - b.x2, b.y1, width - b.x1, b.y2, b.score) for b in boxes]


def flip_window(frames: np.ndarray, boxes):
    return frames[..., ::-1].copy(), flip_boxes(boxes, frames.shape[-1])


# --- training -------------------------------------------------------------------


class ClipStore:
    """In-memory cache of clips, resized to the detector input size."""

    def __init__(self, manifest: DatasetManifest, size: int):
        self.manifest = manifest
        self.size = size
        self._cache = {}

    def get(self, clip_id: str):
        if clip_id not in self._cache:
            frames, ann = load_clip(self.manifest, self.manifest.entry(clip_id))
            sx, sy = self.size / ann.width, self.size / ann.height
            if (ann.width, ann.height) != (self.size, self.size):
                frames = resize_frames(frames, self.size).astype(np.float32)
            boxes = [scale_box(b, sx, sy) for b in ann.gt.boxes]
            self._cache[clip_id] = (frames, boxes, ann)
        return self._cache[clip_id]


def learning_rate(cfg: DetectorConfig, epoch: int) -> float:
    """Rate for 1-based ``epoch``; decays after each epoch listed in lr_steps."""
    return cfg.lr * cfg.lr_decay ** sum(1 for s in cfg.lr_steps if epoch > s)


def adam_step(params: ModelParams, gw: np.ndarray, gb: np.ndarray, lr: float, cfg: DetectorConfig) -> None:
    if params.m_w is None:
        params.m_w, params.v_w = np.zeros_like(params.weight), np.zeros_like(params.weight)
        params.m_b, params.v_b = np.zeros_like(params.bias), np.zeros_like(params.bias)
    params.step += 1
    b1, b2, k = cfg.beta1, cfg.beta2, params.step
    for p, g, m, v in ((params.weight, gw, params.m_w, params.v_w), (params.bias, gb, params.m_b, params.v_b)):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**k)
        vhat = v / (1 - b2**k)
        p -= lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)


def prepare_window(frames, boxes, cfg: DetectorConfig, pooled: bool = False):
    """Aggregated features and targets for one window of frames and GT boxes."""
    if pooled:
        v = features_from_pooled(frames, cfg.channel_names)
    else:
        v = extract_features(frames, cfg)
    gh, gw = v.shape[1:3]
    return aggregate(v, cfg), build_targets(boxes, gh, gw, cfg.R, cfg.loss)


def train(manifest: DatasetManifest, split: int, cfg: DetectorConfig, seed: int, store: ClipStore | None = None,
          log=None):
    """Fit head params on every clip outside the held-out ``split``.

    Returns the params and one LossBreakdown per epoch (window-averaged).
    """
    if split not in (1, 2, 3):
        raise ValueError(f"split must be 1, 2 or 3, got {split}")
    entries = manifest.entries(exclude=split)
    if not entries:
        raise GeometryError(f"no training clips outside split {split}")
    store = store or ClipStore(manifest, cfg.input_size)
    rng = np.random.default_rng(seed)
    clips = [store.get(e.clip_id) for e in entries]
    for frames, _, ann in clips:
        if len(frames) < cfg.T:
            raise GeometryError(f"{ann.clip_id}: {len(frames)} frames < T={cfg.T}")
    mean_size = np.mean([[b.w / cfg.R, b.h / cfg.R] for _, boxes, _ in clips for b in boxes], axis=0)
    params = ModelParams.init(cfg.n_aggregated, mean_size)

    trace = []
    for epoch in range(1, cfg.epochs + 1):
        lr = learning_rate(cfg, epoch)
        order = np.concatenate([rng.permutation(len(clips)) for _ in range(cfg.windows_per_clip)])
        sums = np.zeros(4)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            gw = np.zeros_like(params.weight)
            gb = np.zeros_like(params.bias)
            for ci in batch:
                frames, boxes, _ = clips[ci]
                s = int(rng.integers(0, len(frames) - cfg.T + 1))
                fr, bx = augment(frames[s:s + cfg.T], boxes[s:s + cfg.T], rng, cfg, out_size=cfg.grid)
                agg, tg = prepare_window(fr, bx, cfg, pooled=True)
                lb, w_, b_ = window_loss(agg, tg, params, cfg)
                gw += w_ / len(batch)
                gb += b_ / len(batch)
                sums += (lb.l_k, lb.l_size, lb.l_sta, lb.total)
            if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                raise NumericError(f"non-finite gradient in epoch {epoch}")
            adam_step(params, gw, gb, lr, cfg)
            if not (np.all(np.isfinite(params.weight)) and np.all(np.isfinite(params.bias))):
                raise NumericError(f"parameters diverged in epoch {epoch}")
        m = sums / len(order)
        trace.append(LossBreakdown(*map(float, m)))
        if log:
            log(f"epoch {epoch:2d} lr {lr:.2e} " + " ".join(f"{k} {v:.4f}" for k, v in trace[-1].as_dict().items()))
    return params, trace


# --- inference --------------------------------------------------------------------


def window_start(frame: int, n_frames: int, T: int) -> int:
    return min(max(frame - T // 2, 0), n_frames - T)


def detect(frames: np.ndarray, params: ModelParams, cfg: DetectorConfig) -> list[list[Box]]:
    """Per-frame detections in the pixel coordinates of ``frames``."""
    frames = np.asarray(frames)
    n, H, W = frames.shape
    if n < cfg.T:
        raise GeometryError(f"clip has {n} frames, fewer than T={cfg.T}")
    sized = resize_frames(frames, cfg.input_size)
    sx, sy = W / cfg.input_size, H / cfg.input_size
    pooled = pool(sized, cfg.R)
    outputs = {}
    result = []
    for f in range(n):
        s = window_start(f, n, cfg.T)
        if s not in outputs:
            v = features_from_pooled(pooled[s:s + cfg.T], cfg.channel_names)
            outputs[s] = forward(aggregate(v, cfg), params)
        out = outputs[s]
        t = f - s
        # shift the offset map by half a cell so decode lands on cell centers
        boxes = decode_peaks(out.heatmap[t], out.size[t], out.offset[t] + 0.5, cfg.top_k, cfg.score_thr, cfg.R)
        result.append([scale_box(b, sx, sy) for b in boxes] if (sx, sy) != (1.0, 1.0) else boxes)
    return result


# --- persistence ----------------------------------------------------------------------


def params_to_bytes(params: ModelParams) -> bytes:
    """``STAV1``, uint32 n_in, uint32 n_out, then weight rows and bias as float64 LE.

    Column order: heatmap logit, size w, size h, offset x, offset y.
    """
    n_in, n_out = params.weight.shape
    return (
        MAGIC
        + struct.pack("<II", n_in, n_out)
        + np.ascontiguousarray(params.weight, dtype="<f8").tobytes()
        + np.ascontiguousarray(params.bias, dtype="<f8").tobytes()
    )


def params_from_bytes(data: bytes) -> ModelParams:
    from .core import FormatError

    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 8:
        raise FormatError("not an STAV1 parameter file")
    n_in, n_out = struct.unpack_from("<II", data, len(MAGIC))
    body = data[len(MAGIC) + 8:]
    if len(body) != 8 * (n_in * n_out + n_out):
        raise FormatError("parameter file size does not match its header")
    vals = np.frombuffer(body, dtype="<f8").astype(float)
    return ModelParams(vals[: n_in * n_out].reshape(n_in, n_out).copy(), vals[n_in * n_out:].copy())


def save_params(params: ModelParams, path) -> str:
    data = params_to_bytes(params)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_params(path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())


def params_digest(params: ModelParams) -> str:
    return hashlib.sha256(params_to_bytes(params)).hexdigest()


# --- gradient check ---------------------------------------------------------------------


def micro_instance(seed: int = 0, cfg: DetectorConfig | None = None):
    """One synthetic T-frame window on an 8x8 grid plus random head params."""
    cfg = cfg or DetectorConfig(input_size=32, R=4)
    rng = np.random.default_rng(seed)
    size = cfg.input_size
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    frames, boxes = [], []
    for t in range(cfg.T):
        cx, cy = 14 + 0.7 * t + rng.uniform(-1, 1), 15 + rng.uniform(-1, 1)
        blob = 50 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 4.0**2))
        frames.append(100 + blob + rng.normal(0, 2, (size, size)))
        boxes.append(from_center_size(cx, cy, 12 + rng.uniform(-1, 1), 10 + rng.uniform(-1, 1)))
    agg, tg = prepare_window(np.stack(frames), boxes, cfg)
    params = ModelParams(rng.normal(0, 0.1, (cfg.n_aggregated, N_OUT)), rng.normal(0, 0.1, N_OUT))
    params.bias[1:3] += 2.0
    return agg, tg, params, cfg


def end_to_end_gradcheck(seed: int = 0, step: float = 1e-6, cfg: DetectorConfig | None = None) -> float:
    """Max relative error of analytic vs central-difference head gradients."""
    agg, tg, params, cfg = micro_instance(seed, cfg)
    _, gw, gb = window_loss(agg, tg, params, cfg)
    analytic = np.concatenate([gw.ravel(), gb])
    theta = np.concatenate([params.weight.ravel(), params.bias])
    numeric = np.zeros_like(theta)
    nw = params.weight.size

    def f(th):
        p = ModelParams(th[:nw].reshape(params.weight.shape), th[nw:])
        return window_loss(agg, tg, p, cfg)[0].total

    for i in range(len(theta)):
        th = theta.copy()
        th[i] += step
        fp = f(th)
        th[i] -= 2 * step
        fm = f(th)
        numeric[i] = (fp - fm) / (2 * step)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12))
