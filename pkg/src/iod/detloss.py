"""Center-heatmap detection losses, target splatting and peak decoding.

Grid coordinates are pixel coordinates divided by the down-sampling ratio R:
decoding maps grid position (x, y) to pixel (x * R, y * R). Callers that
place cell centers at half-cell positions add 0.5 to the offset map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Box, GeometryError, NumericError, from_center_size, iou


@dataclass(frozen=True)
class LossConfig:
    lambda_size: float = 0.1
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    clamp_eps: float = 1e-4
    min_overlap: float = 0.7

    def __post_init__(self):
        if self.lambda_size < 0:
            raise ValueError("lambda_size must be non-negative")
        if not (self.focal_alpha > 0 and self.focal_beta > 0):
            raise ValueError("focal exponents must be positive")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must lie in (0, 0.5)")
        if not 0 < self.min_overlap <= 1:
            raise ValueError("min_overlap must lie in (0, 1]")


@dataclass(frozen=True)
class LossBreakdown:
    l_k: float
    l_size: float
    l_sta: float
    total: float

    def as_dict(self) -> dict:
        return {"l_k": self.l_k, "l_size": self.l_size, "l_sta": self.l_sta, "total": self.total}


def gaussian_radius(w: float, h: float, min_overlap: float = 0.7, tol: float = 1e-3) -> float:
    """Largest diagonal shift (r, r) keeping IoU with the original box >= min_overlap."""
    if not (w > 0 and h > 0):
        raise GeometryError(f"non-positive size ({w}, {h})")
    if min_overlap >= 1.0:
        return 0.0
    ref = Box(0.0, 0.0, w, h)
    lo, hi = 0.0, min(w, h)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if iou(ref, ref.shifted(mid, mid)) >= min_overlap:
            lo = mid
        else:
            hi = mid
    return lo


def splat_heatmap(objects, height: int, width: int, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Gaussian center targets; ``objects`` holds (cx, cy, w, h) in grid units."""
    if height < 1 or width < 1:
        raise GeometryError("grid dimensions must be >= 1")
    hm = np.zeros((height, width))
    ys = np.arange(height, dtype=float)[:, None]
    xs = np.arange(width, dtype=float)[None, :]
    for cx, cy, w, h in objects:
        if not (0 <= cx < width and 0 <= cy < height):
            raise GeometryError(f"center ({cx}, {cy}) outside {width}x{height} grid")
        ix, iy = peak_cell(cx, cy, height, width)
        sigma = max(gaussian_radius(w, h, cfg.min_overlap), 1.0) / 3.0
        g = np.exp(-((xs - ix) ** 2 + (ys - iy) ** 2) / (2 * sigma**2))
        np.maximum(hm, g, out=hm)
    return hm


def peak_cell(cx: float, cy: float, height: int, width: int) -> tuple[int, int]:
    """Rounded center cell, kept inside the grid."""
    ix = min(int(math.floor(cx + 0.5)), width - 1)
    iy = min(int(math.floor(cy + 0.5)), height - 1)
    return ix, iy


def focal_loss(pred: np.ndarray, target: np.ndarray, cfg: LossConfig = LossConfig()):
    """Penalty-reduced focal loss and its gradient with respect to ``pred``.

    Predictions are clamped to [eps, 1 - eps] before the logarithms; the
    gradient is zero where the clamp is active.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise GeometryError(f"heatmap shapes differ: {pred.shape} vs {target.shape}")
    a, b, eps = cfg.focal_alpha, cfg.focal_beta, cfg.clamp_eps
    p = np.clip(pred, eps, 1.0 - eps)
    pos = target == 1.0
    n = max(int(pos.sum()), 1)

    neg_w = (1.0 - target) ** b
    log_p, log_q = np.log(p), np.log1p(-p)
    pos_term = (1.0 - p) ** a * log_p
    neg_term = neg_w * p**a * log_q
    loss = -float(np.where(pos, pos_term, neg_term).sum()) / n

    d_pos = -a * (1.0 - p) ** (a - 1) * log_p + (1.0 - p) ** a / p
    d_neg = neg_w * (a * p ** (a - 1) * log_q - p**a / (1.0 - p))
    grad = -np.where(pos, d_pos, d_neg) / n
    grad[(pred < eps) | (pred > 1.0 - eps)] = 0.0
    return loss, grad


def focal_loss_frames(pred: np.ndarray, target: np.ndarray, cfg: LossConfig = LossConfig()):
    """Frame-averaged focal loss over a (T, H, W) stack; each frame uses its own divisor."""
    a, b, eps = cfg.focal_alpha, cfg.focal_beta, cfg.clamp_eps
    T = len(pred)
    p = np.clip(pred, eps, 1.0 - eps)
    pos = target == 1.0
    n = np.maximum(pos.sum(axis=(1, 2)), 1).astype(float)[:, None, None] * T
    log_p, log_q = np.log(p), np.log1p(-p)
    neg_w = (1.0 - target) ** b
    pa = p**a
    qa = (1.0 - p) ** a
    terms = np.where(pos, qa * log_p, neg_w * pa * log_q) / n
    d_pos = -a * qa / (1.0 - p) * log_p + qa / p
    d_neg = neg_w * (a * pa / p * log_q - pa / (1.0 - p))
    grad = -np.where(pos, d_pos, d_neg) / n
    grad[(pred < eps) | (pred > 1.0 - eps)] = 0.0
    return -float(terms.sum()), grad


def size_loss(pred_sizes, gt_sizes):
    """Mean over objects of the L1 error on (w, h); gradient with sign(0) = 0."""
    pred = np.asarray(pred_sizes, dtype=float).reshape(-1, 2)
    gt = np.asarray(gt_sizes, dtype=float).reshape(-1, 2)
    if pred.shape != gt.shape:
        raise GeometryError(f"size arrays differ: {pred.shape} vs {gt.shape}")
    if len(pred) == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - gt
    return float(np.abs(diff).sum() / len(pred)), np.sign(diff) / len(pred)


def total_loss(l_k: float, l_size: float, l_sta: float, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    vals = (l_k, l_size, l_sta)
    if not all(math.isfinite(v) for v in vals):
        raise NumericError(f"non-finite loss component {vals}")
    return LossBreakdown(l_k, l_size, l_sta, l_k + cfg.lambda_size * l_size + l_sta)


def local_peaks(heatmap: np.ndarray) -> np.ndarray:
    """Boolean mask of 3x3 local maxima; plateaus resolve to the first row-major cell."""
    h, w = heatmap.shape
    pad = np.pad(heatmap, 1, constant_values=-np.inf)
    keep = np.ones((h, w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = pad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            # neighbour precedes in row-major order: must be strictly beaten
            earlier = dy < 0 or (dy == 0 and dx < 0)
            keep &= (heatmap > nb) if earlier else (heatmap >= nb)
    return keep


def decode_peaks(heatmap, size_map, offset_map, top_k: int = 100, score_thr: float = 0.1, R: int = 4):
    """Boxes from heatmap peaks.

    ``size_map`` and ``offset_map`` are (2, H, W) in grid units, ordered
    (w, h) and (dx, dy). Boxes come back in pixel coordinates, best first.
    """
    heatmap = np.asarray(heatmap, dtype=float)
    size_map = np.asarray(size_map, dtype=float)
    offset_map = np.asarray(offset_map, dtype=float)
    gh, gw = heatmap.shape
    if size_map.shape != (2, gh, gw) or offset_map.shape != (2, gh, gw):
        raise GeometryError("size/offset maps must be (2, H, W) matching the heatmap")
    flat = np.flatnonzero(local_peaks(heatmap))
    scores = heatmap.ravel()[flat]
    order = np.argsort(-scores, kind="stable")[:top_k]
    boxes = []
    for idx in flat[order]:
        score = float(heatmap.flat[idx])
        if score < score_thr:
            break
        iy, ix = divmod(int(idx), gw)
        cx = (ix + offset_map[0, iy, ix]) * R
        cy = (iy + offset_map[1, iy, ix]) * R
        w = max(float(size_map[0, iy, ix]), 1e-6) * R
        h = max(float(size_map[1, iy, ix]), 1e-6) * R
        boxes.append(from_center_size(cx, cy, w, h, score=min(max(score, 0.0), 1.0)))
    return boxes
