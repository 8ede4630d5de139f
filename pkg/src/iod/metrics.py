"""Frame-level average precision with COCO-style 101-point interpolation."""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Box, FormatError, GeometryError, from_center_size, iou
from .dataio import DatasetManifest, load_annotation

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = 101
METRIC_KEYS = ("ap50", "ap75", "ap_clear", "ap_vague", "ap_5095")


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    recall_points: int = RECALL_POINTS
    subset: str = "all"

    def __post_init__(self):
        th = self.iou_thresholds
        if not th or any(not 0 < t <= 1 for t in th) or any(a >= b for a, b in zip(th, th[1:])):
            raise ValueError("IoU thresholds must be strictly increasing within (0, 1]")
        if self.recall_points < 2:
            raise ValueError("recall grid needs at least two points")
        if self.subset not in ("all", "clear", "vague"):
            raise ValueError("subset must be all, clear or vague")


@dataclass(frozen=True)
class Detection:
    clip_id: str
    frame: int
    box: Box

    def to_json(self) -> dict:
        b = self.box
        return {"clip_id": self.clip_id, "frame": self.frame, "score": b.score,
                "x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2}


def match_greedy(dets, gts, iou_thr: float) -> list[bool]:
    """TP flags for detections of one frame, already sorted by descending score."""
    used = [False] * len(gts)
    flags = []
    for d in dets:
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if used[j]:
                continue
            v = iou(d, g)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= iou_thr:
            used[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def exact_average_precision(scores, tp_flags, n_gt: int, recall_points: int = RECALL_POINTS) -> Fraction:
    """101-point interpolated AP as an exact rational.

    Precisions are ratios of small integers, so the float envelope picks the
    right entry and the sum of exact ratios rounds once at the end.
    """
    if n_gt <= 0:
        raise ValueError("average precision needs at least one ground-truth box")
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return Fraction(0)
    order = np.argsort(-scores, kind="stable")
    tp = np.asarray(tp_flags, dtype=bool)[order]
    ctp = np.cumsum(tp)
    prec = ctp / np.arange(1, len(tp) + 1)
    steps = recall_points - 1
    total = Fraction(0)
    for k in range(recall_points):
        # recall >= k/steps, compared exactly in integers
        hit = np.flatnonzero(ctp * steps >= k * n_gt)
        if hit.size:
            m = int(hit[0] + np.argmax(prec[hit[0]:]))
            total += Fraction(int(ctp[m]), m + 1)
    return total / recall_points


def average_precision(scores, tp_flags, n_gt: int, recall_points: int = RECALL_POINTS) -> float:
    return float(exact_average_precision(scores, tp_flags, n_gt, recall_points))


def _sort_frame(dets):
    return sorted(dets, key=lambda b: -b.score)


def _exact_ap_at(frames, iou_thr: float, cfg: EvalConfig) -> Fraction | None:
    n_gt = sum(len(g) for _, g in frames)
    if n_gt == 0:
        return None
    scores, flags = [], []
    for dets, gts in frames:
        ordered = _sort_frame(dets)
        scores.extend(b.score for b in ordered)
        flags.extend(match_greedy(ordered, gts, iou_thr))
    return exact_average_precision(scores, flags, n_gt, cfg.recall_points)


def ap_at(frames, iou_thr: float, cfg: EvalConfig = EvalConfig()) -> float | None:
    """AP over frames, each a (detections, gts) pair; None when there is no GT."""
    v = _exact_ap_at(frames, iou_thr, cfg)
    return None if v is None else float(v)


def ap_range(frames, cfg: EvalConfig = EvalConfig()) -> float | None:
    vals = [_exact_ap_at(frames, t, cfg) for t in cfg.iou_thresholds]
    return None if vals[0] is None else float(sum(vals) / len(vals))


@dataclass
class MetricsReport:
    """Per-split metric dicts keyed by split name, plus their average.

    A metric is None when its subset holds no ground truth.
    """

    splits: dict = field(default_factory=dict)
    average: dict = field(default_factory=dict)

    def value(self, key: str, split: str = "avg"):
        return (self.average if split == "avg" else self.splits[split])[key]

    def rows(self):
        for name, m in self.splits.items():
            yield name, m
        if self.average:
            yield "avg", self.average


def evaluate_frames(frames_by_vis, cfg: EvalConfig = EvalConfig()) -> dict:
    """Metrics from {'clear': [(dets, gts), ...], 'vague': [...]}."""
    all_frames = [f for fs in frames_by_vis.values() for f in fs]
    res = {
        "ap50": ap_at(all_frames, 0.5, cfg),
        "ap75": ap_at(all_frames, 0.75, cfg),
        "ap_clear": ap_range(frames_by_vis.get("clear", []), cfg),
        "ap_vague": ap_range(frames_by_vis.get("vague", []), cfg),
        "ap_5095": ap_range(all_frames, cfg),
        "n_gt": sum(len(g) for _, g in all_frames),
        "n_det": sum(len(d) for d, _ in all_frames),
    }
    if cfg.subset != "all":
        sub = frames_by_vis.get(cfg.subset, [])
        res["ap50"] = ap_at(sub, 0.5, cfg)
        res["ap75"] = ap_at(sub, 0.75, cfg)
        res["ap_5095"] = ap_range(sub, cfg)
        res["n_gt"] = sum(len(g) for _, g in sub)
        res["n_det"] = sum(len(d) for d, _ in sub)
    return res


def read_detections(path) -> list[Detection]:
    path = Path(path)
    if not path.exists():
        from .core import MissingInputError

        raise MissingInputError(f"detections file not found: {path}")
    out = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            box = Box(float(d["x1"]), float(d["y1"]), float(d["x2"]), float(d["y2"]), float(d["score"]))
            out.append(Detection(str(d["clip_id"]), int(d["frame"]), box))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            if isinstance(exc, GeometryError):
                raise
            raise FormatError(f"{path}:{n}: malformed detection ({exc!r})") from None
    return out


def write_detections(dets, path) -> None:
    text = "".join(json.dumps(d.to_json()) + "\n" for d in dets)
    Path(path).write_text(text)


def group_frames(detections, annotations) -> dict:
    """Pair detections with GT per frame, grouped by clip visibility."""
    by_key = {}
    for d in detections:
        ann = annotations.get(d.clip_id)
        if ann is None:
            raise GeometryError(f"detection references unknown clip {d.clip_id!r}")
        if not 0 <= d.frame < ann.n_frames:
            raise GeometryError(f"detection references frame {d.frame} outside {d.clip_id}")
        by_key.setdefault((d.clip_id, d.frame), []).append(d.box)
    groups = {"clear": [], "vague": []}
    for cid in sorted(annotations):
        ann = annotations[cid]
        for t, g in enumerate(ann.gt.boxes):
            groups[ann.visibility].append((by_key.get((cid, t), []), [g]))
    return groups


def evaluate(detections, manifest: DatasetManifest, split: int, cfg: EvalConfig = EvalConfig()) -> dict:
    """Metrics for one held-out split; ``detections`` is a path or a list of Detection."""
    if not isinstance(detections, list):
        detections = read_detections(detections)
    anns = {e.clip_id: load_annotation(manifest.clip_dir(e)) for e in manifest.entries(split=split)}
    return evaluate_frames(group_frames(detections, anns), cfg)


def kfold_evaluate(reports) -> MetricsReport:
    reports = list(reports)
    if len(reports) != 3:
        raise ValueError(f"k-fold averaging needs exactly 3 split reports, got {len(reports)}")
    splits = {str(i + 1): dict(r) for i, r in enumerate(reports)}
    avg = {}
    for k in METRIC_KEYS:
        vals = [r[k] for r in reports if r.get(k) is not None]
        avg[k] = float(np.mean(vals)) if vals else None
    for k in ("n_gt", "n_det"):
        avg[k] = int(sum(r.get(k, 0) for r in reports))
    return MetricsReport(splits, avg)


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.6f}"


def report_csv(report: MetricsReport) -> str:
    cols = METRIC_KEYS + ("n_gt", "n_det")
    lines = ["split," + ",".join(cols)]
    for name, m in report.rows():
        lines.append(name + "," + ",".join(_fmt(m.get(c)) for c in cols))
    return "\n".join(lines) + "\n"


def read_metrics_csv(path) -> MetricsReport:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split(",")[1:]
    rep = MetricsReport()
    for line in lines[1:]:
        name, *vals = line.split(",")
        row = {}
        for k, v in zip(head, vals):
            row[k] = None if v == "nan" else (int(v) if k.startswith("n_") else float(v))
        if name == "avg":
            rep.average = row
        else:
            rep.splits[name] = row
    return rep


# --- IoU density diagnostic ----------------------------------------------------------------


@dataclass(frozen=True)
class IoUDensity:
    raw: np.ndarray
    center_oracle: np.ndarray
    size_oracle: np.ndarray
    bin_edges: np.ndarray

    def histograms(self) -> dict:
        return {k: np.histogram(getattr(self, k), bins=self.bin_edges)[0]
                for k in ("raw", "center_oracle", "size_oracle")}

    def means(self) -> dict:
        return {k: float(np.mean(getattr(self, k))) for k in ("raw", "center_oracle", "size_oracle")}


def iou_density_diagnostic(detections, annotations, bin_width: float = 0.05) -> IoUDensity:
    """IoU of each detection with its best GT, and with center or size swapped for the GT's."""
    if not detections:
        raise ValueError("no detections to diagnose")
    raw, c_or, s_or = [], [], []
    for d in detections:
        ann = annotations[d.clip_id]
        g = ann.gt.box_at(d.frame)
        b = d.box
        raw.append(iou(b, g))
        gcx, gcy, gw, gh = g.center_size()
        bcx, bcy, bw, bh = b.center_size()
        c_or.append(iou(from_center_size(gcx, gcy, bw, bh), g))
        s_or.append(iou(from_center_size(bcx, bcy, gw, gh), g))
    edges = np.linspace(0.0, 1.0, int(round(1 / bin_width)) + 1)
    return IoUDensity(np.array(raw), np.array(c_or), np.array(s_or), edges)


def iou_density_csv(dens: IoUDensity) -> str:
    hist = dens.histograms()
    lines = ["bin_lo,bin_hi,raw,center_oracle,size_oracle"]
    for i in range(len(dens.bin_edges) - 1):
        lines.append(f"{dens.bin_edges[i]:.2f},{dens.bin_edges[i + 1]:.2f},"
                     f"{hist['raw'][i]},{hist['center_oracle'][i]},{hist['size_oracle'][i]}")
    m = dens.means()
    lines.append(f"mean,,{m['raw']:.6f},{m['center_oracle']:.6f},{m['size_oracle']:.6f}")
    return "\n".join(lines) + "\n"
