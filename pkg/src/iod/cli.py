"""``iod`` command-line entry point.

Every subcommand writes only under ``--out`` and leaves a ``run.json``
record next to its outputs. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import IODError, MissingInputError, NumericError
from .dataio import atomic_write, dumps_json, load_annotation, load_manifest
from .detector import ClipStore, DetectorConfig, end_to_end_gradcheck, load_params, save_params, train
from .detloss import LossConfig
from .metrics import (
    METRIC_KEYS,
    EvalConfig,
    MetricsReport,
    evaluate,
    iou_density_csv,
    iou_density_diagnostic,
    read_detections,
    read_metrics_csv,
    report_csv,
    write_detections,
)
from .pipeline import BENCHMARK, detect_split, kfold, split_seed
from .plots import bar_chart, histogram_chart, line_chart
from .simulator import SimConfig, center_offset_stats, generate_dataset, worker_count
from .staloss import STAConfig, embed_tube, gradcheck, optimize_offsets

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
STA_GRAD_TOL = 1e-6
E2E_GRAD_TOL = 1e-5
STAGGERED = (((2.0, 0.0), (-2.0, 0.0)), ((0.0, 0.0), (0.0, 0.0)))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --- argument helpers ---------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_out(p, required=True):
    p.add_argument("--out", type=Path, required=required, help="output directory")


def _add_data(p):
    p.add_argument("--data", type=Path, required=True, help="dataset directory holding manifest.json")


def _add_model_flags(p, frames=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--agg", choices=("static", "concat", "difference", "shift"), default="shift")
    p.add_argument("--staloss", choices=("on", "off"), default="on")
    p.add_argument("--zeta", type=float, default=4.0, help="temporal spacing of one frame step")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5, help="cosine vs sine term weight")
    p.add_argument("--lambda-size", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=None, help="base learning rate (default from --preset)")
    p.add_argument("--batch", type=int, default=None, help="minibatch size (default from --preset)")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--score-thr", type=float, default=0.05)
    p.add_argument("--preset", choices=("benchmark", "deepnet"), default="benchmark",
                   help="benchmark: tuned for linear heads; deepnet: lr 5e-4, batch 16, one window per clip")
    if frames:
        p.add_argument("--frames", type=int, default=8, help="input frames per window (T)")


def detector_config(args, T: int | None = None, zeta: float | None = None) -> DetectorConfig:
    base = BENCHMARK if args.preset == "benchmark" else {}
    kw = dict(base)
    if args.lr is not None:
        kw["lr"] = args.lr
    if args.batch is not None:
        kw["batch_size"] = args.batch
    return replace(
        DetectorConfig(),
        T=T if T is not None else args.frames,
        aggregation=args.agg,
        staloss_enabled=args.staloss == "on",
        sta=STAConfig(zeta=zeta if zeta is not None else args.zeta, lam=args.lam),
        loss=LossConfig(lambda_size=args.lambda_size),
        epochs=args.epochs,
        top_k=args.topk,
        score_thr=args.score_thr,
        **kw,
    )


def _split_flag(p, required=True):
    p.add_argument("--split", type=int, choices=(1, 2, 3), required=required, help="held-out split")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iod", description="Spatio-temporal aggregation detection toolkit")
    parser.add_argument("--version", action="version", version=f"iod {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic plume dataset")
    _add_out(p)
    p.add_argument("--clips", type=int, default=60)
    p.add_argument("--frames", type=int, default=16, help="frames per clip")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("stats", help="GT center displacement histogram and CDF")
    _add_data(p)
    _add_out(p)

    p = sub.add_parser("train", help="train on the two splits other than --split")
    _add_data(p)
    _add_out(p)
    _split_flag(p)
    _add_model_flags(p)

    p = sub.add_parser("detect", help="run a trained model on the held-out split")
    _add_data(p)
    _add_out(p)
    _split_flag(p)
    _add_model_flags(p)
    p.add_argument("--model", type=Path, default=None, help="parameter file (default: OUT/model.bin)")

    p = sub.add_parser("eval", help="frame AP of a detections file on one split")
    _add_data(p)
    _add_out(p)
    _split_flag(p)
    p.add_argument("--detections", type=Path, default=None, help="JSON Lines file (default: OUT/detections.jsonl)")

    p = sub.add_parser("kfold", help="train, detect and evaluate on all three splits")
    _add_data(p)
    _add_out(p)
    _add_model_flags(p)

    p = sub.add_parser("sweep-zeta", help="kfold for each zeta squared value")
    _add_data(p)
    _add_out(p)
    _add_model_flags(p)
    p.add_argument("--zeta2", type=_float_list, default=[1, 2, 4, 16, 64, 256])

    p = sub.add_parser("sweep-frames", help="kfold for each input frame count")
    _add_data(p)
    _add_out(p)
    _add_model_flags(p, frames=False)
    p.add_argument("--frames", type=_int_list, default=[2, 4, 6, 8], help="comma list of T values")

    p = sub.add_parser("gradcheck", help="finite-difference checks of all analytic gradients")
    _add_out(p, required=False)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zeta", type=float, default=4.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)

    p = sub.add_parser("refine", help="offset descent on the staggered two-frame tube")
    _add_out(p)
    p.add_argument("--zeta", type=float, default=4.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=500, help="descent steps")

    p = sub.add_parser("report", help="render SVG charts for every known CSV in a directory")
    _add_out(p)
    return parser


# --- output helpers -------------------------------------------------------------------


def _write_text(path: Path, text: str) -> Path:
    atomic_write(path, text.encode())
    return path


def _digest_of(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(paths):
        h.update(Path(p).name.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _trace_csv(trace) -> str:
    lines = ["epoch,l_k,l_size,l_sta,total"]
    for i, lb in enumerate(trace, 1):
        lines.append(f"{i},{lb.l_k:.8f},{lb.l_size:.8f},{lb.l_sta:.8f},{lb.total:.8f}")
    return "\n".join(lines) + "\n"


def _metrics_svg(report, title: str) -> str:
    keys = ("ap50", "ap75", "ap_5095", "ap_clear", "ap_vague")
    names = [n for n, _ in report.rows()]
    series = {n: [m.get(k) for k in keys] for n, m in report.rows()}
    return bar_chart(list(keys), {f"split {n}" if n != "avg" else n: v for n, v in series.items()},
                     title, "AP") if names else ""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# --- subcommands ----------------------------------------------------------------------


def cmd_gen(args):
    cfg = replace(SimConfig(), n_frames=args.frames, seed=args.seed)
    m = generate_dataset(cfg, args.clips, args.seed, args.out)
    counts = {s: len(m.entries(split=s)) for s in (1, 2, 3)}
    print(f"generated {len(m.clips)} clips in {args.out} (splits {counts[1]}/{counts[2]}/{counts[3]})")
    return [args.out / "manifest.json"], {}


def cmd_stats(args):
    st = center_offset_stats(load_manifest(args.data))
    lines = ["bin_lo,bin_hi,count,cdf"]
    for lo, hi, c, f in zip(st.bin_edges[:-1], st.bin_edges[1:], st.counts, st.cdf):
        lines.append(f"{lo:.2f},{hi:.2f},{int(c)},{f:.6f}")
    csv = _write_text(args.out / "offset_stats.csv", "\n".join(lines) + "\n")
    svg = _write_text(args.out / "offset_stats.svg", _offset_svg(st.bin_edges, st.counts, st.cdf))
    print(f"{len(st.displacements)} displacements, median {np.median(st.displacements):.3f} px, "
          f"mean {np.mean(st.displacements):.3f} px")
    return [csv, svg], {}


def _offset_svg(edges, counts, cdf) -> str:
    return histogram_chart(edges, {"frames": counts}, "GT center offset between adjacent frames",
                           "displacement (px)")


def cmd_train(args):
    m = load_manifest(args.data)
    cfg = detector_config(args)
    params, trace = train(m, args.split, cfg, split_seed(args.seed, args.split), log=_log)
    model = args.out / "model.bin"
    args.out.mkdir(parents=True, exist_ok=True)
    digest = save_params(params, model)
    conf = _write_text(args.out / "model_config.json", dumps_json(cfg.to_dict()).decode())
    tr = _write_text(args.out / "train_trace.csv", _trace_csv(trace))
    print(f"model {model} sha256 {digest}")
    return [model, conf, tr], {}


def _load_model_config(model_path: Path, fallback: DetectorConfig) -> DetectorConfig:
    conf = model_path.with_name("model_config.json")
    if conf.exists():
        return DetectorConfig.from_dict(json.loads(conf.read_text()))
    return fallback


def cmd_detect(args):
    m = load_manifest(args.data)
    model_path = args.model or args.out / "model.bin"
    if not model_path.exists():
        raise MissingInputError(f"model file not found: {model_path}")
    cfg = _load_model_config(model_path, detector_config(args))
    cfg = replace(cfg, top_k=args.topk, score_thr=args.score_thr)
    dets = detect_split(m, args.split, load_params(model_path), cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "detections.jsonl"
    write_detections(dets, path)
    print(f"{len(dets)} detections on split {args.split} -> {path}")
    return [path], {}


def cmd_eval(args):
    m = load_manifest(args.data)
    det_path = args.detections or args.out / "detections.jsonl"
    res = evaluate(read_detections(det_path), m, args.split, EvalConfig())
    report = MetricsReport({str(args.split): res}, {})
    csv = _write_text(args.out / "metrics.csv", report_csv(report))
    print(" ".join(f"{k} {res[k]:.4f}" if res[k] is not None else f"{k} nan" for k in METRIC_KEYS))
    return [csv], {}


def _run_kfold(m, cfg, seed, out: Path, tag: str = ""):
    workers = worker_count()
    report, results = kfold(m, cfg, seed, workers=workers, store=None if workers > 1 else ClipStore(m, cfg.input_size),
                            log=_log)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in results:
        det_path = out / f"detections{tag}_split{r.split}.jsonl"
        write_detections(r.detections, det_path)
        paths.append(det_path)
        p = out / f"model{tag}_split{r.split}.bin"
        save_params(r.params, p)
        paths.append(p)
        paths.append(_write_text(out / f"train_trace{tag}_split{r.split}.csv", _trace_csv(r.trace)))
    return report, results, paths


def cmd_kfold(args):
    m = load_manifest(args.data)
    cfg = detector_config(args)
    report, results, paths = _run_kfold(m, cfg, args.seed, args.out)
    paths.append(_write_text(args.out / "model_config.json", dumps_json(cfg.to_dict()).decode()))
    paths.append(_write_text(args.out / "metrics.csv", report_csv(report)))
    paths.append(_write_text(args.out / "metrics.svg", _metrics_svg(report, "3-fold frame AP")))
    anns = {e.clip_id: load_annotation(m.clip_dir(e)) for e in m.clips}
    dets = [d for r in results for d in r.detections]
    if dets:
        dens = iou_density_diagnostic(dets, anns)
        paths.append(_write_text(args.out / "iou_density.csv", iou_density_csv(dens)))
        paths.append(_write_text(args.out / "iou_density.svg", _density_svg(dens)))
    avg = report.average
    print(" ".join(f"{k} {avg[k]:.4f}" if avg[k] is not None else f"{k} nan"
                   for k in ("ap50", "ap75", "ap_5095", "ap_clear", "ap_vague")))
    return paths, {}


def _density_svg(dens) -> str:
    h = dens.histograms()
    return histogram_chart(dens.bin_edges, {"raw": h["raw"], "GT center": h["center_oracle"], "GT size": h["size_oracle"]},
                           "IoU of detections with GT", "IoU")


def _sweep_table(rows, key: str) -> str:
    lines = [f"{key},ap50,ap75,ap_5095,ap_clear,ap_vague"]
    for v, avg in rows:
        vals = ",".join("nan" if avg[k] is None else f"{avg[k]:.6f}"
                        for k in ("ap50", "ap75", "ap_5095", "ap_clear", "ap_vague"))
        lines.append(f"{v:g},{vals}")
    return "\n".join(lines) + "\n"


def cmd_sweep_zeta(args):
    m = load_manifest(args.data)
    rows = []
    for z2 in args.zeta2:
        if not z2 > 0:
            raise UsageError(f"zeta2 values must be positive, got {z2}")
        cfg = detector_config(args, zeta=math.sqrt(z2))
        report, _, _ = _run_kfold(m, cfg, args.seed, args.out, tag=f"_z2_{z2:g}")
        rows.append((z2, report.average))
        _log(f"zeta2 {z2:g}: ap50 {report.average['ap50']:.4f}")
    csv = _write_text(args.out / "sweep_zeta.csv", _sweep_table(rows, "zeta2"))
    xs = list(range(len(rows)))
    svg = _write_text(args.out / "sweep_zeta.svg", line_chart(
        {"AP@0.5": (xs, [r[1]["ap50"] for r in rows])}, "AP@0.5 across zeta squared", "zeta squared", "AP@0.5",
        xticks=[(i, f"{r[0]:g}") for i, r in zip(xs, rows)]))
    ap = [r[1]["ap50"] for r in rows]
    print(f"AP@0.5 spread {100 * (max(ap) - min(ap)):.2f} points over {len(ap)} values")
    return [csv, svg], {}


def cmd_sweep_frames(args):
    m = load_manifest(args.data)
    rows = []
    for T in args.frames:
        cfg = detector_config(args, T=T)
        report, _, _ = _run_kfold(m, cfg, args.seed, args.out, tag=f"_T{T}")
        rows.append((T, report.average))
        _log(f"T {T}: ap50 {report.average['ap50']:.4f}")
    csv = _write_text(args.out / "sweep_frames.csv", _sweep_table(rows, "frames"))
    svg = _write_text(args.out / "sweep_frames.svg", line_chart(
        {"AP@0.5": ([r[0] for r in rows], [r[1]["ap50"] for r in rows])}, "AP@0.5 by input frames",
        "input frames", "AP@0.5"))
    ap = [r[1]["ap50"] for r in rows]
    mono = all(a <= b for a, b in zip(ap, ap[1:]))
    print(f"AP@0.5 {' '.join(f'{a:.4f}' for a in ap)}; non-decreasing in T: {mono} (informational)")
    return [csv, svg], {}


def cmd_gradcheck(args):
    sta_err = gradcheck(args.trials, args.seed, STAConfig(zeta=args.zeta, lam=args.lam))
    e2e_err = max(end_to_end_gradcheck(seed=args.seed + k) for k in range(3))
    ok = sta_err <= STA_GRAD_TOL and e2e_err <= E2E_GRAD_TOL
    print(f"staloss max relative error {sta_err:.3e} over {args.trials} trials (tol {STA_GRAD_TOL:g})")
    print(f"end-to-end max relative error {e2e_err:.3e} (tol {E2E_GRAD_TOL:g})")
    paths = []
    if args.out is not None:
        lines = ["check,max_rel_error,tolerance,pass",
                 f"staloss,{sta_err:.6e},{STA_GRAD_TOL:g},{sta_err <= STA_GRAD_TOL}",
                 f"end_to_end,{e2e_err:.6e},{E2E_GRAD_TOL:g},{e2e_err <= E2E_GRAD_TOL}"]
        args.out.mkdir(parents=True, exist_ok=True)
        paths.append(_write_text(args.out / "gradcheck.csv", "\n".join(lines) + "\n"))
    if not ok:
        raise NumericError("gradient check failed")
    return paths, {}


def cmd_refine(args):
    cfg = STAConfig(zeta=args.zeta, lam=args.lam)
    pred, gt = STAGGERED
    e0 = embed_tube(pred, gt, cfg)
    e, trace = optimize_offsets(e0, cfg, steps=args.trials, step_size=0.1)
    err = float(np.mean(np.linalg.norm(e.pred_xy - e.gt_xy, axis=1)))
    lines = ["step,loss"] + [f"{i},{v:.12g}" for i, v in enumerate(trace)]
    csv = _write_text(args.out / "refine_trace.csv", "\n".join(lines) + "\n")
    svg = _write_text(args.out / "refine_trace.svg", line_chart(
        {"loss": (list(range(len(trace))), trace)}, "Offset refinement on a staggered tube", "step", "loss"))
    print(f"loss {trace[0]:.6f} -> {trace[-1]:.3e}; mean center error {err:.3e} px")
    if not all(math.isfinite(v) for v in trace):
        raise NumericError("non-finite loss during refinement")
    return [csv, svg], {}


def cmd_report(args):
    """Re-render charts from CSVs already in ``--out``."""
    made = []
    out = args.out
    if not out.is_dir():
        raise MissingInputError(f"report directory not found: {out}")
    for csv in sorted(out.glob("*.csv")):
        svg = _svg_for_csv(csv)
        if svg is not None:
            made.append(_write_text(csv.with_suffix(".svg"), svg))
    print(f"rendered {len(made)} chart(s)")
    return made, {}


def _read_csv(path: Path):
    lines = [l for l in path.read_text().splitlines() if l]
    head = lines[0].split(",")
    return head, [l.split(",") for l in lines[1:]]


def _num(x: str) -> float:
    return float("nan") if x in ("", "nan") else float(x)


def _svg_for_csv(path: Path):
    head, rows = _read_csv(path)
    if head[:2] == ["split", "ap50"]:
        return _metrics_svg(read_metrics_csv(path), "Frame AP")
    if head == ["bin_lo", "bin_hi", "count", "cdf"]:
        edges = [_num(r[0]) for r in rows] + [_num(rows[-1][1])]
        return _offset_svg(edges, [int(r[2]) for r in rows], None)
    if head[0] == "bin_lo" and "center_oracle" in head:
        body = [r for r in rows if r[0] != "mean"]
        edges = [_num(r[0]) for r in body] + [_num(body[-1][1])]
        return histogram_chart(edges, {"raw": [int(r[2]) for r in body], "GT center": [int(r[3]) for r in body],
                                       "GT size": [int(r[4]) for r in body]}, "IoU of detections with GT", "IoU")
    if head[0] in ("zeta2", "frames") and "ap50" in head:
        xs = list(range(len(rows))) if head[0] == "zeta2" else [_num(r[0]) for r in rows]
        ticks = [(i, r[0]) for i, r in enumerate(rows)] if head[0] == "zeta2" else None
        return line_chart({"AP@0.5": (xs, [_num(r[1]) for r in rows])}, f"AP@0.5 by {head[0]}", head[0],
                          "AP@0.5", xticks=ticks)
    if head == ["step", "loss"]:
        return line_chart({"loss": ([_num(r[0]) for r in rows], [_num(r[1]) for r in rows])},
                          "Offset refinement", "step", "loss")
    if head[0] == "epoch":
        xs = [_num(r[0]) for r in rows]
        return line_chart({k: (xs, [_num(r[i]) for r in rows]) for i, k in enumerate(head) if i > 0},
                          "Training loss", "epoch", "loss")
    return None


COMMANDS = {
    "gen": cmd_gen, "stats": cmd_stats, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval,
    "kfold": cmd_kfold, "sweep-zeta": cmd_sweep_zeta, "sweep-frames": cmd_sweep_frames,
    "gradcheck": cmd_gradcheck, "refine": cmd_refine, "report": cmd_report,
}


def _write_record(args, argv, started: float, outputs) -> None:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    metric_files = [p for p in outputs if Path(p).suffix == ".csv"]
    record = {
        "subcommand": args.command,
        "argv": list(argv),
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "started": started,
        "finished": time.time(),
        "outputs": sorted(str(p) for p in outputs),
        "metrics_digest": _digest_of(metric_files) if metric_files else None,
    }
    atomic_write(args.out / "run.json", dumps_json(record))


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    started = time.time()
    try:
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
        outputs, _ = COMMANDS[args.command](args)
        if args.out is not None:
            _write_record(args, argv, started, outputs)
    except UsageError as exc:
        print(f"iod: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"iod: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IODError, OSError) as exc:
        print(f"iod: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"iod: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
