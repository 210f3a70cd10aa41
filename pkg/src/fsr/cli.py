"""Command-line entry point for the fingerspelling pipeline.

Exit codes: 0 success, 1 usage/IO error, 2 no hand found, 3 incompatible
weights.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import depthio, preprocess, synth
from .data import load_pipeline_data
from .errors import (
    ComponentTooSmallError,
    FsrError,
    IncompatibleWeightsError,
    NoValidDepthError,
)
from .nn import (
    PRESETS,
    dump_spec,
    load_model,
    network_forward,
    parse_spec,
    save_model,
)
from .segment import SegmentationParams, segment_hand
from .train import (
    SplitSpec,
    TrainConfig,
    evaluate,
    finetune_config,
    render_experiment,
    render_report,
    retrain_config,
    run_experiment,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_HAND = 2
EXIT_BAD_WEIGHTS = 3


def _seg_params(args) -> SegmentationParams:
    return SegmentationParams(
        tau_step=args.tau, delta_max=args.delta,
        connectivity=args.conn, min_component_size=args.min_size,
    )


def _add_seg_flags(p):
    p.add_argument("--tau", type=float, default=15.0)
    p.add_argument("--delta", type=float, default=250.0)
    p.add_argument("--conn", type=int, choices=(4, 8), default=8)
    p.add_argument("--min-size", type=int, default=100)


def cmd_segment(args) -> int:
    frame = depthio.read_pgm16(Path(args.infile).read_bytes())
    mask, bbox = segment_hand(frame, _seg_params(args))
    Path(args.out).write_bytes(depthio.write_pgm8(mask.member))
    print(f"rows {bbox.row_min}..{bbox.row_max} cols {bbox.col_min}..{bbox.col_max}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    frame = depthio.read_pgm16(Path(args.infile).read_bytes())
    mask, bbox = segment_hand(frame, _seg_params(args))
    canvas = preprocess.preprocess_frame(frame, mask, bbox)
    Path(args.out).write_bytes(canvas.astype("<f4").tobytes())
    print(f"wrote {canvas.shape[0]}x{canvas.shape[1]} float32 canvas to {args.out}")
    return EXIT_OK


def _load_net_spec(name: str):
    if name in PRESETS:
        return PRESETS[name]()
    return parse_spec(Path(name).read_text(encoding="utf-8"))


def _parse_split(text: str):
    kind, _, rest = text.partition(":")
    if kind == "random":
        a, b, c = (int(x) for x in rest.split("/"))
        return SplitSpec("random", fractions=(a, b, c))
    if kind == "subjects" and rest in ("3/1/1", "4/1"):
        return text
    raise ValueError(f"bad split {text!r}; use random:a/b/c or subjects:3/1/1 or subjects:4/1")


def cmd_train(args) -> int:
    manifest = depthio.load_manifest(Path(args.manifest).read_text(encoding="utf-8"))
    root = Path(args.manifest).parent
    split = _parse_split(args.split)
    weights = None
    spec = None
    if args.regime == "finetune":
        if not args.weights:
            print("error: --weights is required for finetune", file=sys.stderr)
            return EXIT_USAGE
        weights = Path(args.weights).read_bytes()
        base = finetune_config
    else:
        spec = _load_net_spec(args.spec)
        base = retrain_config
    config = base(total_iters=args.iters, seed=args.seed,
                  batch_size=args.batch_size)
    if args.lr is not None:
        config = base(total_iters=args.iters, seed=args.seed,
                      batch_size=args.batch_size, base_lr=args.lr)
    result = run_experiment(
        manifest, root, args.regime, split, config, spec=spec, weights=weights,
        seg_params=_seg_params(args), keep_nets=True,
    )
    if args.out:
        save = result.nets[0]
        Path(args.out).write_bytes(save_model(save))
    report = render_experiment(result)
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


def _predict_probs(net, frame, seg_params, mean=None):
    mask, bbox = segment_hand(frame, seg_params)
    canvas = preprocess.preprocess_frame(frame, mask, bbox)
    if mean is not None:
        canvas = preprocess.subtract_mean(canvas, mean)
    channels = net.spec.input_shape[0]
    x = np.repeat(canvas[None, None], channels, axis=1).astype(np.float32)
    logits, _ = network_forward(net, x, mode="eval")
    exp = np.exp(logits[0] - logits[0].max())
    return exp / exp.sum()


def cmd_predict(args) -> int:
    net = load_model(Path(args.model).read_bytes())
    frame = depthio.read_pgm16(Path(args.infile).read_bytes())
    mean = None
    if args.mean:
        mean = preprocess.read_mean_image(Path(args.mean).read_bytes())
    probs = _predict_probs(net, frame, _seg_params(args), mean)
    order = np.argsort(-probs, kind="stable")[: args.top]
    for i in order:
        print(f"{depthio.LABELS[i]} {probs[i]:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_model(Path(args.model).read_bytes())
    manifest = depthio.load_manifest(Path(args.manifest).read_text(encoding="utf-8"))
    root = Path(args.manifest).parent
    if net.spec.num_classes != depthio.NUM_CLASSES:
        print(f"error: model has {net.spec.num_classes} classes, "
              f"expected {depthio.NUM_CLASSES}", file=sys.stderr)
        return EXIT_USAGE
    data = load_pipeline_data(manifest, root, _seg_params(args),
                              channels=net.spec.input_shape[0])
    if args.mean:
        data.mean = preprocess.read_mean_image(Path(args.mean).read_bytes())
    report = evaluate(net, data)
    print(render_report(report), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    params = synth.SynthParams(
        width=args.width, height=args.height, n_classes=args.classes,
        samples_per_class=args.samples, n_subjects=args.subjects, seed=args.seed,
    )
    manifest = synth.generate_dataset(params, args.out)
    print(f"wrote {len(manifest)} frames under {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    net = load_model(Path(args.model).read_bytes())
    frame_paths = sorted(Path(args.frames).glob("**/*.pgm"))
    if not frame_paths:
        print("error: no .pgm frames found", file=sys.stderr)
        return EXIT_USAGE
    frames = [depthio.read_pgm16(p.read_bytes()) for p in frame_paths]
    seg_params = _seg_params(args)
    channels = net.spec.input_shape[0]

    def run_once(frame, record):
        t0 = time.perf_counter()
        mask, bbox = segment_hand(frame, seg_params)
        t1 = time.perf_counter()
        canvas = preprocess.preprocess_frame(frame, mask, bbox)
        x = np.repeat(canvas[None, None], channels, axis=1).astype(np.float32)
        t2 = time.perf_counter()
        network_forward(net, x, mode="eval")
        t3 = time.perf_counter()
        if record is not None:
            record["segment"].append(t1 - t0)
            record["preprocess"].append(t2 - t1)
            record["forward"].append(t3 - t2)
            record["end_to_end"].append(t3 - t0)

    for frame in frames:  # warm-up pass
        run_once(frame, None)
    samples = {k: [] for k in ("segment", "preprocess", "forward", "end_to_end")}
    for _ in range(args.repeat):
        for frame in frames:
            run_once(frame, samples)
    for stage, values in samples.items():
        ms = np.asarray(values) * 1e3
        print(f"{stage} min {ms.min():.3f} median {np.median(ms):.3f} "
              f"p95 {np.percentile(ms, 95):.3f}")
    return EXIT_OK


def cmd_dump_spec(args) -> int:
    print(dump_spec(_load_net_spec(args.spec)), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsr", description="Depth-map fingerspelling recognition pipeline"
    )
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("FSR_THREADS", "0")) or None,
                        help="worker thread budget (default: hardware parallelism)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment a depth frame")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    _add_seg_flags(p)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("preprocess", help="frame -> 256x256 float canvas")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    _add_seg_flags(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train/evaluate per regime and split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--spec", default="tiny")
    p.add_argument("--regime", choices=("retrain", "finetune"), default="retrain")
    p.add_argument("--weights")
    p.add_argument("--split", default="random:50/25/25")
    p.add_argument("--iters", type=int, default=8000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--report")
    _add_seg_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model against a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mean")
    _add_seg_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="classify one depth frame")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--mean")
    p.add_argument("--top", type=int, default=5)
    _add_seg_flags(p)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--classes", type=int, default=31)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--subjects", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("bench", help="per-stage latency benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--repeat", type=int, default=10)
    _add_seg_flags(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("dump-spec", help="print a network spec (preset or file)")
    p.add_argument("spec")
    p.set_defaults(fn=cmd_dump_spec)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.fn(args)
    except (NoValidDepthError, ComponentTooSmallError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_HAND
    except IncompatibleWeightsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_WEIGHTS
    except (FsrError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
