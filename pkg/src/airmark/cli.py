"""Command-line interface: gen / train / classify / label / pipeline / eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

from . import figures, nn
from .classifier import (
    TrainConfig,
    build_assistnet,
    load_checkpoint,
    load_corpus,
    preprocess_item,
    save_checkpoint,
    split_dataset,
    DatasetItem,
)
from .errors import AirmarkError
from .imaging import decode_ppm, encode_ppm
from .labeler import TraversalParams, export_annotation, label_frame, render_overlay, with_overrides
from .pipeline import PipelineConfig, evaluate_model, resolve_bands, route, run_pipeline
from .roi import trapezoid_from_fractions
from .synthgen import generate_corpus

USAGE_ERROR, DATA_ERROR, INTERNAL_ERROR = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract wants 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _build_parser() -> _Parser:
    parser = _Parser(prog="airmark", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic corpus with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--runway", type=int, required=True)
    p.add_argument("--taxiway", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=400)
    p.add_argument("--height", type=int, default=225)
    p.add_argument("--clean", action="store_true", help="no wear, tire marks, or noise")

    p = sub.add_parser("train", help="train the classifier on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--config", help="JSON file with TrainConfig fields")

    p = sub.add_parser("classify", help="classify one frame")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)

    p = sub.add_parser("label", help="label one frame")
    p.add_argument("--input", required=True)
    p.add_argument("--category", required=True, choices=["runway", "taxiway", "auto"])
    p.add_argument("--model", help="required when --category auto")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with PipelineConfig fields")

    p = sub.add_parser("pipeline", help="classify, route, and label a directory of frames")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with PipelineConfig fields")

    p = sub.add_parser("eval", help="evaluate a model on a corpus' validation partition")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="report.json path")
    return parser


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cmd_gen(args) -> int:
    manifest = generate_corpus(
        args.runway, args.taxiway, args.width, args.height, args.seed, args.out, clean=args.clean
    )
    print(f"wrote {len(manifest['frames'])} frames under {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .classifier import train  # local import keeps CLI startup light

    config = TrainConfig.from_dict(_load_json(args.config))
    items = load_corpus(args.corpus)
    split = split_dataset(items, config.seed)
    net = build_assistnet(config.input_height, config.input_width)
    started = time.perf_counter()
    net, metrics = train(net, split, config)
    elapsed = time.perf_counter() - started
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(save_checkpoint(net, config, config.seed))

    history_path = out.with_suffix(out.suffix + ".history.json")
    history_path.write_text(
        json.dumps(metrics.history, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    keys = ["train_loss", "train_accuracy", "val_loss", "val_accuracy"]
    writer.writerow(["epoch"] + keys)
    for i in range(len(metrics.history["train_loss"])):
        writer.writerow([i + 1] + [metrics.history[k][i] for k in keys])
    out.with_suffix(out.suffix + ".history.csv").write_text(buf.getvalue(), encoding="utf-8")
    figures.save_training_curves(metrics.history, out.with_suffix(out.suffix + ".curves.png"))

    print(
        f"trained {config.epochs} epochs in {elapsed:.1f}s; "
        f"validation accuracy {metrics.accuracy:.4f}, "
        f"final val loss {metrics.history['val_loss'][-1]:.4f}"
    )
    return 0


def _cmd_classify(args) -> int:
    net, cfg = load_checkpoint(Path(args.model).read_bytes())
    img = decode_ppm(Path(args.input).read_bytes())
    item = DatasetItem(path=args.input, category="runway", image=img)
    prob = nn.predict(net, preprocess_item(item, cfg, training=False))
    category, band = route(prob)
    print(json.dumps({"category": category, "probability": prob, "band": band.name}))
    return 0


def _cmd_label(args) -> int:
    cfg_dict = _load_json(args.config)
    img = decode_ppm(Path(args.input).read_bytes())
    stem = Path(args.input).stem
    probability = None
    bands = resolve_bands(cfg_dict.get("bands"))
    params = with_overrides(TraversalParams(), cfg_dict.get("traversal_params"))
    trap = (
        trapezoid_from_fractions(cfg_dict["trapezoid"], img.width, img.height)
        if cfg_dict.get("trapezoid")
        else None
    )
    if args.category == "auto":
        if not args.model:
            print("airmark label: error: --category auto requires --model", file=sys.stderr)
            return USAGE_ERROR
        net, tcfg = load_checkpoint(Path(args.model).read_bytes())
        item = DatasetItem(path=args.input, category="runway", image=img)
        probability = nn.predict(net, preprocess_item(item, tcfg, training=False))
        category, _ = route(probability, bands)
    else:
        category = args.category
    record = label_frame(
        img, category, stem, trapezoid=trap, params=params, bands=bands, probability=probability
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.overlay.ppm").write_bytes(encode_ppm(render_overlay(img, record)))
    (out / f"{stem}.annotation.json").write_bytes(export_annotation(record, "json"))
    (out / f"{stem}.annotation.csv").write_bytes(export_annotation(record, "csv"))
    print(f"{stem}: {category}/{record.band}, {len(record.polylines)} polylines")
    return 0


def _collect_frames(root: Path) -> list[Path]:
    frames = sorted(p for p in root.rglob("*.ppm") if "truth" not in p.parts)
    return [p for p in frames if not p.name.endswith(".overlay.ppm")]


def _cmd_pipeline(args) -> int:
    cfg_dict = _load_json(args.config)
    cfg_dict.update(model_path=args.model, output_dir=args.out)
    cfg_dict.setdefault("routing_mode", "auto")
    config = PipelineConfig.from_dict(cfg_dict)
    frames = _collect_frames(Path(args.input))
    report = run_pipeline(config, frames)
    print(
        f"processed {len(report.frames)} frames in {report.duration_seconds:.1f}s; "
        f"report at {Path(args.out) / 'report.json'}"
    )
    return 0


def _cmd_eval(args) -> int:
    report = evaluate_model(args.model, args.corpus, args.out)
    acc = report.classification.accuracy if report.classification else float("nan")
    print(
        f"evaluated {len(report.frames)} frames in {report.duration_seconds:.1f}s; "
        f"accuracy {acc:.4f}; report at {args.out}"
    )
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "classify": _cmd_classify,
    "label": _cmd_label,
    "pipeline": _cmd_pipeline,
    "eval": _cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (AirmarkError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"airmark {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DATA_ERROR
    except Exception as exc:  # pragma: no cover - safety net
        print(f"airmark {args.command}: internal error: {exc}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
