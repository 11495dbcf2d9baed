"""Classify-then-route framework: batch runs, reports, and metrics.

Every frame is classified (or forced to a category), routed to the
matching color band, labeled, and written out as an overlay plus JSON/CSV
annotations. The aggregate report is a single canonical-JSON document so
two identical runs produce byte-identical files; wall-clock duration is
kept on the in-memory report only, never serialized.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import figures, nn
from .classifier import (
    Metrics,
    load_checkpoint,
    load_corpus,
    metrics_from_confusion,
    preprocess_item,
    split_dataset,
    DatasetItem,
)
from .errors import AirmarkError, DimensionMismatch, EmptyInput, ModelLoadFailure
from .imaging import decode_ppm, encode_ppm
from .labeler import (
    AnnotationRecord,
    ColorBand,
    DEFAULT_BANDS,
    TraversalParams,
    WHITE_BAND,
    YELLOW_BAND,
    export_annotation,
    label_frame,
    render_overlay,
    with_overrides,
)
from .roi import trapezoid_from_fractions
from .synthgen import GroundTruth, load_truth

COVERAGE_TOLERANCE_PX = 2.0


@dataclass
class PipelineConfig:
    model_path: str | None = None
    corpus_root: str | None = None
    output_dir: str = "out"
    routing_mode: str = "auto"  # auto | force-runway | force-taxiway
    trapezoid: list | None = None  # four [x, y] pairs as fractions of width/height
    traversal_params: dict | None = None
    bands: dict | None = None  # per band name: field overrides
    seed: int = 0

    def __post_init__(self):
        if self.routing_mode not in ("auto", "force-runway", "force-taxiway"):
            raise ValueError(f"unknown routing mode {self.routing_mode!r}")
        if self.routing_mode == "auto" and not self.model_path:
            raise ValueError("routing mode auto requires a model path")

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class RunReport:
    frames: list[dict]
    classification: Metrics | None
    labeling: dict | None
    band_category_mismatches: int
    duration_seconds: float
    records: list[AnnotationRecord] = field(default_factory=list, repr=False)


def route(probability: float, bands: dict[str, ColorBand] | None = None) -> tuple[str, ColorBand]:
    """P(runway) >= 0.5 routes to (runway, white); below to (taxiway, yellow)."""
    table = bands or DEFAULT_BANDS
    if probability >= 0.5:
        return "runway", table["runway"]
    return "taxiway", table["taxiway"]


def resolve_bands(overrides: dict | None) -> dict[str, ColorBand]:
    """Apply per-band field overrides ({"yellow": {"s_lo": ...}, ...})."""
    bands = {"taxiway": YELLOW_BAND, "runway": WHITE_BAND}
    if not overrides:
        return bands
    by_name = {"yellow": "taxiway", "white": "runway"}
    for name, fields in overrides.items():
        cat = by_name[name]
        base = bands[cat]
        values = {**base.__dict__, **fields}
        bands[cat] = ColorBand(**values)
    return bands


def _truth_path_for(frame: Path) -> Path | None:
    stem = frame.stem
    for root in (frame.parent.parent, frame.parent):
        cand = root / "truth" / f"{stem}.json"
        if cand.exists():
            return cand
    return None


def labeling_metrics(
    records: list[AnnotationRecord], truths: list[GroundTruth]
) -> dict[str, float]:
    """Micro pixel precision/recall vs truth masks plus centerline coverage.

    Precision over an empty prediction set is 1.0. Coverage counts a truth
    centerline point as hit when it lies within 2 px of any emitted
    polyline segment.
    """
    tp = fp = fn = 0
    covered = total_pts = 0
    for rec, truth in zip(records, truths):
        if rec.mask is None:
            continue
        pm = rec.mask.data
        tm = truth.marking_mask.data
        if pm.shape != tm.shape:
            raise DimensionMismatch(f"mask {pm.shape} vs truth {tm.shape}")
        tp += int((pm & tm).sum())
        fp += int((pm & ~tm).sum())
        fn += int((~pm & tm).sum())
        pts = [p for line in truth.centerlines for p in line]
        total_pts += len(pts)
        covered += _coverage_hits(rec.polylines, pts, COVERAGE_TOLERANCE_PX)
    return {
        "pixel_precision": tp / (tp + fp) if (tp + fp) else 1.0,
        "pixel_recall": tp / (tp + fn) if (tp + fn) else 1.0,
        "centerline_coverage": covered / total_pts if total_pts else 1.0,
    }


def _coverage_hits(polylines, points, tol: float) -> int:
    if not points:
        return 0
    pts = np.asarray(points, dtype=np.float64)
    hit = np.zeros(len(points), dtype=bool)
    for line in polylines:
        arr = np.asarray(line, dtype=np.float64)
        if arr.shape[0] == 1:
            d = np.hypot(pts[:, 0] - arr[0, 0], pts[:, 1] - arr[0, 1])
            hit |= d <= tol
            continue
        a, b = arr[:-1], arr[1:]
        ab = b - a
        denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
        ap = pts[:, None, :] - a[None, :, :]
        t = np.clip((ap * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
        proj = a[None] + t[..., None] * ab[None]
        diff = pts[:, None, :] - proj
        d = np.sqrt((diff * diff).sum(axis=2)).min(axis=1)
        hit |= d <= tol
    return int(hit.sum())


def run_pipeline(
    config: PipelineConfig,
    inputs: list[str | Path],
    report_path: str | Path | None = None,
) -> RunReport:
    """Process frames in order, write per-frame artifacts and the report.

    A frame that fails records its error and the run continues. When truth
    files exist next to the inputs, classification and labeling metrics are
    aggregated into the report.
    """
    started = time.perf_counter()
    if not inputs:
        raise EmptyInput("no input frames")
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_file = Path(report_path) if report_path else out_dir / "report.json"

    net = model_cfg = None
    if config.routing_mode == "auto":
        try:
            net, model_cfg = load_checkpoint(Path(config.model_path).read_bytes())
        except (OSError, AirmarkError) as exc:
            raise ModelLoadFailure(f"{config.model_path}: {exc}") from exc

    params = with_overrides(TraversalParams(), config.traversal_params)
    bands = resolve_bands(config.bands)

    frames_out: list[dict] = []
    records: list[AnnotationRecord] = []
    truth_records: list[GroundTruth] = []
    matched_records: list[AnnotationRecord] = []
    cm = [[0, 0], [0, 0]]
    have_truth = 0
    mismatches = 0

    for raw_path in inputs:
        frame = Path(raw_path)
        stem = frame.stem
        entry: dict = {
            "id": stem,
            "category": None,
            "band": None,
            "probability": None,
            "n_polylines": 0,
            "mask_foreground": 0,
            "truth_category": None,
            "correct": None,
            "error": None,
        }
        try:
            img = decode_ppm(frame.read_bytes())
            probability = None
            if config.routing_mode == "auto":
                item = DatasetItem(path=str(frame), category="runway", image=img)
                x = preprocess_item(item, model_cfg, training=False)
                probability = nn.predict(net, x)
                category, _band = route(probability, bands)
            else:
                category = config.routing_mode.removeprefix("force-")
            trap = (
                trapezoid_from_fractions(config.trapezoid, img.width, img.height)
                if config.trapezoid
                else None
            )
            record = label_frame(
                img,
                category,
                stem,
                trapezoid=trap,
                params=params,
                bands=bands,
                probability=probability,
            )
            (out_dir / f"{stem}.overlay.ppm").write_bytes(
                encode_ppm(render_overlay(img, record))
            )
            (out_dir / f"{stem}.annotation.json").write_bytes(export_annotation(record, "json"))
            (out_dir / f"{stem}.annotation.csv").write_bytes(export_annotation(record, "csv"))
            records.append(record)
            expected_band = "white" if category == "runway" else "yellow"
            if record.band != expected_band:
                mismatches += 1
            entry.update(
                category=category,
                band=record.band,
                probability=probability,
                n_polylines=len(record.polylines),
                mask_foreground=record.mask_foreground,
            )
            truth_path = _truth_path_for(frame)
            if truth_path is not None:
                truth = load_truth(truth_path)
                have_truth += 1
                entry["truth_category"] = truth.category
                if probability is not None:
                    truth_label = int(truth.category == "runway")
                    cm[truth_label][int(probability >= 0.5)] += 1
                    entry["correct"] = category == truth.category
                matched_records.append(record)
                truth_records.append(truth)
        except AirmarkError as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
        frames_out.append(entry)

    classification = None
    if config.routing_mode == "auto" and have_truth and sum(sum(r) for r in cm):
        classification = metrics_from_confusion(cm)
    labeling = labeling_metrics(matched_records, truth_records) if truth_records else None

    report = RunReport(
        frames=frames_out,
        classification=classification,
        labeling=labeling,
        band_category_mismatches=mismatches,
        duration_seconds=time.perf_counter() - started,
        records=records,
    )
    write_report(report, report_file, mode=config.routing_mode)
    return report


def report_payload(report: RunReport, mode: str) -> dict:
    """JSON-ready view of the report; duration is deliberately omitted."""
    classification = None
    if report.classification is not None:
        classification = {
            "accuracy": report.classification.accuracy,
            "confusion": report.classification.confusion,
            "precision": report.classification.precision,
            "recall": report.classification.recall,
        }
    return {
        "mode": mode,
        "n_frames": len(report.frames),
        "frames": report.frames,
        "classification": classification,
        "labeling": report.labeling,
        "band_category_mismatches": report.band_category_mismatches,
    }


def write_report(report: RunReport, path: str | Path, mode: str) -> None:
    """report.json plus the CSV table and figures rendered alongside."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report_payload(report, mode)
    path.write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "id",
            "category",
            "band",
            "probability",
            "n_polylines",
            "mask_foreground",
            "truth_category",
            "correct",
            "error",
        ]
    )
    for fr in report.frames:
        writer.writerow([fr[k] for k in (
            "id", "category", "band", "probability", "n_polylines",
            "mask_foreground", "truth_category", "correct", "error",
        )])
    path.with_suffix(".csv").write_text(buf.getvalue(), encoding="utf-8")
    if report.classification is not None:
        figures.save_confusion_matrix(
            report.classification.confusion, path.with_name(path.stem + "_confusion.png")
        )
    if report.labeling is not None:
        figures.save_labeling_summary(
            report.labeling, path.with_name(path.stem + "_labeling.png")
        )


def evaluate_model(
    model_path: str | Path, corpus_root: str | Path, report_path: str | Path
) -> RunReport:
    """Classify and label the corpus' validation partition, report at path.

    The split is re-derived with the seed stored in the checkpoint config,
    so evaluation always sees the same partition the training run held out.
    """
    try:
        _net, cfg = load_checkpoint(Path(model_path).read_bytes())
    except (OSError, AirmarkError) as exc:
        raise ModelLoadFailure(f"{model_path}: {exc}") from exc
    items = load_corpus(corpus_root)
    split = split_dataset(items, cfg.seed)
    report_path = Path(report_path)
    config = PipelineConfig(
        model_path=str(model_path),
        corpus_root=str(corpus_root),
        output_dir=str(report_path.parent / "annotations"),
        routing_mode="auto",
        seed=cfg.seed,
    )
    return run_pipeline(config, [it.path for it in split.validation], report_path=report_path)
