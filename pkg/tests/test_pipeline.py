from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from airmark import classifier, nn, pipeline, synthgen
from airmark.errors import EmptyInput, ModelLoadFailure
from airmark.imaging import BinaryMask
from airmark.labeler import AnnotationRecord
from airmark.roi import default_trapezoid


@pytest.fixture(scope="module")
def tiny_model(tmp_path_factory, small_corpus):
    """One-epoch model over the small corpus, enough to exercise auto mode."""
    cfg = classifier.TrainConfig(epochs=1, seed=6, input_width=48, input_height=36)
    items = classifier.load_corpus(small_corpus)
    split = classifier.split_dataset(items, cfg.seed)
    net = classifier.build_assistnet(cfg.input_height, cfg.input_width)
    net, _ = classifier.train(net, split, cfg)
    path = tmp_path_factory.mktemp("model") / "tiny.ckpt"
    path.write_bytes(classifier.save_checkpoint(net, cfg, cfg.seed))
    return path


def frame_paths(corpus: Path) -> list[Path]:
    manifest = json.loads((corpus / "manifest.json").read_text())
    return [corpus / fr["frame"] for fr in manifest["frames"]]


class TestRoute:
    def test_high_probability_is_runway_white(self):
        category, band = pipeline.route(0.7)
        assert (category, band.name) == ("runway", "white")

    def test_low_probability_is_taxiway_yellow(self):
        category, band = pipeline.route(0.3)
        assert (category, band.name) == ("taxiway", "yellow")

    def test_tie_goes_to_runway(self):
        category, band = pipeline.route(0.5)
        assert (category, band.name) == ("runway", "white")


class TestLabelingMetrics:
    def record_with_mask(self, mask, polylines=()):
        return AnnotationRecord(
            frame_id="f", category="runway", probability=None, band="white",
            polylines=list(polylines), crop_top_row=0,
            trapezoid=default_trapezoid(mask.width, mask.height),
            mask_foreground=mask.foreground_count(), mask=mask,
        )

    def truth_with(self, mask, centerlines=()):
        return synthgen.GroundTruth(
            category="runway", horizon_row=0, marking_mask=mask,
            centerlines=list(centerlines), edge_lines=[],
        )

    def test_identical_masks_perfect_scores(self):
        rng = np.random.default_rng(0)
        mask = BinaryMask.from_array(rng.uniform(size=(20, 30)) > 0.5)
        rec = self.record_with_mask(mask)
        truth = self.truth_with(mask)
        out = pipeline.labeling_metrics([rec], [truth])
        assert out["pixel_precision"] == 1.0 and out["pixel_recall"] == 1.0

    def test_empty_prediction_conventions(self):
        empty = BinaryMask.from_array(np.zeros((10, 10), dtype=bool))
        full = BinaryMask.from_array(np.ones((10, 10), dtype=bool))
        out = pipeline.labeling_metrics(
            [self.record_with_mask(empty)], [self.truth_with(full, [[(5, 5), (5, 6)]])]
        )
        assert out["pixel_precision"] == 1.0  # documented convention
        assert out["pixel_recall"] == 0.0
        assert out["centerline_coverage"] == 0.0

    def test_coverage_uses_segments(self):
        mask = BinaryMask.from_array(np.ones((40, 40), dtype=bool))
        # polyline vertices 10 px apart; truth points lie between them
        rec = self.record_with_mask(mask, polylines=[[(20, 30), (20, 20), (20, 10)]])
        pts = [(20, y) for y in range(10, 31)]
        out = pipeline.labeling_metrics([rec], [self.truth_with(mask, [pts])])
        assert out["centerline_coverage"] == 1.0


class TestRunPipeline:
    def test_empty_inputs(self, tmp_path, tiny_model):
        config = pipeline.PipelineConfig(model_path=str(tiny_model), output_dir=str(tmp_path))
        with pytest.raises(EmptyInput):
            pipeline.run_pipeline(config, [])

    def test_missing_model(self, tmp_path):
        config = pipeline.PipelineConfig(model_path=str(tmp_path / "no.ckpt"), output_dir=str(tmp_path))
        with pytest.raises(ModelLoadFailure):
            pipeline.run_pipeline(config, [tmp_path / "x.ppm"])

    def test_forced_taxiway_band(self, tmp_path, small_corpus):
        config = pipeline.PipelineConfig(
            routing_mode="force-taxiway", output_dir=str(tmp_path / "out")
        )
        frames = frame_paths(small_corpus)[:2]
        report = pipeline.run_pipeline(config, frames)
        for fr in report.frames:
            assert fr["band"] == "yellow" and fr["category"] == "taxiway"

    def test_auto_mode_writes_artifacts_and_metrics(self, tmp_path, small_corpus, tiny_model):
        out = tmp_path / "out"
        config = pipeline.PipelineConfig(model_path=str(tiny_model), output_dir=str(out))
        frames = frame_paths(small_corpus)
        report = pipeline.run_pipeline(config, frames)
        assert (out / "report.json").exists()
        assert (out / "report.csv").exists()
        stems = [f.stem for f in frames]
        for stem in stems:
            assert (out / f"{stem}.overlay.ppm").exists()
            assert (out / f"{stem}.annotation.json").exists()
            assert (out / f"{stem}.annotation.csv").exists()
        payload = json.loads((out / "report.json").read_text())
        assert payload["n_frames"] == len(frames)
        assert payload["classification"] is not None
        assert sum(map(sum, payload["classification"]["confusion"])) == len(frames)
        assert set(payload["labeling"]) == {
            "pixel_precision", "pixel_recall", "centerline_coverage",
        }
        assert payload["band_category_mismatches"] == 0
        assert (out / "report_confusion.png").exists()
        assert (out / "report_labeling.png").exists()

    def test_bad_frame_recorded_not_fatal(self, tmp_path, small_corpus, tiny_model):
        broken = tmp_path / "broken.ppm"
        broken.write_bytes(b"P6\n10 10\n255\nshort")
        frames = [broken] + frame_paths(small_corpus)[:1]
        config = pipeline.PipelineConfig(
            model_path=str(tiny_model), output_dir=str(tmp_path / "out")
        )
        report = pipeline.run_pipeline(config, frames)
        assert report.frames[0]["error"] is not None
        assert report.frames[1]["error"] is None

    def test_two_runs_byte_identical(self, tmp_path, small_corpus, tiny_model):
        frames = frame_paths(small_corpus)[:4]
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            config = pipeline.PipelineConfig(model_path=str(tiny_model), output_dir=str(out))
            pipeline.run_pipeline(config, frames)
            blob = {
                p.relative_to(out): p.read_bytes()
                for p in sorted(out.rglob("*"))
                if p.is_file() and p.suffix != ".png"
            }
            blobs.append(blob)
        assert blobs[0] == blobs[1]

    def test_band_category_consistency_structural(self, tmp_path, small_corpus, tiny_model):
        config = pipeline.PipelineConfig(
            model_path=str(tiny_model), output_dir=str(tmp_path / "out")
        )
        report = pipeline.run_pipeline(config, frame_paths(small_corpus))
        assert report.band_category_mismatches == 0
        for fr in report.frames:
            if fr["category"] == "runway":
                assert fr["band"] == "white"
            elif fr["category"] == "taxiway":
                assert fr["band"] == "yellow"


class TestEvaluateModel:
    def test_eval_runs_on_validation_partition(self, tmp_path, small_corpus, tiny_model):
        report_path = tmp_path / "report.json"
        report = pipeline.evaluate_model(tiny_model, small_corpus, report_path)
        _, cfg = classifier.load_checkpoint(Path(tiny_model).read_bytes())
        split = classifier.split_dataset(classifier.load_corpus(small_corpus), cfg.seed)
        assert len(report.frames) == len(split.validation)
        assert report_path.exists()
        payload = json.loads(report_path.read_text())
        assert payload["band_category_mismatches"] == 0
        assert (tmp_path / "annotations").is_dir()


class TestConfigParsing:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            pipeline.PipelineConfig.from_dict({"bogus": 1})

    def test_auto_requires_model(self):
        with pytest.raises(ValueError):
            pipeline.PipelineConfig(routing_mode="auto", model_path=None)

    def test_band_overrides(self):
        bands = pipeline.resolve_bands({"yellow": {"s_lo": 0.5}})
        assert bands["taxiway"].s_lo == 0.5
        assert bands["runway"].s_lo == 0.0
