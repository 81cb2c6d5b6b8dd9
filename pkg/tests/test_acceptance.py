"""Acceptance gate: every criterion at its stated tolerance, one line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS lines.
The extended full-scale reproduction (real checkpoint + Crack500 training)
is a documented script, not a gated test; see scripts/reproduce_extended.py.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from pavesam import cli, dataio, evaluation, losses, profiler
from pavesam.core import BoundingBox
from pavesam.dataio import extract_box, map_box, resize_and_pad
from pavesam.losses import TverskyParams
from pavesam.model import FreezePolicy, load_backbone

from conftest import build_mini_dataset
from test_dataio import brute_force_box
from test_evaluation import TestImprovementTable, brute_force_metrics
from test_losses import LOSS_FNS, central_difference
from test_model import SURROGATE_DECODER, SURROGATE_ENCODER, SURROGATE_PROMPT, SURROGATE_TOTAL

CHECKPOINT_ENV = "PAVESAM_CHECKPOINT"


def report(name: str) -> None:
    print(f"ACCEPTANCE {name}: PASS")


class TestAcceptance:
    def test_metric_oracle_equivalence(self):
        started = time.perf_counter()
        rng = np.random.default_rng(2024)
        for _ in range(200):
            pred = (rng.random((32, 32)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
            truth = (rng.random((32, 32)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
            ours = evaluation.instance_metrics(pred, truth)
            oracle = brute_force_metrics(pred, truth)
            for name in ("dsc", "precision", "recall", "f1", "iou_foreground", "iou_mean"):
                assert abs(ours[name] - oracle[name]) <= 1e-9, name
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"metric oracle sweep took {elapsed:.1f}s"
        report(f"metric-oracle-equivalence (200 pairs, {elapsed:.2f}s)")

    def test_loss_identities(self):
        rng = np.random.default_rng(7)
        half = TverskyParams(alpha=0.5, beta=0.5, gamma=1.0)
        for _ in range(100):
            y = (rng.random((8, 8)) > 0.5).astype(np.uint8)
            p = rng.random((8, 8))
            combined = losses.combined_loss(y, p).value
            parts = losses.bce_loss(y, p).value + losses.dice_loss(y, p).value
            assert abs(combined - parts) <= 1e-12
            ftl = losses.focal_tversky_loss(y, p, half).value
            assert abs(ftl - losses.dice_loss(y, p).value) <= 1e-9
            smoothed_dice = (2 * np.sum(y * p) + 1) / (np.sum(y) + np.sum(p) + 1)
            assert abs(losses.tversky_index(y, p, half) - smoothed_dice) <= 1e-12
        report("loss-identities (combined additivity, focal-tversky/dice, tversky/dice)")

    def test_gradient_checks(self):
        started = time.perf_counter()
        worst = {}
        for name, fn in LOSS_FNS.items():
            rng = np.random.default_rng(99)
            worst[name] = 0.0
            for _ in range(50):
                y = (rng.random((6, 6)) > 0.5).astype(np.uint8)
                p = rng.uniform(0.05, 0.95, (6, 6))
                analytic = fn(y, p).gradient
                numeric = central_difference(lambda q: fn(y, q).value, p, step=1e-5)
                denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-10)
                worst[name] = max(worst[name], float(np.max(np.abs(analytic - numeric) / denom)))
            assert worst[name] <= 1e-4, f"{name}: {worst[name]:.2e}"
        elapsed = time.perf_counter() - started
        assert elapsed < 30.0, f"gradient checks took {elapsed:.1f}s"
        report(
            "gradient-checks (max rel err "
            + ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items()))
            + f", {elapsed:.1f}s)"
        )

    def test_box_extraction(self):
        rng = np.random.default_rng(41)
        empty_cases = 0
        for trial in range(500):
            if trial % 10 == 0:
                grid = np.ones((9, 11), dtype=np.uint8)  # all 1s must error
            else:
                grid = rng.choice(
                    [0, 1, 2, 200, 255], size=(9, 11), p=[0.55, 0.2, 0.05, 0.1, 0.1]
                ).astype(np.uint8)
            expected = brute_force_box(grid)
            if expected is None:
                empty_cases += 1
                with pytest.raises(ValueError, match="empty mask"):
                    extract_box(grid)
            else:
                assert extract_box(grid).as_xyxy() == expected
        assert empty_cases >= 50
        report(f"box-extraction (500 grids, {empty_cases} strict->1 error cases)")

    def test_geometry(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            h, w = int(rng.integers(8, 2300)), int(rng.integers(8, 2300))
            resized, _ = resize_and_pad(np.zeros((h, w, 3), dtype=np.uint8), 1024)
            assert resized.shape == (1024, 1024, 3)
        image = np.zeros((1014, 2011, 3), dtype=np.uint8)
        resized, transform = resize_and_pad(image, 1024)
        assert resized.shape == (1024, 1024, 3)
        assert (transform.content_height, transform.content_width) == (516, 1024)
        assert transform.pad_bottom == 508 and transform.pad_right == 0
        worst = 0
        for _ in range(100):
            x0, x1 = sorted(int(v) for v in rng.integers(0, 2011, 2))
            y0, y1 = sorted(int(v) for v in rng.integers(0, 1014, 2))
            box = BoundingBox(x0, y0, x1, y1)
            back = map_box(map_box(box, transform, "forward"), transform, "inverse")
            worst = max(
                worst,
                abs(back.x_min - box.x_min), abs(back.y_min - box.y_min),
                abs(back.x_max - box.x_max), abs(back.y_max - box.y_max),
            )
        assert worst <= 1
        report(f"geometry (1024-cube shapes, 516x1024+508 pad, round-trip drift <= {worst}px)")

    def test_toy_overfit(self, trained_toy):
        result = trained_toy["result"]
        config = trained_toy["config"]
        assert config.epochs <= 200
        assert result.best_metric >= 0.85, f"train DSC {result.best_metric:.3f}"
        assert result.encoder_hash_before == result.encoder_hash_after
        assert trained_toy["wall_seconds"] < 300.0
        report(
            f"toy-overfit ({config.epochs} epochs, best train DSC "
            f"{result.best_metric:.3f}, encoders bit-identical, "
            f"{trained_toy['wall_seconds']:.0f}s)"
        )

    def test_table_arithmetic(self):
        helper = TestImprovementTable()
        a, b = helper._reports(helper.TABLE_15)
        fifteen = evaluation.improvement_table(a, b)["average"]
        assert abs(fifteen - 0.3117) <= 0.0005
        a, b = helper._reports(helper.TABLE_11)
        eleven = evaluation.improvement_table(a, b)["average"]
        assert abs(eleven - 0.35715) <= 0.0005
        report(f"table-arithmetic (15-pair avg {fifteen:.4f}, 11-pair avg {eleven:.5f})")

    def test_profiler_counts(self, fresh_surrogate):
        bundle = fresh_surrogate()
        partition = profiler.count_parameters(bundle, FreezePolicy())
        assert partition.by_component["image_encoder"] == SURROGATE_ENCODER
        assert partition.by_component["prompt_encoder"] == SURROGATE_PROMPT
        assert partition.by_component["mask_decoder"] == SURROGATE_DECODER
        assert partition.total == SURROGATE_TOTAL
        assert sum(partition.by_component.values()) == partition.total
        assert partition.trainable == SURROGATE_DECODER
        report(f"profiler-surrogate-counts (exact analytic total {SURROGATE_TOTAL:,})")

    def test_profiler_real_checkpoint_optional(self):
        checkpoint = os.environ.get(CHECKPOINT_ENV)
        if not checkpoint:
            pytest.skip(
                f"optional: set {CHECKPOINT_ENV} to a pretrained checkpoint to "
                "check decoder ~3.87M and total ~136M parameter counts"
            )
        bundle = load_backbone(checkpoint)
        partition = profiler.count_parameters(bundle, FreezePolicy())
        assert abs(partition.trainable - 3_870_000) / 3_870_000 < 0.05
        assert abs(partition.total - 136_000_000) / 136_000_000 < 0.05
        gmacs = profiler.profile(bundle, measure=False).gmacs
        assert abs(gmacs - 487) / 487 < 0.15
        report(f"profiler-real-checkpoint (trainable {partition.trainable:,})")

    def test_determinism_through_cli(self, tmp_path, capsys):
        manifest_path = build_mini_dataset(tmp_path / "data")
        train_flags = ["--backbone", "surrogate", "--input-size", "128",
                       "--downsample", "16"]
        histories = []
        for run in ("a", "b"):
            out_dir = tmp_path / f"train_{run}"
            assert cli.main([
                "train", "--manifest", str(manifest_path), "--out-dir", str(out_dir),
                "--epochs", "2", "--learning-rate", "1e-3", "--seed", "5",
                *train_flags,
            ]) == 0
            capsys.readouterr()
            histories.append((out_dir / "history.jsonl").read_bytes())
        assert histories[0] == histories[1]

        eval_manifest = build_mini_dataset(tmp_path / "eval_data", splits=("test",))
        reports = []
        for run in ("a", "b"):
            out_dir = tmp_path / f"eval_{run}"
            assert cli.main([
                "eval", "--manifest", str(eval_manifest), "--split", "test",
                "--out-dir", str(out_dir), *train_flags,
            ]) == 0
            capsys.readouterr()
            reports.append((out_dir / "report.jsonl").read_bytes())
        assert reports[0] == reports[1]
        report("determinism (train history and eval report byte-identical)")

    def test_extended_reproduction_documented(self):
        script = Path(__file__).resolve().parents[1] / "scripts" / "reproduce_extended.py"
        assert script.is_file()
        text = script.read_text()
        # expected values are recorded in the script, excluded from CI gating
        for anchor in ("0.432", "0.137", "0.696", "0.723", "0.691", "0.538"):
            assert anchor in text
        report("extended-reproduction (documented script with expected values; not gated)")
        pytest.skip("full-scale run needs the pretrained checkpoint, a GPU, and Crack500")
