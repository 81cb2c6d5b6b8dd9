import json

import numpy as np
import pytest
import torch

from pavesam import dataio, losses, training
from pavesam.losses import TverskyParams
from pavesam.model import build_surrogate, surrogate_config
from pavesam.training import (
    TrainConfig,
    TrainState,
    TrainingDivergedError,
    build_batches,
    finetune,
    select_loss,
    train_step,
)

from conftest import build_mini_dataset


MINI = surrogate_config(128, 16)


def mini_bundle(seed=0):
    return build_surrogate(MINI, seed=seed)


class TestTrainConfig:
    def test_defaults_reproduce_published_regimen(self):
        config = TrainConfig()
        assert config.epochs == 100
        assert config.learning_rate == 1e-5
        assert config.optimizer == "adam"
        assert config.loss == "dice_bce"
        assert training.ADAM_BETAS == (0.9, 0.999)
        assert training.ADAM_EPS == 1e-8

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainConfig(loss="hinge")
        with pytest.raises(ValueError):
            TrainConfig(optimizer="sgd")
        with pytest.raises(ValueError):
            TrainConfig(batch_images=0)

    def test_file_round_trip(self, tmp_path):
        config = TrainConfig(epochs=7, learning_rate=3e-4, loss="focal_tversky",
                             tversky=TverskyParams(0.6, 0.4, 2.0), seed=11)
        path = tmp_path / "run.json"
        path.write_text(json.dumps(config.to_dict()))
        assert training.load_train_config(path) == config


class TestBuildBatches:
    def test_counts_and_determinism(self, mini_dataset):
        _, manifest = mini_dataset
        a = build_batches(manifest, seed=5, epoch=2)
        b = build_batches(manifest, seed=5, epoch=2)
        assert [e.record.id for e in a] == [e.record.id for e in b]
        assert len(a) == 4
        assert all(len(e.instance_indexes) == 1 for e in a)

    def test_different_epochs_differ(self, mini_dataset):
        _, manifest = mini_dataset
        orders = {
            tuple(e.record.id for e in build_batches(manifest, seed=5, epoch=k))
            for k in range(6)
        }
        assert len(orders) > 1

    def test_zero_instance_image_skipped(self, tmp_path, caplog):
        from PIL import Image

        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(tmp_path / "a.png")
        (tmp_path / "m.jsonl").write_text(json.dumps(
            {"image_path": "a.png", "split": "train", "instances": []}
        ) + "\n")
        manifest = dataio.load_manifest(tmp_path / "m.jsonl")
        with caplog.at_level("WARNING"):
            entries = build_batches(manifest, seed=0, epoch=0)
        assert entries == []
        assert "skipping image" in caplog.text

    def test_one_image_one_instance(self, tmp_path):
        build_mini_dataset(tmp_path, n_images=1)
        manifest = dataio.load_manifest(tmp_path / "manifest.jsonl")
        entries = build_batches(manifest, seed=0, epoch=0)
        assert len(entries) == 1
        assert entries[0].instance_indexes == (0,)


class TestTrainStep:
    def test_decoder_changes_encoder_untouched(self, mini_dataset):
        _, manifest = mini_dataset
        bundle = mini_bundle()
        config = TrainConfig(epochs=1, learning_rate=1e-3, seed=0)
        state = TrainState(bundle, config)
        encoder_hash = bundle.component_hash("image_encoder")
        prompt_hash = bundle.component_hash("prompt_encoder")
        decoder_before = {
            k: v.clone() for k, v in bundle.mask_decoder.state_dict().items()
        }
        entry = build_batches(manifest, 0, 0)[0]
        state, loss = train_step(bundle, entry, config, state)
        assert np.isfinite(loss)
        assert state.step == 1
        assert bundle.component_hash("image_encoder") == encoder_hash
        assert bundle.component_hash("prompt_encoder") == prompt_hash
        changed = any(
            not torch.equal(decoder_before[k], v)
            for k, v in bundle.mask_decoder.state_dict().items()
        )
        assert changed

    def test_zero_learning_rate_is_null_update(self, mini_dataset):
        _, manifest = mini_dataset
        bundle = mini_bundle()
        config = TrainConfig(epochs=1, learning_rate=0.0, seed=0)
        state = TrainState(bundle, config)
        before = {k: v.clone() for k, v in bundle.mask_decoder.state_dict().items()}
        entry = build_batches(manifest, 0, 0)[0]
        _, loss1 = train_step(bundle, entry, config, state)
        _, loss2 = train_step(bundle, entry, config, state)
        assert loss1 == loss2
        for k, v in bundle.mask_decoder.state_dict().items():
            assert torch.equal(before[k], v)

    def test_near_perfect_prediction_low_loss(self):
        # the configured loss on an exactly-right prediction is tiny
        loss_fn = select_loss(TrainConfig())
        y = np.zeros((64, 64), dtype=np.uint8)
        y[20:40, 10:50] = 1
        assert loss_fn(y, y.astype(np.float64)).value <= 0.01

    def test_diverged_loss_raises_with_diagnostics(self, mini_dataset, monkeypatch):
        _, manifest = mini_dataset
        bundle = mini_bundle()
        config = TrainConfig(epochs=1, learning_rate=1e-3, seed=0)
        state = TrainState(bundle, config)
        entry = build_batches(manifest, 0, 0)[0]
        bad = losses.LossValue(float("nan"), np.zeros((128, 128)))
        monkeypatch.setattr(training, "select_loss", lambda cfg: lambda y, p: bad)
        with pytest.raises(TrainingDivergedError, match="step 0"):
            train_step(bundle, entry, config, state)

    def test_focal_tversky_identity_through_step(self, mini_dataset):
        # per-step loss with focal_tversky(gamma=1, alpha=beta=0.5) equals
        # plain dice on the exact tensors the step saw
        _, manifest = mini_dataset
        bundle = mini_bundle()
        config = TrainConfig(
            epochs=1, learning_rate=1e-3, seed=0, loss="focal_tversky",
            tversky=TverskyParams(alpha=0.5, beta=0.5, gamma=1.0),
        )
        state = TrainState(bundle, config)
        seen = []
        entry = build_batches(manifest, 0, 0)[0]
        _, step_loss = train_step(
            bundle, entry, config, state,
            probe=lambda y, p, lv: seen.append((y, p, lv)),
        )
        assert seen
        recomputed = 0.0
        for y, p, loss_value in seen:
            dice_only = losses.dice_loss(y, p).value
            assert loss_value.value == pytest.approx(dice_only, abs=1e-9)
            recomputed += loss_value.value / len(seen)
        assert step_loss == pytest.approx(recomputed, abs=1e-12)


class TestFinetune:
    def test_zero_epochs_noop(self, mini_dataset):
        _, manifest = mini_dataset
        bundle = mini_bundle()
        before = bundle.component_hash("mask_decoder")
        result = finetune(manifest, bundle, TrainConfig(epochs=0))
        assert result.history == []
        assert bundle.component_hash("mask_decoder") == before

    def test_freeze_invariance_hashes(self, mini_dataset):
        _, manifest = mini_dataset
        bundle = mini_bundle()
        result = finetune(manifest, bundle, TrainConfig(epochs=2, learning_rate=1e-3))
        assert result.encoder_hash_before == result.encoder_hash_after

    def test_two_runs_identical_history(self, mini_dataset):
        _, manifest = mini_dataset
        config = TrainConfig(epochs=3, learning_rate=1e-3, seed=4)
        first = finetune(manifest, mini_bundle(), config).history
        second = finetune(manifest, mini_bundle(), config).history
        assert first == second

    def test_resume_matches_uninterrupted_run(self, mini_dataset, tmp_path):
        _, manifest = mini_dataset
        straight_dir = tmp_path / "straight"
        resumed_dir = tmp_path / "resumed"
        straight = finetune(
            manifest, mini_bundle(),
            TrainConfig(epochs=4, learning_rate=1e-3, seed=2),
            out_dir=straight_dir,
        )
        finetune(
            manifest, mini_bundle(),
            TrainConfig(epochs=2, learning_rate=1e-3, seed=2),
            out_dir=resumed_dir,
        )
        resumed = finetune(
            manifest, mini_bundle(),
            TrainConfig(epochs=4, learning_rate=1e-3, seed=2),
            out_dir=resumed_dir,
            resume_from=resumed_dir / "state_final.pt",
        )
        a = straight.bundle.state_dict()
        b = resumed.bundle.state_dict()
        assert set(a) == set(b)
        for key in a:
            assert torch.equal(a[key], b[key]), key
        assert straight.history == resumed.history
        assert (
            (straight_dir / "history.jsonl").read_bytes()
            == (resumed_dir / "history.jsonl").read_bytes()
        )

    def test_history_and_checkpoints_on_disk(self, mini_dataset, tmp_path):
        _, manifest = mini_dataset
        result = finetune(
            manifest, mini_bundle(),
            TrainConfig(epochs=2, learning_rate=1e-3, checkpoint_every=1),
            out_dir=tmp_path,
        )
        lines = (tmp_path / "history.jsonl").read_text().splitlines()
        assert len(lines) == 2
        record = json.loads(lines[0])
        assert set(record) == {"epoch", "step", "loss", "train_dsc"}
        assert (tmp_path / "history.timing.jsonl").exists()
        assert (tmp_path / "final.pt").exists()
        assert (tmp_path / "best.pt").exists()
        assert (tmp_path / "state_epoch_0001.pt").exists()
        assert result.final_path == tmp_path / "final.pt"

    def test_batch_images_grouping(self, mini_dataset):
        _, manifest = mini_dataset
        config = TrainConfig(epochs=1, learning_rate=1e-3, batch_images=2)
        result = finetune(manifest, mini_bundle(), config)
        # 4 images grouped in pairs -> 2 optimizer steps
        assert result.history[-1]["step"] == 2


class TestProgressAndScale:
    def test_monotoneish_progress_on_toy(self, trained_toy):
        history = trained_toy["result"].history
        assert history[50]["loss"] < history[1]["loss"]

    def test_paper_shaped_manifest_batching(self, tmp_path):
        # 240 images split 180/60; the 180 train images carry 1125 polygon
        # annotations distributed over the six distress classes
        from PIL import Image

        class_counts = {
            "transverse": 276, "longitudinal": 400, "alligator": 218,
            "block": 78, "patch": 74, "manhole": 79,
        }
        pool = [name for name, count in class_counts.items() for _ in range(count)]
        assert len(pool) == 1125
        rng = np.random.default_rng(0)
        rng.shuffle(pool)
        per_image = [[] for _ in range(180)]
        for k, cls in enumerate(pool):
            per_image[k % 180].append(cls)
        img = np.zeros((16, 16, 3), dtype=np.uint8)
        lines = []
        for i in range(240):
            name = f"i{i:03d}.png"
            Image.fromarray(img).save(tmp_path / name)
            if i < 180:
                instances = [
                    {"class": cls, "polygon": [[2, 2], [13, 2], [13, 13], [2, 13]]}
                    for cls in per_image[i]
                ]
                split = "train"
            else:
                instances = [{"class": "patch", "polygon": [[2, 2], [13, 2], [13, 13], [2, 13]]}]
                split = "test"
            lines.append(json.dumps(
                {"image_path": name, "split": split, "instances": instances}
            ))
        (tmp_path / "m.jsonl").write_text("\n".join(lines) + "\n")
        manifest = dataio.load_manifest(tmp_path / "m.jsonl")
        assert manifest.split_counts() == {"train": 180, "test": 60}
        entries = build_batches(manifest, seed=0, epoch=0)
        assert len(entries) == 180
        assert sum(len(e.instance_indexes) for e in entries) == 1125
        train_classes = {}
        for record in manifest.split_records("train"):
            for inst in record.instances:
                train_classes[inst.class_name] = train_classes.get(inst.class_name, 0) + 1
        assert train_classes == class_counts

    def test_real_backbone_behind_same_interface(self, mini_dataset):
        # the identical loop code drives the full-scale architecture
        from pavesam.model import BackboneConfig, build_sam_backbone

        _, manifest = mini_dataset
        bundle = build_sam_backbone("vit_b", BackboneConfig(input_size=128))
        config = TrainConfig(epochs=1, learning_rate=1e-4, seed=0)
        state = TrainState(bundle, config)
        encoder_hash = bundle.component_hash("image_encoder")
        decoder_before = bundle.component_hash("mask_decoder")
        entry = build_batches(manifest, 0, 0)[0]
        state, loss = train_step(bundle, entry, config, state)
        assert np.isfinite(loss)
        assert bundle.component_hash("image_encoder") == encoder_hash
        assert bundle.component_hash("mask_decoder") != decoder_before
