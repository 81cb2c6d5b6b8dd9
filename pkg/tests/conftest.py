"""Shared fixtures: synthetic datasets and the session-trained toy bundle."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from pavesam import dataio, training
from pavesam.model import build_surrogate, surrogate_config
from pavesam.training import TrainConfig

TOY_EPOCHS = 120
TOY_LR = 2e-3


def build_toy_dataset(root: Path, n_images: int = 20, seed: int = 7) -> Path:
    """Synthetic pavement-like images: rectangles ("patch") and 3-px lines."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    lines = []
    for i in range(n_images):
        h, w = (64, 64) if i % 3 else (48, 64)
        img = np.clip(rng.normal(128, 10, (h, w, 3)), 0, 255).astype(np.uint8)
        instances = []
        for j in range(1 + int(rng.integers(0, 2))):
            mask = np.zeros((h, w), dtype=np.uint8)
            if (i + j) % 2 == 0:
                rw, rh = int(rng.integers(12, 22)), int(rng.integers(10, 20))
                x0 = int(rng.integers(2, w - rw - 2))
                y0 = int(rng.integers(2, h - rh - 2))
                mask[y0:y0 + rh, x0:x0 + rw] = 1
                cls = "patch"
            elif rng.random() < 0.5:
                y0 = int(rng.integers(4, h - 8))
                x0, x1 = int(rng.integers(2, 12)), int(rng.integers(w - 14, w - 3))
                mask[y0:y0 + 3, x0:x1] = 1
                cls = "longitudinal"
            else:
                x0 = int(rng.integers(4, w - 8))
                y0, y1 = int(rng.integers(2, 10)), int(rng.integers(h - 12, h - 3))
                mask[y0:y1, x0:x0 + 3] = 1
                cls = "transverse"
            shade = int(rng.integers(30, 70))
            lit = mask.astype(bool)
            img[lit] = np.clip(img[lit].astype(int) - shade, 0, 255).astype(np.uint8)
            mask_name = f"masks/img{i:02d}_{j}.png"
            dataio.write_mask(root / mask_name, mask)
            instances.append({"class": cls, "mask_path": mask_name})
        img_name = f"img{i:02d}.png"
        Image.fromarray(img).save(root / img_name)
        lines.append(json.dumps(
            {"image_path": img_name, "split": "train", "instances": instances}
        ))
    manifest_path = root / "manifest.jsonl"
    manifest_path.write_text("\n".join(lines) + "\n")
    return manifest_path


def build_mini_dataset(root: Path, n_images: int = 4, seed: int = 3,
                       splits: tuple[str, ...] = ("train",)) -> Path:
    """Very small dataset for fast loop/CLI tests (64x64 images)."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    lines = []
    for i in range(n_images):
        img = np.clip(rng.normal(120, 12, (64, 64, 3)), 0, 255).astype(np.uint8)
        mask = np.zeros((64, 64), dtype=np.uint8)
        x0, y0 = int(rng.integers(4, 30)), int(rng.integers(4, 30))
        mask[y0:y0 + 20, x0:x0 + 16] = 1
        img[mask.astype(bool)] = 60
        dataio.write_mask(root / f"masks/m{i}.png", mask)
        Image.fromarray(img).save(root / f"i{i}.png")
        lines.append(json.dumps({
            "image_path": f"i{i}.png",
            "split": splits[i % len(splits)],
            "instances": [{"class": "patch", "mask_path": f"masks/m{i}.png"}],
        }))
    manifest_path = root / "manifest.jsonl"
    manifest_path.write_text("\n".join(lines) + "\n")
    return manifest_path


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    manifest_path = build_toy_dataset(tmp_path_factory.mktemp("toy_ds"))
    return manifest_path, dataio.load_manifest(manifest_path)


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    manifest_path = build_mini_dataset(tmp_path_factory.mktemp("mini_ds"))
    return manifest_path, dataio.load_manifest(manifest_path)


@pytest.fixture()
def fresh_surrogate():
    """Function-scoped factory; tests that mutate weights get their own bundle."""
    def make(input_size=256, downsample=16, seed=0):
        return build_surrogate(surrogate_config(input_size, downsample), seed=seed)
    return make


@pytest.fixture(scope="session")
def trained_toy(toy_dataset, tmp_path_factory):
    """The toy overfit run: trains once per session, reused by many tests."""
    _, manifest = toy_dataset
    out_dir = tmp_path_factory.mktemp("toy_train")
    bundle = build_surrogate(surrogate_config(256, 16), seed=0)
    config = TrainConfig(epochs=TOY_EPOCHS, learning_rate=TOY_LR, seed=0)
    started = time.perf_counter()
    result = training.finetune(manifest, bundle, config, out_dir=out_dir)
    wall = time.perf_counter() - started
    return {
        "bundle": bundle,
        "result": result,
        "manifest": manifest,
        "config": config,
        "out_dir": out_dir,
        "wall_seconds": wall,
    }
