"""Decoder-only fine-tuning loop with box prompts.

Per step: the image is encoded once (frozen encoder, cached across
epochs), each instance contributes one (box prompt, binary target) pair,
the loss gradient from the losses module seeds backpropagation through the
mask decoder only, and Adam applies one update per image (or per
`batch_images` group). History records are deterministic for a fixed seed
and thread count; wall-clock timing goes to a separate sidecar file.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataio, losses
from .core import clamp_box
from .dataio import DatasetManifest, ManifestRecord
from .evaluation import binarize, dsc
from .losses import LossValue, TverskyParams
from .model import BackboneBundle, FreezePolicy

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LOSS_CHOICES = ("dice_bce", "focal_tversky")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-5
    optimizer: str = "adam"
    loss: str = "dice_bce"
    tversky: TverskyParams = field(default_factory=TverskyParams)
    seed: int = 0
    batch_images: int = 1
    checkpoint_every: int = 0  # epochs between resumable checkpoints; 0 = off

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.loss not in LOSS_CHOICES:
            raise ValueError(f"loss must be one of {LOSS_CHOICES}")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.batch_images < 1:
            raise ValueError("batch_images must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        return out


def train_config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    if "tversky" in data and isinstance(data["tversky"], dict):
        data["tversky"] = TverskyParams(**data["tversky"])
    return TrainConfig(**data)


def load_train_config(path: str | Path) -> TrainConfig:
    with open(path) as fh:
        return train_config_from_dict(json.load(fh))


def select_loss(config: TrainConfig):
    """Loss callable (truth, prediction) -> LossValue per the config."""
    if config.loss == "dice_bce":
        return losses.combined_loss
    return lambda y, p: losses.focal_tversky_loss(y, p, config.tversky)


# ---------------------------------------------------------------------------
# Batching


@dataclass(frozen=True)
class BatchEntry:
    record: ManifestRecord
    instance_indexes: tuple[int, ...]


def build_batches(manifest: DatasetManifest, seed: int, epoch: int) -> list[BatchEntry]:
    """One entry per train image, instance order fixed, image order shuffled per (seed, epoch)."""
    entries: list[BatchEntry] = []
    for record in manifest.split_records("train"):
        usable = tuple(
            j for j, inst in enumerate(record.instances)
            if inst.polygon is not None or inst.mask_path is not None
        )
        if not usable:
            log.warning("skipping image %s: no trainable instances", record.id)
            continue
        entries.append(BatchEntry(record, usable))
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    return [entries[i] for i in rng.permutation(len(entries))]


# ---------------------------------------------------------------------------
# State


class TrainState:
    """Optimizer moments, epoch/step counters, rng state, best metric, history."""

    def __init__(self, bundle: BackboneBundle, config: TrainConfig) -> None:
        self.params = bundle.named_trainable_parameters(FreezePolicy())
        self.optimizer = torch.optim.Adam(
            list(self.params.values()),
            lr=config.learning_rate,
            betas=ADAM_BETAS,
            eps=ADAM_EPS,
        )
        self.epoch = 0
        self.step = 0
        self.best_metric = float("-inf")
        self.history: list[dict] = []

    def save(self, path: str | Path, bundle: BackboneBundle) -> None:
        torch.save(
            {
                "epoch": self.epoch,
                "step": self.step,
                "best_metric": self.best_metric,
                "history": self.history,
                "optimizer": self.optimizer.state_dict(),
                "bundle_state": bundle.state_dict(),
                "torch_rng": torch.get_rng_state(),
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path, bundle: BackboneBundle, config: TrainConfig) -> "TrainState":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        bundle.load_state_dict(payload["bundle_state"])
        state = cls(bundle, config)
        state.optimizer.load_state_dict(payload["optimizer"])
        state.epoch = payload["epoch"]
        state.step = payload["step"]
        state.best_metric = payload["best_metric"]
        state.history = list(payload["history"])
        torch.set_rng_state(payload["torch_rng"])
        return state


# ---------------------------------------------------------------------------
# Steps


def _prepare_image(bundle: BackboneBundle, record: ManifestRecord, cache: dict | None):
    key = record.id
    if cache is not None and key in cache:
        return cache[key]
    image = dataio.load_image(record.image_path)
    resized, transform = dataio.resize_and_pad(image, target=bundle.config.input_size)
    embedding = bundle.encode_image(bundle.preprocess(resized))
    value = (embedding, transform)
    if cache is not None:
        cache[key] = value
    return value


def _accumulate_image(
    bundle: BackboneBundle,
    entry: BatchEntry,
    config: TrainConfig,
    state: TrainState,
    weight: float,
    cache: dict | None,
    probe=None,
) -> tuple[float, float]:
    """Backward passes for one image; returns (mean loss, mean dsc) over instances."""
    record = entry.record
    embedding, transform = _prepare_image(bundle, record, cache)
    loss_fn = select_loss(config)
    n = len(entry.instance_indexes)
    total_loss = 0.0
    total_dsc = 0.0
    for j in entry.instance_indexes:
        inst = record.instances[j]
        target = dataio.mask_to_model_space(
            dataio.instance_mask(record, inst), transform
        )
        model_box = dataio.map_box(
            clamp_box(inst.box, record.height, record.width), transform, "forward"
        )
        prompt = bundle.encode_box(model_box)
        with torch.enable_grad():
            prediction = bundle.decode(embedding, prompt)
            p_hat = prediction.upsampled
        p_np = np.clip(p_hat.detach().cpu().numpy().astype(np.float64), 0.0, 1.0)
        loss_value: LossValue = loss_fn(target, p_np)
        if not np.isfinite(loss_value.value):
            norm = float(
                torch.sqrt(sum((p**2).sum() for p in state.params.values())).item()
            )
            raise TrainingDivergedError(
                f"non-finite loss at step {state.step} on image {record.id!r} "
                f"instance {j} (loss={loss_value.value}, decoder param norm={norm:.4g})"
            )
        seed_grad = torch.from_numpy(loss_value.gradient * (weight / n)).to(torch.float32)
        p_hat.backward(gradient=seed_grad)
        total_loss += loss_value.value / n
        total_dsc += dsc(binarize(p_np, 0.5), target) / n
        if probe is not None:
            probe(target, p_np, loss_value)
    return total_loss, total_dsc


def train_step(
    bundle: BackboneBundle,
    entry: BatchEntry,
    config: TrainConfig,
    state: TrainState,
    cache: dict | None = None,
    probe=None,
) -> tuple[TrainState, float]:
    """One image forward, loss averaged over its instances, one Adam update."""
    state.optimizer.zero_grad()
    loss, _ = _accumulate_image(bundle, entry, config, state, 1.0, cache, probe)
    state.optimizer.step()
    state.step += 1
    return state, loss


# ---------------------------------------------------------------------------
# Full loop


@dataclass
class FinetuneResult:
    bundle: BackboneBundle
    history: list[dict]
    best_metric: float
    final_path: Path | None
    best_path: Path | None
    encoder_hash_before: str
    encoder_hash_after: str


def finetune(
    manifest: DatasetManifest,
    bundle: BackboneBundle,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    history_path: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> FinetuneResult:
    """Run the configured number of epochs; encoders are asserted untouched."""
    bundle.apply_freeze(FreezePolicy())
    hash_before = bundle.component_hash("image_encoder") + bundle.component_hash("prompt_encoder")
    if resume_from is not None:
        state = TrainState.load(resume_from, bundle, config)
    else:
        state = TrainState(bundle, config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        history_path = history_path or out_dir / "history.jsonl"
    best_path = final_path = None
    history_fh = open(history_path, "a") if history_path is not None else None
    timing_fh = (
        open(Path(history_path).with_suffix(".timing.jsonl"), "a")
        if history_path is not None
        else None
    )
    cache: dict = {}
    try:
        for epoch in range(state.epoch, config.epochs):
            started = time.perf_counter()
            entries = build_batches(manifest, config.seed, epoch)
            if not entries:
                raise ValueError("train split has no trainable images")
            epoch_loss = 0.0
            epoch_dsc = 0.0
            for group_start in range(0, len(entries), config.batch_images):
                group = entries[group_start: group_start + config.batch_images]
                state.optimizer.zero_grad()
                for entry in group:
                    loss, train_dsc = _accumulate_image(
                        bundle, entry, config, state, 1.0 / len(group), cache
                    )
                    epoch_loss += loss
                    epoch_dsc += train_dsc
                state.optimizer.step()
                state.step += 1
            record = {
                "epoch": epoch,
                "step": state.step,
                "loss": epoch_loss / len(entries),
                "train_dsc": epoch_dsc / len(entries),
            }
            state.history.append(record)
            state.epoch = epoch + 1
            if history_fh is not None:
                history_fh.write(json.dumps(record) + "\n")
                history_fh.flush()
            if timing_fh is not None:
                timing_fh.write(json.dumps(
                    {"epoch": epoch, "wall_time": time.perf_counter() - started}
                ) + "\n")
                timing_fh.flush()
            if record["train_dsc"] > state.best_metric:
                state.best_metric = record["train_dsc"]
                if out_dir is not None:
                    best_path = out_dir / "best.pt"
                    bundle.save_artifact(best_path, extra={"epoch": epoch,
                                                           "train_dsc": state.best_metric})
            if (
                out_dir is not None
                and config.checkpoint_every
                and (epoch + 1) % config.checkpoint_every == 0
            ):
                state.save(out_dir / f"state_epoch_{epoch + 1:04d}.pt", bundle)
    finally:
        if history_fh is not None:
            history_fh.close()
        if timing_fh is not None:
            timing_fh.close()
    if out_dir is not None:
        final_path = out_dir / "final.pt"
        bundle.save_artifact(final_path, extra={"epochs": config.epochs})
        state.save(out_dir / "state_final.pt", bundle)
    hash_after = bundle.component_hash("image_encoder") + bundle.component_hash("prompt_encoder")
    if hash_after != hash_before:
        raise RuntimeError("freeze invariance violated: encoder weights changed during training")
    return FinetuneResult(
        bundle=bundle,
        history=list(state.history),
        best_metric=state.best_metric,
        final_path=final_path,
        best_path=best_path,
        encoder_hash_before=hash_before,
        encoder_hash_after=hash_after,
    )
