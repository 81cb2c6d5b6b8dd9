"""Promptable segmenter abstraction shared by the surrogate and real backbones.

A bundle owns three components behind one interface: a frozen image
encoder, a frozen box-prompt encoder, and a trainable mask decoder.
`load_backbone` builds one from the literal "surrogate", a published
pretrained checkpoint, or a fine-tuned artifact saved by this package.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..core import BoundingBox

COMPONENTS = ("image_encoder", "prompt_encoder", "mask_decoder")
ARTIFACT_KEY = "pavesam_artifact"


@dataclass(frozen=True)
class BackboneConfig:
    input_size: int = 1024
    downsample_factor: int = 16
    embedding_channels: int = 256
    num_mask_outputs: int = 3
    pixel_mean: tuple[float, float, float] = (123.675, 116.28, 103.53)
    pixel_std: tuple[float, float, float] = (58.395, 57.12, 57.375)

    def __post_init__(self) -> None:
        if self.input_size % self.downsample_factor != 0:
            raise ValueError("input_size must be divisible by downsample_factor")
        if self.input_size % 4 != 0:
            raise ValueError("input_size must be divisible by 4 (mask grid)")

    @property
    def embedding_grid(self) -> int:
        return self.input_size // self.downsample_factor

    @property
    def mask_grid(self) -> int:
        return self.input_size // 4

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FreezePolicy:
    image_encoder_trainable: bool = False
    prompt_encoder_trainable: bool = False
    mask_decoder_trainable: bool = True

    def trainable(self, component: str) -> bool:
        return getattr(self, f"{component}_trainable")


@dataclass(frozen=True)
class ImageEmbedding:
    features: torch.Tensor  # (channels, grid, grid)

    @property
    def size_bytes(self) -> int:
        return self.features.numel() * self.features.element_size()


@dataclass(frozen=True)
class PromptEmbedding:
    tokens: torch.Tensor  # (2, channels), one token per box corner


@dataclass(frozen=True)
class MaskPrediction:
    logits: torch.Tensor  # (num_mask_outputs, mask_grid, mask_grid)
    iou_scores: torch.Tensor  # (num_mask_outputs,), each in [0, 1]
    upsampled: torch.Tensor  # (input_size, input_size), sigmoided output 0

    def probability_mask(self) -> np.ndarray:
        return self.upsampled.detach().cpu().numpy().astype(np.float64)


class BackboneBundle:
    """Frozen encoders + trainable decoder with a uniform I/O contract."""

    def __init__(
        self,
        kind: str,
        config: BackboneConfig,
        image_encoder: nn.Module,
        prompt_encoder: nn.Module,
        mask_decoder: nn.Module,
    ) -> None:
        self.kind = kind
        self.config = config
        self.image_encoder = image_encoder
        self.prompt_encoder = prompt_encoder
        self.mask_decoder = mask_decoder
        self.device = torch.device("cpu")
        self.freeze = FreezePolicy()
        self.apply_freeze(self.freeze)
        for component in COMPONENTS:
            self.component(component).eval()

    def to_device(self, device: str | torch.device) -> "BackboneBundle":
        self.device = torch.device(device)
        for component in COMPONENTS:
            self.component(component).to(self.device)
        return self

    def component(self, name: str) -> nn.Module:
        if name not in COMPONENTS:
            raise ValueError(f"unknown component {name!r}")
        return getattr(self, name)

    def apply_freeze(self, policy: FreezePolicy) -> None:
        self.freeze = policy
        for component in COMPONENTS:
            requires = policy.trainable(component)
            for param in self.component(component).parameters():
                param.requires_grad_(requires)

    def preprocess(self, image: np.ndarray) -> np.ndarray:
        """Channel-normalize a resized/padded uint8 image to float32 HxWx3."""
        size = self.config.input_size
        if image.shape != (size, size, 3):
            raise ValueError(f"expected {size}x{size}x3 input, got {image.shape}")
        mean = np.asarray(self.config.pixel_mean, dtype=np.float32)
        std = np.asarray(self.config.pixel_std, dtype=np.float32)
        return (image.astype(np.float32) - mean) / std

    def encode_image(self, normalized: np.ndarray | torch.Tensor) -> ImageEmbedding:
        size = self.config.input_size
        tensor = torch.as_tensor(np.asarray(normalized), dtype=torch.float32).to(self.device)
        if tensor.shape != (size, size, 3):
            raise ValueError(f"expected {size}x{size}x3 normalized input, got {tuple(tensor.shape)}")
        with torch.no_grad():
            features = self.image_encoder(tensor.permute(2, 0, 1).unsqueeze(0))[0]
        grid = self.config.embedding_grid
        expected = (self.config.embedding_channels, grid, grid)
        if tuple(features.shape) != expected:
            raise RuntimeError(f"encoder produced {tuple(features.shape)}, expected {expected}")
        return ImageEmbedding(features)

    def encode_box(self, box: BoundingBox) -> PromptEmbedding:
        size = self.config.input_size
        if not (0 <= box.x_min <= box.x_max < size and 0 <= box.y_min <= box.y_max < size):
            raise ValueError(f"box {box.as_xyxy()} outside model space [0,{size})^2")
        coords = torch.tensor(box.as_xyxy(), dtype=torch.float32, device=self.device)
        with torch.no_grad():
            tokens = self.prompt_encoder(coords)
        if tuple(tokens.shape) != (2, self.config.embedding_channels):
            raise RuntimeError(f"prompt encoder produced {tuple(tokens.shape)}")
        return PromptEmbedding(tokens)

    def decode(self, image_emb: ImageEmbedding, prompt_emb: PromptEmbedding) -> MaskPrediction:
        """Runs in the caller's grad context so the decoder can be trained."""
        grid = self.config.embedding_grid
        if tuple(image_emb.features.shape) != (self.config.embedding_channels, grid, grid):
            raise ValueError(f"bad image embedding shape {tuple(image_emb.features.shape)}")
        if tuple(prompt_emb.tokens.shape) != (2, self.config.embedding_channels):
            raise ValueError(f"bad prompt embedding shape {tuple(prompt_emb.tokens.shape)}")
        logits, iou_scores = self.mask_decoder(image_emb.features, prompt_emb.tokens)
        probs = torch.sigmoid(logits[0])
        upsampled = torch.nn.functional.interpolate(
            probs.unsqueeze(0).unsqueeze(0),
            size=(self.config.input_size, self.config.input_size),
            mode="bilinear",
            align_corners=False,
        )[0, 0]
        return MaskPrediction(logits=logits, iou_scores=iou_scores, upsampled=upsampled)

    # -- parameters ---------------------------------------------------------

    def parameter_counts(self) -> dict[str, int]:
        return {
            name: sum(p.numel() for p in self.component(name).parameters())
            for name in COMPONENTS
        }

    def named_trainable_parameters(
        self, policy: FreezePolicy | None = None
    ) -> dict[str, nn.Parameter]:
        policy = policy or self.freeze
        out: dict[str, nn.Parameter] = {}
        for component in COMPONENTS:
            if policy.trainable(component):
                for name, param in self.component(component).named_parameters():
                    out[f"{component}.{name}"] = param
        return out

    def state_dict(self) -> dict[str, torch.Tensor]:
        out = {}
        for component in COMPONENTS:
            for name, tensor in self.component(component).state_dict().items():
                out[f"{component}.{name}"] = tensor
        return out

    def load_state_dict(self, state: dict[str, torch.Tensor]) -> None:
        own = self.state_dict()
        for name, tensor in own.items():
            if name not in state:
                raise ValueError(f"checkpoint missing parameter {name}")
            if tuple(state[name].shape) != tuple(tensor.shape):
                raise ValueError(
                    f"shape mismatch at {name}: checkpoint {tuple(state[name].shape)} "
                    f"vs model {tuple(tensor.shape)}"
                )
        unexpected = sorted(set(state) - set(own))
        if unexpected:
            raise ValueError(f"unexpected checkpoint parameter {unexpected[0]}")
        for component in COMPONENTS:
            prefix = f"{component}."
            sub = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
            self.component(component).load_state_dict(sub, strict=True)

    def component_hash(self, component: str) -> str:
        digest = hashlib.sha256()
        module = self.component(component)
        for name, tensor in sorted(module.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()

    def config_hash(self) -> str:
        return self.config.config_hash()

    # -- persistence --------------------------------------------------------

    def save_artifact(self, path, extra: dict | None = None) -> None:
        """Versioned checkpoint: header (config hash) + named parameter blocks."""
        payload = {
            ARTIFACT_KEY: 1,
            "kind": self.kind,
            "config": asdict(self.config),
            "config_hash": self.config_hash(),
            "state": self.state_dict(),
        }
        if getattr(self, "variant", None):
            payload["variant"] = self.variant
        if extra:
            payload["extra"] = extra
        torch.save(payload, path)

    def flop_layers(self, batch_size: int = 1) -> list[dict]:
        raise NotImplementedError


def trainable_parameters(bundle: BackboneBundle, policy: FreezePolicy) -> dict[str, nn.Parameter]:
    """Parameter-set descriptor selected by the freeze policy."""
    return bundle.named_trainable_parameters(policy)


def load_backbone(
    checkpoint: str, config: BackboneConfig | None = None, seed: int = 0
) -> BackboneBundle:
    """Build a bundle from "surrogate", a published checkpoint, or an artifact."""
    from .surrogate import build_surrogate
    from .sam import build_sam_backbone, detect_variant

    if checkpoint == "surrogate":
        return build_surrogate(config, seed=seed)
    try:
        payload = torch.load(checkpoint, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ValueError(f"unreadable checkpoint {checkpoint}: {exc}") from exc
    if isinstance(payload, dict) and payload.get(ARTIFACT_KEY) == 1:
        stored = BackboneConfig(**{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in payload["config"].items()
        })
        if config is not None and config != stored:
            raise ValueError(
                f"artifact config hash {payload['config_hash']} does not match the requested config"
            )
        if payload["kind"] == "surrogate":
            bundle = build_surrogate(stored, seed=seed)
        else:
            bundle = build_sam_backbone(payload["variant"], stored)
        bundle.load_state_dict(payload["state"])
        return bundle
    if not isinstance(payload, dict):
        raise ValueError(f"unreadable checkpoint {checkpoint}: not a parameter dict")
    variant = detect_variant(payload)
    bundle = build_sam_backbone(variant, config or BackboneConfig())
    bundle.load_state_dict(payload)
    return bundle
