"""Tiny CPU-trainable backbone with the same I/O contract as the real one.

A 3-block strided convolutional encoder down to (channels, grid, grid), a
positional-encoding + linear prompt encoder to (2, channels), and a
2-block cross-attention decoder. Under the default 256-channel config the
whole bundle holds 788,147 parameters (the analytic count is pinned in
tests), small enough to overfit a toy dataset on a CPU in minutes.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .base import BackboneBundle, BackboneConfig

ATTN_DIM = 64
ATTN_HEADS = 4
MLP_DIM = 128
UPSCALE_MID = 64
UPSCALE_OUT = 32
IOU_HIDDEN = 64

# strided conv plan per supported downsample factor
_STRIDE_PLANS = {16: (4, 2, 2), 8: (4, 2, 1), 4: (2, 2, 1)}


class FourierPositions(nn.Module):
    """Frozen random Fourier features for normalized [0,1] coordinates."""

    def __init__(self, channels: int, seed: int = 0) -> None:
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.register_buffer("gauss", torch.randn((2, channels // 2), generator=gen))

    def encode(self, coords01: torch.Tensor) -> torch.Tensor:
        projected = (2.0 * coords01 - 1.0) @ self.gauss * (2.0 * math.pi)
        return torch.cat([torch.sin(projected), torch.cos(projected)], dim=-1)

    def encode_grid(self, grid: int) -> torch.Tensor:
        centers = (torch.arange(grid, dtype=torch.float32) + 0.5) / grid
        ys, xs = torch.meshgrid(centers, centers, indexing="ij")
        return self.encode(torch.stack([xs, ys], dim=-1))  # (grid, grid, C)


class ConvEncoder(nn.Module):
    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        if config.downsample_factor not in _STRIDE_PLANS:
            raise ValueError(f"surrogate supports downsample factors {sorted(_STRIDE_PLANS)}")
        s1, s2, s3 = _STRIDE_PLANS[config.downsample_factor]
        self.conv1 = nn.Conv2d(3, 16, kernel_size=s1, stride=s1)
        self.conv2 = nn.Conv2d(16, 32, kernel_size=4 if s2 > 1 else 3, stride=s2, padding=1)
        self.conv3 = nn.Conv2d(
            32, config.embedding_channels, kernel_size=4 if s3 > 1 else 3, stride=s3, padding=1
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = torch.relu(self.conv1(image))
        x = torch.relu(self.conv2(x))
        return self.conv3(x)


class SurrogatePromptEncoder(nn.Module):
    """Positional encoding of the two box corners plus learned corner types."""

    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        channels = config.embedding_channels
        self.input_size = config.input_size
        self.positions = FourierPositions(channels, seed=1)
        self.corner_type = nn.Embedding(2, channels)
        self.project = nn.Linear(channels, channels)

    def forward(self, box_xyxy: torch.Tensor) -> torch.Tensor:
        corners = box_xyxy.reshape(2, 2)  # [(x_min,y_min), (x_max,y_max)]
        normalized = (corners + 0.5) / self.input_size
        tokens = self.positions.encode(normalized) + self.corner_type.weight
        return self.project(tokens)


class SmallAttention(nn.Module):
    def __init__(self, channels: int) -> None:
        super().__init__()
        self.q_proj = nn.Linear(channels, ATTN_DIM)
        self.k_proj = nn.Linear(channels, ATTN_DIM)
        self.v_proj = nn.Linear(channels, ATTN_DIM)
        self.out_proj = nn.Linear(ATTN_DIM, channels)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        head_dim = ATTN_DIM // ATTN_HEADS

        def split(x: torch.Tensor) -> torch.Tensor:
            return x.reshape(x.shape[0], ATTN_HEADS, head_dim).transpose(0, 1)

        qh, kh, vh = split(self.q_proj(q)), split(self.k_proj(k)), split(self.v_proj(v))
        scores = qh @ kh.transpose(-2, -1) / math.sqrt(head_dim)
        out = torch.softmax(scores, dim=-1) @ vh
        return self.out_proj(out.transpose(0, 1).reshape(q.shape[0], ATTN_DIM))


class DecoderBlock(nn.Module):
    def __init__(self, channels: int) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(channels)
        self.self_attn = SmallAttention(channels)
        self.norm2 = nn.LayerNorm(channels)
        self.cross_attn = SmallAttention(channels)
        self.norm3 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Linear(channels, MLP_DIM), nn.ReLU(), nn.Linear(MLP_DIM, channels)
        )

    def forward(self, tokens: torch.Tensor, keys: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
        t = self.norm1(tokens)
        tokens = tokens + self.self_attn(t, t, t)
        tokens = tokens + self.cross_attn(self.norm2(tokens), keys, values)
        return tokens + self.mlp(self.norm3(tokens))


class SurrogateMaskDecoder(nn.Module):
    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        channels = config.embedding_channels
        self.num_outputs = config.num_mask_outputs
        self.iou_token = nn.Embedding(1, channels)
        self.mask_tokens = nn.Embedding(self.num_outputs, channels)
        self.positions = FourierPositions(channels, seed=2)
        self.blocks = nn.ModuleList([DecoderBlock(channels) for _ in range(2)])
        self.final_attn = SmallAttention(channels)
        self.final_norm = nn.LayerNorm(channels)
        self.up1 = nn.ConvTranspose2d(channels, UPSCALE_MID, kernel_size=2, stride=2)
        self.up2 = nn.ConvTranspose2d(UPSCALE_MID, UPSCALE_OUT, kernel_size=2, stride=2)
        self.hyper = nn.ModuleList(
            [nn.Linear(channels, UPSCALE_OUT) for _ in range(self.num_outputs)]
        )
        self.iou_head = nn.Sequential(
            nn.Linear(channels, IOU_HIDDEN), nn.ReLU(), nn.Linear(IOU_HIDDEN, self.num_outputs)
        )

    def forward(self, features: torch.Tensor, prompt: torch.Tensor):
        channels, grid = features.shape[0], features.shape[1]
        tokens = torch.cat([self.iou_token.weight, self.mask_tokens.weight, prompt], dim=0)
        values = features.reshape(channels, grid * grid).T  # (G*G, C)
        keys = values + self.positions.encode_grid(grid).reshape(grid * grid, channels)
        for block in self.blocks:
            tokens = block(tokens, keys, values)
        tokens = tokens + self.final_attn(tokens, keys, values)
        tokens = self.final_norm(tokens)
        upscaled = self.up2(torch.relu(self.up1(features.unsqueeze(0))))[0]  # (32, 4G, 4G)
        hyper_in = torch.stack(
            [self.hyper[i](tokens[1 + i]) for i in range(self.num_outputs)]
        )
        logits = torch.einsum("tc,chw->thw", hyper_in, upscaled)
        iou_scores = torch.sigmoid(self.iou_head(tokens[0]))
        return logits, iou_scores


class SurrogateBundle(BackboneBundle):
    variant = None

    def flop_layers(self, batch_size: int = 1) -> list[dict]:
        cfg = self.config
        size, grid = cfg.input_size, cfg.embedding_grid
        channels = cfg.embedding_channels
        s1, s2, s3 = _STRIDE_PLANS[cfg.downsample_factor]
        d1, d2 = size // s1, size // (s1 * s2)
        layers: list[dict] = [
            {"name": "encoder.conv1", "kind": "conv", "k": s1, "cin": 3, "cout": 16,
             "hout": d1, "wout": d1},
            {"name": "encoder.conv2", "kind": "conv", "k": 4 if s2 > 1 else 3, "cin": 16,
             "cout": 32, "hout": d2, "wout": d2},
            {"name": "encoder.conv3", "kind": "conv", "k": 4 if s3 > 1 else 3, "cin": 32,
             "cout": channels, "hout": grid, "wout": grid},
            {"name": "prompt.positions", "kind": "linear", "fin": 2,
             "fout": channels // 2, "count": 2},
            {"name": "prompt.project", "kind": "linear", "fin": channels,
             "fout": channels, "count": 2},
        ]
        n_tokens = 1 + cfg.num_mask_outputs + 2
        n_keys = grid * grid
        for b in range(2):
            layers += _attention_layers(f"decoder.block{b}.self_attn", channels,
                                        n_tokens, n_tokens)
            layers += _attention_layers(f"decoder.block{b}.cross_attn", channels,
                                        n_tokens, n_keys)
            layers += [
                {"name": f"decoder.block{b}.mlp.0", "kind": "linear", "fin": channels,
                 "fout": MLP_DIM, "count": n_tokens},
                {"name": f"decoder.block{b}.mlp.1", "kind": "linear", "fin": MLP_DIM,
                 "fout": channels, "count": n_tokens},
            ]
        layers += _attention_layers("decoder.final_attn", channels, n_tokens, n_keys)
        layers += [
            {"name": "decoder.up1", "kind": "conv", "k": 2, "cin": channels,
             "cout": UPSCALE_MID, "hout": 2 * grid, "wout": 2 * grid},
            {"name": "decoder.up2", "kind": "conv", "k": 2, "cin": UPSCALE_MID,
             "cout": UPSCALE_OUT, "hout": 4 * grid, "wout": 4 * grid},
            {"name": "decoder.hyper", "kind": "linear", "fin": channels,
             "fout": UPSCALE_OUT, "count": cfg.num_mask_outputs},
            {"name": "decoder.mask_product", "kind": "linear", "fin": UPSCALE_OUT,
             "fout": cfg.num_mask_outputs, "count": 16 * grid * grid},
            {"name": "decoder.iou_head.0", "kind": "linear", "fin": channels,
             "fout": IOU_HIDDEN, "count": 1},
            {"name": "decoder.iou_head.1", "kind": "linear", "fin": IOU_HIDDEN,
             "fout": cfg.num_mask_outputs, "count": 1},
        ]
        for layer in layers:
            layer["batch"] = batch_size
        return layers


def _attention_layers(name: str, channels: int, n_q: int, n_k: int) -> list[dict]:
    return [
        {"name": f"{name}.q", "kind": "linear", "fin": channels, "fout": ATTN_DIM, "count": n_q},
        {"name": f"{name}.k", "kind": "linear", "fin": channels, "fout": ATTN_DIM, "count": n_k},
        {"name": f"{name}.v", "kind": "linear", "fin": channels, "fout": ATTN_DIM, "count": n_k},
        {"name": f"{name}.attn", "kind": "attention", "n_q": n_q, "n_k": n_k, "dim": ATTN_DIM},
        {"name": f"{name}.out", "kind": "linear", "fin": ATTN_DIM, "fout": channels, "count": n_q},
    ]


def surrogate_config(input_size: int = 1024, downsample_factor: int = 16) -> BackboneConfig:
    """Backbone config with the surrogate's symmetric pixel normalization."""
    return BackboneConfig(
        input_size=input_size,
        downsample_factor=downsample_factor,
        pixel_mean=(127.5, 127.5, 127.5),
        pixel_std=(127.5, 127.5, 127.5),
    )


def build_surrogate(config: BackboneConfig | None = None, seed: int = 0) -> SurrogateBundle:
    """Deterministically initialized surrogate bundle (< 1M parameters)."""
    config = config or surrogate_config()
    torch.manual_seed(seed)
    return SurrogateBundle(
        kind="surrogate",
        config=config,
        image_encoder=ConvEncoder(config),
        prompt_encoder=SurrogatePromptEncoder(config),
        mask_decoder=SurrogateMaskDecoder(config),
    )
