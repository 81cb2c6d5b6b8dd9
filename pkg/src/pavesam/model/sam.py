"""Real promptable-segmenter backbone, loadable from published checkpoints.

Module and parameter names follow the released pretrained weight format
(`image_encoder.*`, `prompt_encoder.*`, `mask_decoder.*`) so the official
vit_b / vit_l / vit_h state dicts load directly. Only the box prompt path
is exercised; the mask-prompt machinery exists solely so checkpoints load
strictly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .base import BackboneBundle, BackboneConfig


@dataclass(frozen=True)
class VitSpec:
    embed_dim: int
    depth: int
    num_heads: int
    global_attn_indexes: tuple[int, ...]
    window_size: int = 14
    patch_size: int = 16


VIT_SPECS = {
    "vit_b": VitSpec(768, 12, 12, (2, 5, 8, 11)),
    "vit_l": VitSpec(1024, 24, 16, (5, 11, 17, 23)),
    "vit_h": VitSpec(1280, 32, 16, (7, 15, 23, 31)),
}


def detect_variant(state: dict[str, torch.Tensor]) -> str:
    key = "image_encoder.patch_embed.proj.weight"
    if key not in state:
        raise ValueError(f"not a recognized pretrained checkpoint: missing {key}")
    embed_dim = state[key].shape[0]
    for name, spec in VIT_SPECS.items():
        if spec.embed_dim == embed_dim:
            return name
    raise ValueError(f"unrecognized encoder width {embed_dim}")


class LayerNorm2d(nn.Module):
    def __init__(self, num_channels: int, eps: float = 1e-6) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.ones(num_channels))
        self.bias = nn.Parameter(torch.zeros(num_channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(1, keepdim=True)
        var = (x - mean).pow(2).mean(1, keepdim=True)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class MLPBlock(nn.Module):
    def __init__(self, embedding_dim: int, mlp_dim: int) -> None:
        super().__init__()
        self.lin1 = nn.Linear(embedding_dim, mlp_dim)
        self.lin2 = nn.Linear(mlp_dim, embedding_dim)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.act(self.lin1(x)))


# ---------------------------------------------------------------------------
# Image encoder (ViT with windowed attention and decomposed relative positions)


def get_rel_pos(q_size: int, k_size: int, rel_pos: torch.Tensor) -> torch.Tensor:
    max_rel_dist = 2 * max(q_size, k_size) - 1
    if rel_pos.shape[0] != max_rel_dist:
        resized = F.interpolate(
            rel_pos.reshape(1, rel_pos.shape[0], -1).permute(0, 2, 1),
            size=max_rel_dist,
            mode="linear",
        )
        rel_pos = resized.reshape(-1, max_rel_dist).permute(1, 0)
    q_coords = torch.arange(q_size)[:, None] * max(k_size / q_size, 1.0)
    k_coords = torch.arange(k_size)[None, :] * max(q_size / k_size, 1.0)
    relative = (q_coords - k_coords) + (k_size - 1) * max(q_size / k_size, 1.0)
    return rel_pos[relative.long()]


def add_decomposed_rel_pos(attn, q, rel_pos_h, rel_pos_w, q_size, k_size):
    q_h, q_w = q_size
    k_h, k_w = k_size
    rh = get_rel_pos(q_h, k_h, rel_pos_h)
    rw = get_rel_pos(q_w, k_w, rel_pos_w)
    batch, _, dim = q.shape
    r_q = q.reshape(batch, q_h, q_w, dim)
    rel_h = torch.einsum("bhwc,hkc->bhwk", r_q, rh)
    rel_w = torch.einsum("bhwc,wkc->bhwk", r_q, rw)
    attn = (
        attn.view(batch, q_h, q_w, k_h, k_w)
        + rel_h[:, :, :, :, None]
        + rel_w[:, :, :, None, :]
    )
    return attn.view(batch, q_h * q_w, k_h * k_w)


def window_partition(x: torch.Tensor, window: int):
    b, h, w, c = x.shape
    pad_h = (window - h % window) % window
    pad_w = (window - w % window) % window
    if pad_h or pad_w:
        x = F.pad(x, (0, 0, 0, pad_w, 0, pad_h))
    hp, wp = h + pad_h, w + pad_w
    x = x.view(b, hp // window, window, wp // window, window, c)
    windows = x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window, window, c)
    return windows, (hp, wp)


def window_unpartition(windows, window: int, pad_hw, hw):
    hp, wp = pad_hw
    h, w = hw
    b = windows.shape[0] // (hp * wp // window // window)
    x = windows.view(b, hp // window, wp // window, window, window, -1)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, hp, wp, -1)
    return x[:, :h, :w, :].contiguous()


class VitAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int, input_size: tuple[int, int]) -> None:
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)
        head_dim = dim // num_heads
        self.rel_pos_h = nn.Parameter(torch.zeros(2 * input_size[0] - 1, head_dim))
        self.rel_pos_w = nn.Parameter(torch.zeros(2 * input_size[1] - 1, head_dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, _ = x.shape
        qkv = self.qkv(x).reshape(b, h * w, 3, self.num_heads, -1).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.reshape(3, b * self.num_heads, h * w, -1).unbind(0)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        attn = add_decomposed_rel_pos(attn, q, self.rel_pos_h, self.rel_pos_w, (h, w), (h, w))
        attn = attn.softmax(dim=-1)
        x = (attn @ v).view(b, self.num_heads, h, w, -1)
        x = x.permute(0, 2, 3, 1, 4).reshape(b, h, w, -1)
        return self.proj(x)


class VitBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, window_size: int, grid: int) -> None:
        super().__init__()
        self.window_size = window_size
        attn_size = window_size if window_size > 0 else grid
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = VitAttention(dim, num_heads, (attn_size, attn_size))
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = MLPBlock(dim, dim * 4)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shortcut = x
        x = self.norm1(x)
        if self.window_size > 0:
            h, w = x.shape[1], x.shape[2]
            x, pad_hw = window_partition(x, self.window_size)
        x = self.attn(x)
        if self.window_size > 0:
            x = window_unpartition(x, self.window_size, pad_hw, (h, w))
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class ImageEncoderViT(nn.Module):
    def __init__(self, spec: VitSpec, config: BackboneConfig) -> None:
        super().__init__()
        grid = config.input_size // spec.patch_size
        self.patch_embed = nn.ModuleDict(
            {"proj": nn.Conv2d(3, spec.embed_dim, kernel_size=spec.patch_size,
                               stride=spec.patch_size)}
        )
        self.pos_embed = nn.Parameter(torch.zeros(1, grid, grid, spec.embed_dim))
        self.blocks = nn.ModuleList(
            [
                VitBlock(
                    spec.embed_dim,
                    spec.num_heads,
                    0 if i in spec.global_attn_indexes else spec.window_size,
                    grid,
                )
                for i in range(spec.depth)
            ]
        )
        out = config.embedding_channels
        self.neck = nn.Sequential(
            nn.Conv2d(spec.embed_dim, out, kernel_size=1, bias=False),
            LayerNorm2d(out),
            nn.Conv2d(out, out, kernel_size=3, padding=1, bias=False),
            LayerNorm2d(out),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.patch_embed["proj"](x).permute(0, 2, 3, 1)
        x = x + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.neck(x.permute(0, 3, 1, 2))


# ---------------------------------------------------------------------------
# Prompt encoder (box corners only; mask path present for checkpoint parity)


class PositionEmbeddingRandom(nn.Module):
    def __init__(self, num_pos_feats: int = 128) -> None:
        super().__init__()
        self.register_buffer(
            "positional_encoding_gaussian_matrix", torch.randn((2, num_pos_feats))
        )

    def _encode(self, coords: torch.Tensor) -> torch.Tensor:
        coords = 2 * coords - 1
        coords = coords @ self.positional_encoding_gaussian_matrix
        coords = 2 * math.pi * coords
        return torch.cat([torch.sin(coords), torch.cos(coords)], dim=-1)

    def forward(self, size: tuple[int, int]) -> torch.Tensor:
        h, w = size
        device = self.positional_encoding_gaussian_matrix.device
        grid = torch.ones((h, w), device=device, dtype=torch.float32)
        y_embed = (grid.cumsum(dim=0) - 0.5) / h
        x_embed = (grid.cumsum(dim=1) - 0.5) / w
        pe = self._encode(torch.stack([x_embed, y_embed], dim=-1))
        return pe.permute(2, 0, 1)

    def forward_with_coords(self, coords: torch.Tensor, image_size: tuple[int, int]):
        coords = coords.clone()
        coords[..., 0] = coords[..., 0] / image_size[1]
        coords[..., 1] = coords[..., 1] / image_size[0]
        return self._encode(coords.to(torch.float32))


class SamPromptEncoder(nn.Module):
    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        embed_dim = config.embedding_channels
        self.input_size = config.input_size
        self.grid = config.embedding_grid
        self.pe_layer = PositionEmbeddingRandom(embed_dim // 2)
        # 4 point types: negative, positive, box top-left, box bottom-right
        self.point_embeddings = nn.ModuleList(
            [nn.Embedding(1, embed_dim) for _ in range(4)]
        )
        self.not_a_point_embed = nn.Embedding(1, embed_dim)
        mask_in_chans = 16
        self.mask_downscaling = nn.Sequential(
            nn.Conv2d(1, mask_in_chans // 4, kernel_size=2, stride=2),
            LayerNorm2d(mask_in_chans // 4),
            nn.GELU(),
            nn.Conv2d(mask_in_chans // 4, mask_in_chans, kernel_size=2, stride=2),
            LayerNorm2d(mask_in_chans),
            nn.GELU(),
            nn.Conv2d(mask_in_chans, embed_dim, kernel_size=1),
        )
        self.no_mask_embed = nn.Embedding(1, embed_dim)

    def get_dense_pe(self) -> torch.Tensor:
        return self.pe_layer((self.grid, self.grid)).unsqueeze(0)

    def forward(self, box_xyxy: torch.Tensor) -> torch.Tensor:
        coords = box_xyxy.reshape(2, 2) + 0.5
        corner_embedding = self.pe_layer.forward_with_coords(
            coords, (self.input_size, self.input_size)
        )
        corner_embedding[0] += self.point_embeddings[2].weight[0]
        corner_embedding[1] += self.point_embeddings[3].weight[0]
        return corner_embedding


# ---------------------------------------------------------------------------
# Mask decoder (two-way transformer)


class Attention(nn.Module):
    def __init__(self, embedding_dim: int, num_heads: int, downsample_rate: int = 1) -> None:
        super().__init__()
        self.internal_dim = embedding_dim // downsample_rate
        self.num_heads = num_heads
        self.q_proj = nn.Linear(embedding_dim, self.internal_dim)
        self.k_proj = nn.Linear(embedding_dim, self.internal_dim)
        self.v_proj = nn.Linear(embedding_dim, self.internal_dim)
        self.out_proj = nn.Linear(self.internal_dim, embedding_dim)

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        return x.reshape(b, n, self.num_heads, c // self.num_heads).transpose(1, 2)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        q, k, v = self._heads(self.q_proj(q)), self._heads(self.k_proj(k)), self._heads(self.v_proj(v))
        attn = q @ k.permute(0, 1, 3, 2) / math.sqrt(q.shape[-1])
        out = (torch.softmax(attn, dim=-1) @ v).transpose(1, 2)
        return self.out_proj(out.reshape(out.shape[0], out.shape[1], -1))


class TwoWayAttentionBlock(nn.Module):
    def __init__(self, embedding_dim: int, num_heads: int, mlp_dim: int,
                 skip_first_layer_pe: bool) -> None:
        super().__init__()
        self.self_attn = Attention(embedding_dim, num_heads)
        self.norm1 = nn.LayerNorm(embedding_dim)
        self.cross_attn_token_to_image = Attention(embedding_dim, num_heads, downsample_rate=2)
        self.norm2 = nn.LayerNorm(embedding_dim)
        self.mlp = MLPBlock(embedding_dim, mlp_dim)
        self.norm3 = nn.LayerNorm(embedding_dim)
        self.norm4 = nn.LayerNorm(embedding_dim)
        self.cross_attn_image_to_token = Attention(embedding_dim, num_heads, downsample_rate=2)
        self.skip_first_layer_pe = skip_first_layer_pe

    def forward(self, queries, keys, query_pe, key_pe):
        if self.skip_first_layer_pe:
            queries = self.self_attn(queries, queries, queries)
        else:
            q = queries + query_pe
            queries = queries + self.self_attn(q, q, queries)
        queries = self.norm1(queries)
        q = queries + query_pe
        k = keys + key_pe
        queries = queries + self.cross_attn_token_to_image(q, k, keys)
        queries = self.norm2(queries)
        queries = queries + self.mlp(queries)
        queries = self.norm3(queries)
        q = queries + query_pe
        k = keys + key_pe
        keys = keys + self.cross_attn_image_to_token(k, q, queries)
        keys = self.norm4(keys)
        return queries, keys


class TwoWayTransformer(nn.Module):
    def __init__(self, depth: int, embedding_dim: int, num_heads: int, mlp_dim: int) -> None:
        super().__init__()
        self.layers = nn.ModuleList(
            [
                TwoWayAttentionBlock(embedding_dim, num_heads, mlp_dim,
                                     skip_first_layer_pe=(i == 0))
                for i in range(depth)
            ]
        )
        self.final_attn_token_to_image = Attention(embedding_dim, num_heads, downsample_rate=2)
        self.norm_final_attn = nn.LayerNorm(embedding_dim)

    def forward(self, image_embedding, image_pe, point_embedding):
        b, c, h, w = image_embedding.shape
        keys = image_embedding.flatten(2).permute(0, 2, 1)
        key_pe = image_pe.flatten(2).permute(0, 2, 1)
        queries = point_embedding
        for layer in self.layers:
            queries, keys = layer(queries, keys, point_embedding, key_pe)
        q = queries + point_embedding
        k = keys + key_pe
        queries = queries + self.final_attn_token_to_image(q, k, keys)
        return self.norm_final_attn(queries), keys


class MLP(nn.Module):
    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int, num_layers: int) -> None:
        super().__init__()
        dims = [input_dim] + [hidden_dim] * (num_layers - 1)
        self.layers = nn.ModuleList(
            nn.Linear(a, b) for a, b in zip(dims, dims[1:] + [output_dim])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = F.relu(layer(x)) if i < len(self.layers) - 1 else layer(x)
        return x


class SamMaskDecoder(nn.Module):
    """Exposes outputs ordered [single-mask token, first two multimask tokens]."""

    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        dim = config.embedding_channels
        self.num_multimask = 3
        self.num_exposed = config.num_mask_outputs
        self.grid = config.embedding_grid
        self.transformer = TwoWayTransformer(depth=2, embedding_dim=dim, num_heads=8,
                                             mlp_dim=2048)
        self.iou_token = nn.Embedding(1, dim)
        self.num_mask_tokens = self.num_multimask + 1
        self.mask_tokens = nn.Embedding(self.num_mask_tokens, dim)
        self.output_upscaling = nn.Sequential(
            nn.ConvTranspose2d(dim, dim // 4, kernel_size=2, stride=2),
            LayerNorm2d(dim // 4),
            nn.GELU(),
            nn.ConvTranspose2d(dim // 4, dim // 8, kernel_size=2, stride=2),
            nn.GELU(),
        )
        self.output_hypernetworks_mlps = nn.ModuleList(
            [MLP(dim, dim, dim // 8, 3) for _ in range(self.num_mask_tokens)]
        )
        self.iou_prediction_head = MLP(dim, 256, self.num_mask_tokens, 3)
        self._pe_provider = None  # plain callable; reads the prompt encoder's buffer

    def set_pe_provider(self, provider) -> None:
        self._pe_provider = provider

    def forward(self, features: torch.Tensor, prompt: torch.Tensor):
        if self._pe_provider is None:
            raise RuntimeError("decoder image positional encoding not set")
        output_tokens = torch.cat([self.iou_token.weight, self.mask_tokens.weight], dim=0)
        tokens = torch.cat([output_tokens, prompt], dim=0).unsqueeze(0)
        src = features.unsqueeze(0)
        hs, src_out = self.transformer(src, self._pe_provider(), tokens)
        iou_token_out = hs[0, 0]
        mask_tokens_out = hs[0, 1: 1 + self.num_mask_tokens]
        src_img = src_out.transpose(1, 2).reshape(1, -1, self.grid, self.grid)
        upscaled = self.output_upscaling(src_img)[0]
        hyper_in = torch.stack(
            [
                self.output_hypernetworks_mlps[i](mask_tokens_out[i])
                for i in range(self.num_mask_tokens)
            ]
        )
        masks = torch.einsum("tc,chw->thw", hyper_in, upscaled)
        iou_pred = self.iou_prediction_head(iou_token_out)
        # token 0 is the unambiguous single-mask output for a box prompt
        return masks[: self.num_exposed], torch.clamp(iou_pred[: self.num_exposed], 0.0, 1.0)


class SamBackbone(BackboneBundle):
    def __init__(self, variant: str, config: BackboneConfig) -> None:
        spec = VIT_SPECS[variant]
        prompt_encoder = SamPromptEncoder(config)
        decoder = SamMaskDecoder(config)
        super().__init__(
            kind="sam",
            config=config,
            image_encoder=ImageEncoderViT(spec, config),
            prompt_encoder=prompt_encoder,
            mask_decoder=decoder,
        )
        self.variant = variant
        self.spec = spec
        decoder.set_pe_provider(prompt_encoder.get_dense_pe)

    def flop_layers(self, batch_size: int = 1) -> list[dict]:
        cfg, spec = self.config, self.spec
        grid = cfg.input_size // spec.patch_size
        dim = spec.embed_dim
        layers: list[dict] = [
            {"name": "encoder.patch_embed", "kind": "conv", "k": spec.patch_size,
             "cin": 3, "cout": dim, "hout": grid, "wout": grid},
        ]
        window = spec.window_size
        padded = math.ceil(grid / window) * window
        n_windows = (padded // window) ** 2
        for i in range(spec.depth):
            global_attn = i in spec.global_attn_indexes
            tokens = grid * grid if global_attn else n_windows * window * window
            n_attn = grid * grid if global_attn else window * window
            reps = 1 if global_attn else n_windows
            layers += [
                {"name": f"encoder.block{i}.qkv", "kind": "linear", "fin": dim,
                 "fout": 3 * dim, "count": tokens},
                {"name": f"encoder.block{i}.attn", "kind": "attention", "n_q": n_attn,
                 "n_k": n_attn, "dim": dim, "reps": reps},
                {"name": f"encoder.block{i}.proj", "kind": "linear", "fin": dim,
                 "fout": dim, "count": tokens},
                {"name": f"encoder.block{i}.mlp.lin1", "kind": "linear", "fin": dim,
                 "fout": 4 * dim, "count": grid * grid},
                {"name": f"encoder.block{i}.mlp.lin2", "kind": "linear", "fin": 4 * dim,
                 "fout": dim, "count": grid * grid},
            ]
        out = cfg.embedding_channels
        layers += [
            {"name": "encoder.neck.0", "kind": "conv", "k": 1, "cin": dim, "cout": out,
             "hout": grid, "wout": grid},
            {"name": "encoder.neck.2", "kind": "conv", "k": 3, "cin": out, "cout": out,
             "hout": grid, "wout": grid},
            {"name": "prompt.pe", "kind": "linear", "fin": 2, "fout": out // 2, "count": 2},
        ]
        n_tokens = 1 + self.mask_decoder.num_mask_tokens + 2
        n_keys = cfg.embedding_grid**2
        half = out // 2
        for b in range(2):
            base = f"decoder.layer{b}"
            layers += _sam_attention(f"{base}.self_attn", out, out, n_tokens, n_tokens)
            layers += _sam_attention(f"{base}.cross_t2i", out, half, n_tokens, n_keys)
            layers += [
                {"name": f"{base}.mlp.lin1", "kind": "linear", "fin": out, "fout": 2048,
                 "count": n_tokens},
                {"name": f"{base}.mlp.lin2", "kind": "linear", "fin": 2048, "fout": out,
                 "count": n_tokens},
            ]
            layers += _sam_attention(f"{base}.cross_i2t", out, half, n_keys, n_tokens)
        layers += _sam_attention("decoder.final_attn", out, half, n_tokens, n_keys)
        g2, g4 = 2 * cfg.embedding_grid, 4 * cfg.embedding_grid
        n_masks = self.mask_decoder.num_mask_tokens
        layers += [
            {"name": "decoder.up1", "kind": "conv", "k": 2, "cin": out, "cout": out // 4,
             "hout": g2, "wout": g2},
            {"name": "decoder.up2", "kind": "conv", "k": 2, "cin": out // 4,
             "cout": out // 8, "hout": g4, "wout": g4},
            {"name": "decoder.hyper.0", "kind": "linear", "fin": out, "fout": out,
             "count": n_masks},
            {"name": "decoder.hyper.1", "kind": "linear", "fin": out, "fout": out,
             "count": n_masks},
            {"name": "decoder.hyper.2", "kind": "linear", "fin": out, "fout": out // 8,
             "count": n_masks},
            {"name": "decoder.mask_product", "kind": "linear", "fin": out // 8,
             "fout": n_masks, "count": g4 * g4},
            {"name": "decoder.iou_head.0", "kind": "linear", "fin": out, "fout": 256, "count": 1},
            {"name": "decoder.iou_head.1", "kind": "linear", "fin": 256, "fout": 256, "count": 1},
            {"name": "decoder.iou_head.2", "kind": "linear", "fin": 256, "fout": n_masks,
             "count": 1},
        ]
        for layer in layers:
            layer["batch"] = batch_size
        return layers


def _sam_attention(name: str, embed: int, internal: int, n_q: int, n_k: int) -> list[dict]:
    return [
        {"name": f"{name}.q", "kind": "linear", "fin": embed, "fout": internal, "count": n_q},
        {"name": f"{name}.k", "kind": "linear", "fin": embed, "fout": internal, "count": n_k},
        {"name": f"{name}.v", "kind": "linear", "fin": embed, "fout": internal, "count": n_k},
        {"name": f"{name}.attn", "kind": "attention", "n_q": n_q, "n_k": n_k, "dim": internal},
        {"name": f"{name}.out", "kind": "linear", "fin": internal, "fout": embed, "count": n_q},
    ]


def build_sam_backbone(variant: str, config: BackboneConfig | None = None) -> SamBackbone:
    if variant not in VIT_SPECS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {sorted(VIT_SPECS)}")
    return SamBackbone(variant, config or BackboneConfig())
