"""Toy multi-stream diffusion transformer.

Three token streams (text, image, video) with per-stream projections meet in
one full self-attention over the concatenated sequence, then split back by
index. Text-stream parameters are frozen; video and image streams share one
set of frozen base weights (one storage, two views) and differ only in their
LoRA adapters and input projections. The same attention core also runs the
multi-keyframe reference mode used by the keyframe try-on model, where every
keyframe's queries attend over the K/V concatenation of all keyframes plus a
parameter-sharing garment branch.

All weights are initialized from counter-based streams keyed by
(seed, parameter name), so two models built from the same config are
bit-identical regardless of module construction order.

Trainable projections (video/image inputs and the velocity head) use a
frozen-base-plus-gained-delta parameterization: W = W0 + gain * dW with dW
zero-initialized and trainable. The gain scales the reachable weight change
per optimizer step so the production learning rate (2e-5, tuned for
fine-tuning a pretrained backbone) also trains this from-scratch toy in a
few hundred steps. LoRA scale s = alpha / rank plays the same role for the
adapted attention matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import rng

STREAMS = ("text", "image", "video")


@dataclass
class ModelConfig:
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    ff_mult: int = 4
    lora_rank: int = 4
    lora_alpha: float = 64.0
    lora_ff: bool = False
    video_in_channels: int = 21
    image_in_channels: int = 8
    text_channels: int = 64
    out_channels: int = 8
    time_dim: int = 32
    proj_gain: float = 64.0
    train_projections: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.lora_rank < 0:
            raise ValueError("lora_rank must be >= 0")

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.lora_rank if self.lora_rank else 0.0


def _init_array(seed: int, name: str, shape: tuple[int, ...], std: float) -> torch.Tensor:
    # Model dtype follows torch.get_default_dtype(); tests run the
    # finite-difference gradient check in float64.
    if std == 0.0:
        return torch.zeros(shape)
    values = rng.stream("model-init", seed, name).standard_normal(shape) * std
    return torch.from_numpy(np.ascontiguousarray(values)).to(torch.get_default_dtype())


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(torch.get_default_dtype())
    array = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    return torch.from_numpy(array).to(torch.get_default_dtype())


class FrozenLinear(nn.Module):
    """Plain linear map whose parameters never train (pretrained stand-in)."""

    def __init__(self, seed: int, name: str, d_in: int, d_out: int, std: float | None = None):
        super().__init__()
        std = 1.0 / math.sqrt(d_in) if std is None else std
        self.weight = nn.Parameter(
            _init_array(seed, f"{name}.weight", (d_out, d_in), std), requires_grad=False
        )
        self.bias = nn.Parameter(torch.zeros(d_out), requires_grad=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.weight, self.bias)


class LoRAAdapter(nn.Module):
    """Low-rank delta: s * B(A(x)); B starts at zero so the delta is identity."""

    def __init__(self, seed: int, name: str, d_in: int, d_out: int, rank: int, scale: float):
        super().__init__()
        if rank < 1:
            raise ValueError("adapter rank must be >= 1")
        self.rank = rank
        self.scale = scale
        self.down = nn.Parameter(
            _init_array(seed, f"{name}.down", (d_in, rank), 1.0 / math.sqrt(d_in))
        )
        self.up = nn.Parameter(torch.zeros(rank, d_out))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x @ self.down) @ self.up * self.scale


class LoRALinear(nn.Module):
    """Frozen base linear plus an optional LoRA adapter."""

    def __init__(self, base: FrozenLinear, adapter: LoRAAdapter | None):
        super().__init__()
        self.base = base
        self.adapter = adapter

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.base(x)
        if self.adapter is not None:
            out = out + self.adapter(x)
        return out


def lora_linear(x, base_weights: FrozenLinear, adapter: LoRAAdapter | None):
    """base(x) + s * B(A(x)); accepts numpy or torch input."""
    return LoRALinear(base_weights, adapter)(as_tensor(x))


class DeltaLinear(nn.Module):
    """Trainable projection as frozen base + gained zero-init delta."""

    def __init__(
        self,
        seed: int,
        name: str,
        d_in: int,
        d_out: int,
        gain: float,
        trainable: bool,
        zero_base: bool = False,
    ):
        super().__init__()
        self.gain = gain
        std = 0.0 if zero_base else 1.0 / math.sqrt(d_in)
        self.w0 = nn.Parameter(
            _init_array(seed, f"{name}.w0", (d_out, d_in), std), requires_grad=False
        )
        self.b0 = nn.Parameter(torch.zeros(d_out), requires_grad=False)
        self.delta = nn.Parameter(torch.zeros(d_out, d_in), requires_grad=trainable)
        self.delta_bias = nn.Parameter(torch.zeros(d_out), requires_grad=trainable)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.w0 + self.gain * self.delta, self.b0 + self.gain * self.delta_bias)


def sinusoidal_embedding(positions: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Standard sin/cos features of shape (..., dim) for real positions."""
    half = dim // 2
    dtype = torch.get_default_dtype()
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=dtype) / max(half, 1)
    )
    args = positions[..., None].to(dtype) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def timestep_embedding(tau: float, dim: int) -> torch.Tensor:
    # The flow time lives in [0, 1]; scale up so the embedding resolves it.
    return sinusoidal_embedding(torch.tensor([tau * 1000.0]), dim)[0]


def positional_encoding_1d(length: int, dim: int) -> torch.Tensor:
    return sinusoidal_embedding(torch.arange(length, dtype=torch.get_default_dtype()), dim)


def positional_encoding_3d(index_map: np.ndarray, dim: int) -> torch.Tensor:
    """Additive encoding of (t, h, w) coordinates, one third of dim per axis."""
    index_map = as_tensor(np.asarray(index_map, dtype=np.float64))
    if index_map.numel() == 0:
        return torch.zeros(0, dim)
    axis_dims = [dim - 2 * (dim // 3), dim // 3, dim // 3]
    parts = [
        sinusoidal_embedding(index_map[:, axis], axis_dims[axis])
        for axis in range(3)
    ]
    return torch.cat(parts, dim=-1)


@dataclass
class JointBatch:
    """Per-stream hidden states; concat/demux are exact inverses."""

    text: torch.Tensor
    image: torch.Tensor
    video: torch.Tensor

    @property
    def lengths(self) -> tuple[int, int, int]:
        return (self.text.shape[0], self.image.shape[0], self.video.shape[0])

    @property
    def offsets(self) -> tuple[int, int]:
        l_t, l_i, _ = self.lengths
        return (l_t, l_t + l_i)

    def concat(self) -> torch.Tensor:
        return torch.cat([self.text, self.image, self.video], dim=0)

    def demux(self, joint: torch.Tensor) -> "JointBatch":
        a, b = self.offsets
        return JointBatch(text=joint[:a], image=joint[a:b], video=joint[b:])


@dataclass
class StreamProjections:
    q: Callable[[torch.Tensor], torch.Tensor]
    k: Callable[[torch.Tensor], torch.Tensor]
    v: Callable[[torch.Tensor], torch.Tensor]
    o: Callable[[torch.Tensor], torch.Tensor]


def _multihead(x: torch.Tensor, heads: int) -> torch.Tensor:
    l, d = x.shape
    return x.view(l, heads, d // heads).transpose(0, 1)


def _attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int
) -> tuple[torch.Tensor, torch.Tensor]:
    qh, kh, vh = _multihead(q, heads), _multihead(k, heads), _multihead(v, heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    weights = torch.softmax(qh @ kh.transpose(1, 2) * scale, dim=-1)
    out = (weights @ vh).transpose(0, 1).reshape(q.shape[0], -1)
    return out, weights


def joint_attention(
    batch: JointBatch,
    projections: dict[str, StreamProjections],
    heads: int,
    return_weights: bool = False,
):
    """Full self-attention over the text+image+video token concatenation.

    Each stream's Q/K/V come from its own (possibly LoRA-adapted)
    projections; the attended output is demultiplexed by index and passed
    through the per-stream output projections.
    """
    if batch.video.shape[0] == 0:
        raise ValueError("video stream must be non-empty")
    qs, ks, vs = [], [], []
    for name in STREAMS:
        tokens = getattr(batch, name)
        proj = projections[name]
        qs.append(proj.q(tokens))
        ks.append(proj.k(tokens))
        vs.append(proj.v(tokens))

    attended, weights = _attention(torch.cat(qs), torch.cat(ks), torch.cat(vs), heads)
    split = batch.demux(attended)
    out = JointBatch(
        text=projections["text"].o(split.text),
        image=projections["image"].o(split.image),
        video=projections["video"].o(split.video),
    )
    if return_weights:
        return out, weights
    return out


def multiframe_reference_attention(
    keyframe_sets: Sequence[torch.Tensor],
    garment_tokens: torch.Tensor,
    projections: StreamProjections,
    heads: int,
) -> list[torch.Tensor]:
    """Reference attention for the keyframe try-on model.

    K and V from every keyframe and from the garment branch are concatenated
    into one joint context; each keyframe's queries attend over it. The
    garment branch runs through the same projections (parameter sharing).
    """
    if len(keyframe_sets) == 0:
        raise ValueError("need at least one keyframe token set")
    sources = list(keyframe_sets)
    if garment_tokens is not None and garment_tokens.shape[0] > 0:
        sources.append(garment_tokens)
    joint_k = torch.cat([projections.k(x) for x in sources], dim=0)
    joint_v = torch.cat([projections.v(x) for x in sources], dim=0)
    outputs = []
    for tokens in keyframe_sets:
        attended, _ = _attention(projections.q(tokens), joint_k, joint_v, heads)
        outputs.append(projections.o(attended))
    return outputs


class _AdaLN(nn.Module):
    """Frozen timestep modulation: six (shift, scale, gate) vectors."""

    def __init__(self, seed: int, name: str, time_dim: int, dim: int):
        super().__init__()
        self.dim = dim
        self.weight = nn.Parameter(
            _init_array(seed, f"{name}.weight", (6 * dim, time_dim), 0.02),
            requires_grad=False,
        )
        bias = torch.zeros(6 * dim)
        bias[2 * dim : 3 * dim] = 1.0  # attention gate starts open
        bias[5 * dim :] = 1.0  # feed-forward gate starts open
        self.bias = nn.Parameter(bias, requires_grad=False)

    def forward(self, t_emb: torch.Tensor) -> tuple[torch.Tensor, ...]:
        return F.linear(F.silu(t_emb), self.weight, self.bias).chunk(6, dim=-1)


class _StreamBase(nn.Module):
    """Frozen q/k/v/o + feed-forward + modulation for one parameter stream."""

    def __init__(self, seed: int, name: str, dim: int, ff_mult: int, time_dim: int):
        super().__init__()
        self.q = FrozenLinear(seed, f"{name}.q", dim, dim)
        self.k = FrozenLinear(seed, f"{name}.k", dim, dim)
        self.v = FrozenLinear(seed, f"{name}.v", dim, dim)
        self.o = FrozenLinear(seed, f"{name}.o", dim, dim)
        self.ff1 = FrozenLinear(seed, f"{name}.ff1", dim, dim * ff_mult)
        self.ff2 = FrozenLinear(seed, f"{name}.ff2", dim * ff_mult, dim)
        self.adaln = _AdaLN(seed, f"{name}.adaln", time_dim, dim)


class _AdapterSet(nn.Module):
    def __init__(self, cfg: ModelConfig, name: str):
        super().__init__()
        mk = lambda tag, d_in, d_out: LoRAAdapter(
            cfg.seed, f"{name}.{tag}", d_in, d_out, cfg.lora_rank, cfg.lora_scale
        )
        self.q = mk("q", cfg.dim, cfg.dim)
        self.k = mk("k", cfg.dim, cfg.dim)
        self.v = mk("v", cfg.dim, cfg.dim)
        self.o = mk("o", cfg.dim, cfg.dim)
        self.ff1 = mk("ff1", cfg.dim, cfg.dim * cfg.ff_mult) if cfg.lora_ff else None
        self.ff2 = mk("ff2", cfg.dim * cfg.ff_mult, cfg.dim) if cfg.lora_ff else None


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:]) * (1.0 + scale) + shift


class MMDiTBlock(nn.Module):
    """Pre-norm joint attention + per-stream feed-forward, both residual."""

    def __init__(self, cfg: ModelConfig, index: int):
        super().__init__()
        self.heads = cfg.heads
        self.text = _StreamBase(cfg.seed, f"blocks.{index}.text", cfg.dim, cfg.ff_mult, cfg.time_dim)
        # One storage for video and image streams ("duplicated with shared memory").
        self.base = _StreamBase(cfg.seed, f"blocks.{index}.base", cfg.dim, cfg.ff_mult, cfg.time_dim)
        if cfg.lora_rank > 0:
            self.video_adapters = _AdapterSet(cfg, f"blocks.{index}.video_adapters")
            self.image_adapters = _AdapterSet(cfg, f"blocks.{index}.image_adapters")
        else:
            self.video_adapters = None
            self.image_adapters = None

    def _projections(self, stream: str) -> StreamProjections:
        if stream == "text":
            base, adapters = self.text, None
        else:
            base = self.base
            adapters = self.video_adapters if stream == "video" else self.image_adapters
        def wrap(tag: str):
            proj = getattr(base, tag)
            adapter = getattr(adapters, tag) if adapters is not None else None
            return lambda x: proj(x) + (adapter(x) if adapter is not None else 0.0)
        return StreamProjections(q=wrap("q"), k=wrap("k"), v=wrap("v"), o=wrap("o"))

    def _ff(self, stream: str, x: torch.Tensor) -> torch.Tensor:
        base = self.text if stream == "text" else self.base
        adapters = None
        if stream == "video":
            adapters = self.video_adapters
        elif stream == "image":
            adapters = self.image_adapters
        hidden = base.ff1(x)
        if adapters is not None and adapters.ff1 is not None:
            hidden = hidden + adapters.ff1(x)
        hidden = F.gelu(hidden)
        out = base.ff2(hidden)
        if adapters is not None and adapters.ff2 is not None:
            out = out + adapters.ff2(hidden)
        return out

    def forward(self, batch: JointBatch, t_emb: torch.Tensor) -> JointBatch:
        mods = {
            "text": self.text.adaln(t_emb),
            "image": self.base.adaln(t_emb),
            "video": self.base.adaln(t_emb),
        }
        normed = JointBatch(
            **{
                s: _modulate(getattr(batch, s), mods[s][0], mods[s][1])
                if getattr(batch, s).shape[0]
                else getattr(batch, s)
                for s in STREAMS
            }
        )
        attn = joint_attention(normed, {s: self._projections(s) for s in STREAMS}, self.heads)
        gated = {}
        for s in STREAMS:
            x = getattr(batch, s)
            if x.shape[0] == 0:
                gated[s] = x
                continue
            x = x + mods[s][2] * getattr(attn, s)
            n2 = _modulate(x, mods[s][3], mods[s][4])
            gated[s] = x + mods[s][5] * self._ff(s, n2)
        return JointBatch(**gated)


class MultiStreamDiT(nn.Module):
    """Stage-2 model: velocity prediction over video tokens."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.text_in = FrozenLinear(cfg.seed, "text_in", cfg.text_channels, cfg.dim)
        self.image_in = DeltaLinear(
            cfg.seed, "image_in", cfg.image_in_channels, cfg.dim,
            cfg.proj_gain, cfg.train_projections,
        )
        self.video_in = DeltaLinear(
            cfg.seed, "video_in", cfg.video_in_channels, cfg.dim,
            cfg.proj_gain, cfg.train_projections,
        )
        self.blocks = nn.ModuleList(MMDiTBlock(cfg, i) for i in range(cfg.blocks))
        self.head = DeltaLinear(
            cfg.seed, "head", cfg.dim, cfg.out_channels,
            cfg.proj_gain, cfg.train_projections, zero_base=True,
        )

    def forward(
        self,
        text_tokens,
        image_tokens,
        video_tokens,
        video_index_map,
        image_index_map,
        tau: float,
    ) -> torch.Tensor:
        text = self.text_in(as_tensor(text_tokens))
        text = text + positional_encoding_1d(text.shape[0], self.cfg.dim)
        image = self.image_in(as_tensor(image_tokens))
        video = self.video_in(as_tensor(video_tokens))

        video_map = np.asarray(video_index_map, dtype=np.float64)
        video = video + positional_encoding_3d(video_map, self.cfg.dim)
        if image.shape[0]:
            # Distinct temporal tag keeps reference keyframes apart from the
            # noised timeline.
            image_map = np.asarray(image_index_map, dtype=np.float64).copy()
            image_map[:, 0] += video_map[:, 0].max() + 1.0
            image = image + positional_encoding_3d(image_map, self.cfg.dim)

        batch = JointBatch(text=text, image=image, video=video)
        t_emb = timestep_embedding(tau, self.cfg.time_dim)
        for block in self.blocks:
            batch = block(batch, t_emb)
        return self.head(F.layer_norm(batch.video, batch.video.shape[-1:]))

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


@dataclass
class ReferenceModelConfig:
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    ff_mult: int = 4
    lora_rank: int = 4
    lora_alpha: float = 64.0
    keyframe_in_channels: int = 17
    context_in_channels: int = 8
    text_channels: int = 64
    out_channels: int = 8
    time_dim: int = 32
    proj_gain: float = 64.0
    train_projections: bool = True
    seed: int = 1

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.lora_rank if self.lora_rank else 0.0


class ReferenceBlock(nn.Module):
    """Keyframes attend over all keyframes + the garment branch; the garment
    branch evolves through its own self-attention with the same weights."""

    def __init__(self, cfg: ReferenceModelConfig, index: int):
        super().__init__()
        self.heads = cfg.heads
        self.base = _StreamBase(cfg.seed, f"blocks.{index}.base", cfg.dim, cfg.ff_mult, cfg.time_dim)
        if cfg.lora_rank > 0:
            model_cfg = ModelConfig(
                dim=cfg.dim, heads=cfg.heads, ff_mult=cfg.ff_mult,
                lora_rank=cfg.lora_rank, lora_alpha=cfg.lora_alpha, seed=cfg.seed,
            )
            self.adapters = _AdapterSet(model_cfg, f"blocks.{index}.adapters")
        else:
            self.adapters = None

    def projections(self) -> StreamProjections:
        def wrap(tag: str):
            proj = getattr(self.base, tag)
            adapter = getattr(self.adapters, tag) if self.adapters is not None else None
            return lambda x: proj(x) + (adapter(x) if adapter is not None else 0.0)
        return StreamProjections(q=wrap("q"), k=wrap("k"), v=wrap("v"), o=wrap("o"))

    def _ff(self, x: torch.Tensor) -> torch.Tensor:
        return self.base.ff2(F.gelu(self.base.ff1(x)))

    def forward(
        self, keyframes: list[torch.Tensor], context: torch.Tensor, t_emb: torch.Tensor
    ) -> tuple[list[torch.Tensor], torch.Tensor]:
        mod = self.base.adaln(t_emb)
        proj = self.projections()
        normed_kf = [_modulate(x, mod[0], mod[1]) for x in keyframes]
        normed_ctx = _modulate(context, mod[0], mod[1]) if context.shape[0] else context

        kf_attn = multiframe_reference_attention(normed_kf, normed_ctx, proj, self.heads)
        keyframes = [x + mod[2] * a for x, a in zip(keyframes, kf_attn)]
        keyframes = [
            x + mod[5] * self._ff(_modulate(x, mod[3], mod[4])) for x in keyframes
        ]

        if context.shape[0]:
            ctx_attn, _ = _attention(
                proj.q(normed_ctx), proj.k(normed_ctx), proj.v(normed_ctx), self.heads
            )
            context = context + mod[2] * proj.o(ctx_attn)
            context = context + mod[5] * self._ff(_modulate(context, mod[3], mod[4]))
        return keyframes, context


class ReferenceTryonModel(nn.Module):
    """Stage-1 model: joint velocity prediction for k keyframe latents."""

    def __init__(self, cfg: ReferenceModelConfig):
        super().__init__()
        self.cfg = cfg
        self.keyframe_in = DeltaLinear(
            cfg.seed, "keyframe_in", cfg.keyframe_in_channels, cfg.dim,
            cfg.proj_gain, cfg.train_projections,
        )
        self.context_in = DeltaLinear(
            cfg.seed, "context_in", cfg.context_in_channels, cfg.dim,
            cfg.proj_gain, cfg.train_projections,
        )
        self.text_in = FrozenLinear(cfg.seed, "text_in", cfg.text_channels, cfg.dim)
        self.blocks = nn.ModuleList(ReferenceBlock(cfg, i) for i in range(cfg.blocks))
        self.head = DeltaLinear(
            cfg.seed, "head", cfg.dim, cfg.out_channels,
            cfg.proj_gain, cfg.train_projections, zero_base=True,
        )

    def forward(
        self,
        keyframe_tokens: Sequence,
        keyframe_index_maps: Sequence,
        garment_tokens,
        garment_index_map,
        text_tokens,
        tau: float,
    ) -> list[torch.Tensor]:
        keyframes = []
        for i, (tokens, index_map) in enumerate(zip(keyframe_tokens, keyframe_index_maps)):
            x = self.keyframe_in(as_tensor(tokens))
            pos = np.asarray(index_map, dtype=np.float64).copy()
            pos[:, 0] = i
            keyframes.append(x + positional_encoding_3d(pos, self.cfg.dim))

        parts = []
        garment = as_tensor(garment_tokens)
        if garment.shape[0]:
            g = self.context_in(garment)
            pos = np.asarray(garment_index_map, dtype=np.float64).copy()
            pos[:, 0] = len(keyframes) + 1  # distinct tag for the reference branch
            parts.append(g + positional_encoding_3d(pos, self.cfg.dim))
        text = as_tensor(text_tokens)
        if text.shape[0]:
            t = self.text_in(text)
            parts.append(t + positional_encoding_1d(t.shape[0], self.cfg.dim))
        context = torch.cat(parts, dim=0) if parts else garment.new_zeros((0, self.cfg.dim))

        t_emb = timestep_embedding(tau, self.cfg.time_dim)
        for block in self.blocks:
            keyframes, context = block(keyframes, context, t_emb)
        return [
            self.head(F.layer_norm(x, x.shape[-1:])) for x in keyframes
        ]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


# Order matters: "context_in" would otherwise match the "text" rule.
_GROUP_RULES = (
    ("context_in", "context_in_proj"),
    ("keyframe_in", "keyframe_in_proj"),
    ("text", "text_stream"),
    (".base.", "shared_base"),
    ("video_adapters", "lora_video"),
    ("image_adapters", "lora_image"),
    (".adapters.", "lora_reference"),
    ("video_in", "video_in_proj"),
    ("image_in", "image_in_proj"),
    ("head", "output_head"),
)


def _group_of(name: str) -> str:
    for needle, group in _GROUP_RULES:
        if needle in name:
            return group
    return "other"


def trainable_parameter_report(model: nn.Module) -> dict:
    """Exact per-group parameter counts and the overall trainable fraction.

    Shared storage (video/image base weights) is counted once.
    """
    groups: dict[str, dict[str, int]] = {}
    seen: set[int] = set()
    total = 0
    trainable = 0
    for name, param in model.named_parameters():
        if id(param) in seen:
            continue
        seen.add(id(param))
        group = groups.setdefault(_group_of(name), {"parameters": 0, "trainable": 0})
        n = param.numel()
        group["parameters"] += n
        total += n
        if param.requires_grad:
            group["trainable"] += n
            trainable += n
    return {
        "groups": groups,
        "total_parameters": total,
        "trainable_parameters": trainable,
        "trainable_fraction": trainable / total if total else 0.0,
    }


def save_checkpoint(model: nn.Module, base_path: str | Path) -> None:
    """Raw float32 payload + JSON manifest (name -> offset/shape/trainable)."""
    base = Path(base_path)
    manifest: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name, param in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        data = param.detach().cpu().numpy().astype("<f4", copy=False)
        raw = data.tobytes(order="C")
        manifest[name] = {
            "offset": offset,
            "shape": list(data.shape),
            "trainable": bool(param.requires_grad),
        }
        chunks.append(raw)
        offset += len(raw)
    base.with_suffix(".bin").write_bytes(b"".join(chunks))
    base.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(model: nn.Module, base_path: str | Path) -> None:
    base = Path(base_path)
    manifest = json.loads(base.with_suffix(".json").read_text())
    payload = base.with_suffix(".bin").read_bytes()
    params = dict(model.named_parameters())
    if set(params) != set(manifest):
        missing = set(params) ^ set(manifest)
        raise ValueError(f"checkpoint does not match model, differing keys: {sorted(missing)}")
    with torch.no_grad():
        for name, entry in manifest.items():
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            array = np.frombuffer(
                payload, dtype="<f4", count=count, offset=entry["offset"]
            ).reshape(shape)
            target = params[name]
            if tuple(target.shape) != shape:
                raise ValueError(f"shape mismatch for {name}: {target.shape} vs {shape}")
            target.copy_(torch.from_numpy(array.copy()))
