"""Model assembly: the three network variants, checkpointing, and symbolic
shape/parameter accounting.

Variants:
  baseline  3-channel RGB input, backbone + PSP + classifier, no guidance.
  early     4-channel input (RGB + guidance map), same skeleton.
  multi     early plus a parallel fusion path (init block, 3 SE-ResNet
            blocks) whose stride-8 features are concatenated with the
            backbone output before the PSP head.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Parameter, Tensor, concat, maxpool2d, relu
from .layers import (
    BatchNorm2d,
    BottleneckBlock,
    ClassifierHead,
    Conv2d,
    InitBlock,
    Module,
    PSPHead,
    ResidualBlock,
    SEResNetBlock,
)

__all__ = [
    "VARIANTS",
    "BackboneConfig",
    "SEResNetConfig",
    "PSPConfig",
    "ModelConfig",
    "SegModel",
    "build_model",
    "parameter_count",
    "partitions",
    "set_trainable_partition",
    "freeze_partition",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_hash",
    "CheckpointError",
    "infer_shapes",
    "analytic_param_counts",
    "fusion_overhead_ratio",
]

VARIANTS = ("baseline", "early", "multi")


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class BackboneConfig:
    """Residual feature extractor descriptor, output stride 8.

    For basic blocks, widths are per-stage output channels; for bottleneck
    blocks they are the inner 3x3 widths and each stage outputs 4x that.
    """

    block: str = "basic"
    widths: tuple[int, ...] = (64, 128, 128)
    blocks: tuple[int, ...] = (2, 2, 2)
    strides: tuple[int, ...] = (2, 2, 2)
    stem_channels: int = 64
    stem_kernel: int = 3
    stem_stride: int = 1
    stem_pool: bool = False

    @property
    def out_channels(self) -> int:
        mult = 4 if self.block == "bottleneck" else 1
        return self.widths[-1] * mult

    @property
    def output_stride(self) -> int:
        s = self.stem_stride * (2 if self.stem_pool else 1)
        for st in self.strides:
            s *= st
        return s

    def validate(self) -> None:
        if self.block not in ("basic", "bottleneck"):
            raise ValueError(f"unknown block type {self.block!r}")
        if not (len(self.widths) == len(self.blocks) == len(self.strides)):
            raise ValueError("widths, blocks, and strides must have equal length")
        if any(w <= 0 for w in self.widths) or any(b <= 0 for b in self.blocks):
            raise ValueError(f"invalid stage widths/blocks: {self.widths}, {self.blocks}")
        if self.output_stride != 8:
            raise ValueError(f"backbone output stride must be 8, got {self.output_stride}")


@dataclass(frozen=True)
class SEResNetConfig:
    channels: int = 256
    reduction: int = 16
    downsample: bool = False

    def validate(self) -> None:
        if self.channels % self.reduction:
            raise ValueError(
                f"SE channels {self.channels} not divisible by reduction {self.reduction}"
            )


@dataclass(frozen=True)
class PSPConfig:
    grid_scales: tuple[int, ...] = (1, 2, 3, 6)
    in_channels: int = 0  # filled by ModelConfig factories
    out_channels: int = 512


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    input_size: tuple[int, int]
    scale: str
    backbone: BackboneConfig
    fusion: tuple[SEResNetConfig, ...]
    psp: PSPConfig

    @property
    def in_channels(self) -> int:
        return 3 if self.variant == "baseline" else 4

    @property
    def fusion_channels(self) -> int:
        return self.fusion[0].channels if self.fusion else 0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.input_size[0] % 8 or self.input_size[1] % 8:
            raise ValueError(f"input size {self.input_size} must be divisible by 8")
        self.backbone.validate()
        for f in self.fusion:
            f.validate()
        if self.variant == "multi":
            if len(self.fusion) != 3:
                raise ValueError("multi variant uses exactly 3 SE-ResNet fusion blocks")
            if len({f.channels for f in self.fusion}) != 1:
                raise ValueError("fusion blocks must share a channel width")
            expected = self.backbone.out_channels + self.fusion_channels
        else:
            expected = self.backbone.out_channels
        if self.psp.in_channels != expected:
            raise ValueError(
                f"psp.in_channels {self.psp.in_channels} inconsistent with variant "
                f"(expected {expected})"
            )

    @staticmethod
    def tiny(variant: str, input_size: tuple[int, int] = (64, 64)) -> "ModelConfig":
        backbone = BackboneConfig()
        fusion = tuple(
            SEResNetConfig(channels=256, reduction=16, downsample=(i == 2)) for i in range(3)
        )
        extra = fusion[0].channels if variant == "multi" else 0
        cfg = ModelConfig(
            variant=variant,
            input_size=tuple(input_size),
            scale="tiny",
            backbone=backbone,
            fusion=fusion if variant == "multi" else (),
            psp=PSPConfig(grid_scales=(1, 2, 3, 6), in_channels=backbone.out_channels + extra),
        )
        cfg.validate()
        return cfg

    @staticmethod
    def full(variant: str, input_size: tuple[int, int] = (512, 512)) -> "ModelConfig":
        backbone = BackboneConfig(
            block="bottleneck",
            widths=(64, 128, 256, 512),
            blocks=(3, 4, 23, 3),
            strides=(1, 2, 1, 1),
            stem_channels=64,
            stem_kernel=7,
            stem_stride=2,
            stem_pool=True,
        )
        fusion = tuple(
            SEResNetConfig(channels=256, reduction=16, downsample=(i == 2)) for i in range(3)
        )
        extra = fusion[0].channels if variant == "multi" else 0
        cfg = ModelConfig(
            variant=variant,
            input_size=tuple(input_size),
            scale="full",
            backbone=backbone,
            fusion=fusion if variant == "multi" else (),
            psp=PSPConfig(grid_scales=(1, 2, 3, 6), in_channels=backbone.out_channels + extra),
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        backbone = BackboneConfig(
            block=d["backbone"]["block"],
            widths=tuple(d["backbone"]["widths"]),
            blocks=tuple(d["backbone"]["blocks"]),
            strides=tuple(d["backbone"]["strides"]),
            stem_channels=d["backbone"]["stem_channels"],
            stem_kernel=d["backbone"]["stem_kernel"],
            stem_stride=d["backbone"]["stem_stride"],
            stem_pool=d["backbone"]["stem_pool"],
        )
        fusion = tuple(SEResNetConfig(**f) for f in d["fusion"])
        psp = PSPConfig(
            grid_scales=tuple(d["psp"]["grid_scales"]),
            in_channels=d["psp"]["in_channels"],
            out_channels=d["psp"]["out_channels"],
        )
        cfg = ModelConfig(
            variant=d["variant"],
            input_size=tuple(d["input_size"]),
            scale=d["scale"],
            backbone=backbone,
            fusion=fusion,
            psp=psp,
        )
        cfg.validate()
        return cfg


# -- network modules ---------------------------------------------------------


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, in_ch: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        pad = cfg.stem_kernel // 2
        self.stem_conv = Conv2d(
            in_ch, cfg.stem_channels, cfg.stem_kernel, stride=cfg.stem_stride, padding=pad,
            rng=rng, dtype=dtype,
        )
        self.stem_bn = BatchNorm2d(cfg.stem_channels, dtype=dtype)
        stages = []
        ch = cfg.stem_channels
        for width, depth, stride in zip(cfg.widths, cfg.blocks, cfg.strides):
            for b in range(depth):
                s = stride if b == 0 else 1
                if cfg.block == "bottleneck":
                    stages.append(BottleneckBlock(ch, width, stride=s, rng=rng, dtype=dtype))
                    ch = width * BottleneckBlock.expansion
                else:
                    stages.append(ResidualBlock(ch, width, stride=s, rng=rng, dtype=dtype))
                    ch = width
        self.stages = stages

    def forward(self, x: Tensor) -> Tensor:
        h = relu(self.stem_bn(self.stem_conv(x)))
        if self.cfg.stem_pool:
            h = maxpool2d(h, kernel=2, stride=2)
        for block in self.stages:
            h = block(h)
        return h


class FusionPath(Module):
    """Init block plus three SE-ResNet blocks; the final block downsamples
    so fusion features land at the backbone's stride-8 resolution."""

    def __init__(self, in_ch: int, cfgs: tuple[SEResNetConfig, ...], rng, dtype=np.float32):
        super().__init__()
        channels = cfgs[0].channels
        self.init_block = InitBlock(in_ch, channels, rng=rng, dtype=dtype)
        self.blocks = [
            SEResNetBlock(
                channels,
                c.channels,
                reduction=c.reduction,
                stride=2 if c.downsample else 1,
                rng=rng,
                dtype=dtype,
            )
            for c in cfgs
        ]

    def forward(self, x: Tensor) -> Tensor:
        h = self.init_block(x)
        for block in self.blocks:
            h = block(h)
        return h


class SegModel(Module):
    """Assembled network mapping image (+ guidance) to a probability map."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        in_ch = config.in_channels
        self.backbone = Backbone(config.backbone, in_ch, rng, dtype=dtype)
        self.fusion = (
            FusionPath(in_ch, config.fusion, rng, dtype=dtype)
            if config.variant == "multi"
            else None
        )
        self.psp = PSPHead(
            config.psp.in_channels,
            config.psp.out_channels,
            config.psp.grid_scales,
            rng=rng,
            dtype=dtype,
        )
        self.head = ClassifierHead(config.psp.out_channels, dtype=dtype)
        self._dtype = dtype

    def forward(
        self,
        image: Tensor,
        guidance: Optional[Tensor] = None,
        ablate_fusion: bool = False,
    ) -> Tensor:
        n, c, h, w = image.shape
        if c != 3:
            raise ValueError(f"image must have 3 channels, got {c}")
        if h % 8 or w % 8:
            raise ValueError(f"input size {h}x{w} must be divisible by 8")
        if self.config.variant == "baseline":
            if guidance is not None:
                raise ValueError("baseline variant takes no guidance channel")
            x = image
        else:
            if guidance is None:
                raise ValueError(f"{self.config.variant} variant requires a guidance channel")
            if guidance.shape != (n, 1, h, w):
                raise ValueError(
                    f"guidance shape {guidance.shape} must be {(n, 1, h, w)}"
                )
            x = concat([image, guidance], axis=1)

        feat = self.backbone(x)
        if self.fusion is not None:
            if ablate_fusion:
                zeros = np.zeros(
                    (n, self.config.fusion_channels, feat.shape[2], feat.shape[3]),
                    dtype=feat.dtype,
                )
                feat = concat([feat, Tensor(zeros)], axis=1)
            else:
                feat = concat([feat, self.fusion(x)], axis=1)
        return self.head(self.psp(feat), h, w)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> SegModel:
    """Deterministically initialized model; identical seeds give identical
    weights."""
    rng = np.random.default_rng(seed)
    return SegModel(config, rng, dtype=dtype)


# -- partitions and counting --------------------------------------------------


def partitions(model: SegModel) -> dict[str, list[tuple[str, Parameter]]]:
    """Disjoint, exhaustive split: the early-fusion skeleton (backbone, PSP,
    classifier) versus the late-fusion path."""
    early, fusion = [], []
    for name, p in model.named_parameters():
        (fusion if name.startswith("fusion.") else early).append((name, p))
    return {"early": early, "fusion": fusion}


def _partition_params(model: SegModel, partition: Optional[str]) -> list[tuple[str, Parameter]]:
    if partition is None or partition == "all":
        return list(model.named_parameters())
    parts = partitions(model)
    if partition not in parts:
        raise ValueError(f"unknown partition {partition!r}, expected 'early', 'fusion', or 'all'")
    return parts[partition]


def parameter_count(model: SegModel, partition: Optional[str] = None) -> int:
    """Number of scalars with requires_grad, optionally within a partition."""
    return sum(p.data.size for _, p in _partition_params(model, partition) if p.requires_grad)


def freeze_partition(model: SegModel, partition: str) -> None:
    for _, p in _partition_params(model, partition):
        p.freeze()


def set_trainable_partition(model: SegModel, partition: str) -> None:
    """Make exactly the named partition trainable ('all' unfreezes everything)."""
    for _, p in model.named_parameters():
        p.freeze()
    for _, p in _partition_params(model, partition):
        p.unfreeze()


# -- checkpoints ---------------------------------------------------------------


class CheckpointError(RuntimeError):
    pass


_MAGIC = b"CLICKSEG-CKPT"
_VERSION = 1


def save_checkpoint(model: SegModel, path) -> None:
    """Versioned header (JSON config and layout) followed by raw
    little-endian float32 blobs in sorted name order."""
    params = sorted(model.named_parameters(), key=lambda kv: kv[0])
    buffers = sorted(model.named_buffers(), key=lambda kv: kv[0])
    meta = {
        "version": _VERSION,
        "config": model.config.to_dict(),
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "buffers": [{"name": n, "shape": list(b.data.shape)} for n, b in buffers],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC + b" v%d\n" % _VERSION)
        f.write(json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
        for _, p in params:
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        for _, b in buffers:
            f.write(np.ascontiguousarray(b.data, dtype="<f4").tobytes())


def load_checkpoint(path, config: Optional[ModelConfig] = None) -> SegModel:
    """Rebuild the stored model. Passing config asserts it matches the
    checkpoint and raises CheckpointError otherwise."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if not header.startswith(_MAGIC):
            raise CheckpointError(f"{path}: not a clickseg checkpoint")
        if header != _MAGIC + b" v%d" % _VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {header!r}")
        try:
            meta = json.loads(f.readline().decode("utf-8"))
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: corrupt header: {e}") from e
        stored_cfg = ModelConfig.from_dict(meta["config"])
        if config is not None and config.to_dict() != stored_cfg.to_dict():
            raise CheckpointError(
                f"{path}: checkpoint config (variant={stored_cfg.variant!r}, "
                f"scale={stored_cfg.scale!r}) does not match requested "
                f"(variant={config.variant!r}, scale={config.scale!r})"
            )
        model = build_model(stored_cfg, seed=0)
        by_name = dict(model.named_parameters())
        if sorted(by_name) != [e["name"] for e in meta["params"]]:
            raise CheckpointError(f"{path}: parameter names do not match the architecture")
        for entry in meta["params"]:
            shape = tuple(entry["shape"])
            raw = f.read(4 * int(np.prod(shape, dtype=np.int64)))
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            p = by_name[entry["name"]]
            if p.shape != shape:
                raise CheckpointError(f"{path}: shape mismatch for {entry['name']}")
            p.data = arr.copy()
        buf_by_name = dict(model.named_buffers())
        for entry in meta["buffers"]:
            shape = tuple(entry["shape"])
            raw = f.read(4 * int(np.prod(shape, dtype=np.int64)))
            buf = buf_by_name[entry["name"]]
            buf.data[...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes, file corrupt")
    return model


def checkpoint_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


# -- symbolic shape inference --------------------------------------------------


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def infer_shapes(config: ModelConfig, batch: int = 1) -> dict[str, tuple[int, ...]]:
    """Walk the architecture arithmetic without allocating any weights.

    Returns named NCHW shapes for every documented stage of the pipeline.
    """
    config.validate()
    h, w = config.input_size
    shapes: dict[str, tuple[int, ...]] = {"input": (batch, config.in_channels, h, w)}

    bc = config.backbone
    bh = _conv_out(h, bc.stem_kernel, bc.stem_stride, bc.stem_kernel // 2)
    bw = _conv_out(w, bc.stem_kernel, bc.stem_stride, bc.stem_kernel // 2)
    if bc.stem_pool:
        bh = _conv_out(bh, 2, 2, 0)
        bw = _conv_out(bw, 2, 2, 0)
    for stride in bc.strides:
        bh = _conv_out(bh, 3, stride, 1)
        bw = _conv_out(bw, 3, stride, 1)
    shapes["backbone"] = (batch, bc.out_channels, bh, bw)

    concat_ch = bc.out_channels
    if config.variant == "multi":
        fh = _conv_out(_conv_out(h, 7, 2, 3), 2, 2, 0)
        fw = _conv_out(_conv_out(w, 7, 2, 3), 2, 2, 0)
        shapes["init"] = (batch, config.fusion_channels, fh, fw)
        for fc in config.fusion:
            if fc.downsample:
                fh = _conv_out(fh, 3, 2, 1)
                fw = _conv_out(fw, 3, 2, 1)
        shapes["fusion"] = (batch, config.fusion_channels, fh, fw)
        concat_ch += config.fusion_channels
    shapes["concat"] = (batch, concat_ch, bh, bw)
    shapes["psp"] = (batch, config.psp.out_channels, bh, bw)
    shapes["output"] = (batch, 1, h, w)
    return shapes


# -- analytic parameter counts --------------------------------------------------


def _conv_p(cin: int, cout: int, k: int) -> int:
    return cout * cin * k * k + cout


def _bn_p(c: int) -> int:
    return 2 * c


def init_block_param_count(in_ch: int, out_ch: int) -> int:
    return _conv_p(in_ch, out_ch, 7) + _bn_p(out_ch)


def residual_block_param_count(in_ch: int, out_ch: int, projected: bool) -> int:
    n = _conv_p(in_ch, out_ch, 3) + _bn_p(out_ch) + _conv_p(out_ch, out_ch, 3) + _bn_p(out_ch)
    if projected:
        n += _conv_p(in_ch, out_ch, 1) + _bn_p(out_ch)
    return n


def se_block_param_count(in_ch: int, channels: int, reduction: int, projected: bool) -> int:
    hidden = channels // reduction
    se = channels * hidden + hidden + hidden * channels + channels
    return residual_block_param_count(in_ch, channels, projected) + se


def bottleneck_param_count(in_ch: int, width: int, projected: bool) -> int:
    out_ch = width * BottleneckBlock.expansion
    n = (
        _conv_p(in_ch, width, 1)
        + _bn_p(width)
        + _conv_p(width, width, 3)
        + _bn_p(width)
        + _conv_p(width, out_ch, 1)
        + _bn_p(out_ch)
    )
    if projected:
        n += _conv_p(in_ch, out_ch, 1) + _bn_p(out_ch)
    return n


def psp_param_count(in_ch: int, out_ch: int, n_scales: int) -> int:
    branch = in_ch // n_scales
    n = n_scales * (_conv_p(in_ch, branch, 1) + _bn_p(branch))
    fused = in_ch + branch * n_scales
    return n + _conv_p(fused, out_ch, 3) + _bn_p(out_ch)


def classifier_param_count(in_ch: int) -> int:
    return _conv_p(in_ch, 1, 1)


def backbone_param_count(config: BackboneConfig, in_ch: int) -> int:
    total = _conv_p(in_ch, config.stem_channels, config.stem_kernel) + _bn_p(config.stem_channels)
    ch = config.stem_channels
    for width, depth, stride in zip(config.widths, config.blocks, config.strides):
        for b in range(depth):
            s = stride if b == 0 else 1
            if config.block == "bottleneck":
                out_ch = width * BottleneckBlock.expansion
                total += bottleneck_param_count(ch, width, projected=(s != 1 or ch != out_ch))
                ch = out_ch
            else:
                total += residual_block_param_count(ch, width, projected=(s != 1 or ch != width))
                ch = width
    return total


def analytic_param_counts(config: ModelConfig) -> dict[str, int]:
    """Closed-form per-partition counts mirroring the constructors."""
    config.validate()
    early = (
        backbone_param_count(config.backbone, config.in_channels)
        + psp_param_count(config.psp.in_channels, config.psp.out_channels, len(config.psp.grid_scales))
        + classifier_param_count(config.psp.out_channels)
    )
    fusion = 0
    if config.variant == "multi":
        ch = config.fusion_channels
        fusion += init_block_param_count(config.in_channels, ch)
        for fc in config.fusion:
            stride = 2 if fc.downsample else 1
            fusion += se_block_param_count(ch, fc.channels, fc.reduction, projected=(stride != 1))
            ch = fc.channels
    return {"early": early, "fusion": fusion, "total": early + fusion}


def fusion_overhead_ratio(config: ModelConfig) -> float:
    """Trainable-parameter overhead of the fusion path relative to the
    early-fusion skeleton."""
    counts = analytic_param_counts(config)
    return counts["fusion"] / counts["early"]
