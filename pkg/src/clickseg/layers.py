"""Network building blocks: module/parameter bookkeeping plus the composite
blocks of the segmentation pipeline (init block, residual and SE-ResNet
blocks, pyramid-pooling head, pixel classifier)."""

from __future__ import annotations

import math
from typing import Iterator, Optional, Sequence

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    adaptive_avgpool,
    batchnorm2d,
    bilinear_upsample,
    concat,
    conv2d,
    global_avgpool,
    matmul,
    maxpool2d,
    relu,
    reshape,
    sigmoid,
)

__all__ = [
    "Buffer",
    "Module",
    "Conv2d",
    "BatchNorm2d",
    "Linear",
    "InitBlock",
    "ResidualBlock",
    "SEResNetBlock",
    "BottleneckBlock",
    "PSPHead",
    "ClassifierHead",
]


class Buffer:
    """Non-trainable persistent state (batch-norm running statistics)."""

    def __init__(self, data: np.ndarray):
        self.data = data


class Module:
    """Composable layer container with attribute-discovered parameters.

    Submodules, parameters, and buffers are found by walking instance
    attributes in definition order, so construction order fixes parameter
    naming and checkpoint layout.
    """

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Buffer]]:
        for name, value in vars(self).items():
            if isinstance(value, Buffer):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters() if p.requires_grad)


def _he_weight(shape, fan_in: int, rng: np.random.Generator, dtype) -> Parameter:
    std = math.sqrt(2.0 / fan_in)
    return Parameter((rng.standard_normal(shape) * std).astype(dtype))


class Conv2d(Module):
    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        rng: Optional[np.random.Generator] = None,
        zero_init: bool = False,
        dtype=np.float32,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        shape = (out_ch, in_ch, kernel, kernel)
        if zero_init:
            self.weight = Parameter(np.zeros(shape, dtype=dtype))
        else:
            self.weight = _he_weight(shape, in_ch * kernel * kernel, rng, dtype)
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = Buffer(np.zeros(channels, dtype=dtype))
        self.running_var = Buffer(np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean.data,
            self.running_var.data,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = _he_weight((in_features, out_features), in_features, rng, dtype)
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class InitBlock(Module):
    """7x7 stride-2 conv, BN, ReLU, then 2x2 stride-2 max pool: quarters the
    spatial resolution of the 4-channel input."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 7, stride=2, padding=3, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2], x.shape[3]
        if h % 4 or w % 4:
            raise ValueError(f"init block needs spatial dims divisible by 4, got {h}x{w}")
        return maxpool2d(relu(self.bn(self.conv(x))), kernel=2, stride=2)


class ResidualBlock(Module):
    """Two 3x3 conv+BN stages with an identity skip; a 1x1 projection takes
    over when the stride or channel count changes."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, stride=stride, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.proj = None
            self.proj_bn = None

    def _skip(self, x: Tensor) -> Tensor:
        if self.proj is None:
            return x
        return self.proj_bn(self.proj(x))

    def _gate(self, u: Tensor) -> Tensor:
        return u

    def forward(self, x: Tensor) -> Tensor:
        u = self.bn2(self.conv2(relu(self.bn1(self.conv1(x)))))
        return relu(self._gate(u) + self._skip(x))


class SEResNetBlock(ResidualBlock):
    """Residual block with a squeeze-and-excitation gate: the branch output
    is rescaled per channel by a sigmoid bottleneck (reduction r) computed
    from globally pooled features. bypass_gate skips the gate, recovering
    the plain residual block."""

    def __init__(self, in_ch: int, channels: int, reduction: int = 16, stride: int = 1, rng=None, dtype=np.float32):
        if channels % reduction:
            raise ValueError(f"channels {channels} must be divisible by reduction {reduction}")
        super().__init__(in_ch, channels, stride=stride, rng=rng, dtype=dtype)
        self.fc1 = Linear(channels, channels // reduction, rng=rng, dtype=dtype)
        self.fc2 = Linear(channels // reduction, channels, rng=rng, dtype=dtype)
        self.bypass_gate = False

    def _gate(self, u: Tensor) -> Tensor:
        if self.bypass_gate:
            return u
        n, c = u.shape[0], u.shape[1]
        z = reshape(global_avgpool(u), (n, c))
        s = sigmoid(self.fc2(relu(self.fc1(z))))
        return u * reshape(s, (n, c, 1, 1))


class BottleneckBlock(Module):
    """1x1 reduce, 3x3, 1x1 expand (x4) residual block; used only by the
    full-scale backbone descriptor."""

    expansion = 4

    def __init__(self, in_ch: int, width: int, stride: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        out_ch = width * self.expansion
        self.conv1 = Conv2d(in_ch, width, 1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(width, dtype=dtype)
        self.conv2 = Conv2d(width, width, 3, stride=stride, padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(width, dtype=dtype)
        self.conv3 = Conv2d(width, out_ch, 1, rng=rng, dtype=dtype)
        self.bn3 = BatchNorm2d(out_ch, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(in_ch, out_ch, 1, stride=stride, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x: Tensor) -> Tensor:
        u = relu(self.bn1(self.conv1(x)))
        u = relu(self.bn2(self.conv2(u)))
        u = self.bn3(self.conv3(u))
        s = x if self.proj is None else self.proj_bn(self.proj(x))
        return relu(u + s)


class PSPHead(Module):
    """Pyramid pooling context head.

    Each grid scale pools the map, squeezes channels with a 1x1 conv
    (to in_ch / n_scales), and upsamples back; the concatenation passes
    through a 3x3 conv to the output width.
    """

    def __init__(
        self,
        in_ch: int,
        out_ch: int = 512,
        scales: Sequence[int] = (1, 2, 3, 6),
        rng=None,
        dtype=np.float32,
    ):
        super().__init__()
        self.scales = tuple(scales)
        branch_ch = in_ch // len(self.scales)
        self.branch_convs = [Conv2d(in_ch, branch_ch, 1, rng=rng, dtype=dtype) for _ in self.scales]
        self.branch_bns = [BatchNorm2d(branch_ch, dtype=dtype) for _ in self.scales]
        fused = in_ch + branch_ch * len(self.scales)
        self.fuse_conv = Conv2d(fused, out_ch, 3, padding=1, rng=rng, dtype=dtype)
        self.fuse_bn = BatchNorm2d(out_ch, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2], x.shape[3]
        feats = [x]
        for scale, conv, bn in zip(self.scales, self.branch_convs, self.branch_bns):
            if scale > h or scale > w:
                raise ValueError(f"psp grid scale {scale} exceeds feature map {h}x{w}")
            a = adaptive_avgpool(x, scale, scale)
            a = relu(bn(conv(a)))
            feats.append(bilinear_upsample(a, h, w))
        return relu(self.fuse_bn(self.fuse_conv(concat(feats, axis=1))))


class ClassifierHead(Module):
    """1x1 conv to a single channel, sigmoid, bilinear upsample to the
    requested output resolution. Zero-initialized so an untrained network
    emits a uniform 0.5 probability map."""

    def __init__(self, in_ch: int, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_ch, 1, 1, zero_init=True, dtype=dtype)

    def forward(self, x: Tensor, out_h: int, out_w: int) -> Tensor:
        p = sigmoid(self.conv(x))
        if (p.shape[2], p.shape[3]) != (out_h, out_w):
            p = bilinear_upsample(p, out_h, out_w)
        return p
