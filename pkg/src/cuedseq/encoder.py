"""Convolutional image encoder and nonlinear projection head.

The encoder is a compact pre-activation residual network: a 3x3 stem
followed by one downsampling stage per entry in ``block_channels``. Batch
normalization is replaced by a learnable per-channel scale and shift so
that inference is a pure function of the parameters and gradient checks
stay exact. The projection head is two bias-free linear maps with a ReLU
in between, applied to the pooled feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import params as P
from .tensor import Tensor, add, conv2d, linear, matmul, mul, relu, reshape, tmean

CONV_KERNEL = 3


@dataclass
class EncoderConfig:
    input_size: tuple[int, int] = (64, 64)
    stem_channels: int = 16
    block_channels: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: int = 1
    feature_dim: int = 128

    def validate(self) -> None:
        if self.feature_dim != self.block_channels[-1]:
            raise ValueError(
                f"feature_dim {self.feature_dim} must equal the last stage width {self.block_channels[-1]}"
            )
        dims = (self.stem_channels, self.feature_dim, self.blocks_per_stage, *self.input_size, *self.block_channels)
        if any(d < 1 for d in dims):
            raise ValueError("all encoder dimensions must be positive")
        h, w = self.input_size
        if min(h, w) < 2 ** len(self.block_channels):
            raise ValueError(
                f"input {h}x{w} too small for {len(self.block_channels)} downsampling stages"
            )


def encoder_preset(name: str) -> EncoderConfig:
    if name == "desk":
        return EncoderConfig()
    if name == "resnet18-like":
        return EncoderConfig(
            stem_channels=64,
            block_channels=(64, 128, 256, 512),
            blocks_per_stage=2,
            feature_dim=512,
        )
    raise ValueError(f"unknown encoder preset {name!r}")


def _centered_filters(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    # He init with per-filter mean removed: without batch normalization a
    # filter whose DC response dominates tends to die under relu at init.
    t = P.he_normal(rng, shape, fan_in)
    t.data -= t.data.mean(axis=(1, 2, 3), keepdims=True)
    return t


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    cfg.validate()
    k = CONV_KERNEL
    out: dict[str, Tensor] = {}
    out["enc.stem.w"] = _centered_filters(rng, (cfg.stem_channels, 3, k, k), 3 * k * k)
    cin = cfg.stem_channels
    for s, cout in enumerate(cfg.block_channels):
        for b in range(cfg.blocks_per_stage):
            pre = f"enc.s{s}.b{b}."
            bin_ = cin if b == 0 else cout
            out[pre + "ss1.g"] = P.ones((bin_,))
            out[pre + "ss1.b"] = P.zeros((bin_,))
            out[pre + "conv1.w"] = _centered_filters(rng, (cout, bin_, k, k), bin_ * k * k)
            out[pre + "ss2.g"] = P.ones((cout,))
            out[pre + "ss2.b"] = P.zeros((cout,))
            out[pre + "conv2.w"] = _centered_filters(rng, (cout, cout, k, k), cout * k * k)
            if b == 0:
                out[pre + "proj.w"] = P.he_normal(rng, (cout, bin_, 1, 1), bin_)
        cin = cout
    return out


def _scale_shift(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    c = g.shape[0]
    g4 = reshape(g, (1, c, 1, 1))
    b4 = reshape(b, (1, c, 1, 1))
    return add(mul(x, g4), b4)


def encode(x: Tensor, enc_params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Map an image [3,H,W] (or batch [B,3,H,W]) to features [D] (or [B,D])."""
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[1] != 3 or (x.shape[2], x.shape[3]) != cfg.input_size:
        raise ValueError(f"expected [B,3,{cfg.input_size[0]},{cfg.input_size[1]}] input, got {x.shape}")

    h = conv2d(x, enc_params["enc.stem.w"], stride=1, padding=1)
    for s in range(len(cfg.block_channels)):
        for b in range(cfg.blocks_per_stage):
            pre = f"enc.s{s}.b{b}."
            stride = 2 if b == 0 else 1
            a = relu(_scale_shift(h, enc_params[pre + "ss1.g"], enc_params[pre + "ss1.b"]))
            main = conv2d(a, enc_params[pre + "conv1.w"], stride=stride, padding=1)
            main = relu(_scale_shift(main, enc_params[pre + "ss2.g"], enc_params[pre + "ss2.b"]))
            main = conv2d(main, enc_params[pre + "conv2.w"], stride=1, padding=1)
            if b == 0:
                short = conv2d(a, enc_params[pre + "proj.w"], stride=stride, padding=0)
            else:
                short = h
            h = add(main, short)
    pooled = tmean(h, axis=(2, 3))  # [B, D]
    if squeeze:
        pooled = reshape(pooled, (pooled.shape[1],))
    return pooled


@dataclass
class ProjectionHead:
    """Two bias-free linear maps with a ReLU between them."""

    w1: Tensor
    w2: Tensor

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def named(self, prefix: str = "proj.") -> dict[str, Tensor]:
        return {prefix + "w1": self.w1, prefix + "w2": self.w2}


def init_projection(feature_dim: int, out_dim: int, rng: np.random.Generator) -> ProjectionHead:
    return ProjectionHead(
        w1=P.he_normal(rng, (feature_dim, feature_dim), feature_dim),
        w2=P.he_normal(rng, (feature_dim, out_dim), feature_dim),
    )


def project(h: Tensor, head: ProjectionHead) -> Tensor:
    """z = relu(h W1) W2 for a feature vector [D] or a batch [B,D]."""
    squeeze = h.ndim == 1
    if squeeze:
        h = reshape(h, (1, h.shape[0]))
    if h.shape[1] != head.w1.shape[0]:
        raise ValueError(f"feature size {h.shape[1]} does not match head input {head.w1.shape[0]}")
    z = matmul(relu(matmul(h, head.w1)), head.w2)
    if squeeze:
        z = reshape(z, (z.shape[1],))
    return z
