"""Stochastic two-view image transformations for contrastive pretraining.

Images are float arrays shaped [3, H, W] with values in [0, 1]. The full
pipeline applied to each view is crop -> horizontal flip -> color and gray
distortion -> Gaussian blur, each driven by an explicit generator so that
(image, config, seed) fully determines the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# ITU-R BT.601 luminance weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class AugmentConfig:
    crop_scale_range: tuple[float, float] = (0.5, 1.0)
    flip_prob: float = 0.5
    color_strength: float = 0.4
    gray_prob: float = 0.2
    blur_sigma_range: tuple[float, float] = (0.1, 1.0)
    output_size: tuple[int, int] = (64, 64)

    def validate(self) -> None:
        lo, hi = self.crop_scale_range
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"crop_scale_range must satisfy 0 < min <= max <= 1, got {self.crop_scale_range}")
        if not (0 <= self.flip_prob <= 1):
            raise ValueError(f"flip_prob must be in [0,1], got {self.flip_prob}")
        if self.color_strength < 0:
            raise ValueError(f"color_strength must be >= 0, got {self.color_strength}")
        if not (0 <= self.gray_prob <= 1):
            raise ValueError(f"gray_prob must be in [0,1], got {self.gray_prob}")
        blo, bhi = self.blur_sigma_range
        if not (0 <= blo <= bhi):
            raise ValueError(f"blur_sigma_range must satisfy 0 <= min <= max, got {self.blur_sigma_range}")
        oh, ow = self.output_size
        if oh < 1 or ow < 1:
            raise ValueError(f"output_size must be positive, got {self.output_size}")


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of [C,H,W]; exact identity when sizes already match."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def random_crop_resize(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Crop a random area fraction at random aspect, then resize.

    Draws up to 10 candidate windows; if none fits, falls back to a centered
    square crop of side min(H, W).
    """
    _, h, w = img.shape
    if h < 8 or w < 8:
        raise ValueError(f"image too small to crop: {h}x{w}")
    out_h, out_w = cfg.output_size
    lo, hi = cfg.crop_scale_range
    for _ in range(10):
        frac = rng.uniform(lo, hi)
        aspect = rng.uniform(3 / 4, 4 / 3)
        area = frac * h * w
        cw = int(round(math.sqrt(area * aspect)))
        ch = int(round(math.sqrt(area / aspect)))
        if 1 <= cw <= w and 1 <= ch <= h:
            x0 = int(rng.integers(0, w - cw + 1))
            y0 = int(rng.integers(0, h - ch + 1))
            crop = img[:, y0 : y0 + ch, x0 : x0 + cw]
            return resize_bilinear(crop, out_h, out_w)
    side = min(h, w)
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    return resize_bilinear(img[:, y0 : y0 + side, x0 : x0 + side], out_h, out_w)


def _rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    r, g, b = img[0], img[1], img[2]
    maxc = img.max(axis=0)
    minc = img.min(axis=0)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(delta, 1e-12)
    hr = ((g - b) / safe) % 6
    hg = (b - r) / safe + 2
    hb = (r - g) / safe + 4
    hue = np.where(maxc == r, hr, np.where(maxc == g, hg, hb)) / 6.0
    hue = np.where(delta == 0, 0.0, hue)
    return np.stack([hue, s, v])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[0] % 1.0, hsv[1], hsv[2]
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    choices = [
        np.stack([v, t, p]),
        np.stack([q, v, p]),
        np.stack([p, v, t]),
        np.stack([p, q, v]),
        np.stack([t, p, v]),
        np.stack([v, p, q]),
    ]
    out = np.zeros_like(hsv)
    for idx, arr in enumerate(choices):
        mask = i == idx
        out[:, mask] = arr[:, mask]
    return out


def color_and_gray_distort(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Brightness/contrast/saturation/hue jitter, then optional grayscale.

    Factors are drawn even when the strength is zero so that the consumed
    random stream does not depend on the configuration values.
    """
    s = cfg.color_strength
    b_f = rng.uniform(1 - s, 1 + s)
    c_f = rng.uniform(1 - s, 1 + s)
    s_f = rng.uniform(1 - s, 1 + s)
    h_f = rng.uniform(-0.1 * s, 0.1 * s)
    gray_u = rng.uniform()

    out = img
    if b_f != 1.0:
        out = out * b_f
    if c_f != 1.0:
        mean = float((_LUMA @ out.reshape(3, -1)).mean())
        out = (out - mean) * c_f + mean
    if s_f != 1.0:
        luma = np.tensordot(_LUMA, out, axes=(0, 0))[None]
        out = luma + (out - luma) * s_f
    if h_f != 0.0:
        hsv = _rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[0] = (hsv[0] + h_f) % 1.0
        out = _hsv_to_rgb(hsv)
    if gray_u < cfg.gray_prob:
        luma = np.tensordot(_LUMA, out, axes=(0, 0))
        out = np.repeat(luma[None], 3, axis=0)
    if out is img:
        out = img.copy()
    return np.clip(out, 0.0, 1.0)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; sigma 0 is the identity.

    Padding mirrors including the edge sample (numpy's "symmetric" mode),
    which keeps the image mean exactly invariant for any normalized kernel.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    radius = int(math.ceil(3 * sigma))
    if radius == 0:
        return img.copy()
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()

    def conv_last(x: np.ndarray) -> np.ndarray:
        n = x.shape[-1]
        r = min(radius, n - 1)
        k = kernel
        if r < radius:  # renormalized narrow kernel for tiny images
            k = kernel[radius - r : radius + r + 1]
            k = k / k.sum()
        pad = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(r, r)], mode="symmetric")
        out = np.zeros_like(x)
        for i in range(2 * r + 1):
            out += k[i] * pad[..., i : i + n]
        return out

    blurred = conv_last(img)
    blurred = conv_last(blurred.swapaxes(-1, -2)).swapaxes(-1, -2)
    return blurred


def augment_view(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One full pipeline draw: crop, flip, color/gray, blur."""
    out = random_crop_resize(img, cfg, rng)
    if rng.uniform() < cfg.flip_prob:
        out = out[:, :, ::-1].copy()
    out = color_and_gray_distort(out, cfg, rng)
    lo, hi = cfg.blur_sigma_range
    sigma = rng.uniform(lo, hi)
    out = gaussian_blur(out, sigma)
    return np.clip(out, 0.0, 1.0)


def make_view_pair(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Two independent pipeline draws from disjoint substreams of ``rng``."""
    r1, r2 = rng.spawn(2)
    return augment_view(img, cfg, r1), augment_view(img, cfg, r2)
