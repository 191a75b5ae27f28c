"""Random degradation sampling and application: blur, noise, JPEG.

Implements the classical degradation chain (blur -> downsample -> noise ->
JPEG) for first-order corpus construction and the label-conditioned
second-order chain (blur -> noise -> JPEG at constant resolution) used to
build adaptation pairs.  Parameter ranges:

  blur   size in {7,9,...,21}, sigma in [0.2, 3], isotropic w.p. 0.5,
         anisotropic rotation angle in [-pi, pi]
  noise  standard-normal map scaled by u ~ U[1, 30] / 255,
         per-channel w.p. 0.6, otherwise shared across channels
  jpeg   quality q ~ U{30..95} (second-order) or U{30..90} (benchmarks)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import bicubic_resize, clamp01, validate_image
from .jpeg import jpeg_codec

BLUR_SIZES = tuple(range(7, 22, 2))
SIGMA_RANGE = (0.2, 3.0)
NOISE_SCALE_RANGE = (1.0, 30.0)
PER_CHANNEL_PROB = 0.6
ISOTROPIC_PROB = 0.5
JPEG_Q_SECOND_ORDER = (30, 95)
JPEG_Q_BENCHMARK = (30, 90)


@dataclass
class BlurKernel:
    size: int
    sigma1: float
    sigma2: float
    angle: float
    weights: np.ndarray

    def to_json(self) -> dict:
        return {"size": self.size, "sigma1": self.sigma1, "sigma2": self.sigma2,
                "angle": self.angle}

    @classmethod
    def from_params(cls, size: int, sigma1: float, sigma2: float, angle: float) -> "BlurKernel":
        return cls(size, sigma1, sigma2, angle, gaussian_kernel(size, sigma1, sigma2, angle))


@dataclass
class NoiseSpec:
    per_channel: bool
    scale: float
    seed: int

    def to_json(self) -> dict:
        return {"per_channel": self.per_channel, "scale": self.scale, "seed": self.seed}


@dataclass
class JpegSpec:
    quality: int

    def to_json(self) -> dict:
        return {"quality": self.quality}


@dataclass
class DegradationSpec:
    blur: BlurKernel | None = None
    noise: NoiseSpec | None = None
    jpeg: JpegSpec | None = None
    scale: int = 2
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "blur": self.blur.to_json() if self.blur else None,
            "noise": self.noise.to_json() if self.noise else None,
            "jpeg": self.jpeg.to_json() if self.jpeg else None,
            "scale": self.scale,
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DegradationSpec":
        blur = BlurKernel.from_params(**d["blur"]) if d.get("blur") else None
        noise = NoiseSpec(**d["noise"]) if d.get("noise") else None
        jpg = JpegSpec(**d["jpeg"]) if d.get("jpeg") else None
        return cls(blur=blur, noise=noise, jpeg=jpg, scale=d.get("scale", 2),
                   extra=d.get("extra", {}))


def gaussian_kernel(size: int, sigma1: float, sigma2: float, angle: float) -> np.ndarray:
    """Rotated bivariate Gaussian on the integer grid, normalized to sum 1."""
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    ax = np.arange(size) - size // 2
    xx, yy = np.meshgrid(ax, ax)
    c, s = np.cos(angle), np.sin(angle)
    # coordinates in the kernel's principal-axis frame
    u = c * xx + s * yy
    v = -s * xx + c * yy
    w = np.exp(-0.5 * ((u / sigma1) ** 2 + (v / sigma2) ** 2))
    return w / w.sum()


def sample_gaussian_kernel(rng: np.random.Generator) -> BlurKernel:
    size = int(rng.choice(BLUR_SIZES))
    sigma1 = float(rng.uniform(*SIGMA_RANGE))
    if rng.random() < ISOTROPIC_PROB:
        sigma2, angle = sigma1, 0.0
    else:
        sigma2 = float(rng.uniform(*SIGMA_RANGE))
        angle = float(rng.uniform(-np.pi, np.pi))
    return BlurKernel.from_params(size, sigma1, sigma2, angle)


def apply_blur(img: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Per-channel 2-D convolution with replicate-edge padding."""
    img = validate_image(img)
    if img.shape[1] < kernel.size or img.shape[2] < kernel.size:
        raise ValueError(f"image {img.shape[1:]} smaller than kernel {kernel.size}")
    # the sampled kernels are point-symmetric, so correlation == convolution
    out = np.stack([ndimage.correlate(ch.astype(np.float64), kernel.weights, mode="nearest")
                    for ch in img])
    return clamp01(out).astype(img.dtype if img.dtype == np.float64 else np.float32)


def sample_noise(rng: np.random.Generator, shape: tuple[int, int, int],
                 scale: float | None = None) -> tuple[NoiseSpec, np.ndarray]:
    """Scaled standard-normal noise map; not clamped (clamp after addition)."""
    c, h, w = shape
    if scale is None:
        scale = float(rng.uniform(*NOISE_SCALE_RANGE))
    per_channel = bool(rng.random() < PER_CHANNEL_PROB) if c == 3 else True
    seed = int(rng.integers(0, 2**31 - 1))
    sub = np.random.default_rng(seed)
    if per_channel:
        noise = sub.standard_normal((c, h, w))
    else:
        noise = np.broadcast_to(sub.standard_normal((1, h, w)), (c, h, w)).copy()
    return NoiseSpec(per_channel, scale, seed), noise * (scale / 255.0)


def first_order_degrade(y: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply the present components in the order blur -> downsample -> noise -> JPEG."""
    y = validate_image(y)
    s = spec.scale
    if y.shape[1] % s or y.shape[2] % s:
        raise ValueError(f"HR dims {y.shape[1:]} not divisible by scale {s}")
    x = y
    if spec.blur is not None:
        x = apply_blur(x, spec.blur)
    x = bicubic_resize(x, 1.0 / s)
    if spec.noise is not None:
        sub = np.random.default_rng(spec.noise.seed)
        if spec.noise.per_channel:
            n = sub.standard_normal(x.shape)
        else:
            n = np.broadcast_to(sub.standard_normal((1,) + x.shape[1:]), x.shape)
        x = clamp01(x + n * (spec.noise.scale / 255.0)).astype(x.dtype)
    if spec.jpeg is not None:
        x = jpeg_codec(x, spec.jpeg.quality)
    return x


def second_order_degrade(x: np.ndarray, label, rng: np.random.Generator,
                         ) -> tuple[np.ndarray, DegradationSpec]:
    """Label-conditioned further degradation at constant resolution.

    Applies blur iff label.c_b, additive noise iff label.c_n and JPEG iff
    label.c_j, with parameters sampled fresh from the second-order ranges.
    """
    x = validate_image(x)
    if label.is_clean:
        raise ValueError("second-order degradation called with an all-clean label")
    spec = DegradationSpec(scale=1)
    out = x.astype(np.float64)
    if label.c_b:
        spec.blur = sample_gaussian_kernel(rng)
        out = apply_blur(out, spec.blur).astype(np.float64)
    if label.c_n:
        spec.noise, noise = sample_noise(rng, out.shape)
        out = clamp01(out + noise)
    if label.c_j:
        spec.jpeg = JpegSpec(int(rng.integers(JPEG_Q_SECOND_ORDER[0], JPEG_Q_SECOND_ORDER[1] + 1)))
        out = jpeg_codec(out, spec.jpeg.quality)
    return out.astype(np.float32), spec
