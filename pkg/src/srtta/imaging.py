"""Image representation, resampling, PNG I/O and full-reference quality metrics.

Images are numpy float32/float64 arrays of shape (C, H, W) with samples in
[0, 1], C in {1, 3}.  Conversion to/from 8-bit happens only at the PNG
boundary.  All functions here are pure.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

PSNR_CAP_DB = 99.0

#: BT.601 luminance weights used for SSIM on RGB inputs.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImagingError(ValueError):
    pass


def validate_image(img: np.ndarray, min_size: int = 1) -> np.ndarray:
    """Check the (C, H, W) range/shape contract, returning the array."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ImagingError(f"expected (C,H,W) with C in {{1,3}}, got shape {img.shape}")
    if img.shape[1] < min_size or img.shape[2] < min_size:
        raise ImagingError(f"image {img.shape[1]}x{img.shape[2]} smaller than {min_size}")
    if not np.isfinite(img).all():
        raise ImagingError("image contains non-finite samples")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ImagingError("image samples outside [0,1]")
    return img


def clamp01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def read_png(path) -> np.ndarray:
    """Read an 8-bit RGB or grayscale PNG into a (C, H, W) float array in [0,1]."""
    with PILImage.open(path) as im:
        if im.mode not in ("RGB", "L"):
            if im.mode in ("RGBA", "P", "LA"):
                im = im.convert("RGB")
            else:
                raise ImagingError(f"unsupported PNG mode {im.mode!r} in {path}")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr


def write_png(path, img: np.ndarray) -> None:
    """Write a [0,1] image as an 8-bit PNG (round(v*255) per sample)."""
    img = validate_image(img)
    u8 = np.round(np.asarray(img, dtype=np.float64) * 255.0).astype(np.uint8)
    if u8.shape[0] == 1:
        pil = PILImage.fromarray(u8[0], mode="L")
    else:
        pil = PILImage.fromarray(u8.transpose(1, 2, 0), mode="RGB")
    pil.save(path, format="PNG")


def _cubic(x: np.ndarray) -> np.ndarray:
    """Keys cubic-convolution kernel with a = -0.5."""
    x = np.abs(x)
    x2 = x * x
    x3 = x2 * x
    out = np.where(x <= 1, 1.5 * x3 - 2.5 * x2 + 1, 0.0)
    out = np.where((x > 1) & (x < 2), -0.5 * x3 + 2.5 * x2 - 4 * x + 2, out)
    return out


def _resize_weights(in_size: int, out_size: int, scale: float):
    """Per-output-row kernel weights and clamped source indices (imresize-style).

    For scale < 1 the kernel is widened by 1/scale (antialias).
    """
    kernel_width = 4.0
    if scale < 1:
        kernel_width /= scale
    # output sample u maps to input coordinate (u + 0.5)/scale - 0.5
    u = (np.arange(out_size) + 0.5) / scale - 0.5
    left = np.floor(u - kernel_width / 2).astype(int) + 1
    p = int(np.ceil(kernel_width)) + 2
    idx = left[:, None] + np.arange(p)[None, :]
    dist = u[:, None] - idx
    if scale < 1:
        w = scale * _cubic(dist * scale)
    else:
        w = _cubic(dist)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_size - 1)
    return w, idx


def bicubic_resize(img: np.ndarray, scale: float) -> np.ndarray:
    """Cubic-convolution resampling (Keys a=-0.5, widened kernel when downscaling).

    scale = 1 is the identity; output dims are round(input * scale).
    """
    img = validate_image(img)
    if scale == 1:
        return img.copy()
    c, h, w = img.shape
    out_h = int(round(h * scale))
    out_w = int(round(w * scale))
    if out_h < 1 or out_w < 1:
        raise ImagingError(f"resize of {h}x{w} by {scale} collapses to zero size")
    wr, ir = _resize_weights(h, out_h, scale)
    wc, ic = _resize_weights(w, out_w, scale)
    out = _resample_axis(_resample_axis(img.astype(np.float64), wr, ir, axis=1), wc, ic, axis=2)
    return clamp01(out if img.dtype == np.float64 else out.astype(np.float32))


def _resample_axis(img: np.ndarray, w: np.ndarray, idx: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(img, axis, -1)
    gathered = moved[..., idx]            # (..., out, p)
    res = (gathered * w).sum(axis=-1)     # (..., out)
    return np.moveaxis(res, -1, axis)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB on all samples jointly, capped at 99.0 for (near-)identical inputs."""
    a = validate_image(a)
    b = validate_image(b)
    if a.shape != b.shape:
        raise ImagingError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) on luminance.

    K1=0.01, K2=0.03, dynamic range 1.0.  RGB inputs are reduced to BT.601
    luminance first; returns exactly 1.0 for identical images.
    """
    a = validate_image(a, min_size=11)
    b = validate_image(b, min_size=11)
    if a.shape != b.shape:
        raise ImagingError(f"shape mismatch {a.shape} vs {b.shape}")
    x = _luma(a)
    y = _luma(b)
    if np.array_equal(x, y):
        return 1.0
    win = _gaussian_window()
    c1 = 0.01**2
    c2 = 0.03**2

    def filt(z):
        return ndimage.correlate(z, win, mode="constant")[5:-5, 5:-5]

    mu_x = filt(x)
    mu_y = filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def _luma(img: np.ndarray) -> np.ndarray:
    if img.shape[0] == 1:
        return img[0].astype(np.float64)
    return np.tensordot(LUMA_WEIGHTS, img.astype(np.float64), axes=(0, 0))
