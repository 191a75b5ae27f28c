"""Minimal JPEG round-trip codec: DCT, quantization, inverse DCT.

Implements the lossy core of baseline JPEG at 4:4:4 chroma: BT.601 RGB->YCbCr,
8x8 block DCT, quantization with the standard base tables scaled by the
libjpeg quality curve, dequantization and reconstruction.  Entropy coding is
lossless and therefore omitted; the decoded output is identical to what a
full encode/decode would produce.
"""

from __future__ import annotations

import numpy as np

from .imaging import clamp01, validate_image

# Standard luminance / chrominance quantization tables (quality 50 base).
LUMA_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

CHROMA_QTABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def _dct_matrix() -> np.ndarray:
    n = 8
    d = np.zeros((n, n))
    for u in range(n):
        cu = np.sqrt(1.0 / n) if u == 0 else np.sqrt(2.0 / n)
        for x in range(n):
            d[u, x] = cu * np.cos((2 * x + 1) * u * np.pi / (2 * n))
    return d


_DCT = _dct_matrix()


def scaled_qtable(base: np.ndarray, quality: int) -> np.ndarray:
    """Quality-scaled quantization table (libjpeg convention)."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality {quality} outside [1,100]")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    q = np.floor((base * scale + 50.0) / 100.0)
    return np.clip(q, 1.0, 255.0)


def _rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr])


def _ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc
    cb = cb - 128.0
    cr = cr - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b])


def _blockwise_quantize_roundtrip(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph = (8 - h % 8) % 8
    pw = (8 - w % 8) % 8
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    hh, ww = padded.shape
    blocks = padded.reshape(hh // 8, 8, ww // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coeffs = np.einsum("ux,bcxy,vy->bcuv", _DCT, blocks, _DCT)
    quant = np.round(coeffs / qtable) * qtable
    recon = np.einsum("ux,bcuv,vy->bcxy", _DCT, quant, _DCT)
    recon = recon.transpose(0, 2, 1, 3).reshape(hh, ww) + 128.0
    return recon[:h, :w]


def jpeg_codec(img: np.ndarray, quality: int) -> np.ndarray:
    """Encode-decode round trip at the given quality factor, 4:4:4 chroma."""
    img = validate_image(img, min_size=1)
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"quality {quality} outside [1,100]")
    quality = int(quality)
    x = np.asarray(img, dtype=np.float64) * 255.0
    if img.shape[0] == 3:
        ycc = _rgb_to_ycbcr(x)
        qt = [scaled_qtable(LUMA_QTABLE, quality)] + [scaled_qtable(CHROMA_QTABLE, quality)] * 2
        recon = np.stack([_blockwise_quantize_roundtrip(ycc[i], qt[i]) for i in range(3)])
        out = _ycbcr_to_rgb(recon)
    else:
        qt = scaled_qtable(LUMA_QTABLE, quality)
        out = _blockwise_quantize_roundtrip(x[0], qt)[None]
    return clamp01(out / 255.0).astype(img.dtype if img.dtype == np.float64 else np.float32)
