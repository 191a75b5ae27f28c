"""Micro-EDSR super-resolution model and its building-block ops.

The network is the EDSR-baseline topology at desk scale: head conv, B
residual blocks (conv-ReLU-conv with identity skip), a tail conv with a
global skip, a pixel-shuffle upsampler and an output conv.  The feature tap
is the activation entering the final output conv (after the upsampler).
Only the residual-block parameters are adaptable at test time.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .imaging import validate_image


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
           padding: str = "same") -> torch.Tensor:
    """Cross-correlation with replicate-edge same-padding (or valid)."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x[None]
    if weight.dim() != 4:
        raise ValueError(f"weight must be (out,in,kH,kW), got {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"input channels {x.shape[1]} != weight in-channels {weight.shape[1]}")
    kh, kw = weight.shape[2], weight.shape[3]
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("same-padding requires odd kernel dims")
        x = F.pad(x, (kw // 2, kw // 2, kh // 2, kh // 2), mode="replicate")
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    out = F.conv2d(x, weight, bias)
    return out[0] if squeeze else out


def pixel_shuffle(t: torch.Tensor, r: int) -> torch.Tensor:
    """(C*r^2, H, W) -> (C, rH, rW) sub-pixel rearrangement; r=1 is the identity."""
    squeeze = t.dim() == 3
    if squeeze:
        t = t[None]
    if t.shape[1] % (r * r) != 0:
        raise ValueError(f"channels {t.shape[1]} not divisible by r^2={r * r}")
    out = F.pixel_shuffle(t, r)
    return out[0] if squeeze else out


def pixel_unshuffle(t: torch.Tensor, r: int) -> torch.Tensor:
    squeeze = t.dim() == 3
    if squeeze:
        t = t[None]
    out = F.pixel_unshuffle(t, r)
    return out[0] if squeeze else out


class _Conv(nn.Module):
    def __init__(self, cin: int, cout: int, k: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(cout, cin, k, k))
        self.bias = nn.Parameter(torch.zeros(cout))

    def forward(self, x):
        return conv2d(x, self.weight, self.bias)


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = _Conv(channels, channels)
        self.conv2 = _Conv(channels, channels)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class SRModel(nn.Module):
    """Micro-EDSR with a feature tap before the output conv.

    forward() returns (pre-clamp output, tap) for (N,3,H,W) input; the output
    is (N,3,sH,sW).
    """

    def __init__(self, blocks: int = 4, channels: int = 32, scale: int = 2,
                 init_seed: int = 0x5EED):
        super().__init__()
        if scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {scale}")
        self.init_seed = init_seed
        self.blocks = blocks
        self.channels = channels
        self.scale = scale
        self.head = _Conv(3, channels)
        self.body = nn.ModuleList(ResBlock(channels) for _ in range(blocks))
        self.tail = _Conv(channels, channels)
        n_stages = 1 if scale == 2 else 2
        self.ups = nn.ModuleList(_Conv(channels, channels * 4) for _ in range(n_stages))
        self.out = _Conv(channels, 3)
        # tap index: position of the tapped activation in the conv chain
        self.tap_index = 2 + 2 * blocks + n_stages
        self._init_params()

    def _init_params(self):
        gen = torch.Generator().manual_seed(self.init_seed)
        for name, p in sorted(self.named_parameters()):
            if p.dim() == 4:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                bound = (1.0 / fan_in) ** 0.5
                with torch.no_grad():
                    p.copy_(torch.rand(p.shape, generator=gen) * 2 * bound - bound)
            else:
                with torch.no_grad():
                    p.zero_()

    def descriptor(self) -> dict:
        return {"kind": "sr", "blocks": self.blocks, "channels": self.channels,
                "scale": self.scale, "tap_index": self.tap_index}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "SRModel":
        if desc.get("kind") != "sr":
            raise ValueError(f"descriptor kind {desc.get('kind')!r} is not an SR model")
        return cls(blocks=desc["blocks"], channels=desc["channels"], scale=desc["scale"])

    def adaptable_parameters(self) -> list[tuple[str, nn.Parameter]]:
        """Residual-block parameters, in lexicographic name order."""
        return sorted(((n, p) for n, p in self.named_parameters() if n.startswith("body.")),
                      key=lambda np_: np_[0])

    def forward(self, x: torch.Tensor):
        squeeze = x.dim() == 3
        if squeeze:
            x = x[None]
        h = self.head(x)
        r = h
        for blk in self.body:
            r = blk(r)
        r = self.tail(r) + h
        for up in self.ups:
            r = pixel_shuffle(up(r), 2)
        tap = r
        y = self.out(tap)
        if squeeze:
            y, tap = y[0], tap[0]
        return y, tap


def charbonnier(diff: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Mean elementwise sqrt(d^2 + eps); floor is sqrt(eps) at zero difference."""
    return torch.sqrt(diff * diff + eps).mean()


def forward_sr(model: SRModel, img: np.ndarray) -> tuple[np.ndarray, torch.Tensor]:
    """Super-resolve a [0,1] (3,H,W) image; returns (clamped prediction, tap)."""
    img = validate_image(img, min_size=8)
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(img)).to(dtype)
    with torch.no_grad():
        y, tap = model(x)
    pred = y.clamp(0.0, 1.0).numpy().astype(np.float32)
    return pred, tap
