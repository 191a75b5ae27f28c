"""Per-image test-time adaptation: pair construction, the second-order
reconstruction loss, the adaptation loop, stream drivers and the
consistency-only baseline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import imaging
from .classifier import DegradationLabel, predict_degradation
from .degrade import DegradationSpec, second_order_degrade
from .model import SRModel, charbonnier, forward_sr
from .optim import MaskedAdam
from .preserve import consistency_loss, stochastic_restore


@dataclass
class AdaptConfig:
    alpha: float = 1.0                # consistency-loss weight
    eps: float = 1e-3                 # Charbonnier constant
    steps: int = 10                   # adaptation iterations per image
    batch_size: int = 32              # degraded pairs per iteration
    lr: float = 5e-5
    rho: float = 0.5                  # fraction of adaptable scalars to freeze
    crop: int = 96                    # LR crop size (96 for x2, 64 for x4)
    scale: int = 2
    mode: str = "parameter-reset"     # or "lifelong"

    def __post_init__(self):
        if self.alpha < 0 or self.steps < 0 or self.batch_size < 1 or self.eps <= 0:
            raise ValueError(f"invalid adaptation config: {self}")
        if self.mode not in ("parameter-reset", "lifelong"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class PairBatch:
    degraded: np.ndarray              # (N, 3, crop, crop)
    reference: np.ndarray             # (N, 3, crop, crop), aligned crops of x
    specs: list[DegradationSpec]
    origins: list[tuple[int, int]]


def construct_pairs(x: np.ndarray, label: DegradationLabel, cfg: AdaptConfig,
                    rng: np.random.Generator) -> PairBatch:
    """N aligned (second-order degraded crop, crop) pairs with fresh randomness."""
    if label.is_clean:
        raise ValueError("pair construction called with an all-clean label")
    _, h, w = x.shape
    if h < cfg.crop or w < cfg.crop:
        raise ValueError(f"image {h}x{w} smaller than crop {cfg.crop}")
    refs, degs, specs, origins = [], [], [], []
    for _ in range(cfg.batch_size):
        top = int(rng.integers(h - cfg.crop + 1))
        left = int(rng.integers(w - cfg.crop + 1))
        crop = x[:, top:top + cfg.crop, left:left + cfg.crop]
        x_sd, spec = second_order_degrade(crop, label, rng)
        refs.append(crop.astype(np.float32))
        degs.append(x_sd)
        specs.append(spec)
        origins.append((top, left))
    return PairBatch(np.stack(degs), np.stack(refs), specs, origins)


def second_order_loss(model: SRModel, ref: SRModel, batch: PairBatch,
                      alpha: float, eps: float = 1e-3) -> torch.Tensor:
    """L = L_s + alpha * L_a over feature taps, mean-reduced over the batch.

    L_s compares the adapting model's taps on (x, x_sd); L_a compares the
    pretrained model's tap on x (no gradient) with the adapting model's tap
    on x_sd.  Gradients flow through every branch that depends on the
    adapting parameters.
    """
    if ref.descriptor() != model.descriptor():
        raise ValueError("adapting and reference model architectures differ")
    x = torch.from_numpy(batch.reference)
    x_sd = torch.from_numpy(batch.degraded)
    _, tap_x = model(x)
    _, tap_sd = model(x_sd)
    with torch.no_grad():
        _, tap_ref = ref(x)
    loss_s = charbonnier(tap_x - tap_sd, eps)
    loss_a = charbonnier(tap_ref - tap_sd, eps)
    return loss_s + alpha * loss_a


def adapt_image(model: SRModel, ref: SRModel, opt: MaskedAdam, x: np.ndarray,
                label: DegradationLabel, cfg: AdaptConfig, rng: np.random.Generator,
                restore_rate: float = 0.0,
                snapshot: dict[str, torch.Tensor] | None = None) -> np.ndarray:
    """Adapt on one test image (clean images skip adaptation) and predict.

    With restore_rate > 0 the stochastic-restoration baseline resets that
    fraction of adaptable scalars to the snapshot after every step.
    """
    if label.is_clean:
        pred, _ = forward_sr(ref, x)
        return pred
    for _ in range(cfg.steps):
        batch = construct_pairs(x, label, cfg, rng)
        opt.zero_grad()
        loss = second_order_loss(model, ref, batch, cfg.alpha, cfg.eps)
        loss.backward()
        opt.step()
        if restore_rate > 0.0:
            stochastic_restore(model.adaptable_parameters(), snapshot, restore_rate,
                               rng, opt)
    pred, _ = forward_sr(model, x)
    return pred


def tta_c_adapt_image(model: SRModel, opt: MaskedAdam, x: np.ndarray,
                      cfg: AdaptConfig) -> np.ndarray:
    """Consistency-only baseline: adapt with the augmentation loss on x itself."""
    xt = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    for _ in range(cfg.steps):
        opt.zero_grad()
        loss = consistency_loss(model, xt, cfg.eps)
        loss.backward()
        opt.step()
    pred, _ = forward_sr(model, x)
    return pred


@dataclass
class StreamEntry:
    name: str
    domain: str
    image: np.ndarray
    ground_truth: np.ndarray | None = None


@dataclass
class StreamRow:
    domain: str
    method: str
    image: str
    psnr_db: float | None
    ssim: float | None
    seconds: float


@dataclass
class StreamResult:
    rows: list[StreamRow] = field(default_factory=list)
    predictions: dict[str, np.ndarray] = field(default_factory=dict)


def reset_params(model: SRModel, snapshot: dict[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for n, p in model.named_parameters():
            p.copy_(snapshot[n])


def snapshot_params(model: SRModel) -> dict[str, torch.Tensor]:
    return {n: p.detach().clone() for n, p in model.named_parameters()}


def run_stream(model: SRModel, ref: SRModel, entries: list[StreamEntry], classifier,
               opt: MaskedAdam, cfg: AdaptConfig, rng: np.random.Generator,
               method: str = "srtta", restore_rate: float = 0.0) -> StreamResult:
    """Drive a test stream in manifest order.

    In parameter-reset mode the adapting parameters and optimizer state are
    restored to the pretrained snapshot at every domain boundary; lifelong
    mode carries them across domains.  The classifier is invoked once per
    image; `method` selects srtta / tta-c / no-adapt behavior.
    """
    if method not in ("srtta", "tta-c", "no-adapt"):
        raise ValueError(f"unknown method {method!r}")
    snapshot = snapshot_params(ref)
    result = StreamResult()
    current_domain = None
    for entry in entries:
        if entry.domain != current_domain:
            if current_domain is not None and cfg.mode == "parameter-reset":
                reset_params(model, snapshot)
                opt.reset_state()
            current_domain = entry.domain
        t0 = time.monotonic()
        if method == "no-adapt":
            pred, _ = forward_sr(ref, entry.image)
        elif method == "tta-c":
            pred = tta_c_adapt_image(model, opt, entry.image, cfg)
        else:
            label = predict_degradation(classifier, entry.image)
            pred = adapt_image(model, ref, opt, entry.image, label, cfg, rng,
                               restore_rate=restore_rate, snapshot=snapshot)
        seconds = time.monotonic() - t0
        if entry.ground_truth is not None:
            p = imaging.psnr(entry.ground_truth, pred)
            s = imaging.ssim(entry.ground_truth, pred)
        else:
            p = s = None
        result.rows.append(StreamRow(entry.domain, method, entry.name, p, s, seconds))
        result.predictions[entry.name] = pred
    return result
