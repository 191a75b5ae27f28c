"""Supervised pretraining of the SR model on clean bicubic pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .imaging import bicubic_resize, psnr
from .model import SRModel, charbonnier, forward_sr

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    steps: int = 20000
    batch_size: int = 16
    lr: float = 1e-4                  # halved at 50% and 75% of the budget
    crop: int = 32                    # LR crop size
    blocks: int = 4
    channels: int = 32
    scale: int = 2
    holdout: int = 8                  # corpus images held out for validation
    seed: int = 0
    log_every: int = 500


def make_clean_pairs(corpus: dict[str, np.ndarray], scale: int,
                     ) -> list[tuple[np.ndarray, np.ndarray]]:
    """(LR, HR) pairs by bicubic downsampling, center-cropped to a multiple of scale."""
    pairs = []
    for name in sorted(corpus):
        hr = corpus[name]
        _, h, w = hr.shape
        hr = hr[:, :h - h % scale, :w - w % scale]
        pairs.append((bicubic_resize(hr, 1.0 / scale).astype(np.float32),
                      hr.astype(np.float32)))
    return pairs


def pretrain_sr(corpus: dict[str, np.ndarray], cfg: PretrainConfig) -> tuple[SRModel, dict]:
    """Charbonnier-loss training on random clean crops; returns (model, stats)."""
    if len(corpus) < cfg.holdout + 2:
        raise ValueError(f"corpus of {len(corpus)} images too small")
    pairs = make_clean_pairs(corpus, cfg.scale)
    rng = np.random.default_rng(cfg.seed)
    holdout_idx = set(rng.choice(len(pairs), size=cfg.holdout, replace=False).tolist())
    train_pairs = [p for i, p in enumerate(pairs) if i not in holdout_idx]
    val_pairs = [p for i, p in enumerate(pairs) if i in holdout_idx]

    model = SRModel(blocks=cfg.blocks, channels=cfg.channels, scale=cfg.scale,
                    init_seed=cfg.seed + 0x5EED)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    for step in range(cfg.steps):
        if step in (cfg.steps // 2, (3 * cfg.steps) // 4):
            for g in opt.param_groups:
                g["lr"] /= 2.0
        lrs, hrs = [], []
        for _ in range(cfg.batch_size):
            lr_img, hr_img = train_pairs[int(rng.integers(len(train_pairs)))]
            _, h, w = lr_img.shape
            top = int(rng.integers(h - cfg.crop + 1))
            left = int(rng.integers(w - cfg.crop + 1))
            lrs.append(lr_img[:, top:top + cfg.crop, left:left + cfg.crop])
            hrs.append(hr_img[:, cfg.scale * top:cfg.scale * (top + cfg.crop),
                              cfg.scale * left:cfg.scale * (left + cfg.crop)])
        x = torch.from_numpy(np.stack(lrs))
        t = torch.from_numpy(np.stack(hrs))
        y, _ = model(x)
        loss = charbonnier(y - t)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite pretraining loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("pretrain step %d loss %.5f", step, loss.item())

    stats = evaluate_clean(model, val_pairs)
    log.info("pretrain done: val PSNR %.2f dB (bicubic %.2f dB)",
             stats["model_psnr"], stats["bicubic_psnr"])
    return model, stats


def evaluate_clean(model: SRModel, pairs: list[tuple[np.ndarray, np.ndarray]]) -> dict:
    """Mean PSNR of the model and of plain bicubic upsampling on (LR, HR) pairs."""
    model_scores, bicubic_scores = [], []
    for lr_img, hr_img in pairs:
        pred, _ = forward_sr(model, lr_img)
        model_scores.append(psnr(hr_img, pred))
        up = bicubic_resize(lr_img, float(model.scale)).astype(np.float32)
        bicubic_scores.append(psnr(hr_img, up))
    return {"model_psnr": float(np.mean(model_scores)),
            "bicubic_psnr": float(np.mean(bicubic_scores)),
            "n": len(pairs)}
