"""Anti-forgetting machinery: dihedral augmentations, consistency loss,
Fisher-information importance scores, top-rho freezing, stochastic restore.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .model import charbonnier
from .optim import MaskedAdam


@dataclass(frozen=True)
class AugmentOp:
    """One of the 8 dihedral transforms: optional 90-degree rotation then flips."""
    rotate90: bool
    hflip: bool
    vflip: bool

    def apply(self, x):
        if self.rotate90:
            x = _rot90(x, 1)
        if self.hflip:
            x = _flip(x, -1)
        if self.vflip:
            x = _flip(x, -2)
        return x

    def invert(self, x):
        if self.vflip:
            x = _flip(x, -2)
        if self.hflip:
            x = _flip(x, -1)
        if self.rotate90:
            x = _rot90(x, -1)
        return x


def _rot90(x, k):
    if isinstance(x, torch.Tensor):
        return torch.rot90(x, k, dims=(-2, -1))
    return np.rot90(x, k, axes=(-2, -1)).copy()


def _flip(x, axis):
    if isinstance(x, torch.Tensor):
        return torch.flip(x, dims=(axis,))
    return np.flip(x, axis=axis).copy()


AUGMENT_GROUP = tuple(
    AugmentOp(r, h, v) for r in (False, True) for h in (False, True) for v in (False, True)
)


def augment8(x):
    """All 8 dihedral transforms of x, paired with their ops."""
    return [(op, op.apply(x)) for op in AUGMENT_GROUP]


def consistency_loss(model, x: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Charbonnier distance between f(x) and the augmentation-averaged pseudo-label.

    The pseudo-label is the mean of the 8 back-transformed predictions and is
    a stop-gradient constant; gradients flow only through the plain forward.
    """
    with torch.no_grad():
        preds = [op.invert(model(op.apply(x))[0]) for op in AUGMENT_GROUP]
        target = torch.stack(preds).mean(dim=0)
    y, _ = model(x)
    return charbonnier(y - target, eps)


@dataclass
class FisherScores:
    scores: dict[str, np.ndarray]     # per-scalar importance, adaptable params only
    clean_count: int

    def total_scalars(self) -> int:
        return sum(a.size for a in self.scores.values())


def fisher_scores(model, clean_images: list[np.ndarray], eps: float = 1e-3) -> FisherScores:
    """Mean squared consistency-loss gradient per adaptable scalar (diagonal Fisher)."""
    if not clean_images:
        raise ValueError("clean set is empty")
    named = model.adaptable_parameters()
    acc = {n: np.zeros(p.shape, dtype=np.float64) for n, p in named}
    for img in clean_images:
        x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
        for _, p in named:
            p.grad = None
        loss = consistency_loss(model, x, eps)
        loss.backward()
        for n, p in named:
            if p.grad is not None:
                acc[n] += p.grad.numpy().astype(np.float64) ** 2
        model.zero_grad()
    k = len(clean_images)
    return FisherScores({n: a / k for n, a in acc.items()}, k)


def select_frozen(scores: FisherScores, rho: float) -> dict[str, torch.Tensor]:
    """Freeze exactly ceil(rho * P) scalars with the largest scores.

    Ties break by lexicographic (parameter name, flat index) order.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho {rho} outside [0,1]")
    names = sorted(scores.scores)
    flat = np.concatenate([scores.scores[n].ravel() for n in names])
    total = flat.size
    k = math.ceil(rho * total)
    chosen = np.zeros(total, dtype=bool)
    if k > 0:
        order = np.argsort(-flat, kind="stable")
        chosen[order[:k]] = True
    masks: dict[str, torch.Tensor] = {}
    pos = 0
    for n in names:
        size = scores.scores[n].size
        masks[n] = torch.from_numpy(
            chosen[pos:pos + size].reshape(scores.scores[n].shape).copy())
        pos += size
    return masks


def random_frozen(model, rho: float, rng: np.random.Generator) -> dict[str, torch.Tensor]:
    """Random-selection baseline: freeze ceil(rho * P) uniformly chosen scalars."""
    named = model.adaptable_parameters()
    sizes = [(n, tuple(p.shape), p.numel()) for n, p in sorted(named, key=lambda t: t[0])]
    total = sum(s for _, _, s in sizes)
    k = math.ceil(rho * total)
    chosen = np.zeros(total, dtype=bool)
    chosen[rng.choice(total, size=k, replace=False)] = True
    masks = {}
    pos = 0
    for n, shape, size in sizes:
        masks[n] = torch.from_numpy(chosen[pos:pos + size].reshape(shape).copy())
        pos += size
    return masks


def stochastic_restore(named_params, ref_values: dict[str, torch.Tensor], rate: float,
                       rng: np.random.Generator, adam: MaskedAdam | None = None) -> None:
    """Reset each scalar to its pretrained value independently with the given rate.

    Adam moments for the reset scalars are zeroed.
    """
    with torch.no_grad():
        for n, p in named_params:
            if n not in ref_values:
                raise KeyError(f"no pretrained snapshot for parameter {n!r}")
            ref = ref_values[n]
            if ref.shape != p.shape:
                raise ValueError(f"snapshot shape mismatch for {n!r}")
            mask = torch.from_numpy(rng.random(tuple(p.shape)) < rate)
            p.copy_(torch.where(mask, ref.to(p.dtype), p))
            if adam is not None and n in adam.m:
                adam.m[n] = torch.where(mask, torch.zeros_like(adam.m[n]), adam.m[n])
                adam.v[n] = torch.where(mask, torch.zeros_like(adam.v[n]), adam.v[n])
