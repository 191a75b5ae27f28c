"""Multi-label degradation classifier: patch synthesis, training, prediction.

Predicts (c_b, c_n, c_j) for a test image.  Training patches are synthesized
from an HR corpus through the same samplers the degradation pipeline uses;
a patch's multi-hot target records exactly which components were applied.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import degrade
from .imaging import bicubic_resize, validate_image

log = logging.getLogger(__name__)

PATCH_SIZE = 48
DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class DegradationLabel:
    c_b: int
    c_n: int
    c_j: int

    @property
    def is_clean(self) -> bool:
        return self.c_b + self.c_n + self.c_j == 0

    @classmethod
    def clean(cls) -> "DegradationLabel":
        return cls(0, 0, 0)


@dataclass
class LabeledPatch:
    image: np.ndarray                 # (3, PATCH_SIZE, PATCH_SIZE) float32
    label: DegradationLabel
    coarse_class: str                 # clean | blur | noise | jpeg (primary component)


class Classifier(nn.Module):
    """Small conv net with mean+std global pooling, 3 independent logits.

    The first conv keeps full resolution so the high-frequency statistics
    that separate noise and compression artifacts survive; the pooled
    standard deviation carries texture energy that plain average pooling
    throws away.
    """

    CHANNELS = (16, 32, 64, 64)

    def __init__(self, init_seed: int = 0xC1A55):
        super().__init__()
        self.init_seed = init_seed
        chans = (3,) + self.CHANNELS
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=1 if i == 0 else 2, padding=1)
            for i in range(4)
        )
        self.fc = nn.Sequential(
            nn.Linear(2 * self.CHANNELS[-1], 64), nn.ReLU(), nn.Linear(64, 3))
        self._init_params()

    def _init_params(self):
        gen = torch.Generator().manual_seed(self.init_seed)
        for name, p in sorted(self.named_parameters()):
            if p.dim() > 1:
                fan_in = int(np.prod(p.shape[1:]))
                bound = (2.0 / fan_in) ** 0.5
                with torch.no_grad():
                    p.copy_(torch.randn(p.shape, generator=gen) * bound)
            else:
                with torch.no_grad():
                    p.zero_()

    def descriptor(self) -> dict:
        return {"kind": "classifier", "channels": list(self.CHANNELS), "patch": PATCH_SIZE}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "Classifier":
        if desc.get("kind") != "classifier":
            raise ValueError(f"descriptor kind {desc.get('kind')!r} is not a classifier")
        return cls()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = F.relu(conv(x))
        mean = x.mean(dim=(2, 3))
        std = x.std(dim=(2, 3), unbiased=False)
        return self.fc(torch.cat([mean, std], dim=1))


def _degrade_patch(hr_crop: np.ndarray, active: set[str], rng: np.random.Generator,
                   scale: int) -> np.ndarray:
    """Apply the active components in the fixed order blur -> down -> noise -> jpeg."""
    x = hr_crop
    if "blur" in active:
        x = degrade.apply_blur(x, degrade.sample_gaussian_kernel(rng))
    x = bicubic_resize(x, 1.0 / scale)
    if "noise" in active:
        _, noise = degrade.sample_noise(rng, x.shape)
        x = np.clip(x + noise, 0.0, 1.0).astype(np.float32)
    if "jpeg" in active:
        q = int(rng.integers(degrade.JPEG_Q_BENCHMARK[0],
                             degrade.JPEG_Q_BENCHMARK[1] + 1))
        x = degrade.jpeg_codec(x, q)
    return x.astype(np.float32)


def synthesize_training_patches(hr_corpus: list[np.ndarray], per_class: int,
                                rng: np.random.Generator, scale: int = 2,
                                mixed_fraction: float = 0.2) -> list[LabeledPatch]:
    """Balanced patch set over the four coarse classes (clean/blur/noise/jpeg).

    Within a degraded class, extra components are mixed in at mixed_fraction
    so multi-degraded inputs map to multi-hot targets.
    """
    hr_size = PATCH_SIZE * scale
    usable = [img for img in hr_corpus
              if img.shape[1] >= hr_size and img.shape[2] >= hr_size]
    for img in hr_corpus:
        if img.shape[1] < hr_size or img.shape[2] < hr_size:
            log.warning("skipping corpus image %s: smaller than %dx%d patch",
                        img.shape, hr_size, hr_size)
    if not usable:
        raise ValueError(f"no corpus image can host a {hr_size}x{hr_size} crop")
    patches: list[LabeledPatch] = []
    for coarse in ("clean", "blur", "noise", "jpeg"):
        for _ in range(per_class):
            src = usable[int(rng.integers(len(usable)))]
            top = int(rng.integers(src.shape[1] - hr_size + 1))
            left = int(rng.integers(src.shape[2] - hr_size + 1))
            crop = src[:, top:top + hr_size, left:left + hr_size]
            if coarse == "clean":
                active: set[str] = set()
            else:
                active = {coarse}
                if rng.random() < mixed_fraction:
                    others = [c for c in ("blur", "noise", "jpeg") if c != coarse]
                    n_extra = int(rng.integers(1, 3))
                    active |= set(rng.choice(others, size=n_extra, replace=False))
            patch = _degrade_patch(crop, active, rng, scale)
            label = DegradationLabel(int("blur" in active), int("noise" in active),
                                     int("jpeg" in active))
            patches.append(LabeledPatch(patch, label, coarse))
    return patches


@dataclass
class ClassifierTrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    holdout_fraction: float = 0.1
    seed: int = 0


def _check_balance(patches: list[LabeledPatch], minimum: int = 50) -> None:
    counts = {c: sum(p.coarse_class == c for p in patches)
              for c in ("clean", "blur", "noise", "jpeg")}
    lacking = {c: n for c, n in counts.items() if n < minimum}
    if lacking:
        raise ValueError(f"class balance violated, need >= {minimum} per coarse class, "
                         f"got {counts}")


def train_classifier(patches: list[LabeledPatch],
                     cfg: ClassifierTrainConfig | None = None) -> Classifier:
    """BCE training with Adam; returns the weights with best held-out macro accuracy."""
    cfg = cfg or ClassifierTrainConfig()
    _check_balance(patches)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(patches))
    n_hold = max(1, int(round(cfg.holdout_fraction * len(patches))))
    hold_idx, train_idx = order[:n_hold], order[n_hold:]

    x = torch.from_numpy(np.stack([p.image for p in patches]))
    t = torch.tensor([[p.label.c_b, p.label.c_n, p.label.c_j] for p in patches],
                     dtype=torch.float32)
    clf = Classifier(init_seed=cfg.seed + 0xC1A55)
    opt = torch.optim.Adam(clf.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    best_acc = -1.0
    best_state = None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(train_idx)
        clf.train()
        for start in range(0, len(perm), cfg.batch_size):
            idx = torch.from_numpy(perm[start:start + cfg.batch_size].copy())
            logits = clf(x[idx])
            loss = F.binary_cross_entropy_with_logits(logits, t[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
        clf.eval()
        with torch.no_grad():
            probs = torch.sigmoid(clf(x[torch.from_numpy(hold_idx.copy())]))
            pred = (probs > DECISION_THRESHOLD).float()
            acc = float((pred == t[torch.from_numpy(hold_idx.copy())]).float().mean())
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.clone() for k, v in clf.state_dict().items()}
    clf.load_state_dict(best_state)
    clf.eval()
    log.info("classifier trained: best held-out macro accuracy %.3f", best_acc)
    return clf


def predict_degradation(clf: Classifier, img: np.ndarray) -> DegradationLabel:
    """Threshold the whole-image sigmoid outputs at 0.5 (ties resolve to 0)."""
    img = validate_image(img, min_size=PATCH_SIZE)
    x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))[None]
    clf.eval()
    with torch.no_grad():
        probs = torch.sigmoid(clf(x))[0].numpy()
    bits = probs > DECISION_THRESHOLD
    return DegradationLabel(int(bits[0]), int(bits[1]), int(bits[2]))


def predict_probabilities(clf: Classifier, img: np.ndarray) -> np.ndarray:
    img = validate_image(img, min_size=PATCH_SIZE)
    x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))[None]
    clf.eval()
    with torch.no_grad():
        return torch.sigmoid(clf(x))[0].numpy()
