"""Deterministic corrupted-benchmark construction.

Eight single-degradation domains (three blur, four noise, JPEG) plus four
mixed domains.  Blur-family corruption happens on the HR image before
bicubic downsampling; noise/JPEG-family corruption happens on the clean LR.
Per-image severity is random within documented ranges and every realized
parameter set is recorded in the domain manifest, keyed by a per-image seed
so the dataset regenerates bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import degrade
from .imaging import bicubic_resize, clamp01, read_png, validate_image, write_png
from .jpeg import jpeg_codec

BLUR_DOMAINS = ("gaussian_blur", "defocus_blur", "glass_blur")
NOISE_JPEG_DOMAINS = ("gaussian_noise", "poisson_noise", "impulse_noise",
                      "speckle_noise", "jpeg")
SINGLE_DOMAINS = BLUR_DOMAINS + NOISE_JPEG_DOMAINS
MIXED_DOMAINS = ("blur_noise", "blur_jpeg", "noise_jpeg", "blur_noise_jpeg")
ALL_DOMAINS = SINGLE_DOMAINS + MIXED_DOMAINS

# severity ranges for the domains whose exact levels are implementation constants
DEFOCUS_RADIUS = (2, 6)
DEFOCUS_SMOOTH_SIGMA = 0.5
GLASS_SIGMA = (0.7, 1.5)
GLASS_WINDOW = (2, 4)
GLASS_ROUNDS = (1, 2)
GAUSSIAN_NOISE_STD_255 = tuple(range(2, 26))       # std in {2..25}/255
POISSON_PEAK = (30.0, 300.0)
IMPULSE_FRACTION = (0.01, 0.05)
SPECKLE_SIGMA = (0.05, 0.25)


def _disk_kernel(radius: int, smooth_sigma: float) -> np.ndarray:
    size = 2 * radius + 1
    ax = np.arange(size) - radius
    xx, yy = np.meshgrid(ax, ax)
    disk = (xx**2 + yy**2 <= radius**2).astype(np.float64)
    disk = ndimage.gaussian_filter(disk, smooth_sigma)
    return disk / disk.sum()


def _local_shuffle(img: np.ndarray, window: int, rounds: int,
                   rng: np.random.Generator) -> np.ndarray:
    out = img.copy()
    _, h, w = out.shape
    for _ in range(rounds):
        for i in range(h - window - 1, window - 1, -1):
            for j in range(w - window - 1, window - 1, -1):
                di, dj = rng.integers(-window, window + 1, size=2)
                out[:, i, j], out[:, i + di, j + dj] = \
                    out[:, i + di, j + dj].copy(), out[:, i, j].copy()
    return out


def corrupt(source: np.ndarray, domain: str, rng: np.random.Generator,
            ) -> tuple[np.ndarray, dict]:
    """Apply one domain's recipe with random severity; returns (image, realized spec)."""
    source = validate_image(source)
    x = source.astype(np.float64)
    if domain == "gaussian_blur":
        k = degrade.sample_gaussian_kernel(rng)
        return degrade.apply_blur(x, k).astype(np.float32), {"kernel": k.to_json()}
    if domain == "defocus_blur":
        radius = int(rng.integers(DEFOCUS_RADIUS[0], DEFOCUS_RADIUS[1] + 1))
        kernel = _disk_kernel(radius, DEFOCUS_SMOOTH_SIGMA)
        out = np.stack([ndimage.correlate(ch, kernel, mode="nearest") for ch in x])
        return clamp01(out).astype(np.float32), {"radius": radius}
    if domain == "glass_blur":
        sigma = float(rng.uniform(*GLASS_SIGMA))
        window = int(rng.integers(GLASS_WINDOW[0], GLASS_WINDOW[1] + 1))
        rounds = int(rng.integers(GLASS_ROUNDS[0], GLASS_ROUNDS[1] + 1))
        out = np.stack([ndimage.gaussian_filter(ch, sigma) for ch in x])
        out = _local_shuffle(out, window, rounds, rng)
        out = np.stack([ndimage.gaussian_filter(ch, sigma) for ch in out])
        return clamp01(out).astype(np.float32), {"sigma": sigma, "window": window,
                                                 "rounds": rounds}
    if domain == "gaussian_noise":
        std = int(rng.choice(GAUSSIAN_NOISE_STD_255))
        noise = rng.standard_normal(x.shape) * (std / 255.0)
        return clamp01(x + noise).astype(np.float32), {"std_255": std}
    if domain == "poisson_noise":
        peak = float(rng.uniform(*POISSON_PEAK))
        out = rng.poisson(np.clip(x, 0, 1) * peak) / peak
        return clamp01(out).astype(np.float32), {"peak": peak}
    if domain == "impulse_noise":
        frac = float(rng.uniform(*IMPULSE_FRACTION))
        mask = rng.random(x.shape) < frac
        salt = rng.random(x.shape) < 0.5
        out = np.where(mask, np.where(salt, 1.0, 0.0), x)
        return out.astype(np.float32), {"fraction": frac}
    if domain == "speckle_noise":
        sigma = float(rng.uniform(*SPECKLE_SIGMA))
        out = x + x * rng.standard_normal(x.shape) * sigma
        return clamp01(out).astype(np.float32), {"sigma": sigma}
    if domain == "jpeg":
        q = int(rng.integers(degrade.JPEG_Q_BENCHMARK[0], degrade.JPEG_Q_BENCHMARK[1] + 1))
        return jpeg_codec(x, q).astype(np.float32), {"quality": q}
    raise ValueError(f"unknown domain {domain!r}")


def _mixed_stages(domain: str) -> tuple[bool, bool, bool]:
    return ("blur" in domain, "noise" in domain, "jpeg" in domain)


def corrupt_entry(hr: np.ndarray, domain: str, scale: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Full HR -> LR pipeline for one image of one domain."""
    spec: dict = {"domain": domain, "scale": scale}
    if domain in BLUR_DOMAINS:
        blurred, s = corrupt(hr, domain, rng)
        spec.update(s)
        lr = bicubic_resize(blurred, 1.0 / scale)
    elif domain in NOISE_JPEG_DOMAINS:
        lr_clean = bicubic_resize(hr, 1.0 / scale)
        lr, s = corrupt(lr_clean, domain, rng)
        spec.update(s)
    elif domain in MIXED_DOMAINS:
        use_blur, use_noise, use_jpeg = _mixed_stages(domain)
        x = hr
        stages = []
        if use_blur:
            x, s = corrupt(x, "gaussian_blur", rng)
            stages.append({"stage": "gaussian_blur", **s})
        x = bicubic_resize(x, 1.0 / scale)
        stages.append({"stage": "bicubic_down"})
        if use_noise:
            x, s = corrupt(x, "gaussian_noise", rng)
            stages.append({"stage": "gaussian_noise", **s})
        if use_jpeg:
            x, s = corrupt(x, "jpeg", rng)
            stages.append({"stage": "jpeg", **s})
        lr = x
        spec["stages"] = stages
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return lr.astype(np.float32), spec


@dataclass
class DomainDataset:
    domain: str
    scale: int
    seed: int
    root: Path
    entries: list[dict]               # name, lr_path, hr_path, spec

    def manifest_path(self) -> Path:
        return self.root / self.domain / "manifest.json"


def build_domain(hr_corpus: dict[str, np.ndarray], domain: str, scale: int, seed: int,
                 root) -> DomainDataset:
    """Build one domain dataset under root; fully deterministic in seed."""
    if domain not in ALL_DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    root = Path(root)
    (root / "HR").mkdir(parents=True, exist_ok=True)
    (root / domain / "LR").mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence([seed, ALL_DOMAINS.index(domain)])
    children = ss.spawn(len(hr_corpus))
    entries = []
    for (name, hr), child in zip(sorted(hr_corpus.items()), children):
        cropped = False
        _, h, w = hr.shape
        if h % scale or w % scale:
            nh, nw = h - h % scale, w - w % scale
            top, left = (h - nh) // 2, (w - nw) // 2
            hr = hr[:, top:top + nh, left:left + nw]
            cropped = True
        hr_path = root / "HR" / f"{name}.png"
        if not hr_path.exists():
            write_png(hr_path, hr)
        rng = np.random.default_rng(child)
        lr, spec = corrupt_entry(hr, domain, scale, rng)
        spec["seed_entropy"] = [int(v) for v in np.asarray(child.entropy).ravel()] \
            if isinstance(child.entropy, (list, tuple)) else int(child.entropy)
        spec["spawn_key"] = [int(k) for k in child.spawn_key]
        spec["center_cropped"] = cropped
        lr_path = root / domain / "LR" / f"{name}.png"
        write_png(lr_path, lr)
        entries.append({"name": name, "lr_path": str(lr_path), "hr_path": str(hr_path),
                        "spec": spec})
    ds = DomainDataset(domain, scale, seed, root, entries)
    manifest = {"domain": domain, "scale": scale, "seed": seed, "entries": entries}
    with open(ds.manifest_path(), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return ds


def load_domain(root, domain: str) -> DomainDataset:
    root = Path(root)
    with open(root / domain / "manifest.json") as f:
        manifest = json.load(f)
    return DomainDataset(manifest["domain"], manifest["scale"], manifest["seed"],
                         root, manifest["entries"])


def make_corpus(count: int, size: int = 128, seed: int = 0) -> dict[str, np.ndarray]:
    """Procedural HR corpus: smooth gradients, sharp shapes, band-limited texture."""
    rng = np.random.default_rng(seed)
    corpus = {}
    for i in range(count):
        img = _procedural_image(size, rng)
        corpus[f"img{i:04d}"] = img
    return corpus


def _procedural_image(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((3, size, size))
    # smooth low-frequency background, distinct per channel
    for c in range(3):
        fx, fy = rng.uniform(0.5, 3.0, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        img[c] = 0.5 + 0.25 * np.sin(2 * np.pi * fx * xx + phase[0]) \
                     * np.cos(2 * np.pi * fy * yy + phase[1])
    # sharp-edged rectangles, disks, stripes and thin lines
    for _ in range(int(rng.integers(8, 15))):
        color = rng.uniform(0.05, 0.95, size=3)
        kind = rng.random()
        if kind < 0.35:
            h = int(rng.integers(size // 10, size // 2))
            w = int(rng.integers(size // 10, size // 2))
            top = int(rng.integers(0, size - h))
            left = int(rng.integers(0, size - w))
            img[:, top:top + h, left:left + w] = color[:, None, None]
        elif kind < 0.6:
            r = int(rng.integers(size // 16, size // 5))
            cy, cx = rng.integers(r, size - r, size=2)
            mask = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 <= r * r
            img[:, mask] = color[:, None]
        elif kind < 0.8:
            # stripe pattern inside a random box
            h = int(rng.integers(size // 8, size // 2))
            w = int(rng.integers(size // 8, size // 2))
            top = int(rng.integers(0, size - h))
            left = int(rng.integers(0, size - w))
            period = int(rng.integers(3, 8))
            stripes = ((np.arange(w)[None, :] // period) % 2).astype(np.float64)
            other = rng.uniform(0.05, 0.95, size=3)
            patch = stripes[None] * color[:, None, None] + (1 - stripes[None]) * other[:, None, None]
            img[:, top:top + h, left:left + w] = patch
        else:
            # thin line, horizontal or vertical
            thick = int(rng.integers(1, 3))
            if rng.random() < 0.5:
                row = int(rng.integers(0, size - thick))
                img[:, row:row + thick, :] = color[:, None, None]
            else:
                col = int(rng.integers(0, size - thick))
                img[:, :, col:col + thick] = color[:, None, None]
    # mild band-limited texture
    tex = ndimage.gaussian_filter(rng.standard_normal((size, size)), rng.uniform(1.2, 2.5))
    img += 0.12 * tex[None]
    return clamp01(img).astype(np.float32)


def load_corpus_dir(path) -> dict[str, np.ndarray]:
    """Read every PNG under a directory as an HR corpus keyed by stem."""
    path = Path(path)
    corpus = {p.stem: read_png(p) for p in sorted(path.glob("*.png"))}
    if not corpus:
        raise ValueError(f"no PNG files found under {path}")
    return corpus
