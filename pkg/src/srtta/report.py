"""Experiment reporting: metrics CSV, summary JSON, and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .adapt import StreamRow

CSV_COLUMNS = ("domain", "method", "image", "psnr_db", "ssim", "seconds")


def _fmt(value) -> str:
    # repr round-trips exactly, keeping CSV means consistent with row values
    return "" if value is None else repr(float(value))


def write_metrics_csv(path, rows: list[StreamRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([r.domain, r.method, r.image,
                             _fmt(r.psnr_db), _fmt(r.ssim), _fmt(r.seconds)])


def read_metrics_csv(path) -> list[StreamRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append(StreamRow(
                rec["domain"], rec["method"], rec["image"],
                float(rec["psnr_db"]) if rec["psnr_db"] else None,
                float(rec["ssim"]) if rec["ssim"] else None,
                float(rec["seconds"]) if rec["seconds"] else 0.0))
    return rows


def cell_means(rows: list[StreamRow]) -> dict[tuple[str, str], dict]:
    """Per-(domain, method) mean PSNR/SSIM/seconds."""
    cells: dict[tuple[str, str], list[StreamRow]] = {}
    for r in rows:
        cells.setdefault((r.domain, r.method), []).append(r)
    out = {}
    for key, group in cells.items():
        psnrs = [r.psnr_db for r in group if r.psnr_db is not None]
        ssims = [r.ssim for r in group if r.ssim is not None]
        out[key] = {
            "psnr_db": float(np.mean(psnrs)) if psnrs else None,
            "ssim": float(np.mean(ssims)) if ssims else None,
            "seconds": float(np.mean([r.seconds for r in group])),
            "n": len(group),
        }
    return out


def write_summary(path, rows: list[StreamRow], config_echo: dict,
                  extra: dict | None = None) -> None:
    summary = {
        "version": "srtta-0.1.0",
        "config": config_echo,
        "cells": [{"domain": d, "method": m, **v} for (d, m), v in sorted(cell_means(rows).items())],
    }
    if extra:
        summary.update(extra)
    with open(path, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)


def render_figures(out_dir, rows: list[StreamRow],
                   forgetting: dict[str, list[float]] | None = None) -> list[Path]:
    """PSNR-per-domain bar chart and optional forgetting curves, as PNG files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    means = cell_means(rows)
    domains = sorted({d for d, _ in means})
    methods = sorted({m for _, m in means})
    if domains and methods:
        fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(domains)), 4))
        width = 0.8 / len(methods)
        xs = np.arange(len(domains))
        for i, method in enumerate(methods):
            vals = [means.get((d, method), {}).get("psnr_db") for d in domains]
            vals = [v if v is not None else np.nan for v in vals]
            ax.bar(xs + i * width, vals, width, label=method)
        ax.set_xticks(xs + 0.4 - width / 2)
        ax.set_xticklabels(domains, rotation=30, ha="right")
        ax.set_ylabel("mean PSNR (dB)")
        ax.legend()
        fig.tight_layout()
        path = out_dir / "psnr_by_domain.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    if forgetting:
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, curve in sorted(forgetting.items()):
            ax.plot(range(len(curve)), curve, marker="o", label=name)
        ax.set_xlabel("domains adapted")
        ax.set_ylabel("clean-set PSNR (dB)")
        ax.legend()
        fig.tight_layout()
        path = out_dir / "forgetting_curve.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
