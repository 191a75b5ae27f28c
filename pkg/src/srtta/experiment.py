"""Experiment driver: SRTTA / TTA-C / no-adapt streams over benchmark domains,
forgetting curves on a clean set, and the ablation grids."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import benchgen, checkpoint, imaging, preserve, report
from .adapt import AdaptConfig, StreamEntry, StreamRow, run_stream, snapshot_params, reset_params
from .classifier import Classifier
from .model import SRModel, forward_sr
from .optim import MaskedAdam
from .train import make_clean_pairs

log = logging.getLogger(__name__)

METHODS = ("srtta", "srtta-lifelong", "tta-c", "no-adapt")
CLEAN_SET_SIZE = 5


@dataclass
class ExperimentConfig:
    sr_checkpoint: str = ""
    classifier_checkpoint: str = ""
    dataset_root: str = ""
    domains: list[str] = field(default_factory=lambda: ["gaussian_noise"])
    methods: list[str] = field(default_factory=lambda: ["srtta", "no-adapt"])
    out_dir: str = "out"
    seed: int = 0
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    freeze_strategy: str = "fisher"   # fisher | random | none
    restore_rate: float = 0.0         # stochastic-restoration baseline when > 0
    record_timing: bool = True
    alpha_grid: list[float] = field(default_factory=list)
    rho_grid: list[float] = field(default_factory=list)
    steps_grid: list[int] = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.adapt, dict):
            self.adapt = AdaptConfig(**self.adapt)
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if not self.domains:
            raise ValueError("domain list is empty")

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)


def load_stream_entries(root, domain: str) -> list[StreamEntry]:
    ds = benchgen.load_domain(root, domain)
    entries = []
    for e in ds.entries:
        entries.append(StreamEntry(
            name=e["name"], domain=domain,
            image=imaging.read_png(e["lr_path"]),
            ground_truth=imaging.read_png(e["hr_path"])))
    return entries


def clean_eval_set(root, scale: int, count: int = CLEAN_SET_SIZE):
    """Clean (LR, HR) pairs from the first few benchmark HR images."""
    hr_dir = Path(root) / "HR"
    corpus = {p.stem: imaging.read_png(p) for p in sorted(hr_dir.glob("*.png"))[:count]}
    if not corpus:
        raise ValueError(f"no HR images under {hr_dir}")
    return make_clean_pairs(corpus, scale)


def clean_psnr(model: SRModel, pairs) -> float:
    scores = []
    for lr_img, hr_img in pairs:
        pred, _ = forward_sr(model, lr_img)
        scores.append(imaging.psnr(hr_img, pred))
    return float(np.mean(scores))


def _build_masks(ref: SRModel, clean_pairs, cfg: ExperimentConfig):
    if cfg.freeze_strategy == "none" or cfg.adapt.rho == 0.0:
        return None
    if cfg.freeze_strategy == "fisher":
        scores = preserve.fisher_scores(ref, [lr for lr, _ in clean_pairs],
                                        cfg.adapt.eps)
        return preserve.select_frozen(scores, cfg.adapt.rho)
    if cfg.freeze_strategy == "random":
        rng = np.random.default_rng([cfg.seed, 0xF5])
        return preserve.random_frozen(ref, cfg.adapt.rho, rng)
    raise ValueError(f"unknown freeze strategy {cfg.freeze_strategy!r}")


def run_experiment(cfg: ExperimentConfig) -> list[StreamRow]:
    """Run every configured (method, domain) cell and write the report files."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = SRModel.from_descriptor(checkpoint.read_checkpoint(cfg.sr_checkpoint)[0])
    checkpoint.load_into(ref, cfg.sr_checkpoint)
    ref.eval()
    clf = Classifier()
    checkpoint.load_into(clf, cfg.classifier_checkpoint)
    clean_pairs = clean_eval_set(cfg.dataset_root, ref.scale)
    masks = _build_masks(ref, clean_pairs, cfg)
    snapshot = snapshot_params(ref)

    streams = {d: load_stream_entries(cfg.dataset_root, d) for d in cfg.domains}
    rows: list[StreamRow] = []
    errors: list[dict] = []
    forgetting: dict[str, list[float]] = {}
    t_start = time.monotonic()
    for mi, method_name in enumerate(cfg.methods):
        model = SRModel.from_descriptor(ref.descriptor())
        reset_params(model, snapshot)
        opt = MaskedAdam(model.adaptable_parameters(), lr=cfg.adapt.lr)
        if masks is not None and method_name in ("srtta", "srtta-lifelong"):
            opt.set_frozen(masks)
        mode = "lifelong" if method_name == "srtta-lifelong" else "parameter-reset"
        run_cfg = AdaptConfig(**{**asdict(cfg.adapt), "mode": mode})
        base_method = "srtta" if method_name.startswith("srtta") else method_name
        curve = [clean_psnr(model, clean_pairs)]
        for di, domain in enumerate(cfg.domains):
            if mode == "parameter-reset":
                reset_params(model, snapshot)
                opt.reset_state()
            rng = np.random.default_rng([cfg.seed, mi, di])
            try:
                result = run_stream(model, ref, streams[domain], clf, opt, run_cfg, rng,
                                    method=base_method, restore_rate=cfg.restore_rate)
            except Exception as exc:  # keep other cells alive
                log.exception("cell (%s, %s) failed", method_name, domain)
                errors.append({"method": method_name, "domain": domain, "error": str(exc)})
                rows.append(StreamRow(domain, method_name, "<error>", None, None, 0.0))
                continue
            for r in result.rows:
                rows.append(StreamRow(r.domain, method_name, r.image, r.psnr_db, r.ssim,
                                      r.seconds if cfg.record_timing else 0.0))
            curve.append(clean_psnr(model, clean_pairs))
        forgetting[method_name] = curve
        # anti-forgetting rows: clean set before the stream and after the last domain
        rows.append(StreamRow("clean_set_before", method_name, "<clean-mean>",
                              curve[0], None, 0.0))
        rows.append(StreamRow("clean_set_after", method_name, "<clean-mean>",
                              curve[-1], None, 0.0))
    total_seconds = time.monotonic() - t_start

    report.write_metrics_csv(out / "metrics.csv", rows)
    report.write_summary(out / "summary.json", rows, cfg.to_json(),
                         extra={"errors": errors, "forgetting": forgetting,
                                "total_seconds": total_seconds if cfg.record_timing else 0.0})
    report.render_figures(out, [r for r in rows if not r.domain.startswith("clean_set")],
                          forgetting)
    return rows


def run_ablation(cfg: ExperimentConfig, axis: str, values: list) -> list[StreamRow]:
    """Re-run the srtta configuration for each grid value of one hyperparameter."""
    if not values:
        raise ValueError(f"empty ablation grid for {axis!r}")
    if axis not in ("alpha", "rho", "steps"):
        raise ValueError(f"unknown ablation axis {axis!r}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_rows: list[StreamRow] = []
    for value in values:
        sub = ExperimentConfig.from_json({**cfg.to_json(),
                                          "methods": ["srtta"],
                                          "out_dir": str(out / f"{axis}_{value}")})
        setattr(sub.adapt, {"alpha": "alpha", "rho": "rho", "steps": "steps"}[axis],
                value)
        rows = run_experiment(sub)
        for r in rows:
            all_rows.append(StreamRow(r.domain, f"srtta[{axis}={value}]", r.image,
                                      r.psnr_db, r.ssim, r.seconds))
    report.write_metrics_csv(out / "metrics.csv", all_rows)
    report.write_summary(out / "summary.json", all_rows, cfg.to_json(),
                         extra={"ablation_axis": axis, "values": list(values)})
    report.render_figures(out, [r for r in all_rows if not r.domain.startswith("clean_set")])
    return all_rows
