"""Command-line surface: pretrain, train-classifier, benchgen, adapt, run, ablate.

Every command reads an optional JSON config (--config); individual flags
override their config keys.  Reports land in --out as metrics.csv,
summary.json and PNG figures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchgen, checkpoint, imaging
from .adapt import AdaptConfig, adapt_image
from .classifier import (Classifier, ClassifierTrainConfig, predict_degradation,
                         synthesize_training_patches, train_classifier)
from .experiment import ExperimentConfig, run_ablation, run_experiment
from .model import SRModel
from .optim import MaskedAdam
from .train import PretrainConfig, pretrain_sr

log = logging.getLogger(__name__)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _corpus_from_args(args) -> dict:
    if args.corpus_dir:
        return benchgen.load_corpus_dir(args.corpus_dir)
    seed = 0 if args.seed is None else args.seed
    return benchgen.make_corpus(args.corpus_size, size=args.image_size, seed=seed)


def cmd_pretrain(args) -> int:
    raw = _load_config(args.config)
    cfg = PretrainConfig(**{**raw.get("pretrain", {}),
                            **{k: v for k, v in
                               dict(steps=args.steps, seed=args.seed).items()
                               if v is not None}})
    corpus = _corpus_from_args(args)
    model, stats = pretrain_sr(corpus, cfg)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    ck = out / "sr_model.ckpt"
    checkpoint.save_model(ck, model)
    with open(out / "pretrain_stats.json", "w") as f:
        json.dump(stats, f, indent=1)
    print(f"saved {ck}  val PSNR {stats['model_psnr']:.2f} dB "
          f"(bicubic {stats['bicubic_psnr']:.2f} dB)")
    return 0


def cmd_train_classifier(args) -> int:
    raw = _load_config(args.config)
    cfg = ClassifierTrainConfig(**raw.get("classifier", {}))
    if args.seed is not None:
        cfg.seed = args.seed
    corpus = _corpus_from_args(args)
    rng = np.random.default_rng(cfg.seed)
    patches = synthesize_training_patches(list(corpus.values()), args.per_class, rng)
    clf = train_classifier(patches, cfg)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    ck = out / "classifier.ckpt"
    checkpoint.save_model(ck, clf)
    print(f"saved {ck}")
    return 0


def cmd_benchgen(args) -> int:
    corpus = _corpus_from_args(args)
    domains = args.domains.split(",") if args.domains else list(benchgen.ALL_DOMAINS)
    for domain in domains:
        ds = benchgen.build_domain(corpus, domain, args.scale, args.seed or 0,
                                   args.out or "out")
        print(f"built {domain}: {len(ds.entries)} images under {ds.root / domain}")
    return 0


def cmd_adapt(args) -> int:
    ref = SRModel.from_descriptor(checkpoint.read_checkpoint(args.sr_checkpoint)[0])
    checkpoint.load_into(ref, args.sr_checkpoint)
    model = SRModel.from_descriptor(ref.descriptor())
    checkpoint.load_into(model, args.sr_checkpoint)
    clf = Classifier()
    checkpoint.load_into(clf, args.classifier_checkpoint)
    x = imaging.read_png(args.image)
    label = predict_degradation(clf, x)
    print(f"predicted degradation: blur={label.c_b} noise={label.c_n} jpeg={label.c_j}")
    raw = _load_config(args.config)
    acfg = AdaptConfig(**raw.get("adapt", {}))
    if args.steps is not None:
        acfg.steps = args.steps
    opt = MaskedAdam(model.adaptable_parameters(), lr=acfg.lr)
    rng = np.random.default_rng(args.seed or 0)
    pred = adapt_image(model, ref, opt, x, label, acfg, rng)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    dest = out / (Path(args.image).stem + "_sr.png")
    imaging.write_png(dest, pred)
    print(f"wrote {dest}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    raw = _load_config(args.config)
    cfg = ExperimentConfig.from_json(raw) if raw else ExperimentConfig()
    if args.sr_checkpoint:
        cfg.sr_checkpoint = args.sr_checkpoint
    if args.classifier_checkpoint:
        cfg.classifier_checkpoint = args.classifier_checkpoint
    if args.dataset_root:
        cfg.dataset_root = args.dataset_root
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.domains:
        cfg.domains = args.domains.split(",")
    if args.methods:
        cfg.methods = args.methods.split(",")
    if args.alpha is not None:
        cfg.adapt.alpha = args.alpha
    if args.rho is not None:
        cfg.adapt.rho = args.rho
    if args.steps is not None:
        cfg.adapt.steps = args.steps
    return cfg


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    rows = run_experiment(cfg)
    data_rows = [r for r in rows if r.psnr_db is not None
                 and not r.domain.startswith("clean_set")]
    print(f"wrote {Path(cfg.out_dir) / 'metrics.csv'} ({len(data_rows)} data rows)")
    return 0


def cmd_ablate(args) -> int:
    cfg = _experiment_config(args)
    grids = {"alpha": args.alpha_grid, "rho": args.rho_grid, "steps": args.steps_grid}
    grids = {k: v for k, v in grids.items() if v}
    if not grids:
        grids = {k: v for k, v in
                 dict(alpha=cfg.alpha_grid, rho=cfg.rho_grid, steps=cfg.steps_grid).items()
                 if v}
    if not grids:
        print("no ablation grid given (use --alpha-grid / --rho-grid / --steps-grid)",
              file=sys.stderr)
        return 2
    for axis, values in grids.items():
        parse = float if axis != "steps" else int
        vals = [parse(v) for v in (values.split(",") if isinstance(values, str) else values)]
        run_ablation(cfg, axis, vals)
        print(f"ablation over {axis} ({vals}) written under {cfg.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srtta",
                                     description="test-time adaptation for super-resolution")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=False):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        if corpus:
            p.add_argument("--corpus-dir", default=None,
                           help="directory of HR PNGs (default: procedural corpus)")
            p.add_argument("--corpus-size", type=int, default=240)
            p.add_argument("--image-size", type=int, default=96)

    p = sub.add_parser("pretrain", help="pretrain the SR model on clean bicubic pairs")
    common(p, corpus=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-classifier", help="train the degradation classifier")
    common(p, corpus=True)
    p.add_argument("--per-class", type=int, default=200)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("benchgen", help="build corrupted benchmark domains")
    common(p, corpus=True)
    p.add_argument("--domains", default=None, help="comma-separated domain names")
    p.add_argument("--scale", type=int, default=2)
    p.set_defaults(func=cmd_benchgen)

    p = sub.add_parser("adapt", help="adapt on a single image and super-resolve it")
    common(p)
    p.add_argument("--sr-checkpoint", required=True)
    p.add_argument("--classifier-checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_adapt)

    for name, fn in (("run", cmd_run), ("ablate", cmd_ablate)):
        p = sub.add_parser(name, help=f"{name} a full experiment")
        common(p)
        p.add_argument("--sr-checkpoint", default=None)
        p.add_argument("--classifier-checkpoint", default=None)
        p.add_argument("--dataset-root", default=None)
        p.add_argument("--domains", default=None)
        p.add_argument("--methods", default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--steps", type=int, default=None)
        if name == "ablate":
            p.add_argument("--alpha-grid", default=None)
            p.add_argument("--rho-grid", default=None)
            p.add_argument("--steps-grid", default=None)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
