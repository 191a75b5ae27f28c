"""Shared fixtures.

The expensive artifacts (pretrained SR model, degradation classifier,
benchmark domains) are deterministic functions of fixed seeds, so they are
cached on disk between test runs.  Delete the cache directory to force a
rebuild.
"""

import pickle
import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from srtta import benchgen, checkpoint
from srtta.classifier import (Classifier, ClassifierTrainConfig,
                              synthesize_training_patches, train_classifier)
from srtta.model import SRModel
from srtta.train import PretrainConfig, pretrain_sr

CACHE_VERSION = "v1"

# one-line verdicts collected by the acceptance tests, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# fixed recipes: everything below is deterministic given these numbers
CORPUS_SEED = 3
CORPUS_COUNT = 60
CORPUS_SIZE = 96
PRETRAIN_STEPS = 1500
PRETRAIN_LR = 1e-3
CLF_CORPUS_SEEDS = (11, 12, 13)
CLF_PER_CLASS = 900
CLF_EPOCHS = 120
CLF_PATCH_SEED = 42
CLF_HOLDOUT = 600
CLF_SPLIT_SEED = 7


@pytest.fixture(scope="session")
def cache_dir() -> Path:
    d = Path(tempfile.gettempdir()) / f"srtta_test_cache_{CACHE_VERSION}"
    d.mkdir(parents=True, exist_ok=True)
    return d


@pytest.fixture(scope="session")
def corpus() -> dict:
    return benchgen.make_corpus(CORPUS_COUNT, size=CORPUS_SIZE, seed=CORPUS_SEED)


@pytest.fixture(scope="session")
def sr_checkpoint(cache_dir, corpus) -> Path:
    path = cache_dir / "sr_model.ckpt"
    if not path.exists():
        model, stats = pretrain_sr(corpus, PretrainConfig(steps=PRETRAIN_STEPS,
                                                          lr=PRETRAIN_LR, seed=0))
        checkpoint.save_model(path, model)
        with open(cache_dir / "sr_stats.pkl", "wb") as f:
            pickle.dump(stats, f)
    return path


@pytest.fixture(scope="session")
def sr_stats(sr_checkpoint, cache_dir) -> dict:
    with open(cache_dir / "sr_stats.pkl", "rb") as f:
        return pickle.load(f)


@pytest.fixture(scope="session")
def sr_model(sr_checkpoint) -> SRModel:
    model = SRModel.from_descriptor(checkpoint.read_checkpoint(sr_checkpoint)[0])
    checkpoint.load_into(model, sr_checkpoint)
    model.eval()
    return model


def _classifier_patches():
    corpus = {}
    for s in CLF_CORPUS_SEEDS:
        part = benchgen.make_corpus(CORPUS_COUNT, size=CORPUS_SIZE, seed=s)
        corpus.update({f"{s}_{k}": v for k, v in part.items()})
    rng = np.random.default_rng(CLF_PATCH_SEED)
    patches = synthesize_training_patches(list(corpus.values()), CLF_PER_CLASS, rng)
    idx = np.random.default_rng(CLF_SPLIT_SEED).permutation(len(patches))
    test = [patches[i] for i in idx[:CLF_HOLDOUT]]
    train = [patches[i] for i in idx[CLF_HOLDOUT:]]
    return train, test


@pytest.fixture(scope="session")
def classifier_patches(cache_dir):
    path = cache_dir / "clf_patches.pkl"
    if not path.exists():
        with open(path, "wb") as f:
            pickle.dump(_classifier_patches(), f)
    with open(path, "rb") as f:
        return pickle.load(f)


@pytest.fixture(scope="session")
def clf_checkpoint(cache_dir, classifier_patches) -> Path:
    path = cache_dir / "classifier.ckpt"
    if not path.exists():
        train, _ = classifier_patches
        clf = train_classifier(train, ClassifierTrainConfig(epochs=CLF_EPOCHS, seed=0))
        checkpoint.save_model(path, clf)
    return path


@pytest.fixture(scope="session")
def clf_model(clf_checkpoint) -> Classifier:
    clf = Classifier()
    checkpoint.load_into(clf, clf_checkpoint)
    clf.eval()
    return clf


@pytest.fixture(scope="session")
def bench10_root(cache_dir, corpus) -> Path:
    """Three domains over the first 10 corpus images (seed 123)."""
    root = cache_dir / "bench10"
    names = sorted(corpus)[:10]
    sub = {n: corpus[n] for n in names}
    for domain in ("gaussian_noise", "jpeg", "gaussian_blur"):
        if not (root / domain / "manifest.json").exists():
            benchgen.build_domain(sub, domain, 2, 123, root)
    return root


@pytest.fixture(scope="session")
def bench20_root(cache_dir, corpus) -> Path:
    """A 20-image gaussian_noise domain (seed 77)."""
    root = cache_dir / "bench20"
    names = sorted(corpus)[:20]
    sub = {n: corpus[n] for n in names}
    if not (root / "gaussian_noise" / "manifest.json").exists():
        benchgen.build_domain(sub, "gaussian_noise", 2, 77, root)
    return root
