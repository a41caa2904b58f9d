"""Downstream classification: scenario comparison (random init vs pre-trained
frozen/trainable), class-balanced fraction sampling, weighted cross-entropy,
and the repeated-run experiment harness."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, MultimodalWindow
from .errors import ConfigError, DataError, TrainingError
from .metrics import aggregate, confusion_matrix, macro_f1, per_class_f1
from .models import (ClassifierHead, ModalityModel, OUTPUT_DIM,
                     PretrainCheckpoint, build_modality_model)
from .optim import AdamW
from .pretrain import stack_batch
from .tensor import Tensor, concat, log_softmax

SCENARIOS = ("baseline", "pretrained_frozen", "pretrained_trainable", "random_frozen")
INPUTS = ("sensor", "pose", "video", "multimodal")
NULL_LABEL = "NULL"


def class_weights(counts) -> np.ndarray:
    """w_c = max(counts) / counts_c; every class must be populated."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ConfigError(f"all classes need instances, got counts {counts.tolist()}")
    return counts.max() / counts


def weighted_ce(logits: Tensor, labels, weights) -> Tensor:
    """Batch mean of -w_y * log softmax(logits)_y."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    logp = log_softmax(logits, axis=1)
    pick = np.zeros((n, k), dtype=logp.data.dtype)
    w = np.asarray(weights, dtype=np.float64)
    pick[np.arange(n), labels] = w[labels]
    return -(logp * Tensor(pick, dtype=logp.data.dtype)).sum() * (1.0 / n)


def sample_fraction(windows: list[MultimodalWindow], fraction: float, seed: int):
    """Per class, keep max(1, floor(fraction * count)) windows, seeded and
    without replacement. fraction 1.0 returns the full set."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(windows)
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for i, w in enumerate(windows):
        by_class.setdefault(w.label, []).append(i)
    keep = []
    for label in sorted(by_class):
        idx = by_class[label]
        n_keep = max(1, int(fraction * len(idx)))
        chosen = rng.choice(len(idx), size=n_keep, replace=False)
        keep.extend(idx[c] for c in chosen)
    keep.sort()
    return [windows[i] for i in keep]


@dataclass
class FinetuneConfig:
    scenario: str = "baseline"
    input: str = "sensor"
    fraction: float = 1.0
    include_null: bool = True
    max_epochs: int = 200
    patience: int = 25
    repetitions: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.input not in INPUTS:
            raise ConfigError(f"unknown input {self.input!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction must be in (0, 1], got {self.fraction}")

    def echo(self) -> str:
        return json.dumps(vars(self), sort_keys=True)


@dataclass
class RunResult:
    macro_f1: float
    per_class_f1: np.ndarray
    confusion: np.ndarray
    scenario: str
    seed: int


def _filter_null(corpus: Corpus, include_null: bool):
    """Returns (windows per split, contiguous label map, class names)."""
    names = list(corpus.label_names)
    drop = None
    if not include_null and NULL_LABEL in names:
        drop = names.index(NULL_LABEL)
    kept = [i for i in range(len(names)) if i != drop]
    remap = {old: new for new, old in enumerate(kept)}
    splits = {}
    for split in ("train", "val", "test"):
        splits[split] = [w for w in corpus.split(split)
                         if w.label is not None and w.label != drop]
    return splits, remap, [names[i] for i in kept]


class _Classifier:
    """Backbone (one or three modality models) plus a classification head."""

    def __init__(self, models: dict[str, ModalityModel], head: ClassifierHead,
                 input_kind: str, frozen_backbone: bool):
        self.models = models
        self.head = head
        self.input_kind = input_kind
        self.frozen = frozen_backbone
        self.order = ("sensor", "pose", "video") if input_kind == "multimodal" \
            else (input_kind,)

    def features(self, windows, training, rng):
        # frozen backbones run in inference mode so features are deterministic
        backbone_training = training and not self.frozen
        feats = [self.models[m].rep(stack_batch(windows, m),
                                    training=backbone_training, rng=rng)
                 for m in self.order]
        return feats[0] if len(feats) == 1 else concat(feats, axis=1)

    def logits(self, windows, training=False, rng=None):
        return self.head(self.features(windows, training, rng),
                         training=training, rng=rng)

    def trainable_parameters(self):
        params = {f"head.{n}": p for n, p in self.head.named_parameters().items()}
        if not self.frozen:
            for m in self.order:
                for n, p in self.models[m].named_parameters().items():
                    params[f"{m}.{n}"] = p
        return params


def build_classifier(corpus: Corpus, checkpoint: PretrainCheckpoint | None,
                     cfg: FinetuneConfig, n_classes: int, run_seed: int) -> _Classifier:
    order = ("sensor", "pose", "video") if cfg.input == "multimodal" else (cfg.input,)
    # head init depends only on run_seed, so baseline and pretrained scenarios
    # with the same run_seed start from the same head
    head_rng = np.random.default_rng((run_seed, 0xC1A55))
    feat_dim = OUTPUT_DIM * len(order)
    head = ClassifierHead(feat_dim, n_classes, head_rng)
    pretrained = cfg.scenario in ("pretrained_frozen", "pretrained_trainable")
    frozen = cfg.scenario in ("pretrained_frozen", "random_frozen")
    if pretrained:
        if checkpoint is None:
            raise ConfigError(f"scenario {cfg.scenario!r} needs a checkpoint")
        missing = [m for m in order if m not in checkpoint.models]
        if missing:
            raise ConfigError(f"checkpoint lacks modality models {missing}")
        if "sensor" in order and checkpoint.s_n != corpus.s_n:
            raise ConfigError(
                f"checkpoint s_n {checkpoint.s_n} != corpus s_n {corpus.s_n}")
        if frozen:
            models = {m: checkpoint.models[m] for m in order}
        else:
            # trainable runs get a private copy so the checkpoint stays
            # pristine and repeated runs start from the same weights
            models = {}
            for m in order:
                clone = build_modality_model(m, np.random.default_rng(0),
                                             s_n=corpus.s_n)
                src = checkpoint.models[m].named_parameters()
                for n, p in clone.named_parameters().items():
                    p.data = src[n].data.copy()
                models[m] = clone
    else:
        backbone_rng = np.random.default_rng((run_seed, 0xB0DE))
        models = {m: build_modality_model(m, backbone_rng, s_n=corpus.s_n)
                  for m in order}
    return _Classifier(models, head, cfg.input, frozen)


def _predict(clf: _Classifier, windows, batch_size=256):
    preds = []
    for i in range(0, len(windows), batch_size):
        logits = clf.logits(windows[i:i + batch_size])
        preds.extend(np.argmax(logits.data, axis=1).tolist())
    return np.array(preds, dtype=np.int64)


def finetune_run(corpus: Corpus, checkpoint: PretrainCheckpoint | None,
                 cfg: FinetuneConfig, run_seed: int) -> RunResult:
    """One training run: sample the train fraction, train with weighted CE and
    early stopping on validation Macro F1, evaluate on the test split."""
    splits, remap, names = _filter_null(corpus, cfg.include_null)
    n_classes = len(names)
    if any(len(splits[s]) == 0 for s in ("train", "val", "test")):
        raise DataError("corpus needs non-empty train/val/test splits")
    train = sample_fraction(splits["train"], cfg.fraction, seed=(run_seed * 2 + 1))
    y_train = np.array([remap[w.label] for w in train])
    counts = np.bincount(y_train, minlength=n_classes)
    if np.any(counts == 0):
        raise ConfigError(
            f"classes {np.where(counts == 0)[0].tolist()} absent from sampled train set")
    weights = class_weights(counts)

    clf = build_classifier(corpus, checkpoint, cfg, n_classes, run_seed)
    if clf.frozen:
        frozen_before = {m: clf.models[m].named_parameters() for m in clf.order}
        frozen_bytes = {m: {n: p.data.tobytes() for n, p in ps.items()}
                        for m, ps in frozen_before.items()}
    opt = AdamW(clf.trainable_parameters(), weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng((run_seed, 0x5F0F))
    dropout_rng = np.random.default_rng((run_seed, 0xD0))

    y_val = np.array([remap[w.label] for w in splits["val"]])
    best_f1, best_state, since_best = -1.0, None, 0
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(len(train))
        for bi in range(0, len(train), cfg.batch_size):
            batch_idx = order[bi:bi + cfg.batch_size]
            batch = [train[j] for j in batch_idx]
            opt.zero_grad()
            logits = clf.logits(batch, training=True, rng=dropout_rng)
            loss = weighted_ce(logits, y_train[batch_idx], weights)
            if not np.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, lr {cfg.lr:g}")
            loss.backward()
            opt.step(cfg.lr)
        val_pred = _predict(clf, splits["val"])
        val_f1 = macro_f1(val_pred, y_val, n_classes)
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_state = {n: p.data.copy() for n, p in opt.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break
    if best_state is not None:
        for n, p in opt.params.items():
            p.data = best_state[n]
    if clf.frozen:
        for m in clf.order:
            for n, p in clf.models[m].named_parameters().items():
                if p.data.tobytes() != frozen_bytes[m][n]:
                    raise TrainingError(f"frozen parameter {m}.{n} changed during training")

    y_test = np.array([remap[w.label] for w in splits["test"]])
    test_pred = _predict(clf, splits["test"])
    cm = confusion_matrix(test_pred, y_test, n_classes)
    return RunResult(macro_f1=float(per_class_f1(cm).mean()),
                     per_class_f1=per_class_f1(cm), confusion=cm,
                     scenario=cfg.scenario, seed=run_seed)


@dataclass
class ExperimentStats:
    mean: float
    std: float
    scores: list = field(default_factory=list)
    results: list = field(default_factory=list)


def experiment(corpus: Corpus, checkpoint: PretrainCheckpoint | None,
               cfg: FinetuneConfig) -> ExperimentStats:
    """cfg.repetitions independent runs with seeds seed+0 .. seed+reps-1; the
    train fraction is resampled per run."""
    results = [finetune_run(corpus, checkpoint, cfg, cfg.seed + i)
               for i in range(cfg.repetitions)]
    scores = [r.macro_f1 for r in results]
    mean, std = aggregate(scores)
    return ExperimentStats(mean=mean, std=std, scores=scores, results=results)
