"""Sensor-only self-supervised baselines sharing the sensor encoder: view
contrast (NT-Xent over rotated views), transformation discrimination with six
binary tasks, and a convolutional auto-encoder."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus
from .errors import ConfigError, DataError, ParameterError, TrainingError
from .layers import (Activation, BatchNorm2d, ConvTranspose2d, Dense, Dropout,
                     Module, Sequential, UpsampleTime2)
from .models import PretrainCheckpoint, build_modality_model
from .optim import AdamW, LrSchedule, lr_at
from .pretrain import stack_batch
from .tensor import Tensor, l2_normalize, log_softmax

AUGMENTATION_KINDS = ("noise", "scale", "negate", "hflip", "permute4",
                      "channel_shuffle", "rotate3d")


@dataclass
class AugmentationSpec:
    kind: str
    sigma: float = 0.05

    def __post_init__(self):
        if self.kind not in AUGMENTATION_KINDS:
            raise ParameterError(f"unknown augmentation {self.kind!r}")


def _rotation_matrix(axis, angle):
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    cc = 1.0 - c
    return np.array([
        [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc]])


def augment(window: np.ndarray, spec: AugmentationSpec,
            rng: np.random.Generator) -> np.ndarray:
    """Shape-preserving augmentation of a (3, s_n, T) sensor window."""
    w = np.asarray(window, dtype=np.float32)
    kind = spec.kind
    if kind == "noise":
        return w + rng.normal(0.0, spec.sigma, w.shape).astype(np.float32)
    if kind == "scale":
        # multiplicative factors around 1; factors around 0 would erase the signal
        return w * rng.normal(1.0, spec.sigma, w.shape).astype(np.float32)
    if kind == "negate":
        return -w
    if kind == "hflip":
        return w[..., ::-1].copy()
    if kind == "permute4":
        t = w.shape[-1]
        bounds = [0, t // 4, t // 2, 3 * t // 4, t]  # remainder joins the last segment
        segments = [w[..., bounds[i]:bounds[i + 1]] for i in range(4)]
        order = rng.permutation(4)
        return np.concatenate([segments[i] for i in order], axis=-1)
    if kind == "channel_shuffle":
        return w[rng.permutation(3)].copy()
    if kind == "rotate3d":
        axis = rng.standard_normal(3)
        angle = rng.uniform(-np.pi, np.pi)
        rot = _rotation_matrix(axis, angle).astype(np.float32)
        return np.einsum("ab,bst->ast", rot, w)
    raise ParameterError(f"unknown augmentation {kind!r}")


def ntxent_loss(z1: Tensor, z2: Tensor, tau: float) -> Tensor:
    """NT-Xent over the 2B l2-normalized embeddings; mean over the 2B anchors.

    Anchor i's positive is its counterpart view; its negatives are the other
    2B-2 embeddings (self excluded via a -inf diagonal mask)."""
    n = z1.shape[0]
    if n < 2:
        raise ConfigError(f"NT-Xent needs batch >= 2, got {n}")
    from .tensor import concat
    z = l2_normalize(concat([z1, z2], axis=0), axis=1)
    sims = (z @ z.T) * (1.0 / tau)
    mask = np.zeros((2 * n, 2 * n), dtype=sims.data.dtype)
    np.fill_diagonal(mask, -1e9)
    logp = log_softmax(sims + Tensor(mask, dtype=sims.data.dtype), axis=1)
    pos = np.zeros((2 * n, 2 * n), dtype=logp.data.dtype)
    idx = np.arange(n)
    pos[idx, idx + n] = 1.0
    pos[idx + n, idx] = 1.0
    return -(logp * Tensor(pos, dtype=logp.data.dtype)).sum() * (1.0 / (2 * n))


def _softplus(z: Tensor) -> Tensor:
    absz = z.relu() + (-z).relu()
    return z.relu() + ((-absz).exp() + 1.0).log()


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean of softplus(z) - y*z (numerically stable binary cross-entropy)."""
    y = Tensor(np.asarray(targets).reshape(logits.shape), dtype=logits.data.dtype)
    n = logits.data.size
    return (_softplus(logits) - y * logits).sum() * (1.0 / n)


@dataclass
class BaselineConfig:
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 50
    tau: float = 0.5
    schedule: LrSchedule = field(default_factory=LrSchedule)
    weight_decay: float = 0.01
    seed: int = 0

    def echo(self, method: str) -> str:
        d = {k: (v if not isinstance(v, LrSchedule) else vars(v))
             for k, v in vars(self).items()}
        d["method"] = method
        return json.dumps(d, sort_keys=True)


def _require_sensor(corpus: Corpus):
    train, val = corpus.split("train"), corpus.split("val")
    if not train or not val:
        raise DataError("corpus needs non-empty train and val splits")
    if any(w.sensor is None for w in train + val):
        raise DataError("baseline pre-training needs the sensor modality")
    return train, val


def _loop(corpus: Corpus, cfg: BaselineConfig, method: str, sensor_model,
          extra_params: dict, batch_loss, min_batch: int = 1,
          model_params: dict | None = None) -> PretrainCheckpoint:
    """Shared seeded loop: shuffled full batches, AdamW with the warmup/cosine
    schedule, early stopping on per-item validation objective.

    ``model_params`` restricts which of the sensor model's parameters are
    optimized (AdamW weight-decays everything it holds, so parameters outside
    the objective must not be handed to it).
    """
    train, val = _require_sensor(corpus)
    master = np.random.default_rng(cfg.seed)
    shuffle_rng = np.random.default_rng(master.integers(2 ** 63))
    aug_rng = np.random.default_rng(master.integers(2 ** 63))
    dropout_rng = np.random.default_rng(master.integers(2 ** 63))
    val_rng_seed = int(master.integers(2 ** 63))

    if model_params is None:
        model_params = sensor_model.named_parameters()
    params = {f"sensor.{n}": p for n, p in model_params.items()}
    params.update(extra_params)
    opt = AdamW(params, weight_decay=cfg.weight_decay)

    def val_objective():
        # fixed augmentation stream so the validation objective is comparable
        # across epochs
        vrng = np.random.default_rng(val_rng_seed)
        total, count = 0.0, 0
        for i in range(0, len(val), cfg.batch_size):
            chunk = val[i:i + cfg.batch_size]
            if len(chunk) < min_batch:
                continue
            loss = batch_loss(chunk, False, vrng, dropout_rng)
            total += loss.item() * len(chunk)
            count += len(chunk)
        return total / count

    history = [val_objective()]  # epoch-0 objective before any update
    best_loss, best_state, best_epoch, since_best = history[0], None, -1, 0
    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg.schedule)
        order = shuffle_rng.permutation(len(train))
        n_batches = len(train) // cfg.batch_size
        if n_batches == 0 and len(train) >= min_batch:
            n_batches, bsz = 1, len(train)
        else:
            bsz = cfg.batch_size
        for bi in range(n_batches):
            batch = [train[j] for j in order[bi * bsz:(bi + 1) * bsz]]
            opt.zero_grad()
            loss = batch_loss(batch, True, aug_rng, dropout_rng)
            if not np.isfinite(loss.item()):
                raise TrainingError(
                    f"{method}: non-finite loss at epoch {epoch}, batch {bi}, lr {lr:g}")
            loss.backward()
            opt.step(lr)
        vloss = val_objective()
        history.append(vloss)
        if vloss < best_loss:
            best_loss, best_epoch, since_best = vloss, epoch, 0
            best_state = {n: p.data.copy() for n, p in params.items()}
        else:
            since_best += 1
            if since_best > cfg.patience:
                break
    if best_state is not None:
        for n, p in params.items():
            p.data = best_state[n]
    return PretrainCheckpoint(models={"sensor": sensor_model},
                              config_echo=cfg.echo(method), seed=cfg.seed,
                              best_val_loss=best_loss, best_epoch=best_epoch,
                              val_history=history)


# -- simCLR-style view contrast ----------------------------------------------

def _simclr_head(rng) -> Module:
    return Sequential(Dense(1280, 256, rng), Activation("relu"),
                      Dense(256, 128, rng), Activation("relu"),
                      Dense(128, 128, rng))


def simclr_pretrain(corpus: Corpus, cfg: BaselineConfig) -> PretrainCheckpoint:
    """Two randomly rotated views per window, contrasted with NT-Xent through
    encoder, projection, and a 128-d head (one rotation per view)."""
    init_rng = np.random.default_rng(np.random.default_rng(cfg.seed).integers(2 ** 63))
    model = build_modality_model("sensor", init_rng, s_n=corpus.s_n)
    head = _simclr_head(init_rng)
    spec = AugmentationSpec("rotate3d")

    def batch_loss(batch, training, aug_rng, dropout_rng):
        views = []
        for _ in range(2):
            arr = np.stack([augment(w.sensor, spec, aug_rng) for w in batch])
            x = Tensor(arr.astype(np.float32))
            rep = model.rep(x, training=training, rng=dropout_rng)
            views.append(head(rep, training=training, rng=dropout_rng))
        return ntxent_loss(views[0], views[1], cfg.tau)

    extra = {f"simclr_head.{n}": p for n, p in head.named_parameters().items()}
    return _loop(corpus, cfg, "simclr", model, extra, batch_loss, min_batch=2)


# -- transformation discrimination -------------------------------------------

MULTITASK_TASKS = ("noise", "scale", "negate", "hflip", "permute4", "channel_shuffle")


def _task_head(rng) -> Module:
    return Sequential(Dense(512, 256, rng), Activation("relu"),
                      Dense(256, 256, rng), Activation("sigmoid"),
                      Dense(256, 1, rng))


def multitask_pretrain(corpus: Corpus, cfg: BaselineConfig) -> PretrainCheckpoint:
    """Six binary was-it-transformed tasks on the encoder output; each task
    sees its own half-transformed copy of the batch. The projection is not
    part of the objective and stays at its initialization."""
    init_rng = np.random.default_rng(np.random.default_rng(cfg.seed).integers(2 ** 63))
    model = build_modality_model("sensor", init_rng, s_n=corpus.s_n)
    heads = {t: _task_head(init_rng) for t in MULTITASK_TASKS}
    specs = {t: AugmentationSpec(t) for t in MULTITASK_TASKS}

    def batch_loss(batch, training, aug_rng, dropout_rng):
        total = None
        for task in MULTITASK_TASKS:
            flags = aug_rng.random(len(batch)) < 0.5
            arr = np.stack([augment(w.sensor, specs[task], aug_rng) if f else w.sensor
                            for w, f in zip(batch, flags)])
            feats = model.encoder(Tensor(arr.astype(np.float32)),
                                  training=training, rng=dropout_rng)
            logits = heads[task](feats, training=training, rng=dropout_rng)
            term = bce_with_logits(logits, flags.astype(np.float32))
            total = term if total is None else total + term
        return total

    extra = {}
    for task, head in heads.items():
        for n, p in head.named_parameters().items():
            extra[f"head_{task}.{n}"] = p
    encoder_params = {f"encoder.{n}": p
                      for n, p in model.encoder.named_parameters().items()}
    ckpt = _loop(corpus, cfg, "multitask", model, extra, batch_loss,
                 model_params=encoder_params)
    ckpt.task_heads = heads  # for detection-accuracy probes
    return ckpt


def multitask_detection_accuracy(model, head, task: str, windows, seed=0) -> float:
    """Held-out accuracy of one binary task at logit threshold 0."""
    rng = np.random.default_rng(seed)
    spec = AugmentationSpec(task)
    flags = rng.random(len(windows)) < 0.5
    arr = np.stack([augment(w.sensor, spec, rng) if f else w.sensor
                    for w, f in zip(windows, flags)])
    feats = model.encoder(Tensor(arr.astype(np.float32)))
    logits = head(feats).data.ravel()
    return float(np.mean((logits > 0) == flags))


# -- convolutional auto-encoder ----------------------------------------------

class Decoder(Module):
    """1280-d representation back to a (3, s_n, T) window.

    Dense to (32, s_n, T/4), then three transposed-conv blocks with channel
    plan 32 -> 16 -> 8 -> 3 and x2 temporal upsampling in the first two blocks
    (two doublings of T/4 recover T; a third would overshoot)."""

    def __init__(self, s_n: int, rng, window: int = 100):
        if window % 4 != 0:
            raise ConfigError(f"window must be divisible by 4, got {window}")
        self.s_n = s_n
        self.t0 = window // 4
        self.fc = Dense(1280, 32 * s_n * self.t0, rng)
        self.bn = BatchNorm2d(32)
        self.block1 = Sequential(ConvTranspose2d(32, 16, 1, 11, rng, padding="same"),
                                 Dropout(0.05), Activation("relu"), UpsampleTime2())
        self.block2 = Sequential(ConvTranspose2d(16, 8, 1, 11, rng, padding="same"),
                                 Dropout(0.05), Activation("relu"), UpsampleTime2())
        self.block3 = Sequential(ConvTranspose2d(8, 3, 1, 11, rng, padding="same"),
                                 Dropout(0.05), Activation("relu"))

    def forward(self, x, training=False, rng=None):
        h = self.fc(x).reshape(x.shape[0], 32, self.s_n, self.t0)
        h = self.bn(h, training=training, rng=rng).relu()
        h = self.block1(h, training=training, rng=rng)
        h = self.block2(h, training=training, rng=rng)
        return self.block3(h, training=training, rng=rng)


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(np.asarray(target), dtype=pred.data.dtype)
    return (diff * diff).sum() * (1.0 / pred.data.size)


def autoencoder_pretrain(corpus: Corpus, cfg: BaselineConfig) -> PretrainCheckpoint:
    """Encoder + projection + convolutional decoder trained to reconstruct the
    sensor window under mean-squared error."""
    init_rng = np.random.default_rng(np.random.default_rng(cfg.seed).integers(2 ** 63))
    model = build_modality_model("sensor", init_rng, s_n=corpus.s_n)
    decoder = Decoder(corpus.s_n, init_rng)

    def batch_loss(batch, training, aug_rng, dropout_rng):
        arr = np.stack([w.sensor for w in batch]).astype(np.float32)
        rep = model.rep(Tensor(arr), training=training, rng=dropout_rng)
        recon = decoder(rep, training=training, rng=dropout_rng)
        return mse(recon, arr)

    extra = {f"decoder.{n}": p for n, p in decoder.named_parameters().items()}
    ckpt = _loop(corpus, cfg, "autoencoder", model, extra, batch_loss)
    ckpt.decoder = decoder
    return ckpt
