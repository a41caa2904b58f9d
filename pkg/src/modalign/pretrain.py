"""Pairwise symmetric InfoNCE pre-training over modality combinations.

Every unordered modality pair contributes a symmetric pair of batch-softmax
contrastive terms; the total is averaged over the number of pairs. The loss
sums over batch items (per-item values are reported separately in the epoch
log for batch-size-independent monitoring).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .corpus import Corpus, MultimodalWindow
from .errors import ConfigError, DataError, TrainingError
from .models import ModalityModel, PretrainCheckpoint, build_modality_model
from .optim import AdamW, LrSchedule, lr_at
from .tensor import Tensor, l2_normalize, log_softmax


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; defined as 0 when either norm is 0."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def info_nce(a: Tensor, b: Tensor, tau: float) -> Tensor:
    """-sum_i log softmax_j(sim(a_i, b_j)/tau)[i]; positives on the diagonal."""
    n = a.shape[0]
    if n < 2:
        raise ConfigError(f"contrastive batch needs >= 2 items, got {n}")
    sims = l2_normalize(a, axis=1) @ l2_normalize(b, axis=1).T
    logp = log_softmax(sims * (1.0 / tau), axis=1)
    eye = Tensor(np.eye(n, dtype=logp.data.dtype))
    return -(logp * eye).sum()


def total_loss(reps: dict[str, Tensor], tau: float):
    """Average over unordered modality pairs of the symmetric InfoNCE sum.

    Returns (loss, per-pair dict of detached floats).
    """
    mods = sorted(reps)
    if len(mods) < 2:
        raise DataError(f"need at least two modalities, got {mods}")
    pairs = list(combinations(mods, 2))
    per_pair = {}
    total = None
    for ma, mb in pairs:
        term = info_nce(reps[ma], reps[mb], tau) + info_nce(reps[mb], reps[ma], tau)
        per_pair[f"{ma}-{mb}"] = term.item()
        total = term if total is None else total + term
    return total * (1.0 / len(pairs)), per_pair


@dataclass
class PretrainConfig:
    modalities: tuple = ("text", "video", "pose", "sensor")
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 50
    tau: float = 1.0
    schedule: LrSchedule = field(default_factory=LrSchedule)
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if len(self.modalities) < 2:
            raise ConfigError("pre-training needs at least two modalities")
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")

    def echo(self) -> str:
        d = {k: (v if not isinstance(v, LrSchedule) else vars(v))
             for k, v in vars(self).items()}
        d["modalities"] = list(self.modalities)
        return json.dumps(d, sort_keys=True)


def stack_batch(windows: list[MultimodalWindow], modality: str, dtype=np.float32) -> Tensor:
    arrs = []
    for w in windows:
        arr = w.get(modality)
        if arr is None:
            raise DataError(f"window (clip {w.clip}) is missing modality {modality!r}")
        arrs.append(arr)
    return Tensor(np.stack(arrs).astype(dtype))


def batch_reps(models: dict[str, ModalityModel], windows, training=False, rng=None):
    return {m: models[m].rep(stack_batch(windows, m), training=training, rng=rng)
            for m in sorted(models)}


def _val_loss(models, val_windows, batch_size, tau):
    """Per-item validation loss over full passes; a trailing singleton window
    is dropped (a batch of one has no negatives)."""
    total = 0.0
    count = 0
    for i in range(0, len(val_windows), batch_size):
        chunk = val_windows[i:i + batch_size]
        if len(chunk) < 2:
            continue
        loss, _ = total_loss(batch_reps(models, chunk, training=False), tau)
        total += loss.item()
        count += len(chunk)
    if count == 0:
        raise DataError("validation split has fewer than 2 windows")
    return total / count


def pretrain_loop(corpus: Corpus, cfg: PretrainConfig,
                  log_path=None) -> PretrainCheckpoint:
    """Seeded training loop returning the best-validation-loss checkpoint."""
    train = corpus.split("train")
    val = corpus.split("val")
    for m in cfg.modalities:
        if any(w.get(m) is None for w in train + val):
            raise DataError(f"corpus lacks modality {m!r} in train/val splits")
    master = np.random.default_rng(cfg.seed)
    init_rng = np.random.default_rng(master.integers(2 ** 63))
    shuffle_rng = np.random.default_rng(master.integers(2 ** 63))
    dropout_rng = np.random.default_rng(master.integers(2 ** 63))
    models = {m: build_modality_model(m, init_rng, s_n=corpus.s_n)
              for m in sorted(cfg.modalities)}
    params = {}
    for mod, model in models.items():
        for n, p in model.named_parameters().items():
            params[f"{mod}.{n}"] = p
    opt = AdamW(params, weight_decay=cfg.weight_decay)

    best_loss = float("inf")
    best_state = None
    best_epoch = -1
    since_best = 0
    log_rows = []
    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg.schedule)
        order = shuffle_rng.permutation(len(train))
        epoch_loss, epoch_items = 0.0, 0
        pair_log = {}
        n_batches = len(train) // cfg.batch_size
        for bi in range(n_batches):
            batch = [train[j] for j in order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]]
            opt.zero_grad()
            loss, per_pair = total_loss(
                batch_reps(models, batch, training=True, rng=dropout_rng), cfg.tau)
            if not np.isfinite(loss.item()):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {bi}, lr {lr:g}")
            loss.backward()
            opt.step(lr)
            epoch_loss += loss.item()
            epoch_items += len(batch)
            for k, v in per_pair.items():
                pair_log[k] = pair_log.get(k, 0.0) + v / cfg.batch_size
        if n_batches:
            pair_log = {k: v / n_batches for k, v in pair_log.items()}
        val_loss = _val_loss(models, val, cfg.batch_size, cfg.tau)
        train_loss = epoch_loss / epoch_items if epoch_items else float("nan")
        log_rows.append((epoch, lr, train_loss, val_loss, dict(pair_log)))
        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_state = {n: p.data.copy() for n, p in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break
    if best_state is not None:
        for n, p in params.items():
            p.data = best_state[n]
    if log_path is not None:
        _write_epoch_log(log_path, log_rows)
    return PretrainCheckpoint(models=models, config_echo=cfg.echo(), seed=cfg.seed,
                              best_val_loss=best_loss, best_epoch=best_epoch,
                              val_history=[r[3] for r in log_rows])


def _write_epoch_log(path, rows):
    pair_names = sorted({k for *_, pairs in rows for k in pairs})
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,lr,train_loss,val_loss"
                + "".join(f",loss_{p}" for p in pair_names) + "\n")
        for epoch, lr, tr, vl, pairs in rows:
            f.write(f"{epoch},{lr:.10g},{tr:.8g},{vl:.8g}"
                    + "".join(f",{pairs.get(p, float('nan')):.8g}" for p in pair_names)
                    + "\n")


def cross_modal_retrieval_accuracy(models: dict[str, ModalityModel],
                                   windows: list[MultimodalWindow]) -> dict[str, float]:
    """Top-1 class-match accuracy of nearest-neighbor retrieval for every
    ordered modality pair (query modality -> gallery modality)."""
    mods = sorted(models)
    reps = {m: l2_normalize(models[m].rep(stack_batch(windows, m)), axis=1).data
            for m in mods}
    labels = np.array([w.label for w in windows])
    out = {}
    for ma in mods:
        for mb in mods:
            if ma == mb:
                continue
            sims = reps[ma] @ reps[mb].T
            nearest = sims.argmax(axis=1)
            out[f"{ma}->{mb}"] = float(np.mean(labels[nearest] == labels))
    return out
