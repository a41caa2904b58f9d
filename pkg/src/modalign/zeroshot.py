"""Zero-shot activity classification: label text embeddings are projected into
the joint space and windows are classified by descending cosine similarity.
The no-activity class, when requested, is the mean of all label embeddings."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .corpus import TEXT_DIM, MultimodalWindow
from .errors import ConfigError, DataError, ParameterError
from .metrics import macro_f1
from .models import PretrainCheckpoint
from .pretrain import stack_batch
from .tensor import Tensor, l2_normalize

NULL_LABEL = "NULL"


@dataclass
class LabelTable:
    names: list[str]
    embeddings: np.ndarray  # (len(names), 1536)

    def __len__(self):
        return len(self.names)


def build_label_table(labels, embeddings, include_null: bool = False) -> LabelTable:
    """One 1536-d embedding per label; the NULL entry, appended last, is the
    exact componentwise mean of the others."""
    embeddings = np.asarray(embeddings, dtype=np.float32)
    if embeddings.ndim != 2 or embeddings.shape != (len(labels), TEXT_DIM):
        raise DataError(
            f"need {len(labels)} embeddings of dim {TEXT_DIM}, got {embeddings.shape}")
    names = list(labels)
    if include_null:
        names.append(NULL_LABEL)
        embeddings = np.vstack([embeddings, embeddings.mean(axis=0, keepdims=True)])
    return LabelTable(names=names, embeddings=embeddings)


def load_label_embeddings_csv(path) -> tuple[list[str], np.ndarray]:
    """CSV rows of (label, 1536 floats), no header."""
    names, rows = [], []
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if len(row) != 1 + TEXT_DIM:
                raise DataError(f"{path}:{lineno}: expected {1 + TEXT_DIM} fields, "
                                f"got {len(row)}")
            names.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return names, np.array(rows, dtype=np.float32)


def label_reps(checkpoint: PretrainCheckpoint, table: LabelTable) -> np.ndarray:
    """Joint-space representations of the label embeddings via the text model."""
    if "text" not in checkpoint.models:
        raise ConfigError("checkpoint has no text model; zero-shot needs one")
    reps = checkpoint.models["text"].rep(Tensor(table.embeddings))
    return l2_normalize(reps, axis=1).data


def zero_shot_rank(window: MultimodalWindow, modality: str,
                   checkpoint: PretrainCheckpoint, table: LabelTable,
                   _label_rep_cache: np.ndarray | None = None) -> list[str]:
    """Labels ordered by descending cosine similarity to the window's joint
    representation; ties resolved by table order."""
    ranks = zero_shot_rank_batch([window], modality, checkpoint, table,
                                 _label_rep_cache)
    return ranks[0]


def zero_shot_rank_batch(windows, modality: str, checkpoint: PretrainCheckpoint,
                         table: LabelTable,
                         _label_rep_cache: np.ndarray | None = None):
    if modality not in checkpoint.models:
        raise ConfigError(f"checkpoint has no {modality!r} model")
    lreps = _label_rep_cache if _label_rep_cache is not None \
        else label_reps(checkpoint, table)
    wreps = l2_normalize(
        checkpoint.models[modality].rep(stack_batch(windows, modality)), axis=1).data
    # einsum (not BLAS) so identical label embeddings give bit-identical
    # similarities; otherwise exact ties could break by accumulation order
    sims = np.einsum("id,jd->ij", wreps, lreps)
    # stable mergesort on -sim keeps table order for ties
    order = np.argsort(-sims, axis=1, kind="stable")
    return [[table.names[j] for j in row] for row in order]


def top_k_accuracy(rankings, truths, k: int) -> float:
    """Fraction of instances whose true label is within the first k ranks."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    hits = sum(1 for ranking, truth in zip(rankings, truths) if truth in ranking[:k])
    return hits / len(rankings) if rankings else 0.0


def evaluate_zero_shot(checkpoint: PretrainCheckpoint, windows, modality: str,
                       table: LabelTable, ks=(1, 3, 5)) -> dict:
    """Top-k accuracy and Macro F1 for labeled windows of one modality."""
    truths = [table.names[w.label] if w.label is not None else NULL_LABEL
              for w in windows]
    rankings = zero_shot_rank_batch(windows, modality, checkpoint, table)
    out = {f"top{k}": top_k_accuracy(rankings, truths, k) for k in ks}
    name_id = {n: i for i, n in enumerate(table.names)}
    preds = [name_id[r[0]] for r in rankings]
    out["macro_f1"] = macro_f1(preds, [name_id[t] for t in truths], len(table))
    return out
