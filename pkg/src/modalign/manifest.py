"""Experiment manifests: a JSON description of a grid of fine-tuning and
zero-shot cells, executed against one corpus, with raw/aggregate/long-format
CSV outputs."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import corpus_read
from .errors import ConfigError
from .finetune import FinetuneConfig, experiment
from .metrics import aggregate
from .models import checkpoint_read
from .zeroshot import build_label_table, evaluate_zero_shot, load_label_embeddings_csv

METHODS = ("mujo", "simclr", "multitask", "autoencoder", "baseline")


@dataclass
class ExperimentManifest:
    corpus: str
    checkpoint: str | None = None
    method: str = "baseline"
    grid: list = field(default_factory=list)
    repetitions: int = 20
    seed: int = 0
    output_dir: str = "results"

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        unknown = set(raw) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown manifest fields: {sorted(unknown)}")
        m = cls(**raw)
        if m.method not in METHODS:
            raise ConfigError(f"unknown method {m.method!r}")
        return m


def _class_prototype_table(corpus, include_null):
    """Label table from the per-class text embeddings present in the corpus."""
    protos = {}
    for w in corpus.windows:
        if w.label is not None and w.text_emb is not None and w.label not in protos:
            protos[w.label] = w.text_emb
    if len(protos) != len(corpus.label_names):
        raise ConfigError("corpus lacks text embeddings for some classes")
    emb = np.stack([protos[i] for i in range(len(corpus.label_names))])
    return build_label_table(corpus.label_names, emb, include_null)


def run_manifest(m: ExperimentManifest, stderr=sys.stderr) -> int:
    """Execute every grid cell; failures are recorded and remaining cells
    continue. Returns a process exit code (0 ok, 1 if any cell failed)."""
    out_dir = Path(m.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = corpus_read(m.corpus)
    dataset = Path(m.corpus).stem
    checkpoint = None
    if m.checkpoint:
        checkpoint = checkpoint_read(m.checkpoint, s_n=corpus.s_n)

    raw_rows, agg_rows, long_rows, failures = [], [], [], []
    for cell in m.grid:
        cell = dict(cell)
        kind = cell.pop("kind", "finetune")
        try:
            if kind == "finetune":
                cfg = FinetuneConfig(repetitions=m.repetitions, seed=m.seed, **cell)
                stats = experiment(corpus, checkpoint, cfg)
                for i, score in enumerate(stats.scores):
                    raw_rows.append((dataset, cfg.input, cfg.scenario, cfg.fraction,
                                     cfg.include_null, cfg.seed + i, score))
                    long_rows.append((dataset, m.method, kind, cfg.input, cfg.scenario,
                                      cfg.fraction, cfg.include_null, "macro_f1",
                                      cfg.seed + i, score))
                mean, std = aggregate(stats.scores)
                agg_rows.append((dataset, cfg.input, cfg.scenario, cfg.fraction,
                                 cfg.include_null, mean, std, len(stats.scores)))
            elif kind == "zeroshot":
                if checkpoint is None:
                    raise ConfigError("zero-shot cells need a checkpoint")
                modality = cell.pop("modality", "sensor")
                include_null = cell.pop("include_null", False)
                labels_csv = cell.pop("labels_csv", None)
                if cell:
                    raise ConfigError(f"unknown zero-shot cell fields: {sorted(cell)}")
                if labels_csv:
                    names, emb = load_label_embeddings_csv(labels_csv)
                    table = build_label_table(names, emb, include_null)
                else:
                    table = _class_prototype_table(corpus, include_null)
                windows = [w for w in corpus.split("test") if w.label is not None]
                metrics = evaluate_zero_shot(checkpoint, windows, modality, table)
                for name, value in sorted(metrics.items()):
                    long_rows.append((dataset, m.method, kind, modality, "zeroshot",
                                      1.0, include_null, name, m.seed, value))
            else:
                raise ConfigError(f"unknown cell kind {kind!r}")
        except Exception as exc:  # keep going; report at the end
            failures.append((cell, kind, f"{type(exc).__name__}: {exc}"))
            print(f"cell {kind} {cell} failed: {exc}", file=stderr)

    _write_csv(out_dir / "raw.csv",
               "dataset,input,scenario,fraction,null,seed,macro_f1", raw_rows)
    _write_csv(out_dir / "aggregate.csv",
               "dataset,input,scenario,fraction,null,mean,std,n", agg_rows)
    _write_csv(out_dir / "long.csv",
               "dataset,method,kind,input,scenario,fraction,null,metric,seed,value",
               long_rows)
    if failures:
        _write_csv(out_dir / "failures.csv", "cell,kind,error",
                   [(json.dumps(c), k, e) for c, k, e in failures])
    return 1 if failures else 0


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.8g}"
    return str(v)


def _write_csv(path, header, rows):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    tmp.replace(path)
