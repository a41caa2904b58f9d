"""Command-line harness.

Subcommands: synth, ingest, pretrain, finetune, zeroshot, report, inspect.
Exit codes: 0 success, 1 experiment failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys

import numpy as np

from . import baselines, corpus as corpus_mod, errors
from .corpus import (Corpus, SynthConfig, corpus_read, corpus_write, ingest_csv,
                     normalize_corpus, synth_generate)
from .finetune import INPUTS, SCENARIOS, FinetuneConfig, experiment
from .manifest import ExperimentManifest, run_manifest
from .models import (CKPT_MAGIC, checkpoint_read, checkpoint_read_state,
                     checkpoint_write)
from .pretrain import PretrainConfig, pretrain_loop
from .zeroshot import (build_label_table, evaluate_zero_shot,
                       load_label_embeddings_csv)


def _int_tuple(text):
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def _build_parser():
    p = argparse.ArgumentParser(prog="modalign",
                                description="Multimodal joint-space pre-training harness.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--clips-per-class", type=int, default=10)
    s.add_argument("--frames", type=int, default=500)
    s.add_argument("--sensor-joints", type=_int_tuple, default=(4, 7))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True,
                   help="z-score pose/sensor channels with train-split statistics")
    s.add_argument("--out", required=True)

    s = sub.add_parser("ingest", help="build a sensor corpus from CSV recordings")
    s.add_argument("--file", action="append", required=True, dest="files",
                   help="one CSV per sensor, repeatable")
    s.add_argument("--x-col", default="x")
    s.add_argument("--y-col", default="y")
    s.add_argument("--z-col", default="z")
    s.add_argument("--label-col", default="label")
    s.add_argument("--subject-col", default="subject")
    s.add_argument("--fs", type=float, default=50.0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("pretrain", help="contrastive or proxy-task pre-training")
    s.add_argument("--method", choices=("mujo", "simclr", "multitask", "autoencoder"),
                   default="mujo")
    s.add_argument("--modalities", default="text,video,pose,sensor",
                   help="comma list (mujo method only)")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--patience", type=int, default=50)
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--tau", type=float, default=None,
                   help="temperature (default 1.0 for mujo, 0.5 for simclr)")
    s.add_argument("--log", default=None, help="per-epoch CSV log path (mujo only)")

    s = sub.add_parser("finetune", help="repeated-run downstream classification")
    s.add_argument("--corpus", required=True)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--scenario", choices=SCENARIOS, default="baseline")
    s.add_argument("--input", choices=INPUTS, default="sensor")
    s.add_argument("--fraction", type=float, default=1.0)
    s.add_argument("--null", action=argparse.BooleanOptionalAction, default=True,
                   dest="include_null", help="keep the NULL class")
    s.add_argument("--reps", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--out", default=None, help="optional per-run CSV")

    s = sub.add_parser("zeroshot", help="zero-shot evaluation via label embeddings")
    s.add_argument("--corpus", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--modality", default="sensor")
    s.add_argument("--labels-csv", default=None,
                   help="CSV of (label, 1536 floats); default: per-class text "
                        "embeddings from the corpus")
    s.add_argument("--null", action=argparse.BooleanOptionalAction, default=False,
                   dest="include_null")
    s.add_argument("--split", choices=("train", "val", "test"), default="test")

    s = sub.add_parser("report", help="run every cell of a JSON experiment manifest")
    s.add_argument("manifest")

    s = sub.add_parser("inspect", help="print the header of a corpus or checkpoint file")
    s.add_argument("path")
    return p


def _cmd_synth(args):
    cfg = SynthConfig(n_classes=args.classes, clips_per_class=args.clips_per_class,
                      frames_per_clip=args.frames, sensor_joints=args.sensor_joints,
                      seed=args.seed)
    corpus = synth_generate(cfg)
    if args.normalize:
        normalize_corpus(corpus)
    corpus_write(corpus, args.out)
    print(f"wrote {len(corpus.windows)} windows "
          f"({len(corpus.label_names)} classes, s_n={corpus.s_n}) to {args.out}")
    return 0


def _cmd_ingest(args):
    corpus = ingest_csv(args.files, {"x": args.x_col, "y": args.y_col, "z": args.z_col},
                        label_column=args.label_col, subject_column=args.subject_col,
                        fs=args.fs)
    corpus_write(corpus, args.out)
    print(f"wrote {len(corpus.windows)} windows "
          f"({len(corpus.label_names)} classes, s_n={corpus.s_n}) to {args.out}")
    return 0


def _cmd_pretrain(args):
    corpus = corpus_read(args.corpus)
    if args.method == "mujo":
        cfg = PretrainConfig(
            modalities=tuple(args.modalities.split(",")), batch_size=args.batch_size,
            max_epochs=args.epochs, patience=args.patience,
            tau=1.0 if args.tau is None else args.tau, seed=args.seed)
        ckpt = pretrain_loop(corpus, cfg, log_path=args.log)
    else:
        cfg = baselines.BaselineConfig(
            batch_size=args.batch_size, max_epochs=args.epochs,
            patience=args.patience, tau=0.5 if args.tau is None else args.tau,
            seed=args.seed)
        runner = {"simclr": baselines.simclr_pretrain,
                  "multitask": baselines.multitask_pretrain,
                  "autoencoder": baselines.autoencoder_pretrain}[args.method]
        ckpt = runner(corpus, cfg)
    checkpoint_write(ckpt, args.out)
    print(f"{args.method}: best val objective {ckpt.best_val_loss:.6g} "
          f"at epoch {ckpt.best_epoch}; wrote {args.out}")
    return 0


def _cmd_finetune(args):
    corpus = corpus_read(args.corpus)
    checkpoint = checkpoint_read(args.checkpoint, s_n=corpus.s_n) \
        if args.checkpoint else None
    cfg = FinetuneConfig(scenario=args.scenario, input=args.input,
                         fraction=args.fraction, include_null=args.include_null,
                         max_epochs=args.epochs, repetitions=args.reps,
                         seed=args.seed)
    stats = experiment(corpus, checkpoint, cfg)
    print(f"{args.scenario}/{args.input} fraction={args.fraction:g} "
          f"macro_f1 = {stats.mean:.4f} +/- {stats.std:.4f} (n={len(stats.scores)})")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("scenario,input,fraction,null,seed,macro_f1\n")
            for i, score in enumerate(stats.scores):
                f.write(f"{args.scenario},{args.input},{args.fraction:g},"
                        f"{str(args.include_null).lower()},{cfg.seed + i},{score:.8g}\n")
    return 0


def _cmd_zeroshot(args):
    corpus = corpus_read(args.corpus)
    checkpoint = checkpoint_read(args.checkpoint, s_n=corpus.s_n)
    if args.labels_csv:
        names, emb = load_label_embeddings_csv(args.labels_csv)
        table = build_label_table(names, emb, args.include_null)
    else:
        from .manifest import _class_prototype_table
        table = _class_prototype_table(corpus, args.include_null)
    windows = [w for w in corpus.split(args.split) if w.label is not None]
    if not windows:
        raise errors.DataError(f"no labeled windows in split {args.split!r}")
    metrics = evaluate_zero_shot(checkpoint, windows, args.modality, table)
    for name in sorted(metrics):
        print(f"{name} = {metrics[name]:.4f}")
    return 0


def _cmd_report(args):
    m = ExperimentManifest.load(args.manifest)
    code = run_manifest(m)
    print(f"results written to {m.output_dir}" + (" (with failures)" if code else ""))
    return code


def _cmd_inspect(args):
    with open(args.path, "rb") as f:
        magic = f.read(4)
    if magic == corpus_mod.MAGIC:
        corpus = corpus_read(args.path)
        counts = {s: len(corpus.split(s)) for s in ("train", "val", "test")}
        present = sorted({m for w in corpus.windows for m in w.present()})
        print(json.dumps({
            "kind": "corpus", "windows": len(corpus.windows),
            "classes": corpus.label_names, "s_n": corpus.s_n,
            "modalities": present, "splits": counts}, indent=2))
    elif magic == CKPT_MAGIC:
        state, config_echo, seed = checkpoint_read_state(args.path)
        modalities = sorted({n.split(".", 1)[0] for n in state})
        params = {m: int(sum(a.size for n, a in state.items()
                             if n.startswith(m + "."))) for m in modalities}
        print(json.dumps({
            "kind": "checkpoint", "seed": seed, "modalities": modalities,
            "parameters": params, "tensors": len(state),
            "config": json.loads(config_echo) if config_echo else None}, indent=2))
    else:
        raise errors.FormatError(f"{args.path}: unrecognized magic {magic!r}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth, "ingest": _cmd_ingest, "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune, "zeroshot": _cmd_zeroshot,
    "report": _cmd_report, "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (errors.ModAlignError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
