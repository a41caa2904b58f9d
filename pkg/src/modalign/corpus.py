"""Windowed multimodal instances: windowing/trimming/normalization rules, a
deterministic synthetic corpus generator, the binary corpus format, and CSV
ingestion for real accelerometer recordings.

Dimensions are fixed by the upstream feature extractors this stands in for:
text embeddings are 1536-d, video embeddings 1024-d, pose windows
(3, 17, 100) and sensor windows (3, s_n, 100) at 50 Hz.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, IngestionError, ParameterError

TEXT_DIM = 1536
VIDEO_DIM = 1024
JOINTS = 17
WINDOW = 100
STRIDE = 50
SAMPLE_RATE = 50.0
GRAVITY = np.array([0.0, 0.0, -9.81])

MAGIC = b"FMC1"
VERSION = 1

_MOD_BITS = {"text": 1, "video": 2, "pose": 4, "sensor": 8}
MODALITIES = ("text", "video", "pose", "sensor")


@dataclass
class MultimodalWindow:
    """One 2-second instance; any subset of modalities may be present."""
    text_emb: np.ndarray | None = None
    video_emb: np.ndarray | None = None
    pose: np.ndarray | None = None
    sensor: np.ndarray | None = None
    label: int | None = None
    subject: int = 0
    clip: int = 0

    def get(self, modality: str):
        return {"text": self.text_emb, "video": self.video_emb,
                "pose": self.pose, "sensor": self.sensor}[modality]

    def present(self) -> list[str]:
        return [m for m in MODALITIES if self.get(m) is not None]


@dataclass
class Corpus:
    windows: list[MultimodalWindow] = field(default_factory=list)
    label_names: list[str] = field(default_factory=list)
    s_n: int = 1
    sample_rate: float = SAMPLE_RATE
    # group (clip or subject) -> split name; not serialized, recomputed
    # deterministically by assign_splits after reading a corpus file
    split_map: dict[int, str] = field(default_factory=dict)
    split_by: str = "clip"

    def split_of(self, w: MultimodalWindow) -> str:
        key = w.clip if self.split_by == "clip" else w.subject
        return self.split_map.get(key, "train")

    def split(self, name: str) -> list[MultimodalWindow]:
        return [w for w in self.windows if self.split_of(w) == name]


def assign_splits(group_ids, fractions=(0.6, 0.2, 0.2), seed=0) -> dict[int, str]:
    """Deterministic group-level train/val/test assignment.

    Groups (clips or subjects) are shuffled with the given seed and cut at the
    requested fractions; a window never straddles groups, so group-level
    assignment guarantees split independence.
    """
    groups = sorted(set(group_ids))
    rng = np.random.default_rng(seed)
    order = [groups[i] for i in rng.permutation(len(groups))]
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    out = {}
    for i, g in enumerate(order):
        if i < n_train:
            out[g] = "train"
        elif i < n_train + n_val:
            out[g] = "val"
        else:
            out[g] = "test"
    return out


# -- windowing rules ----------------------------------------------------------

def trim_clip(clip: np.ndarray, ratio: float = 0.15) -> np.ndarray:
    """Drop the first and last floor(ratio*N) frames (time on the last axis)."""
    if not 0.0 <= ratio < 0.5:
        raise ParameterError(f"trim ratio must be in [0, 0.5), got {ratio}")
    n = clip.shape[-1]
    cut = int(ratio * n)
    return clip[..., cut:n - cut]


def sliding_windows(series: np.ndarray, window: int = WINDOW, stride: int = STRIDE):
    """Fixed-length windows at offsets 0, stride, 2*stride, ... (time last)."""
    if window <= 0 or not 0 < stride <= window:
        raise ParameterError(f"bad window/stride: {window}/{stride}")
    length = series.shape[-1]
    if length < window:
        return []
    count = (length - window) // stride + 1
    return [series[..., i * stride:i * stride + window] for i in range(count)]


def window_count(length: int, window: int = WINDOW, stride: int = STRIDE) -> int:
    return 0 if length < window else (length - window) // stride + 1


# -- normalization ------------------------------------------------------------

@dataclass
class ZScoreStats:
    """Per-channel mean/std; channels are all axes except the trailing time
    axis. Degenerate channels (population std < 1e-8) get std 1 so they map
    to zeros."""
    mean: np.ndarray
    std: np.ndarray


def zscore_fit(windows: list[np.ndarray]) -> ZScoreStats:
    data = np.concatenate([np.asarray(w, dtype=np.float64) for w in windows], axis=-1)
    mean = data.mean(axis=-1)
    std = data.std(axis=-1)
    std = np.where(std < 1e-8, 1.0, std)
    return ZScoreStats(mean=mean, std=std)


def zscore_apply(stats: ZScoreStats, window: np.ndarray) -> np.ndarray:
    out = (np.asarray(window, dtype=np.float64) - stats.mean[..., None]) / stats.std[..., None]
    return out.astype(np.float32)


# -- virtual accelerometer ----------------------------------------------------

def virtual_accel_from_pose(track: np.ndarray, fs: float = SAMPLE_RATE,
                            gravity: np.ndarray = GRAVITY) -> np.ndarray:
    """Second finite difference of a 3xT joint track minus constant gravity.

    a[t] = (p[t+1] - 2 p[t] + p[t-1]) * fs^2 - g, endpoints copied from their
    neighbors. No orientation tracking: gravity stays in the world frame.
    """
    track = np.asarray(track, dtype=np.float64)
    if track.ndim != 2 or track.shape[0] != 3 or track.shape[1] < 3:
        raise DataError(f"need a 3xT track with T >= 3, got shape {track.shape}")
    acc = np.empty_like(track)
    acc[:, 1:-1] = (track[:, 2:] - 2.0 * track[:, 1:-1] + track[:, :-2]) * fs * fs
    acc[:, 0] = acc[:, 1]
    acc[:, -1] = acc[:, -2]
    return acc - np.asarray(gravity, dtype=np.float64)[:, None]


# -- synthetic corpus ---------------------------------------------------------

@dataclass
class SynthConfig:
    n_classes: int = 8
    clips_per_class: int = 10
    frames_per_clip: int = 500
    joint_count: int = JOINTS
    sensor_joints: tuple = (4, 7)
    pose_noise: float = 0.002
    sensor_noise: float = 0.5
    video_noise: float = 0.1
    seed: int = 0
    trim_ratio: float = 0.15
    split_fractions: tuple = (0.6, 0.2, 0.2)


def _unit_prototypes(rng, n, dim):
    protos = rng.standard_normal((n, dim))
    return (protos / np.linalg.norm(protos, axis=1, keepdims=True)).astype(np.float32)


def synth_generate(cfg: SynthConfig) -> Corpus:
    """Deterministic desk-scale multimodal corpus.

    Each class is a distinct periodic 17-joint motion; sensors are virtual
    accelerometers on cfg.sensor_joints; video embeddings are noisy class
    prototypes and text embeddings exact class prototypes (shared labels).
    """
    if any(j < 0 or j >= cfg.joint_count for j in cfg.sensor_joints):
        raise ParameterError(f"sensor_joints {cfg.sensor_joints} out of range")
    rng = np.random.default_rng(cfg.seed)
    n_cls = cfg.n_classes
    text_protos = _unit_prototypes(rng, n_cls, TEXT_DIM)
    video_protos = _unit_prototypes(rng, n_cls, VIDEO_DIM)
    # class motion signatures: per-joint amplitude/phase and 1-3 Hz tempo
    freqs = 1.0 + 2.0 * rng.random(n_cls)
    amps = 0.05 + 0.25 * rng.random((n_cls, cfg.joint_count, 3))
    phases = rng.uniform(0, 2 * np.pi, (n_cls, cfg.joint_count, 3))
    skeleton = rng.uniform(-0.5, 0.5, (cfg.joint_count, 3))

    corpus = Corpus(label_names=[f"activity_{c}" for c in range(n_cls)],
                    s_n=len(cfg.sensor_joints), split_by="clip")
    t = np.arange(cfg.frames_per_clip) / SAMPLE_RATE
    clip_id = 0
    for c in range(n_cls):
        for _ in range(cfg.clips_per_class):
            phase0 = rng.uniform(0, 2 * np.pi)
            pose = np.empty((3, cfg.joint_count, cfg.frames_per_clip))
            for j in range(cfg.joint_count):
                for ax in range(3):
                    pose[ax, j] = (skeleton[j, ax] + amps[c, j, ax]
                                   * np.sin(2 * np.pi * freqs[c] * t + phase0 + phases[c, j, ax]))
            pose += rng.normal(0, cfg.pose_noise, pose.shape)
            pose = trim_clip(pose, cfg.trim_ratio)
            sensor = np.stack([virtual_accel_from_pose(pose[:, j, :])
                               for j in cfg.sensor_joints], axis=1)
            sensor += rng.normal(0, cfg.sensor_noise, sensor.shape)
            for pw, sw in zip(sliding_windows(pose), sliding_windows(sensor)):
                corpus.windows.append(MultimodalWindow(
                    text_emb=text_protos[c].copy(),
                    video_emb=(video_protos[c]
                               + rng.normal(0, cfg.video_noise, VIDEO_DIM)).astype(np.float32),
                    pose=pw.astype(np.float32),
                    sensor=sw.astype(np.float32),
                    label=c, subject=clip_id, clip=clip_id))
            clip_id += 1
    corpus.split_map = assign_splits(range(clip_id), cfg.split_fractions, seed=0)
    return corpus


def normalize_corpus(corpus: Corpus) -> Corpus:
    """Z-score pose and sensor channels in place, statistics from the train
    split only. Returns the corpus for chaining."""
    for modality in ("pose", "sensor"):
        train = [w.get(modality) for w in corpus.split("train") if w.get(modality) is not None]
        if not train:
            continue
        stats = zscore_fit(train)
        for w in corpus.windows:
            arr = w.get(modality)
            if arr is not None:
                setattr(w, {"pose": "pose", "sensor": "sensor"}[modality],
                        zscore_apply(stats, arr))
    return corpus


# -- binary corpus format -----------------------------------------------------

def corpus_write(corpus: Corpus, path):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIHH", VERSION, len(corpus.windows),
                            corpus.s_n, len(corpus.label_names)))
        for name in corpus.label_names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        for w in corpus.windows:
            mask = sum(_MOD_BITS[m] for m in w.present())
            label = -1 if w.label is None else w.label
            f.write(struct.pack("<BIIi", mask, w.clip, w.subject, label))
            for m in MODALITIES:
                arr = w.get(m)
                if arr is not None:
                    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated corpus file reading {what} at byte {f.tell() - len(data)}")
    return data


def corpus_read(path) -> Corpus:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise FormatError("bad magic at byte 0")
        version, count, s_n, n_cls = struct.unpack("<IIHH", _read_exact(f, 12, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported version {version} at byte 4")
        names = []
        for _ in range(n_cls):
            (ln,) = struct.unpack("<H", _read_exact(f, 2, "class-name length"))
            names.append(_read_exact(f, ln, "class name").decode("utf-8"))
        corpus = Corpus(label_names=names, s_n=s_n)
        shapes = {"text": (TEXT_DIM,), "video": (VIDEO_DIM,),
                  "pose": (3, JOINTS, WINDOW), "sensor": (3, s_n, WINDOW)}
        for _ in range(count):
            mask, clip, subject, label = struct.unpack(
                "<BIIi", _read_exact(f, 13, "window header"))
            w = MultimodalWindow(label=None if label < 0 else label,
                                 subject=subject, clip=clip)
            for m in MODALITIES:
                if mask & _MOD_BITS[m]:
                    shape = shapes[m]
                    n_vals = int(np.prod(shape))
                    arr = np.frombuffer(
                        _read_exact(f, 4 * n_vals, f"{m} payload"),
                        dtype="<f4").reshape(shape).copy()
                    setattr(w, {"text": "text_emb", "video": "video_emb",
                                "pose": "pose", "sensor": "sensor"}[m], arr)
            corpus.windows.append(w)
        if f.read(1):
            raise FormatError(f"trailing bytes at byte {f.tell() - 1}")
    corpus.split_map = assign_splits([w.clip for w in corpus.windows], seed=0)
    return corpus


# -- CSV ingestion ------------------------------------------------------------

def _resample_to_50hz(series: np.ndarray, fs: float) -> np.ndarray:
    """Linear interpolation from fs to 50 Hz along the last axis."""
    if fs == SAMPLE_RATE:
        return series
    n = series.shape[-1]
    duration = (n - 1) / fs
    n_out = int(np.floor(duration * SAMPLE_RATE)) + 1
    t_in = np.arange(n) / fs
    t_out = np.arange(n_out) / SAMPLE_RATE
    flat = series.reshape(-1, n)
    out = np.stack([np.interp(t_out, t_in, row) for row in flat])
    return out.reshape(series.shape[:-1] + (n_out,))


def ingest_csv(files, schema: dict, label_column: str, subject_column: str,
               fs: float = SAMPLE_RATE, label_names: list[str] | None = None) -> Corpus:
    """Build a sensor-only corpus from one CSV per sensor.

    `schema` maps the axis order ("x", "y", "z") to column names. Rows must be
    aligned across files; labels and subjects come from the first file.
    Pipeline: resample to 50 Hz, Z-score (train-split stats), window, with
    subject-level splits.
    """
    axes = [schema[a] for a in ("x", "y", "z")]
    per_sensor = []
    labels = subjects = None
    for path in files:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            cols = reader.fieldnames or []
            needed = list(axes) + ([label_column, subject_column] if labels is None else [])
            for col in needed:
                if col not in cols:
                    raise IngestionError(f"{path}: missing column {col!r}")
            rows = []
            file_labels, file_subjects = [], []
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append([float(row[a]) for a in axes])
                except (TypeError, ValueError):
                    raise IngestionError(f"{path}:{lineno}: non-numeric cell") from None
                if labels is None:
                    file_labels.append(row[label_column])
                    file_subjects.append(row[subject_column])
            per_sensor.append(np.array(rows, dtype=np.float64).T)  # (3, T)
            if labels is None:
                labels, subjects = file_labels, file_subjects
        if per_sensor[-1].shape[1] != per_sensor[0].shape[1]:
            raise IngestionError(
                f"{path}: row count {per_sensor[-1].shape[1]} differs from "
                f"{files[0]}: {per_sensor[0].shape[1]}")
    data = np.stack(per_sensor, axis=1)  # (3, s_n, T)
    if data.shape[-1] == 0:
        raise IngestionError(f"{files[0]}: no data rows")

    names = list(label_names) if label_names else []
    name_ids = {n: i for i, n in enumerate(names)}
    subj_ids: dict[str, int] = {}
    corpus = Corpus(label_names=names, s_n=len(files), split_by="subject")

    # contiguous runs of constant (subject, label) become clips
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start] or subjects[i] != subjects[start]:
            runs.append((start, i))
            start = i
    raw_windows = []
    for clip_id, (a, b) in enumerate(runs):
        if labels[a] not in name_ids:
            name_ids[labels[a]] = len(names)
            names.append(labels[a])
        if subjects[a] not in subj_ids:
            subj_ids[subjects[a]] = len(subj_ids)
        seg = _resample_to_50hz(data[:, :, a:b], fs)
        for win in sliding_windows(seg):
            raw_windows.append((win, name_ids[labels[a]], subj_ids[subjects[a]], clip_id))
    corpus.label_names = names
    corpus.split_map = assign_splits([s for _, _, s, _ in raw_windows], seed=0)
    train = [w for w, _, s, _ in raw_windows if corpus.split_map.get(s) == "train"]
    stats = zscore_fit(train) if train else None
    for win, label, subj, clip_id in raw_windows:
        arr = zscore_apply(stats, win) if stats is not None else win.astype(np.float32)
        corpus.windows.append(MultimodalWindow(
            sensor=arr, label=label, subject=subj, clip=clip_id))
    return corpus
