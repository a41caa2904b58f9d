"""Modality encoders, projection heads, classifier head, and checkpoint IO.

Every modality maps into a shared 1280-d space via rep(x) = projection(
encoder(x)). Encoder output dims: text 768, video 256, pose 1024, sensor
512. The projection is three dense layers (hidden/output 1280) with a
trailing per-feature layernorm; the 2*1280 layernorm parameters are what
make the projection parameter counts come out exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .corpus import JOINTS, TEXT_DIM, VIDEO_DIM, WINDOW
from .errors import ConfigError, FormatError, ShapeError
from .layers import (Activation, Conv2d, Dense, Dropout, Flatten, LayerNorm,
                     MaxPool2d, Module, Sequential)
from .tensor import Tensor, concat

OUTPUT_DIM = 1280
ENCODER_OUT = {"text": 768, "video": 256, "pose": 1024, "sensor": 512}

# conv channel plans; chosen to land within 10% of the published totals.
# Sensor conv1 has 3 output channels so each extra sensor adds exactly
# 3*3*11 = 99 parameters, matching the published per-dataset deltas.
_POSE_CHANNELS = (8, 16, 32)
_SENSOR_CHANNELS = (3, 32, 88)


def build_text_encoder(rng) -> Module:
    return Sequential(Dense(TEXT_DIM, 768, rng), Activation("gelu"), Dropout(0.6))


def build_video_encoder(rng) -> Module:
    return Sequential(
        Dense(VIDEO_DIM, 256, rng), Activation("gelu"), Dropout(0.3),
        Dense(256, 256, rng), Activation("gelu"), Dropout(0.3))


def build_pose_encoder(rng) -> Module:
    c1, c2, c3 = _POSE_CHANNELS
    # ceil-mode 2x2 pooling: (3,17,100) -> (c1,9,50) -> (c2,5,25) -> (c3,3,13)
    flat = c3 * 3 * 13
    return Sequential(
        Conv2d(3, c1, 11, 11, rng, padding="same"), Activation("gelu"),
        MaxPool2d(2, 2), Dropout(0.4),
        Conv2d(c1, c2, 11, 11, rng, padding="same"), Activation("gelu"),
        MaxPool2d(2, 2), Dropout(0.4),
        Conv2d(c2, c3, 11, 11, rng, padding="same"), Activation("gelu"),
        MaxPool2d(2, 2), Dropout(0.4),
        Flatten(),
        Dense(flat, 1024, rng), Activation("gelu"), Dropout(0.4),
        Dense(1024, 1024, rng), Activation("gelu"), Dropout(0.4))


def build_sensor_encoder(s_n: int, rng) -> Module:
    if s_n < 1:
        raise ConfigError(f"sensor count must be >= 1, got {s_n}")
    c1, c2, c3 = _SENSOR_CHANNELS
    # conv1 collapses the sensor axis ('valid' there, 'same' in time); only
    # its kernel depends on s_n. Temporal pool /2 (ceil) after each conv:
    # (3,s_n,100) -> (c1,1,50) -> (c2,1,25) -> (c3,1,13) -> flatten -> 512
    flat = c3 * 13
    return Sequential(
        Conv2d(3, c1, s_n, 11, rng, padding=(0, 5)), Activation("gelu"),
        MaxPool2d(1, 2),
        Conv2d(c1, c2, 1, 11, rng, padding=(0, 5)), Activation("gelu"),
        MaxPool2d(1, 2),
        Conv2d(c2, c3, 1, 11, rng, padding=(0, 5)), Activation("gelu"),
        MaxPool2d(1, 2),
        Flatten(),
        Dense(flat, 512, rng), Activation("gelu"))


def build_projection(in_dim: int, rng) -> Module:
    return Sequential(
        Dense(in_dim, OUTPUT_DIM, rng), Activation("gelu"), Dropout(0.4),
        Dense(OUTPUT_DIM, OUTPUT_DIM, rng), Activation("gelu"), Dropout(0.4),
        Dense(OUTPUT_DIM, OUTPUT_DIM, rng),
        LayerNorm(OUTPUT_DIM))


_INPUT_SHAPE = {
    "text": lambda s_n: (TEXT_DIM,),
    "video": lambda s_n: (VIDEO_DIM,),
    "pose": lambda s_n: (3, JOINTS, WINDOW),
    "sensor": lambda s_n: (3, s_n, WINDOW),
}


@dataclass
class ModalityModel:
    """Encoder + projection for one modality."""
    modality: str
    encoder: Module
    projection: Module
    s_n: int = 1

    def input_shape(self):
        return _INPUT_SHAPE[self.modality](self.s_n)

    def rep(self, x: Tensor, training=False, rng=None) -> Tensor:
        """Joint-space representation, shape [B, 1280]."""
        expect = self.input_shape()
        if tuple(x.shape[1:]) != expect:
            raise ShapeError(
                f"{self.modality} input {x.shape} does not match (B, {expect})")
        return self.projection(self.encoder(x, training=training, rng=rng),
                               training=training, rng=rng)

    def named_parameters(self):
        out = {}
        for n, p in self.encoder.named_parameters().items():
            out[f"encoder.{n}"] = p
        for n, p in self.projection.named_parameters().items():
            out[f"projection.{n}"] = p
        return out

    def parameter_count(self):
        return sum(p.size for p in self.named_parameters().values())

    def astype(self, dtype):
        self.encoder.astype(dtype)
        self.projection.astype(dtype)
        return self


def build_modality_model(modality: str, rng, s_n: int = 1) -> ModalityModel:
    builders = {
        "text": lambda: build_text_encoder(rng),
        "video": lambda: build_video_encoder(rng),
        "pose": lambda: build_pose_encoder(rng),
        "sensor": lambda: build_sensor_encoder(s_n, rng),
    }
    if modality not in builders:
        raise ConfigError(f"unknown modality {modality!r}")
    encoder = builders[modality]()
    projection = build_projection(ENCODER_OUT[modality], rng)
    return ModalityModel(modality, encoder, projection, s_n=s_n)


class ClassifierHead(Module):
    """Two dense layers: features (1280 or 3*1280) -> hidden 256 -> classes."""

    def __init__(self, in_dim: int, n_classes: int, rng, hidden: int = 256):
        self.in_dim = in_dim
        self.fc1 = Dense(in_dim, hidden, rng)
        self.act = Activation("gelu")
        self.fc2 = Dense(hidden, n_classes, rng)

    def forward(self, x, training=False, rng=None):
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"classifier expects feature dim {self.in_dim}, got {x.shape}")
        return self.fc2(self.act(self.fc1(x)))


def classifier_forward(head: ClassifierHead, features: Tensor) -> Tensor:
    return head(features)


def multimodal_features(models: dict[str, ModalityModel], batch: dict[str, Tensor],
                        order=("sensor", "pose", "video"), training=False, rng=None) -> Tensor:
    """Concatenated projections of the given modalities, shape [B, 3*1280]."""
    return concat([models[m].rep(batch[m], training=training, rng=rng) for m in order], axis=1)


# -- checkpoint format --------------------------------------------------------

CKPT_MAGIC = b"MJCK"
CKPT_VERSION = 1


@dataclass
class PretrainCheckpoint:
    models: dict[str, ModalityModel]
    config_echo: str = ""
    seed: int = 0
    best_val_loss: float = float("inf")
    best_epoch: int = -1
    # per-epoch validation objective of the run that produced this checkpoint;
    # in-memory only, not serialized
    val_history: list = None

    @property
    def s_n(self):
        for m in self.models.values():
            return m.s_n
        return 1


def checkpoint_write(ckpt: PretrainCheckpoint, path):
    tensors: list[tuple[str, np.ndarray]] = []
    for mod in sorted(ckpt.models):
        for name, p in ckpt.models[mod].named_parameters().items():
            tensors.append((f"{mod}.{name}", p.data))
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        cfg = ckpt.config_echo.encode("utf-8")
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<Q", ckpt.seed))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for ext in arr.shape:
                f.write(struct.pack("<I", ext))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint reading {what} at byte {f.tell() - len(data)}")
    return data


def checkpoint_read_state(path) -> tuple[dict[str, np.ndarray], str, int]:
    """Raw name -> array table plus config echo and seed."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != CKPT_MAGIC:
            raise FormatError("bad magic at byte 0")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CKPT_VERSION:
            raise FormatError(f"unsupported version {version} at byte 4")
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config_echo = _read_exact(f, cfg_len, "config echo").decode("utf-8")
        (seed,) = struct.unpack("<Q", _read_exact(f, 8, "seed"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            shape = tuple(struct.unpack("<I", _read_exact(f, 4, "extent"))[0]
                          for _ in range(rank))
            n_vals = int(np.prod(shape)) if shape else 1
            state[name] = np.frombuffer(
                _read_exact(f, 4 * n_vals, f"data of {name}"),
                dtype="<f4").reshape(shape).copy()
        if f.read(1):
            raise FormatError(f"trailing bytes at byte {f.tell() - 1}")
    return state, config_echo, seed


def checkpoint_read(path, s_n: int = 1) -> PretrainCheckpoint:
    """Rebuild modality models from a checkpoint file.

    The modality set is recovered from the stored tensor names; s_n must match
    the sensor layout the checkpoint was trained with.
    """
    state, config_echo, seed = checkpoint_read_state(path)
    modalities = sorted({name.split(".", 1)[0] for name in state})
    rng = np.random.default_rng(0)
    models = {}
    for mod in modalities:
        model = build_modality_model(mod, rng, s_n=s_n)
        for name, p in model.named_parameters().items():
            key = f"{mod}.{name}"
            if key not in state:
                raise FormatError(f"checkpoint missing tensor {key!r}")
            if state[key].shape != p.data.shape:
                raise ConfigError(
                    f"checkpoint tensor {key!r} has shape {state[key].shape}, "
                    f"expected {p.data.shape} (wrong s_n?)")
            p.data = state[key].astype(np.float32)
        models[mod] = model
    return PretrainCheckpoint(models=models, config_echo=config_echo, seed=seed)
