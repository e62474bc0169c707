"""The six classifier architectures and their checkpoint format."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import (
    GRU,
    LSTM,
    AddChannel,
    Conv2D,
    Dense,
    GlobalAvgPool,
    MaxPool2D,
    Network,
    ReLU,
    Residual,
    Softmax,
    TimeMajor,
    forward,
)
from .errors import ChecksumMismatch, FormatVersionMismatch, MissingArtifact, UnknownArch

__all__ = ["ARCHS", "Model", "build", "save_checkpoint", "load_checkpoint", "param_count"]

ARCHS = ("CNN1", "CNN2", "LSTM1", "LSTM2", "GRU1", "GRU2")
CHECKPOINT_VERSION = 1


def _layers(arch_id: str, n_classes: int) -> list:
    if arch_id in ("CNN1", "CNN2"):
        layers = [AddChannel(), Conv2D(32, 7), ReLU(), MaxPool2D()]
        if arch_id == "CNN1":
            layers += [Residual([Conv2D(32, 3), ReLU(), Conv2D(32, 3)]), ReLU()]
        layers += [
            Residual([Conv2D(64, 3), ReLU(), Conv2D(64, 3)], projection=Conv2D(64, 1)),
            ReLU(),
            GlobalAvgPool(),
        ]
    elif arch_id in ("LSTM1", "LSTM2", "GRU1", "GRU2"):
        cell = LSTM if arch_id.startswith("LSTM") else GRU
        first = 256 if arch_id.endswith("1") else 128
        layers = [TimeMajor(), cell(first), cell(256), GlobalAvgPool()]
    else:
        raise UnknownArch(f"unknown architecture {arch_id!r}; expected one of {ARCHS}")
    return layers + [Dense(n_classes), Softmax()]


@dataclass
class Model:
    arch_id: str
    input_shape: tuple
    n_classes: int
    net: Network

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @property
    def layers(self):
        return self.net.layers

    def set_params(self, params):
        self.net.set_params(params)

    def copy(self) -> "Model":
        return Model(self.arch_id, self.input_shape, self.n_classes,
                     Network(_layers(self.arch_id, self.n_classes), self.input_shape, self.params.copy()))

    def predict_proba(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape == tuple(self.input_shape):
            return forward(self, x)
        out = [forward(self, x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        return np.argmax(self.predict_proba(x, batch_size), axis=-1)

    def layer_table(self) -> list[dict]:
        return [layer.spec() for layer in self.net.layers]


def build(arch_id: str, input_shape=(32, 62), n_classes: int = 10, init_seed: int = 0) -> Model:
    """Glorot-uniform weights, zero biases (LSTM forget gate 1), seeded."""
    layers = _layers(arch_id, n_classes)
    net = Network(layers, tuple(input_shape), rng=np.random.default_rng([int(init_seed), ARCHS.index(arch_id)]))
    return Model(arch_id, tuple(input_shape), int(n_classes), net)


def param_count(arch_id: str, input_shape=(32, 62), n_classes: int = 10) -> int:
    return Network(_layers(arch_id, n_classes), tuple(input_shape), params=None).n_params


def save_checkpoint(model: Model, path, extra: dict | None = None) -> Path:
    """``arch.json`` + ``weights.f32`` (interchange) + ``weights.f64`` (exact)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    w64 = np.ascontiguousarray(model.params, dtype="<f8").tobytes()
    w32 = np.ascontiguousarray(model.params, dtype="<f4").tobytes()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "arch_id": model.arch_id,
        "input_shape": list(model.input_shape),
        "n_classes": model.n_classes,
        "n_params": int(model.params.size),
        "layers": model.layer_table(),
        "crc32": {"weights.f64": zlib.crc32(w64), "weights.f32": zlib.crc32(w32)},
    }
    if extra:
        meta["extra"] = extra
    (path / "weights.f64").write_bytes(w64)
    (path / "weights.f32").write_bytes(w32)
    (path / "arch.json").write_text(json.dumps(meta, indent=1))
    return path


def read_checkpoint_meta(path) -> dict:
    path = Path(path)
    if not (path / "arch.json").exists():
        raise MissingArtifact(f"no checkpoint at {path}")
    meta = json.loads((path / "arch.json").read_text())
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(f"checkpoint format {meta.get('format_version')} != {CHECKPOINT_VERSION}")
    return meta


def verify_checkpoint(path) -> dict:
    """Raise ChecksumMismatch naming the first bad file; return metadata."""
    path = Path(path)
    meta = read_checkpoint_meta(path)
    for name, crc in meta["crc32"].items():
        f = path / name
        if not f.exists():
            raise MissingArtifact(f"{f} missing")
        data = f.read_bytes()
        width = 8 if name.endswith("f64") else 4
        if len(data) != meta["n_params"] * width or zlib.crc32(data) != crc:
            raise ChecksumMismatch(f"checksum mismatch in {f}")
    return meta


def load_checkpoint(path) -> Model:
    path = Path(path)
    meta = verify_checkpoint(path)
    params = np.frombuffer((path / "weights.f64").read_bytes(), dtype="<f8").astype(np.float64)
    net = Network(_layers(meta["arch_id"], meta["n_classes"]), tuple(meta["input_shape"]), params)
    return Model(meta["arch_id"], tuple(meta["input_shape"]), int(meta["n_classes"]), net)
