"""Run configuration: one nested YAML document, dotted-path overrides and a
canonical hash."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

from .attacks import AttackConfig
from .errors import ConfigError
from .receiver import PipelineConfig
from .trainer import TrainConfig
from .waveform import ChirpParams, FingerprintSpread

OUTPUT_ROOT_ENV = "RFADV_OUTPUT_ROOT"

DEFAULTS = {
    "seed": 0,
    "output": None,
    "waveform": {
        "sf": 7, "bw": 125e3, "fs": 250e3, "n_preambles": 8, "n_devices": 10,
        "groups": {"G1": 1, "G2": 2}, "days": [0, 1, 2], "train_day": 0,
        "train_packets": 100, "test_packets": 40, "snr_db": 40.0,
    },
    "receiver": {"window_len": 64, "hop": 32, "kept_bins": 32},
    "model": {"init_seed": 0},
    "train": {"lr": 1e-3, "max_epochs": 40, "lr_patience": 4, "early_stop_patience": 8,
              "batch_size": 32, "val_ratio": 0.1, "shuffle_seed": 0},
    "attack": {"K": 10, "K_targeted": 40, "delta": 0.8, "T": 4, "norm_p": "inf", "uap_psr_db": -10.0,
               "df_top_k": 4, "n_gen": 10, "seed": 0},
    "scenario": {"psr_sweep": [-35.0, -30.0, -25.0, -20.0, -15.0, -10.0],
                 "targeted_psr_sweep": [-30.0, -25.0, -20.0, -15.0, -10.0, -5.0], "n_eval": 20,
                 "realtime_seeds": 10, "crossdevice_seeds": 5},
}


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {path}{k}")
        if isinstance(out[k], dict) and k != "groups":
            if not isinstance(v, dict):
                raise ConfigError(f"config section {path}{k} must be a mapping")
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def parse_override(item: str):
    """'train.lr=1e-4' -> (['train', 'lr'], 1e-4); values are parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, val = item.split("=", 1)
    try:
        return key.strip().split("."), yaml.safe_load(val)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse override value {val!r}: {e}") from None


class RunConfig:
    def __init__(self, data: dict | None = None):
        self.data = _merge(DEFAULTS, data or {})
        self._check()

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        data = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file {p} not found")
            try:
                data = yaml.safe_load(p.read_text()) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"cannot parse {p}: {e}") from None
            if not isinstance(data, dict):
                raise ConfigError("config root must be a mapping")
        cfg = _merge(DEFAULTS, data)
        for item in overrides:
            keys, val = parse_override(item)
            node = cfg
            for k in keys[:-1]:
                if not isinstance(node, dict) or k not in node:
                    raise ConfigError(f"unknown config key {'.'.join(keys)}")
                node = node[k]
            if not isinstance(node, dict) or (keys[-1] not in node and node is not cfg["waveform"]["groups"]):
                raise ConfigError(f"unknown config key {'.'.join(keys)}")
            node[keys[-1]] = val
        return cls(cfg)

    def _check(self):
        try:
            self.chirp().validate()
            self.train_config().validate()
            self.attack_config(1.0).validate()
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        for k in ("psr_sweep", "targeted_psr_sweep"):
            if not self.data["scenario"][k]:
                raise ConfigError(f"scenario.{k} is empty")

    def __getitem__(self, k):
        return self.data[k]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def canonical(self) -> str:
        d = {k: v for k, v in self.data.items() if k != "output"}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def output_root(self) -> Path:
        root = self.data.get("output") or os.environ.get(OUTPUT_ROOT_ENV) or "rfadv_out"
        return Path(root)

    # typed views ------------------------------------------------------------
    def chirp(self) -> ChirpParams:
        w = self.data["waveform"]
        return ChirpParams(int(w["sf"]), float(w["bw"]), float(w["fs"]), int(w["n_preambles"]))

    def pipeline(self) -> PipelineConfig:
        r = self.data["receiver"]
        return PipelineConfig(self.chirp(), int(r["window_len"]), int(r["hop"]), int(r["kept_bins"]))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.data["train"])

    def attack_config(self, epsilon: float, **kw) -> AttackConfig:
        a = self.data["attack"]
        base = dict(K=int(a["K"]), K_targeted=int(a["K_targeted"]), delta=float(a["delta"]), T=int(a["T"]),
                    norm_p=a["norm_p"], seed=int(a["seed"]), df_top_k=a["df_top_k"], epsilon=float(epsilon))
        base.update(kw)
        return AttackConfig(**base)

    def lab_setup(self):
        from .harness import LabSetup

        w = self.data["waveform"]
        return LabSetup(
            chirp=self.chirp(),
            pipeline=self.pipeline(),
            spread=FingerprintSpread(),
            n_devices=int(w["n_devices"]),
            group_seeds=tuple(sorted((str(k), int(v)) for k, v in w["groups"].items())),
            days=tuple(int(d) for d in w["days"]),
            train_day=int(w["train_day"]),
            train_packets=int(w["train_packets"]),
            test_packets=int(w["test_packets"]),
            snr_db=float(w["snr_db"]),
            train=self.train_config(),
            init_seed=int(self.data["model"]["init_seed"]),
            master_seed=self.seed,
        )

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)
