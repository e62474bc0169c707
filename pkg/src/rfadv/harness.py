"""Experiment orchestration: threat scenarios, PSR sweeps, targeted and
cross-model matrices, cross-day and cross-device studies and the real-time
(masked) perturbation attack.

Artifacts (datasets, checkpoints, perturbations) are created on demand by a
:class:`Lab` and cached on disk under a key derived from the configuration,
so repeated runs reuse them and produce identical reports.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks as atk
from .errors import EmptyInput, InvalidParams, MissingArtifact, ScenarioInvariantViolation
from .models import build, load_checkpoint, read_checkpoint_meta, save_checkpoint
from .receiver import Dataset, PipelineConfig, load_dataset, preprocess_collection, save_dataset
from .trainer import TrainConfig, train, write_history_csv
from .waveform import ChirpParams, FingerprintSpread, sample_fingerprints, synth_dataset

log = logging.getLogger(__name__)

__all__ = [
    "ModelRef",
    "ThreatScenario",
    "LabSetup",
    "Lab",
    "success_rate",
    "confusion",
    "run_scenario",
    "targeted_sweep",
    "targeted_matrix",
    "cross_model_matrix",
    "cross_day",
    "cross_device",
    "realtime_mask",
    "realtime_attack",
    "practical_suite",
    "write_report",
    "report_to_csv",
    "canonical_hash",
]

CACHE_VERSION = 1
KINDS = ("WB", "GB1", "GB2", "BB")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def canonical_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isinf(o):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def _sanitize(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


# -- metrics ---------------------------------------------------------------


def success_rate(preds, truths, mode: str = "untargeted", y_tar=None) -> float:
    """Untargeted: fraction with pred != truth.  Targeted: fraction with
    pred == y_tar (scalar or per-sample)."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if preds.size == 0:
        raise EmptyInput("success rate of an empty set")
    if preds.shape != truths.shape:
        raise InvalidParams("preds and truths differ in length")
    if mode == "untargeted":
        return float(np.mean(preds != truths))
    if mode == "targeted":
        if y_tar is None:
            raise InvalidParams("targeted success rate needs y_tar")
        return float(np.mean(preds == np.broadcast_to(np.asarray(y_tar), preds.shape)))
    raise InvalidParams(f"unknown mode {mode!r}")


def confusion(truths, preds, n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (np.asarray(truths), np.asarray(preds)), 1)
    return m


# -- scenarios -------------------------------------------------------------


@dataclass(frozen=True)
class ModelRef:
    arch_id: str
    dataset_id: str

    def key(self) -> str:
        return f"{self.arch_id}@{self.dataset_id}"


@dataclass(frozen=True)
class ThreatScenario:
    kind: str
    victim: ModelRef
    surrogate: ModelRef
    attack: atk.AttackConfig
    psr_sweep: tuple = (-40.0, -30.0, -20.0)

    def validate(self) -> "ThreatScenario":
        if self.kind not in KINDS:
            raise InvalidParams(f"scenario kind must be one of {KINDS}")
        same_arch = self.victim.arch_id == self.surrogate.arch_id
        same_data = self.victim.dataset_id == self.surrogate.dataset_id
        want = {"WB": (True, True), "GB1": (True, False), "GB2": (False, True), "BB": (False, False)}[self.kind]
        if (same_arch, same_data) != want:
            raise ScenarioInvariantViolation(
                f"{self.kind} requires same_arch={want[0]}, same_dataset={want[1]}; "
                f"got victim {self.victim.key()} / surrogate {self.surrogate.key()}"
            )
        if not self.psr_sweep:
            raise InvalidParams("psr_sweep is empty")
        self.attack.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "victim": asdict(self.victim),
            "surrogate": asdict(self.surrogate),
            "attack": self.attack.to_dict(),
            "psr_sweep": [float(p) for p in self.psr_sweep],
        }


# -- lab -------------------------------------------------------------------


@dataclass(frozen=True)
class LabSetup:
    """Desk-scale testbed: two device groups, a few synthetic days."""

    chirp: ChirpParams = ChirpParams()
    pipeline: PipelineConfig = PipelineConfig()
    spread: FingerprintSpread = FingerprintSpread()
    n_devices: int = 10
    group_seeds: tuple = (("G1", 1), ("G2", 2))
    days: tuple = (0, 1, 2)
    train_day: int = 0
    train_packets: int = 100  # per device, per training dataset
    test_packets: int = 40  # per device, per day
    snr_db: float = 40.0
    train: TrainConfig = TrainConfig(lr=1e-3, max_epochs=40, lr_patience=4, early_stop_patience=8)
    init_seed: int = 0
    master_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group_seeds"] = [list(g) for g in self.group_seeds]
        d["days"] = list(self.days)
        return d

    def group_seed(self, group: str) -> int:
        for g, s in self.group_seeds:
            if g == group:
                return int(s)
        raise MissingArtifact(f"unknown device group {group!r}")


def _split_id(dataset_id: str):
    """'G1-victim' -> ('G1', 'victim'); 'G2-test' -> ('G2', 'test')."""
    try:
        group, role = dataset_id.split("-", 1)
    except ValueError:
        raise MissingArtifact(f"unresolvable dataset id {dataset_id!r}") from None
    if role not in ("victim", "surrogate", "test"):
        raise MissingArtifact(f"unresolvable dataset id {dataset_id!r}")
    return group, role


class Lab:
    """On-demand artifact store.  ``root=None`` keeps everything in memory."""

    ROLE_SEED = {"victim": 11, "surrogate": 13, "test": 17}

    def __init__(self, setup: LabSetup = LabSetup(), root=None, workers: int = 1):
        self.setup = setup
        self.root = Path(root) if root is not None else None
        self.workers = workers
        self._ds: dict = {}
        self._models: dict = {}
        self._perts: dict = {}
        self.histories: dict = {}
        self._info: dict = {}

    # keys ---------------------------------------------------------------
    def _data_key(self, dataset_id: str) -> str:
        s = self.setup
        group, role = _split_id(dataset_id)
        return canonical_hash({
            "v": CACHE_VERSION, "id": dataset_id, "chirp": asdict(s.chirp), "pipe": s.pipeline.to_dict(),
            "spread": asdict(s.spread), "n": s.n_devices, "gseed": s.group_seed(group),
            "days": list(s.days) if role == "test" else [s.train_day],
            "ppd": s.test_packets if role == "test" else s.train_packets, "snr": s.snr_db,
            "master": s.master_seed,
        })

    def model_key(self, ref: ModelRef) -> str:
        s = self.setup
        return canonical_hash({"v": CACHE_VERSION, "arch": ref.arch_id, "data": self._data_key(ref.dataset_id),
                               "train": asdict(s.train), "init": s.init_seed})

    def _dir(self, *parts) -> Path | None:
        if self.root is None:
            return None
        return self.root.joinpath(*parts)

    # datasets -----------------------------------------------------------
    def fingerprints(self, group: str):
        return sample_fingerprints(self.setup.n_devices, self.setup.group_seed(group), self.setup.spread)

    def dataset(self, dataset_id: str) -> Dataset:
        if dataset_id in self._ds:
            return self._ds[dataset_id]
        key = self._data_key(dataset_id)
        d = self._dir("datasets", f"{dataset_id}-{key}")
        if d is not None and (d / "manifest.json").exists():
            ds = load_dataset(d)
        else:
            s = self.setup
            group, role = _split_id(dataset_id)
            days = list(s.days) if role == "test" else [s.train_day]
            ppd = s.test_packets if role == "test" else s.train_packets
            seed = int(np.random.SeedSequence([s.master_seed, s.group_seed(group), self.ROLE_SEED[role]])
                       .generate_state(1)[0])
            raw = synth_dataset(s.chirp, self.fingerprints(group), days, ppd, s.snr_db, seed)
            ds = preprocess_collection(raw, s.pipeline, workers=self.workers)
            # match the on-disk precision so fresh and cached runs agree
            ds.x = ds.x.astype(np.float32).astype(np.float64)
            ds.meta.update(dataset_id=dataset_id, key=key)
            if d is not None:
                d.parent.mkdir(parents=True, exist_ok=True)
                tmp = d.with_name(d.name + ".tmp")
                if tmp.exists():
                    _rmtree(tmp)
                save_dataset(ds, tmp, {"config_hash": key})
                tmp.rename(d)
        self._ds[dataset_id] = ds
        return ds

    def test_set(self, group: str, day: int | None = None, n_per_class: int | None = None, seed: int = 0) -> Dataset:
        ds = self.dataset(f"{group}-test")
        if day is not None:
            ds = ds.select_day(day)
        if n_per_class is not None:
            ds = stratified_subset(ds, n_per_class, seed)
        return ds

    # models -------------------------------------------------------------
    def model(self, ref: ModelRef):
        k = ref.key()
        if k in self._models:
            return self._models[k]
        key = self.model_key(ref)
        d = self._dir("models", f"{ref.arch_id}-{ref.dataset_id}-{key}")
        if d is not None and (d / "arch.json").exists():
            m = load_checkpoint(d)
            self._info[k] = read_checkpoint_meta(d).get("extra", {})
        else:
            ds = self.dataset(ref.dataset_id)
            m = build(ref.arch_id, ds.shape, ds.n_classes, self.setup.init_seed)
            log.info("training %s on %s (%d examples)", ref.arch_id, ref.dataset_id, len(ds))
            t0 = time.perf_counter()
            m, hist = train(m, ds, self.setup.train)
            self.histories[k] = hist
            self._info[k] = {"config_hash": key, "dataset_id": ref.dataset_id, "epochs": len(hist),
                             "best_epoch": int(np.argmin([h["val_loss"] for h in hist])),
                             "train_seconds": round(time.perf_counter() - t0, 1)}
            if d is not None:
                tmp = d.with_name(d.name + ".tmp")
                if tmp.exists():
                    _rmtree(tmp)
                save_checkpoint(m, tmp, self._info[k])
                write_history_csv(hist, tmp / "history.csv")
                tmp.rename(d)
        self._models[k] = m
        return m

    def train_info(self, ref: ModelRef) -> dict:
        """Training record (epochs, best epoch, wall time) of a model."""
        self.model(ref)
        return dict(self._info[ref.key()])

    # perturbations ------------------------------------------------------
    def universal(self, surrogate: ModelRef, cfg: atk.AttackConfig, n_gen: int) -> atk.Perturbation:
        """UAP from ``n_gen`` samples per class of the surrogate's training data."""
        key = canonical_hash({"m": self.model_key(surrogate), "cfg": cfg.to_dict(), "n_gen": n_gen})
        if key in self._perts:
            return self._perts[key]
        d = self._dir("perturbations", f"uap-{surrogate.arch_id}-{surrogate.dataset_id}-{key}")
        if d is not None and (d / "vmeta.json").exists():
            v = _load_exact(d)
        else:
            model = self.model(surrogate)
            gen = stratified_subset(self.dataset(surrogate.dataset_id), n_gen, cfg.seed)
            v = atk.uap(model, gen, cfg)
            v.meta.update(surrogate=surrogate.key(), n_gen=len(gen))
            if d is not None:
                tmp = d.with_name(d.name + ".tmp")
                if tmp.exists():
                    _rmtree(tmp)
                atk.save_perturbation(v, tmp, {"config_hash": key})
                (tmp / "v.f64").write_bytes(np.ascontiguousarray(v.v, dtype="<f8").tobytes())
                tmp.rename(d)
        self._perts[key] = v
        return v


def _load_exact(d: Path) -> atk.Perturbation:
    v = atk.load_perturbation(d)
    if (d / "v.f64").exists():
        v.v = np.frombuffer((d / "v.f64").read_bytes(), dtype="<f8").reshape(v.v.shape).copy()
    return v


def _rmtree(p: Path):
    import shutil

    shutil.rmtree(p)


def stratified_subset(ds: Dataset, n_per_class: int, seed: int = 0) -> Dataset:
    rng = np.random.default_rng([int(seed), 5101])
    idx = []
    for c in np.unique(ds.y):
        ci = np.flatnonzero(ds.y == c)
        idx.append(np.sort(rng.permutation(ci)[:n_per_class]))
    return ds.subset(np.sort(np.concatenate(idx)))


def ref_power(ds: Dataset) -> float:
    """Mean per-element power of the evaluation inputs."""
    return float(np.mean(ds.x * ds.x))


# -- scenario evaluation ---------------------------------------------------


def _eval_curve(victim, ds: Dataset, adv_x_of_psr, psrs, p_x, n, awgn_seed, extra=None):
    points = []
    clean_pred = victim.predict(ds.x)
    clean_acc = float(np.mean(clean_pred == ds.y))
    for q in psrs:
        x_adv, achieved = adv_x_of_psr(q)
        pred = victim.predict(x_adv)
        noise = atk.awgn_baseline(ds.x.shape, p_x, q, seed=awgn_seed)
        pred_n = victim.predict(ds.x + noise.v)
        pt = {
            "psr_db": float(q),
            "achieved_psr_db": float(achieved),
            "sr": success_rate(pred, ds.y),
            "sr_awgn": success_rate(pred_n, ds.y),
            "clean_acc": clean_acc,
            "confusion": confusion(ds.y, pred, n).tolist(),
        }
        if extra is not None:
            pt.update(extra(q, pred))
        points.append(pt)
    return points


def _perturber(method, s_model, ds: Dataset, cfg: atk.AttackConfig, p_x, universal=None):
    """Return f(psr) -> (adversarial inputs, achieved psr)."""
    if method == "FGSM":
        base = atk.fgsm(s_model, ds.x, ds.y, replace(cfg, epsilon=1.0))

        def f(q):
            v = base.v * atk.eps_for_psr(p_x, q)
            return ds.x + v, atk.psr(v, p_x)
    elif method == "PGD":

        def f(q):
            v = atk.pgd(s_model, ds.x, ds.y, replace(cfg, epsilon=atk.eps_for_psr(p_x, q))).v
            return ds.x + v, atk.psr(v, p_x)
    elif method in ("UAP", "AWGN"):
        if method == "AWGN":
            universal = atk.awgn_baseline(ds.shape, p_x, 0.0, cfg.seed)

        def f(q):
            v = atk.scale_to_psr(universal, p_x, q)
            return ds.x + v.v, atk.psr(v, p_x)
    else:
        raise InvalidParams(f"unknown attack method {method!r}")
    return f


@dataclass
class EvalReport:
    scenario: dict
    points: list
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _sanitize({"scenario": self.scenario, "points": self.points, "meta": self.meta})

    def curve(self, key: str = "sr") -> list:
        return [pt[key] for pt in self.points]


def run_scenario(lab: Lab, s: ThreatScenario, n_eval: int | None = None, n_gen: int = 10,
                 eval_seed: int = 0) -> EvalReport:
    """Generate on the surrogate, rescale per PSR, classify with the victim."""
    s.validate()
    victim = lab.model(s.victim)
    surrogate = lab.model(s.surrogate)
    group = _split_id(s.victim.dataset_id)[0]
    ds = lab.test_set(group, lab.setup.train_day, n_eval, eval_seed)
    p_x = ref_power(ds)
    uv = None
    if s.attack.method == "UAP":
        uv = lab.universal(s.surrogate, s.attack, n_gen)
    f = _perturber(s.attack.method, surrogate, ds, s.attack, p_x, uv)
    points = _eval_curve(victim, ds, f, s.psr_sweep, p_x, victim.n_classes, s.attack.seed + 1)
    meta = {
        "config_hash": canonical_hash({"scenario": s.to_dict(), "lab": lab.setup.to_dict(), "n_eval": n_eval,
                                       "n_gen": n_gen, "eval_seed": eval_seed}),
        "master_seed": lab.setup.master_seed,
        "p_x": p_x,
        "n_eval": len(ds),
        "dropped": {i: lab.dataset(i).meta.get("dropped", 0)
                    for i in sorted({s.victim.dataset_id, s.surrogate.dataset_id, f"{group}-test"})},
    }
    if uv is not None:
        meta["uap"] = {k: uv.meta[k] for k in ("converged", "generation_sr", "passes", "deepfool_calls")}
        meta["uap"]["epsilon"] = uv.epsilon
        meta["uap"]["norm"] = uv.norm()
    return EvalReport(s.to_dict(), points, meta)


def _random_targets(y, n, seed):
    rng = np.random.default_rng([int(seed), 5102])
    return (y + 1 + rng.integers(0, n - 1, size=len(y))) % n


def targeted_sweep(lab: Lab, victim: ModelRef, cfg: atk.AttackConfig, psrs, n_eval=None, seed: int = 0) -> dict:
    """Targeted and untargeted PGD success per PSR; targets drawn uniformly
    among the wrong classes (seeded)."""
    m = lab.model(victim)
    ds = lab.test_set(_split_id(victim.dataset_id)[0], lab.setup.train_day, n_eval, seed)
    p_x = ref_power(ds)
    tar = _random_targets(ds.y, m.n_classes, seed)
    rows = []
    for q in psrs:
        eps = atk.eps_for_psr(p_x, q)
        vt = atk.pgd(m, ds.x, tar, replace(cfg, targeted=True, y_tar=None, epsilon=eps)).v
        vu = atk.pgd(m, ds.x, ds.y, replace(cfg, targeted=False, y_tar=None, epsilon=eps)).v
        rows.append({
            "psr_db": float(q),
            "sr_targeted": success_rate(m.predict(ds.x + vt), ds.y, "targeted", tar),
            "sr_untargeted": success_rate(m.predict(ds.x + vu), ds.y),
        })
    return {"victim": asdict(victim), "attack": cfg.to_dict(), "p_x": p_x, "n_eval": len(ds), "points": rows}


def targeted_matrix(lab: Lab, victim: ModelRef, cfg: atk.AttackConfig, psr_db: float,
                    n_per_class: int | None = None, seed: int = 0) -> np.ndarray:
    """Entry (src, tar): fraction of src's packets classified as tar when tar
    is the target.  ``psr_db = -inf`` gives the clean confusion columns."""
    m = lab.model(victim)
    ds = lab.test_set(_split_id(victim.dataset_id)[0], lab.setup.train_day, n_per_class, seed)
    n = m.n_classes
    p_x = ref_power(ds)
    mat = np.zeros((n, n))
    counts = np.bincount(ds.y, minlength=n)
    for tar in range(n):
        if math.isinf(psr_db) and psr_db < 0:
            pred = m.predict(ds.x)
        else:
            c = replace(cfg, targeted=True, y_tar=tar, epsilon=atk.eps_for_psr(p_x, psr_db))
            pred = m.predict(ds.x + atk.pgd(m, ds.x, None, c).v)
        hits = np.bincount(ds.y[pred == tar], minlength=n)
        mat[:, tar] = hits / np.maximum(counts, 1)
    return mat


def off_diagonal_mean(mat) -> float:
    mat = np.asarray(mat)
    n = len(mat)
    return float((mat.sum() - np.trace(mat)) / (n * n - n))


def cross_model_matrix(lab: Lab, surrogates, victims, uap_cfg: atk.AttackConfig, psr_db: float,
                       dataset_id: str = "G1-victim", n_gen: int = 10, n_eval=None, seed: int = 0) -> dict:
    """One UAP per surrogate arch (fixed dataset), evaluated on every victim."""
    group = _split_id(dataset_id)[0]
    ds = lab.test_set(group, lab.setup.train_day, n_eval, seed)
    p_x = ref_power(ds)
    table = np.zeros((len(surrogates), len(victims)))
    meta = {}
    for i, sa in enumerate(surrogates):
        v = lab.universal(ModelRef(sa, dataset_id), uap_cfg, n_gen)
        vs = atk.scale_to_psr(v, p_x, psr_db)
        meta[sa] = {"converged": v.meta["converged"], "generation_sr": v.meta["generation_sr"]}
        for j, va in enumerate(victims):
            m = lab.model(ModelRef(va, dataset_id))
            table[i, j] = success_rate(m.predict(ds.x + vs.v), ds.y)
    return {"surrogates": list(surrogates), "victims": list(victims), "psr_db": float(psr_db),
            "sr": table.tolist(), "uap": meta, "p_x": p_x}


def cross_day(lab: Lab, uap: atk.Perturbation, victim: ModelRef, psrs, days=None, n_eval=None,
              seed: int = 0) -> dict:
    """The same perturbation applied to each day's test packets."""
    m = lab.model(victim)
    group = _split_id(victim.dataset_id)[0]
    days = list(lab.setup.days if days is None else days)
    sets = [lab.test_set(group, d, n_eval, seed) for d in days]
    p_x = ref_power(sets[0])
    out = {"days": days, "psr_db": [float(q) for q in psrs], "sr": [], "sr_awgn": [], "clean_acc": []}
    for d, ds in zip(days, sets):
        row, row_n = [], []
        for q in psrs:
            v = atk.scale_to_psr(uap, p_x, q).v
            row.append(success_rate(m.predict(ds.x + v), ds.y))
            noise = atk.awgn_baseline(ds.x.shape, p_x, q, seed + d)
            row_n.append(success_rate(m.predict(ds.x + noise.v), ds.y))
        out["sr"].append(row)
        out["sr_awgn"].append(row_n)
        out["clean_acc"].append(float(np.mean(m.predict(ds.x) == ds.y)))
    sr = np.asarray(out["sr"])
    out["sr_std"] = sr.std(axis=0).tolist()
    out["p_x"] = p_x
    return out


CROSS_DEVICE_MODES = ("same-device", "diff-device", "diff-device-and-net")
SURROGATE_OF = {"CNN1": "CNN2", "LSTM1": "LSTM2", "GRU1": "GRU2"}


def cross_device_refs(mode: str, arch: str = "CNN1", g1: str = "G1", g2: str = "G2"):
    """(surrogate, victim) references for a cross-device mode.  The victim arch
    is ``arch``; the Group-2 victim is trained on Group-2 data.  Both
    cross-device surrogates are trained on the adversary's own Group-1 data,
    so the two modes differ only in the surrogate arch."""
    if mode == "same-device":
        return ModelRef(arch, f"{g1}-victim"), ModelRef(arch, f"{g1}-victim")
    if mode == "diff-device":
        return ModelRef(arch, f"{g1}-surrogate"), ModelRef(arch, f"{g2}-victim")
    if mode == "diff-device-and-net":
        return ModelRef(SURROGATE_OF.get(arch, arch), f"{g1}-surrogate"), ModelRef(arch, f"{g2}-victim")
    raise InvalidParams(f"cross-device mode must be one of {CROSS_DEVICE_MODES}")


def cross_device(lab: Lab, mode: str, uap_cfg: atk.AttackConfig, psrs, arch: str = "CNN1",
                 seeds=(0, 1, 2, 3, 4), n_gen: int = 10, n_eval=None) -> EvalReport:
    """UAP generated from Group-1 data, applied to the victim selected by
    ``mode``; SR averaged over generation seeds."""
    sur, vic = cross_device_refs(mode, arch)
    if mode == "diff-device-and-net" and sur.arch_id == vic.arch_id:
        raise ScenarioInvariantViolation("diff-device-and-net needs a surrogate arch different from the victim")
    m = lab.model(vic)
    ds = lab.test_set(_split_id(vic.dataset_id)[0], lab.setup.train_day, n_eval, 0)
    p_x = ref_power(ds)
    per_seed = []
    conv = []
    for sd in seeds:
        v = lab.universal(sur, replace(uap_cfg, seed=int(sd)), n_gen)
        conv.append(bool(v.meta["converged"]))
        per_seed.append([success_rate(m.predict(ds.x + atk.scale_to_psr(v, p_x, q).v), ds.y) for q in psrs])
    sr = np.mean(per_seed, axis=0)
    points = []
    for i, q in enumerate(psrs):
        noise = atk.awgn_baseline(ds.x.shape, p_x, q, 97)
        points.append({"psr_db": float(q), "sr": float(sr[i]), "sr_seeds": [r[i] for r in per_seed],
                       "sr_awgn": success_rate(m.predict(ds.x + noise.v), ds.y),
                       "clean_acc": float(np.mean(m.predict(ds.x) == ds.y))})
    scen = {"mode": mode, "surrogate": asdict(sur), "victim": asdict(vic), "attack": uap_cfg.to_dict(),
            "seeds": list(seeds), "psr_sweep": [float(q) for q in psrs]}
    return EvalReport(scen, points, {"p_x": p_x, "converged": conv, "n_eval": len(ds)})


def _n_zero_cols(chirp: ChirpParams, hop: int, delay_ms: float) -> int:
    return math.ceil(2 * chirp.n_samples / hop) + math.ceil(delay_ms * 1e-3 * chirp.fs / hop)


def realtime_mask(v: np.ndarray, mode: str, chirp: ChirpParams, hop: int, delay_ms: float = 0.0,
                  shift: int = 0) -> np.ndarray:
    """Effective perturbation seen by the receiver for one packet."""
    if mode == "whole":
        return v
    if mode == "sync":
        out = v.copy()
        out[:, : min(v.shape[1], _n_zero_cols(chirp, hop, delay_ms))] = 0.0
        return out
    if mode == "unsync":
        return np.roll(v, int(shift), axis=1)
    raise InvalidParams("realtime mode must be whole, sync or unsync")


def realtime_attack(lab: Lab, uap: atk.Perturbation, victim: ModelRef, mode: str, psrs, seed: int = 0,
                    n_eval=None, day: int | None = None, max_delay_ms: float = 1.0) -> EvalReport:
    """Per-packet masked UAP: delay ~ U[0, max_delay_ms] (sync) or a uniform
    circular time shift (unsync), both drawn from ``seed``."""
    m = lab.model(victim)
    group = _split_id(victim.dataset_id)[0]
    ds = lab.test_set(group, lab.setup.train_day if day is None else day, n_eval, 0)
    if tuple(uap.shape) != tuple(ds.shape):
        raise InvalidParams(f"UAP shape {uap.shape} does not match victim input {ds.shape}")
    p_x = ref_power(ds)
    rng = np.random.default_rng([int(seed), 5103])
    delays = rng.uniform(0.0, max_delay_ms, size=len(ds))
    shifts = rng.integers(0, ds.shape[1], size=len(ds))
    chirp, hop = lab.setup.pipeline.chirp, lab.setup.pipeline.hop
    points = []
    for q in psrs:
        v = atk.scale_to_psr(uap, p_x, q).v
        eff = np.stack([realtime_mask(v, mode, chirp, hop, delays[i], shifts[i]) for i in range(len(ds))])
        pred = m.predict(ds.x + eff)
        points.append({"psr_db": float(q), "sr": success_rate(pred, ds.y), "achieved_psr_db": atk.psr(eff, p_x)})
    scen = {"mode": mode, "victim": asdict(victim), "seed": int(seed), "psr_sweep": [float(q) for q in psrs],
            "max_delay_ms": max_delay_ms}
    return EvalReport(scen, points, {"p_x": p_x, "n_eval": len(ds), "uap_method": uap.method})


PRACTICAL_PAIRS = (("CNN2", "CNN1"), ("LSTM2", "LSTM1"), ("GRU1", "GRU1"))


def practical_suite(lab: Lab, uap_cfg: atk.AttackConfig, psrs, pairs=PRACTICAL_PAIRS, n_gen: int = 10,
                    n_eval=None, seed: int = 0) -> dict:
    """Group-1 surrogates, Group-2 victims, Sync-mode UAP, every Group-2 day.

    ``pairs`` are (surrogate arch, victim arch); each surrogate also attacks
    every other victim arch so the report holds per-surrogate curves."""
    sur_archs = sorted({s for s, _ in pairs})
    vic_archs = sorted({v for _, v in pairs})
    chirp, hop = lab.setup.pipeline.chirp, lab.setup.pipeline.hop
    curves = []
    for sa in sur_archs:
        v = lab.universal(ModelRef(sa, "G1-surrogate"), uap_cfg, n_gen)
        for va in vic_archs:
            m = lab.model(ModelRef(va, "G2-victim"))
            for day in lab.setup.days:
                ds = lab.test_set("G2", day, n_eval, seed)
                p_x = ref_power(ds)
                rng = np.random.default_rng([int(seed), int(day), 5104])
                delays = rng.uniform(0.0, 1.0, size=len(ds))
                rows = []
                for q in psrs:
                    vq = atk.scale_to_psr(v, p_x, q).v
                    eff = np.stack([realtime_mask(vq, "sync", chirp, hop, dl) for dl in delays])
                    noise = atk.awgn_baseline(ds.x.shape, p_x, q, seed + 31 * day)
                    rows.append({"psr_db": float(q), "sr": success_rate(m.predict(ds.x + eff), ds.y),
                                 "sr_awgn": success_rate(m.predict(ds.x + noise.v), ds.y),
                                 "clean_acc": float(np.mean(m.predict(ds.x) == ds.y))})
                curves.append({"surrogate": sa, "victim": va + "*", "day": int(day), "points": rows,
                               "uap_converged": bool(v.meta["converged"])})
    return {"pairs": [list(p) for p in pairs], "psr_sweep": [float(q) for q in psrs], "curves": curves}


# -- output ----------------------------------------------------------------


def write_report(obj, path) -> Path:
    """Deterministic JSON (sorted keys, repr floats)."""
    path = Path(path)
    data = obj.to_dict() if hasattr(obj, "to_dict") else _sanitize(obj)
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")
    return path


def report_to_csv(report: dict, path) -> Path:
    """Flat (psr_db, sr, sr_awgn, clean_acc) rows from a scenario report."""
    path = Path(path)
    pts = report.get("points")
    if pts is None:
        raise InvalidParams("report has no 'points' list")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["psr_db", "sr", "sr_awgn", "clean_acc"])
        for pt in pts:
            w.writerow([pt.get("psr_db"), pt.get("sr"), pt.get("sr_awgn", ""), pt.get("clean_acc", "")])
    return path
