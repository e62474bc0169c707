"""Perturbation generation in the spectrogram domain: FGSM, PGD, DeepFool,
universal perturbations, the AWGN baseline and PSR control."""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .engine import input_gradient, logit_gradients, logits, loss_value
from .errors import ChecksumMismatch, DegenerateInput, InvalidParams, MissingArtifact, NoFlip, ShapeMismatch

__all__ = [
    "Perturbation",
    "AttackConfig",
    "apply",
    "psr",
    "eps_for_psr",
    "scale_to_psr",
    "project",
    "fgsm",
    "pgd",
    "deepfool",
    "uap",
    "awgn_baseline",
    "save_perturbation",
    "load_perturbation",
]

METHODS = ("FGSM", "PGD", "UAP", "AWGN")
NORM_TOL = 1e-9


def _norm(v, p) -> float:
    v = np.asarray(v).ravel()
    if p in (np.inf, "inf"):
        return float(np.max(np.abs(v))) if v.size else 0.0
    return float(np.linalg.norm(v))


def _as_p(p):
    if p in ("inf", np.inf, math.inf):
        return np.inf
    if p in (2, "2", 2.0):
        return 2
    raise InvalidParams(f"norm_p must be 2 or inf, got {p!r}")


@dataclass
class Perturbation:
    v: np.ndarray
    norm_p: float = np.inf
    epsilon: float = 0.0
    method: str = "FGSM"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.norm_p = _as_p(self.norm_p)

    @property
    def shape(self):
        return self.v.shape

    def norm(self) -> float:
        return _norm(self.v, self.norm_p)

    def check(self) -> "Perturbation":
        if not np.all(np.isfinite(self.v)):
            raise DegenerateInput("perturbation has non-finite entries")
        if self.norm() > self.epsilon + NORM_TOL:
            raise InvalidParams(f"norm {self.norm():.6g} exceeds epsilon {self.epsilon:.6g}")
        return self


@dataclass(frozen=True)
class AttackConfig:
    method: str = "PGD"
    targeted: bool = False
    y_tar: int | None = None
    epsilon: float = 0.1
    alpha: float | None = None  # PGD step; None -> 2.5 * epsilon / K
    K: int = 10
    K_targeted: int | None = None  # iterations when targeted; None -> K
    delta: float = 0.8
    T: int = 5
    norm_p: float | str = "inf"
    psr_db: float | None = None
    seed: int = 0
    random_init: bool = True
    strict_alg1: bool = False
    overshoot: float = 0.02
    df_max_iter: int = 50
    df_top_k: int | None = None

    def validate(self) -> "AttackConfig":
        if self.method not in METHODS:
            raise InvalidParams(f"method must be one of {METHODS}")
        if not self.epsilon > 0:
            raise InvalidParams("epsilon must be > 0")
        if self.K < 1 or (self.K_targeted is not None and self.K_targeted < 1):
            raise InvalidParams("K must be >= 1")
        if not 0 < self.delta < 1:
            raise InvalidParams("delta must lie in (0, 1)")
        if self.alpha is not None and not self.alpha > 0:
            raise InvalidParams("alpha must be > 0")
        _as_p(self.norm_p)
        return self

    @property
    def iterations(self) -> int:
        if self.targeted and self.K_targeted is not None:
            return self.K_targeted
        return self.K

    @property
    def step(self) -> float:
        return self.alpha if self.alpha is not None else 2.5 * self.epsilon / self.iterations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["norm_p"] = "inf" if _as_p(self.norm_p) == np.inf else 2
        return d


def apply(x, v):
    """x + v element-wise.  ``v`` may be a Perturbation or an array and
    broadcasts over a leading batch axis."""
    vv = v.v if isinstance(v, Perturbation) else np.asarray(v, dtype=np.float64)
    xv = x.values if hasattr(x, "values") else np.asarray(x, dtype=np.float64)
    if xv.shape != vv.shape and xv.shape[1:] != vv.shape:
        raise ShapeMismatch(f"perturbation shape {vv.shape} does not fit input {xv.shape}")
    out = xv + vv
    if hasattr(x, "values"):
        return type(x)(out, dict(x.params))
    return out


def psr(v, p_x: float) -> float:
    """Perturbation-to-signal ratio in dB; -inf for an all-zero v."""
    if not p_x > 0:
        raise InvalidParams("reference power p_x must be > 0")
    vv = v.v if isinstance(v, Perturbation) else np.asarray(v, dtype=np.float64)
    pv = float(np.mean(vv * vv))
    if pv == 0.0:
        return -math.inf
    return 10.0 * math.log10(pv / p_x)


def eps_for_psr(p_x: float, psr_db: float) -> float:
    """L-inf radius whose sign-pattern perturbation has exactly ``psr_db``."""
    return math.sqrt(p_x * 10.0 ** (psr_db / 10.0))


def scale_to_psr(v, p_x: float, psr_db: float) -> Perturbation:
    src = v if isinstance(v, Perturbation) else Perturbation(v, np.inf, 0.0, "raw")
    pv = float(np.mean(src.v * src.v))
    if pv == 0.0:
        raise DegenerateInput("cannot scale an all-zero perturbation")
    if not p_x > 0:
        raise InvalidParams("reference power p_x must be > 0")
    scale = math.sqrt(p_x * 10.0 ** (psr_db / 10.0) / pv)
    out = src.v * scale
    meta = dict(src.meta, psr_db=float(psr_db), p_x=float(p_x), scale=scale)
    return Perturbation(out, src.norm_p, _norm(out, src.norm_p), src.method, meta)


def project(v, eps: float, p) -> np.ndarray:
    """Project a single tensor onto the eps-ball of the given norm."""
    p = _as_p(p)
    if p == np.inf:
        return np.clip(v, -eps, eps)
    n = float(np.linalg.norm(v))
    return v if n <= eps else v * (eps / n)


def _project_batch(v, eps, p):
    p = _as_p(p)
    if p == np.inf:
        return np.clip(v, -eps, eps)
    n = np.sqrt(np.sum(v.reshape(len(v), -1) ** 2, axis=1))
    s = np.where(n > eps, eps / np.maximum(n, 1e-300), 1.0)
    return v * s.reshape((-1,) + (1,) * (v.ndim - 1))


def _unit_step(g, p):
    """Steepest-ascent direction of unit p-norm (per sample)."""
    if p == np.inf:
        return np.sign(g)
    n = np.sqrt(np.sum(g.reshape(len(g), -1) ** 2, axis=1))
    return g / np.maximum(n, 1e-300).reshape((-1,) + (1,) * (g.ndim - 1))


def _batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(model.input_shape) if hasattr(model, "input_shape") else tuple(model.net.input_shape)
    single = x.shape == shape
    return (x[None] if single else x), single


def _labels(label, n):
    lab = np.atleast_1d(np.asarray(label, dtype=np.int64))
    return np.full(n, lab[0]) if lab.size == 1 and n > 1 else lab


def fgsm(model, x, label, cfg: AttackConfig) -> Perturbation:
    """One signed-gradient step: +eps*sign(grad J(y)) untargeted,
    -eps*sign(grad J(y_tar)) targeted.  For a targeted config without
    ``y_tar``, ``label`` holds the (per-sample) targets."""
    p = _as_p(cfg.norm_p)
    xb, single = _batch(model, x)
    lab = _labels(cfg.y_tar if cfg.targeted and cfg.y_tar is not None else label, len(xb))
    g = input_gradient(model, xb, lab, "target-label" if cfg.targeted else "true-label")
    d = _unit_step(g, p)
    v = (-cfg.epsilon if cfg.targeted else cfg.epsilon) * d
    v = v[0] if single else v
    return Perturbation(v, p, cfg.epsilon, "FGSM", {"targeted": cfg.targeted, "y_tar": cfg.y_tar})


def pgd(model, x, label, cfg: AttackConfig, trace: list | None = None) -> Perturbation:
    """Iterated signed-gradient steps of size alpha with projection onto the
    eps-ball around x (or onto the alpha-ball when ``strict_alg1``).

    The gradient is taken at the current iterate.  When ``trace`` is a list,
    the loss at each iterate (w.r.t. the attacked label) is appended."""
    p = _as_p(cfg.norm_p)
    xb, single = _batch(model, x)
    lab = _labels(cfg.y_tar if cfg.targeted and cfg.y_tar is not None else label, len(xb))
    eps, alpha = cfg.epsilon, cfg.step
    radius = alpha if cfg.strict_alg1 else eps
    if cfg.random_init:
        rng = np.random.default_rng([int(cfg.seed), 4101])
        if p == np.inf:
            delta = rng.uniform(-radius, radius, size=xb.shape)
        else:
            delta = _project_batch(rng.normal(size=xb.shape) * radius, radius, p)
    else:
        delta = np.zeros_like(xb)
    sgn = -1.0 if cfg.targeted else 1.0
    for _ in range(cfg.iterations):
        g = input_gradient(model, xb + delta, lab)
        delta = _project_batch(delta + sgn * alpha * _unit_step(g, p), radius, p)
        if trace is not None:
            trace.append(loss_value(model, xb + delta, lab))
    v = delta[0] if single else delta
    return Perturbation(v, p, radius, "PGD", {"targeted": cfg.targeted, "y_tar": cfg.y_tar, "K": cfg.iterations,
                                              "alpha": alpha, "seed": cfg.seed, "strict_alg1": cfg.strict_alg1})


def _deepfool(model, x, overshoot=0.02, max_iter=50, top_k=None):
    """Returns (r, iterations, flipped, label_in, label_out)."""
    x = np.asarray(x, dtype=np.float64)
    z0 = logits(model, x)
    k0 = int(np.argmax(z0))
    if top_k is None or top_k >= z0.size - 1:
        cands = np.array([k for k in range(z0.size) if k != k0])
    else:
        order = np.argsort(-z0, kind="stable")
        cands = np.array([k for k in order if k != k0][:top_k])
    classes = np.concatenate([[k0], cands])
    r_tot = np.zeros_like(x)
    k_now = k0
    it = 0
    while it < max_iter:
        z, grads = logit_gradients(model, x + (1 + overshoot) * r_tot, classes)
        k_now = int(np.argmax(z))
        if k_now != k0:
            break
        w = (grads[1:] - grads[0]).reshape(len(cands), -1)
        f = z[cands] - z[k0]
        wn = np.sqrt(np.sum(w * w, axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.where(wn > 0, np.abs(f) / wn, np.inf)
        l = int(np.argmin(dist))
        if not np.isfinite(dist[l]):
            break
        r_tot = r_tot + (abs(f[l]) / wn[l] ** 2) * w[l].reshape(x.shape)
        it += 1
    else:
        k_now = int(np.argmax(logits(model, x + (1 + overshoot) * r_tot)))
    return (1 + overshoot) * r_tot, it, k_now != k0, k0, k_now


def deepfool(model, x, overshoot: float = 0.02, max_iter: int = 50, top_k: int | None = None) -> Perturbation:
    """Minimal L2 perturbation flipping the predicted label of a single input."""
    r, it, flipped, k0, k1 = _deepfool(model, x, overshoot, max_iter, top_k)
    if not flipped:
        raise NoFlip(f"label {k0} did not change within {max_iter} iterations")
    return Perturbation(r, 2, float(np.linalg.norm(r)), "DeepFool",
                        {"iterations": it, "label_in": k0, "label_out": k1, "overshoot": overshoot})


def _predict(model, x):
    if hasattr(model, "predict"):
        return model.predict(x)
    return np.argmax(logits(model, x), axis=-1)


def uap(model_sur, dataset, cfg: AttackConfig, labels=None, progress=None) -> Perturbation:
    """Universal perturbation: accumulate DeepFool steps over still-correct
    samples, project to the eps-ball after each, stop once the
    generation-set success rate exceeds delta or after T passes.  The
    returned tensor is the pass-end perturbation with the highest success
    rate (ties go to the earliest).

    ``dataset`` is a Dataset or an (n, ...) array with ``labels`` given;
    ``meta['converged']`` records the outcome.
    """
    if labels is None:
        xs, ys = dataset.x, dataset.y
    else:
        xs, ys = np.asarray(dataset, dtype=np.float64), np.asarray(labels)
    if len(xs) == 0:
        raise InvalidParams("UAP generation needs a nonempty dataset")
    p = _as_p(cfg.norm_p)
    rng = np.random.default_rng([int(cfg.seed), 4102])
    v = np.zeros(xs.shape[1:])
    best_v, best_sr = v.copy(), -1.0
    history = []
    converged = False
    df_calls = 0
    for t in range(cfg.T):
        for m in rng.permutation(len(xs)):
            xv = xs[m] + v
            if int(_predict(model_sur, xv[None])[0]) != int(ys[m]):
                continue
            r, _, _, _, _ = _deepfool(model_sur, xv, cfg.overshoot, cfg.df_max_iter, cfg.df_top_k)
            df_calls += 1
            v = project(v + r, cfg.epsilon, p)
        sr = float(np.mean(_predict(model_sur, xs + v) != ys))
        history.append({"pass": t + 1, "sr": sr, "norm": _norm(v, p)})
        if progress is not None:
            progress(history[-1])
        if sr > best_sr:
            best_sr, best_v = sr, v.copy()
        if sr > cfg.delta:
            converged = True
            break
    meta = {
        "converged": converged,
        "generation_sr": best_sr,
        "passes": len(history),
        "history": history,
        "deepfool_calls": df_calls,
        "seed": cfg.seed,
        "delta": cfg.delta,
        "T": cfg.T,
        "surrogate_arch": getattr(model_sur, "arch_id", None),
    }
    return Perturbation(best_v, p, cfg.epsilon, "UAP", meta)


def awgn_baseline(shape, p_x: float, psr_db: float, seed: int = 0) -> Perturbation:
    if not math.isfinite(psr_db):
        raise InvalidParams("psr_db must be finite")
    g = np.random.default_rng([int(seed), 4103]).standard_normal(tuple(shape))
    out = scale_to_psr(Perturbation(g, 2, 0.0, "AWGN"), p_x, psr_db)
    out.meta["seed"] = int(seed)
    return out


def _meta_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o))


def save_perturbation(pert: Perturbation, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(pert.v, dtype="<f4").tobytes()
    meta = {
        "format_version": 1,
        "shape": list(pert.v.shape),
        "norm_p": "inf" if pert.norm_p == np.inf else 2,
        "epsilon": pert.epsilon,
        "method": pert.method,
        "crc32": zlib.crc32(data),
        "meta": pert.meta,
    }
    if extra:
        meta.update(extra)
    (path / "v.f32").write_bytes(data)
    (path / "vmeta.json").write_text(json.dumps(meta, indent=1, sort_keys=True, default=_meta_default))
    return path


def load_perturbation(path) -> Perturbation:
    path = Path(path)
    if not (path / "vmeta.json").exists():
        raise MissingArtifact(f"no perturbation at {path}")
    m = json.loads((path / "vmeta.json").read_text())
    data = (path / "v.f32").read_bytes()
    if zlib.crc32(data) != m["crc32"]:
        raise ChecksumMismatch(f"checksum mismatch in {path / 'v.f32'}")
    v = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(m["shape"])
    # f32 rounding can push |v| a hair past epsilon; keep the stored radius honest
    eps = max(float(m["epsilon"]), _norm(v, _as_p(m["norm_p"])))
    return Perturbation(v, m["norm_p"], eps, m["method"], m.get("meta", {}))


def with_epsilon(cfg: AttackConfig, eps: float) -> AttackConfig:
    return replace(cfg, epsilon=float(eps))
