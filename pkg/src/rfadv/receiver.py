"""Receiver pre-processing: sync, CFO compensation, normalisation, STFT and
the channel-independent log-quotient spectrogram."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import correlate

from .errors import DegenerateInput, InvalidParams, NoDetection, RfadvError
from .waveform import ChirpParams, IqFrame, RawCollection, gen_upchirp

__all__ = [
    "PipelineConfig",
    "Spectrogram",
    "Example",
    "Dataset",
    "detect_sync",
    "estimate_cfo",
    "compensate_cfo",
    "normalize_power",
    "stft",
    "channel_independent",
    "preprocess",
    "preprocess_collection",
    "save_dataset",
    "load_dataset",
]

EPS_LOG = 1e-12
DENOM_FLOOR = 1e-12
SYNC_PEAK_TO_MEDIAN = 5.0


@dataclass(frozen=True)
class PipelineConfig:
    chirp: ChirpParams = ChirpParams()
    window_len: int = 64
    hop: int = 32
    kept_bins: int = 32

    def output_shape(self) -> tuple[int, int]:
        length = self.chirp.n_preambles * self.chirp.n_samples
        return self.kept_bins, (length - self.window_len) // self.hop

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["chirp"] = ChirpParams(**d["chirp"])
        return cls(**d)


@dataclass
class Spectrogram:
    values: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Example:
    x: Spectrogram
    y: int


def detect_sync(rx: IqFrame, p: ChirpParams) -> int:
    """Start index of the preamble: the first of the equal-height peaks of the
    two-symbol correlation magnitude.  May be negative when the peak lies before the
    buffer start (CFO shifts the chirp correlation peak in time)."""
    n_sym = p.n_samples
    up = gen_upchirp(p).samples
    x = rx.samples
    if x.size < 2 * n_sym:
        raise NoDetection("frame shorter than two preamble symbols")
    padded = np.concatenate([np.zeros(n_sym, dtype=np.complex128), x])
    # per-symbol magnitudes summed: a residual CFO rotates the two symbols'
    # correlations against each other and would cancel a coherent sum
    c1 = np.abs(correlate(padded, up, mode="valid", method="fft"))
    c = c1[:-n_sym] + c1[n_sym:]
    peak = float(c.max())
    med = float(np.median(c))
    if peak <= 0 or (med > 0 and peak / med < SYNC_PEAK_TO_MEDIAN):
        raise NoDetection(f"sync metric {peak / med if med else 0:.2f} below threshold")
    first = int(np.argmax(c >= 0.75 * peak))
    stop = min(c.size, first + n_sym // 4)
    idx = first + int(np.argmax(c[first:stop]))
    return idx - n_sym


def extract(rx: IqFrame, start: int, length: int) -> IqFrame:
    """``length`` samples from ``start``, zero filled outside the buffer."""
    x = rx.samples
    out = np.zeros(length, dtype=np.complex128)
    lo, hi = max(start, 0), min(start + length, x.size)
    if hi > lo:
        out[lo - start : hi - start] = x[lo:hi]
    return rx.with_samples(out, sync_offset=int(start))


def estimate_cfo(frame: IqFrame, p: ChirpParams, pad_factor: int = 8) -> float:
    """Coarse dechirp-FFT peak plus fine symbol-to-symbol phase slope, in Hz."""
    n_sym = p.n_samples
    x = frame.samples
    if x.size < 2 * n_sym:
        raise InvalidParams("CFO estimation needs at least two symbols")
    if float(np.sum(np.abs(x) ** 2)) < 1e-12:
        raise DegenerateInput("frame energy below 1e-12")
    fs = frame.fs
    nfft = pad_factor * n_sym
    spec = np.abs(np.fft.fft(x[:n_sym] * np.conj(gen_upchirp(p).samples), nfft))
    k = int(np.argmax(spec))
    if k > nfft // 2:
        k -= nfft
    coarse = k * fs / nfft
    n_used = (x.size // n_sym) * n_sym
    y = x[:n_used] * np.exp(-2j * np.pi * coarse * np.arange(n_used) / fs)
    acc = np.sum(y[n_sym:] * np.conj(y[:-n_sym]))
    fine = float(np.angle(acc)) * fs / (2 * np.pi * n_sym)
    return float(coarse + fine)


def compensate_cfo(frame: IqFrame, f_hat: float) -> IqFrame:
    if not math.isfinite(f_hat):
        raise InvalidParams("f_hat must be finite")
    n = np.arange(frame.samples.size)
    return frame.with_samples(frame.samples * np.exp(-2j * np.pi * f_hat * n / frame.fs), cfo_hat=float(f_hat))


def normalize_power(frame: IqFrame) -> IqFrame:
    rms = math.sqrt(float(np.mean(np.abs(frame.samples) ** 2)))
    if rms == 0.0 or not math.isfinite(rms):
        raise DegenerateInput("cannot normalise a zero-energy frame")
    return frame.with_samples(frame.samples / rms)


def stft(frame: IqFrame, window_len: int = 64, hop: int = 32) -> np.ndarray:
    """Hann-windowed, fft-shifted STFT; rows are frequency bins (ascending,
    DC at row ``window_len // 2``), columns are frames."""
    x = frame.samples if isinstance(frame, IqFrame) else np.asarray(frame, dtype=np.complex128)
    if hop <= 0:
        raise InvalidParams("hop must be positive")
    if window_len > x.size or window_len <= 0:
        raise InvalidParams("window_len must be in [1, len(frame)]")
    n_cols = (x.size - window_len) // hop + 1
    win = np.hanning(window_len + 1)[:-1]  # periodic Hann
    idx = np.arange(window_len)[None, :] + hop * np.arange(n_cols)[:, None]
    seg = x[idx] * win
    spec = np.fft.fftshift(np.fft.fft(seg, axis=1), axes=1)
    return spec.T


def channel_independent(S: np.ndarray, kept_bins: int = 32, standardize: bool = True) -> Spectrogram:
    """log |S[:, t+1]| / |S[:, t]| over the central ``kept_bins`` rows, then
    per-example standardisation."""
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[1] < 2:
        raise InvalidParams("need a 2-D STFT with at least two columns")
    n_rows = S.shape[0]
    if kept_bins > n_rows:
        raise InvalidParams("kept_bins exceeds the number of STFT rows")
    lo = n_rows // 2 - kept_bins // 2
    mag = np.abs(S[lo : lo + kept_bins])
    q = np.log(mag[:, 1:] / np.maximum(mag[:, :-1], DENOM_FLOOR) + EPS_LOG)
    if standardize:
        q = q - q.mean()
        sd = q.std()
        if sd > 0:
            q = q / sd
    return Spectrogram(q, {"kept_bins": kept_bins, "standardized": standardize})


def preprocess(rx: IqFrame, cfg: PipelineConfig = PipelineConfig()) -> Example:
    p = cfg.chirp
    start = detect_sync(rx, p)
    pre = extract(rx, start, p.n_preambles * p.n_samples)
    f_hat = estimate_cfo(pre, p)
    z = normalize_power(compensate_cfo(pre, f_hat))
    spec = channel_independent(stft(z, cfg.window_len, cfg.hop), cfg.kept_bins)
    spec.params.update(window_len=cfg.window_len, hop=cfg.hop, sync_offset=start, cfo_hat=f_hat)
    return Example(spec, int(rx.meta.get("device_id", -1)))


@dataclass
class Dataset:
    """Stack of standardised spectrograms (n, F, T) with labels and metadata."""

    x: np.ndarray
    y: np.ndarray
    day: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.day is None:
            self.day = np.zeros(len(self.y), dtype=np.int64)
        self.day = np.asarray(self.day, dtype=np.int64)

    def __len__(self):
        return len(self.y)

    @property
    def shape(self):
        return tuple(self.x.shape[1:])

    @property
    def n_classes(self) -> int:
        return int(self.meta.get("n_classes", int(self.y.max()) + 1 if len(self.y) else 0))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.day[idx], dict(self.meta))

    def select_day(self, day: int) -> "Dataset":
        return self.subset(np.flatnonzero(self.day == day))


def _prep_one(args):
    samples, fs, meta, cfg = args
    try:
        ex = preprocess(IqFrame(samples, fs, meta), cfg)
    except RfadvError:
        return None
    return ex.x.values


def preprocess_collection(raw: RawCollection, cfg: PipelineConfig = PipelineConfig(), workers: int = 1) -> Dataset:
    """Preprocess every packet; failures are dropped and counted."""
    jobs = [(raw.iq[i], raw.params.fs, raw.frame(i).meta, cfg) for i in range(len(raw))]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            outs = list(ex.map(_prep_one, jobs, chunksize=64))
    else:
        outs = [_prep_one(j) for j in jobs]
    keep = [i for i, o in enumerate(outs) if o is not None]
    shape = cfg.output_shape()
    x = np.stack([outs[i] for i in keep]) if keep else np.zeros((0, *shape))
    n_classes = len(raw.fingerprints) if raw.fingerprints else int(raw.device_id.max()) + 1
    return Dataset(
        x,
        raw.device_id[keep],
        raw.day_index[keep],
        {"n_classes": n_classes, "dropped": len(outs) - len(keep), "seed": raw.seed, "pipeline": cfg.to_dict()},
    )


def save_dataset(ds: Dataset, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=False)
    (path / "x.f32").write_bytes(np.ascontiguousarray(ds.x, dtype="<f4").tobytes())
    (path / "y.u16").write_bytes(np.ascontiguousarray(ds.y, dtype="<u2").tobytes())
    manifest = {
        "format": "rfadv.dataset/1",
        "n": len(ds),
        "shape": list(ds.shape),
        "n_classes": ds.n_classes,
        "day_index": ds.day.tolist(),
        "devices": sorted(int(v) for v in np.unique(ds.y)),
        "days": sorted(int(v) for v in np.unique(ds.day)),
        "meta": ds.meta,
    }
    if extra:
        manifest.update(extra)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, default=_json_default))
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    m = json.loads((path / "manifest.json").read_text())
    n, shape = m["n"], tuple(m["shape"])
    x = np.frombuffer((path / "x.f32").read_bytes(), dtype="<f4")
    y = np.frombuffer((path / "y.u16").read_bytes(), dtype="<u2")
    if x.size != n * int(np.prod(shape)) or y.size != n:
        raise InvalidParams("dataset payload size does not match its manifest")
    meta = dict(m.get("meta", {}))
    meta["n_classes"] = m["n_classes"]
    return Dataset(x.reshape(n, *shape).astype(np.float64), y.astype(np.int64), np.asarray(m["day_index"]), meta)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
