"""LoRa preamble synthesis and per-device hardware impairments."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidParams, NonFiniteOutput

__all__ = [
    "ChirpParams",
    "DeviceFingerprint",
    "FingerprintSpread",
    "IqFrame",
    "RawCollection",
    "gen_upchirp",
    "gen_preamble",
    "sample_fingerprints",
    "apply_fingerprint",
    "apply_channel",
    "synth_dataset",
    "save_raw",
    "load_raw",
]


@dataclass(frozen=True)
class ChirpParams:
    sf: int = 7
    bw: float = 125_000.0
    fs: float = 250_000.0
    n_preambles: int = 8

    def validate(self) -> "ChirpParams":
        if not (6 <= int(self.sf) <= 12) or int(self.sf) != self.sf:
            raise InvalidParams(f"sf must be an integer in [6, 12], got {self.sf}")
        if not (math.isfinite(self.bw) and math.isfinite(self.fs)) or self.bw <= 0:
            raise InvalidParams("bw and fs must be positive and finite")
        if self.fs < self.bw:
            raise InvalidParams(f"fs ({self.fs}) must be >= bw ({self.bw})")
        if (self.fs * 2**self.sf) % self.bw != 0:
            raise InvalidParams("fs * 2**sf must be a multiple of bw (integer samples per symbol)")
        if self.n_preambles < 2:
            raise InvalidParams("need at least two preamble symbols")
        return self

    @property
    def n_samples(self) -> int:
        """Samples per symbol."""
        return int(round(2**self.sf * self.fs / self.bw))


@dataclass(frozen=True)
class DeviceFingerprint:
    """Hardware impairments of one transmitter.

    ``day_drift_std_hz`` and ``jitter_std_hz`` parameterise the slow (per day)
    and fast (per packet) CFO wander; ``population_seed`` keys the per-day draw.
    """

    device_id: int
    cfo_base_hz: float = 0.0
    iq_gain: float = 0.0
    iq_phase_rad: float = 0.0
    pa_a3: float = 0.0
    pa_a5: float = 0.0
    dc_i: float = 0.0
    dc_q: float = 0.0
    day_drift_std_hz: float = 0.0
    jitter_std_hz: float = 0.0
    population_seed: int = 0

    def day_drift(self, day: int) -> float:
        if self.day_drift_std_hz == 0.0:
            return 0.0
        rng = np.random.default_rng([self.population_seed, self.device_id, int(day), 7001])
        return float(rng.normal(0.0, self.day_drift_std_hz))

    def packet_jitter(self, pkt_seed: int) -> float:
        if self.jitter_std_hz == 0.0:
            return 0.0
        rng = np.random.default_rng([int(pkt_seed), 7002])
        return float(rng.normal(0.0, self.jitter_std_hz))


@dataclass(frozen=True)
class FingerprintSpread:
    cfo_range_hz: float = 10_000.0
    day_drift_std_hz: float = 50.0
    jitter_std_hz: float = 10.0
    iq_gain_std: float = 0.05
    iq_phase_std_rad: float = math.radians(2.0)
    pa_a3_mean: float = -0.05
    pa_a3_std: float = 0.02
    pa_a5_mean: float = 0.01
    pa_a5_std: float = 0.005
    dc_std: float = 0.002
    # base CFOs are redrawn until every pair is this far apart
    min_cfo_sep_hz: float = 400.0

    def validate(self) -> "FingerprintSpread":
        for k, v in asdict(self).items():
            if not math.isfinite(v):
                raise InvalidParams(f"spread parameter {k} is not finite")
            if (k.endswith("_std") or k.endswith("_std_hz") or k.endswith("_std_rad") or k in ("cfo_range_hz", "min_cfo_sep_hz")) and v < 0:
                raise InvalidParams(f"spread parameter {k} must be non-negative")
        return self


@dataclass
class IqFrame:
    samples: np.ndarray
    fs: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)

    def with_samples(self, samples, **meta) -> "IqFrame":
        m = dict(self.meta)
        m.update(meta)
        return IqFrame(samples, self.fs, m)


def gen_upchirp(p: ChirpParams) -> IqFrame:
    """One unit-modulus upchirp sweeping -bw/2 .. +bw/2."""
    p.validate()
    n_sym = p.n_samples
    t = np.arange(n_sym) / p.fs
    t_sym = n_sym / p.fs
    phase = 2 * np.pi * (-p.bw / 2 * t + p.bw / (2 * t_sym) * t**2)
    return IqFrame(np.exp(1j * phase), p.fs, {"kind": "upchirp"})


def gen_preamble(p: ChirpParams) -> IqFrame:
    up = gen_upchirp(p)
    return IqFrame(np.tile(up.samples, p.n_preambles), p.fs, {"kind": "preamble"})


def _truncnormal(rng, std, bound, size, mean=0.0):
    out = rng.normal(mean, std, size)
    bad = np.abs(out) >= bound
    while bad.any():
        out[bad] = rng.normal(mean, std, int(bad.sum()))
        bad = np.abs(out) >= bound
    return out


def _separated_uniform(rng, n, half_range, sep):
    """n points uniform on [-half_range, half_range] conditioned on pairwise
    gaps >= sep: sort uniforms on the shrunken interval, then add i * sep.
    The gap is capped at half the even spacing for large populations."""
    span = 2 * half_range
    sep = min(sep, span / (2 * max(n - 1, 1)))
    u = np.sort(rng.uniform(0.0, span - (n - 1) * sep, n)) + sep * np.arange(n)
    return rng.permutation(u) - half_range


def sample_fingerprints(n: int, seed: int, spread: FingerprintSpread | None = None) -> list[DeviceFingerprint]:
    if n < 2:
        raise InvalidParams("need at least two devices")
    spread = (spread or FingerprintSpread()).validate()
    rng = np.random.default_rng(seed)
    cfo = _separated_uniform(rng, n, spread.cfo_range_hz, spread.min_cfo_sep_hz)
    gain = _truncnormal(rng, spread.iq_gain_std, 0.3, n)
    phase = _truncnormal(rng, spread.iq_phase_std_rad, 0.2, n)
    a3 = rng.normal(spread.pa_a3_mean, spread.pa_a3_std, n)
    a5 = rng.normal(spread.pa_a5_mean, spread.pa_a5_std, n)
    dc = rng.normal(0.0, spread.dc_std, (n, 2))
    fps = [
        DeviceFingerprint(
            device_id=i,
            cfo_base_hz=float(cfo[i]),
            iq_gain=float(gain[i]),
            iq_phase_rad=float(phase[i]),
            pa_a3=float(a3[i]),
            pa_a5=float(a5[i]),
            dc_i=float(dc[i, 0]),
            dc_q=float(dc[i, 1]),
            day_drift_std_hz=spread.day_drift_std_hz,
            jitter_std_hz=spread.jitter_std_hz,
            population_seed=int(seed),
        )
        for i in range(n)
    ]
    keys = {(f.cfo_base_hz, f.iq_gain, f.iq_phase_rad) for f in fps}
    if len(keys) != n:  # pragma: no cover - continuous draws
        raise InvalidParams("fingerprint population is not pairwise distinct")
    return fps


def apply_fingerprint(frame: IqFrame, fp: DeviceFingerprint, day: int = 0, pkt_seed: int = 0) -> IqFrame:
    """PA -> I/Q imbalance -> DC offset -> CFO.  Zero stages are skipped so the
    zero fingerprint is an exact identity."""
    x = frame.samples.copy()
    if fp.pa_a3 != 0.0 or fp.pa_a5 != 0.0:
        m2 = np.abs(x) ** 2
        x = x * (1.0 + fp.pa_a3 * m2 + fp.pa_a5 * m2 * m2)
    if fp.iq_gain != 0.0 or fp.iq_phase_rad != 0.0:
        e = (1.0 + fp.iq_gain) * np.exp(-1j * fp.iq_phase_rad)
        mu, nu = (1.0 + e) / 2.0, (1.0 - e) / 2.0
        x = mu * x + nu * np.conj(x)
    if fp.dc_i != 0.0 or fp.dc_q != 0.0:
        x = x + complex(fp.dc_i, fp.dc_q)
    cfo = fp.cfo_base_hz + fp.day_drift(day) + fp.packet_jitter(pkt_seed)
    if cfo != 0.0:
        x = x * np.exp(2j * np.pi * cfo * np.arange(x.size) / frame.fs)
    if not np.all(np.isfinite(x)):
        raise NonFiniteOutput("fingerprint produced non-finite samples")
    return frame.with_samples(x, device_id=fp.device_id, day_index=int(day), cfo_hz=float(cfo))


def apply_channel(frame: IqFrame, snr_db: float, seed: int, signal_power: float | None = None) -> IqFrame:
    """AWGN at ``snr_db``; ``signal_power`` defaults to the frame's mean power."""
    if math.isinf(snr_db) and snr_db > 0:
        return frame.with_samples(frame.samples.copy(), snr_db=float("inf"))
    if not math.isfinite(snr_db):
        raise InvalidParams("snr_db must be finite or +inf")
    x = frame.samples
    p_sig = float(np.mean(np.abs(x) ** 2)) if signal_power is None else float(signal_power)
    var = p_sig / 10 ** (snr_db / 10)
    rng = np.random.default_rng([int(seed), 7003])
    noise = rng.normal(0.0, math.sqrt(var / 2), (2, x.size))
    return frame.with_samples(x + noise[0] + 1j * noise[1], snr_db=float(snr_db))


@dataclass
class RawCollection:
    """Equal-length packets, one row each, with per-packet metadata columns."""

    params: ChirpParams
    iq: np.ndarray  # (n_packets, frame_len) complex
    device_id: np.ndarray
    day_index: np.ndarray
    true_offset: np.ndarray
    pkt_seed: np.ndarray
    snr_db: float
    seed: int
    fingerprints: list = field(default_factory=list)

    def __len__(self):
        return self.iq.shape[0]

    def frame(self, i: int) -> IqFrame:
        return IqFrame(
            self.iq[i],
            self.params.fs,
            {
                "device_id": int(self.device_id[i]),
                "day_index": int(self.day_index[i]),
                "true_offset": int(self.true_offset[i]),
                "snr_db": self.snr_db,
            },
        )

    def frames(self):
        for i in range(len(self)):
            yield self.frame(i)


def synth_dataset(
    p: ChirpParams,
    fps: list[DeviceFingerprint],
    days: list[int],
    packets_per_device_per_day: int,
    snr_db: float = 40.0,
    seed: int = 0,
) -> RawCollection:
    """Packets laid out as [offset zeros | preamble | zero tail], total
    (n_preambles + 2) symbols, noise added over the whole frame."""
    p.validate()
    if packets_per_device_per_day < 1:
        raise InvalidParams("packets_per_device_per_day must be >= 1")
    n_sym = p.n_samples
    pre = gen_preamble(p)
    frame_len = (p.n_preambles + 2) * n_sym
    n_total = len(fps) * len(days) * packets_per_device_per_day
    iq = np.zeros((n_total, frame_len), dtype=np.complex128)
    dev = np.zeros(n_total, dtype=np.int64)
    day_arr = np.zeros(n_total, dtype=np.int64)
    offs = np.zeros(n_total, dtype=np.int64)
    seeds = np.zeros(n_total, dtype=np.int64)
    row = 0
    for fp in fps:
        for day in days:
            for k in range(packets_per_device_per_day):
                ss = np.random.SeedSequence([int(seed), fp.device_id, int(day), k])
                pkt_seed, noise_seed, off_seed = (int(s) for s in ss.generate_state(3))
                off = int(np.random.default_rng(off_seed).integers(0, n_sym))
                imp = apply_fingerprint(pre, fp, day, pkt_seed)
                padded = np.zeros(frame_len, dtype=np.complex128)
                padded[off : off + imp.samples.size] = imp.samples
                p_sig = float(np.mean(np.abs(imp.samples) ** 2))
                rx = apply_channel(IqFrame(padded, p.fs), snr_db, noise_seed, signal_power=p_sig)
                iq[row] = rx.samples
                dev[row], day_arr[row], offs[row], seeds[row] = fp.device_id, day, off, pkt_seed
                row += 1
    return RawCollection(p, iq, dev, day_arr, offs, seeds, float(snr_db), int(seed), list(fps))


def save_raw(col: RawCollection, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=False)
    inter = np.empty((len(col), col.iq.shape[1], 2), dtype="<f4")
    inter[..., 0] = col.iq.real
    inter[..., 1] = col.iq.imag
    (path / "iq.c64").write_bytes(inter.tobytes())
    manifest = {
        "format": "rfadv.raw/1",
        "params": asdict(col.params),
        "seed": col.seed,
        "snr_db": col.snr_db if math.isfinite(col.snr_db) else "inf",
        "n_packets": len(col),
        "frame_len": int(col.iq.shape[1]),
        "fingerprints": [asdict(f) for f in col.fingerprints],
        "packets": {
            "device_id": col.device_id.tolist(),
            "day_index": col.day_index.tolist(),
            "true_offset": col.true_offset.tolist(),
            "pkt_seed": col.pkt_seed.tolist(),
        },
    }
    if extra:
        manifest.update(extra)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def load_raw(path) -> RawCollection:
    path = Path(path)
    m = json.loads((path / "manifest.json").read_text())
    raw = np.frombuffer((path / "iq.c64").read_bytes(), dtype="<f4")
    n, L = m["n_packets"], m["frame_len"]
    if raw.size != n * L * 2:
        raise InvalidParams(f"iq.c64 holds {raw.size} floats, manifest expects {n * L * 2}")
    raw = raw.reshape(n, L, 2)
    iq = raw[..., 0].astype(np.float64) + 1j * raw[..., 1].astype(np.float64)
    pk = m["packets"]
    snr = float(m["snr_db"]) if m["snr_db"] != "inf" else float("inf")
    return RawCollection(
        ChirpParams(**m["params"]),
        iq,
        np.asarray(pk["device_id"]),
        np.asarray(pk["day_index"]),
        np.asarray(pk["true_offset"]),
        np.asarray(pk["pkt_seed"]),
        snr,
        int(m["seed"]),
        [DeviceFingerprint(**f) for f in m["fingerprints"]],
    )


def zero_fingerprint(device_id: int = 0) -> DeviceFingerprint:
    return DeviceFingerprint(device_id=device_id)


def with_cfo(fp: DeviceFingerprint, cfo_hz: float) -> DeviceFingerprint:
    return replace(fp, cfo_base_hz=cfo_hz)
