"""Waveforms, PCM16 WAV I/O, resampling and the synthetic desk corpus."""

from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeader,
    IoFailure,
    LengthMismatch,
    UnsupportedFormat,
    ZeroEnergyInput,
)

PCM_READ_SCALE = 32768.0
PCM_MAX = 32767

TRAIN_SNRS_DB = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS_DB = (2.5, 7.5, 12.5, 17.5)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Waveform:
    """A mono signal: ``samples`` in nominal [-1, 1] at ``sample_rate`` Hz."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        s = _frozen(self.samples).reshape(-1)
        if s.size < 1:
            raise ValueError("waveform must hold at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def with_samples(self, samples):
        return Waveform(samples, self.sample_rate)


@dataclass(frozen=True, eq=False)
class SamplePair:
    clean: Waveform
    noise: Waveform
    noisy: Waveform
    snr_db: float = float("nan")

    def __post_init__(self):
        n = len(self.clean)
        if len(self.noise) != n or len(self.noisy) != n:
            raise LengthMismatch("clean, noise and noisy must share a length")
        rates = {self.clean.sample_rate, self.noise.sample_rate, self.noisy.sample_rate}
        if len(rates) != 1:
            raise ValueError("clean, noise and noisy must share a sample rate")


@dataclass(frozen=True)
class CorpusSpec:
    count: int
    segment_length: int = 8192
    sample_rate: int = 16000
    snr_levels_db: tuple = TRAIN_SNRS_DB
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if self.segment_length < 64:
            raise ValueError("segment_length must be at least 64")
        if not self.snr_levels_db:
            raise ValueError("snr_levels_db must be non-empty")
        object.__setattr__(self, "snr_levels_db", tuple(float(s) for s in self.snr_levels_db))


# --------------------------------------------------------------------------
# WAV I/O


def read_wav(path):
    """Read a PCM16 mono WAV file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            nframes = f.getnframes()
            payload = f.readframes(nframes)
    except FileNotFoundError:
        raise
    except wave.Error as e:
        msg = str(e)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: only PCM is supported ({msg})") from e
        raise CorruptHeader(f"{path}: {msg}") from e
    except EOFError as e:
        raise CorruptHeader(f"{path}: truncated header") from e
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, only mono is supported")
    if width != 2:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, only 16-bit is supported")
    if len(payload) != 2 * nframes:
        raise CorruptHeader(f"{path}: data chunk shorter than declared")
    if nframes == 0:
        raise CorruptHeader(f"{path}: empty data chunk")
    pcm = np.frombuffer(payload, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / PCM_READ_SCALE, rate)


def quantize(samples):
    """Map float samples to int16 codes.

    Clamps to [-1, 1] and scales by 32768 with saturation at +/-32767, so
    that codes read by :func:`read_wav` map back to themselves.
    """
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.rint(x * PCM_READ_SCALE), -PCM_MAX, PCM_MAX).astype("<i2")


def write_wav(w, path):
    if not np.all(np.isfinite(w.samples)):
        raise ValueError("cannot write non-finite samples")
    try:
        with wave.open(str(path), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(w.sample_rate)
            f.writeframes(quantize(w.samples).tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# --------------------------------------------------------------------------
# signal operations


def resample(w, target_rate):
    """Linear-interpolation resampler; identity when the rates agree."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == w.sample_rate:
        return w
    n_in = len(w)
    n_out = max(1, int(round(n_in * target_rate / w.sample_rate)))
    pos = np.arange(n_out) * (w.sample_rate / target_rate)
    out = np.interp(pos, np.arange(n_in), w.samples)
    return Waveform(out, target_rate)


def power(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def snr_db(clean, noise):
    return 10.0 * math.log10(power(clean) / power(noise))


def mix_at_snr(clean, noise, snr_db):
    """Scale ``noise`` so that clean/noise power ratio equals ``snr_db``."""
    if len(clean) != len(noise):
        raise LengthMismatch("clean and noise lengths differ")
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("clean and noise sample rates differ")
    p_clean = power(clean.samples)
    p_noise = power(noise.samples)
    if p_clean == 0.0 or p_noise == 0.0:
        raise ZeroEnergyInput("clean and noise must both carry energy")
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = noise.samples * gain
    return SamplePair(
        clean=clean,
        noise=noise.with_samples(scaled),
        noisy=clean.with_samples(clean.samples + scaled),
        snr_db=float(snr_db),
    )


# --------------------------------------------------------------------------
# synthetic corpus


def _moving_average(x, width):
    width = max(1, min(int(width), x.size))
    kernel = np.ones(width) / width
    return np.convolve(x, kernel, mode="same")


def synth_speech(rng, n, sr):
    """Harmonic complex with a wandering pitch and a smoothed random envelope."""
    t = np.arange(n) / sr
    f0 = rng.uniform(80.0, 300.0)
    vib_depth = rng.uniform(0.0, 0.08)
    vib_rate = rng.uniform(2.0, 7.0)
    glide = rng.uniform(-0.3, 0.3) / max(t[-1], 1.0 / sr)
    contour = f0 * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + rng.uniform(0, 2 * np.pi)))
    contour = np.clip(contour * (1.0 + glide * t), 60.0, 400.0)
    phase = 2 * np.pi * np.cumsum(contour) / sr

    n_harm = int(rng.integers(5, 11))
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        if k * contour.max() >= sr / 2:
            break
        amp = rng.uniform(0.3, 1.0) / k
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    smooth = int(sr * rng.uniform(0.010, 0.050))
    env = np.abs(rng.standard_normal(n))
    env = _moving_average(_moving_average(env, smooth), smooth)
    # syllable-like on/off gating, roughly 4-8 Hz
    gate_len = int(sr * rng.uniform(0.06, 0.15))
    n_gates = n // gate_len + 1
    gates = (rng.random(n_gates) < 0.75).astype(float)
    gates[rng.integers(n_gates)] = 1.0
    gate = _moving_average(np.repeat(gates, gate_len)[:n], smooth)
    x *= env * (0.05 + gate)
    peak = np.max(np.abs(x))
    return 0.5 * x / peak


def synth_noise(rng, n, sr, kind=None):
    kind = kind or rng.choice(["white", "band", "am"])
    w = rng.standard_normal(n)
    if kind == "band":
        lo = rng.uniform(50.0, sr / 4)
        hi = min(sr / 2, lo * rng.uniform(1.5, 4.0))
        spec = np.fft.rfft(w)
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        spec[(freqs < lo) | (freqs > hi)] = 0.0
        w = np.fft.irfft(spec, n)
    elif kind == "am":
        t = np.arange(n) / sr
        depth = rng.uniform(0.5, 1.0)
        w = w * (1.0 + depth * np.sin(2 * np.pi * rng.uniform(1.0, 10.0) * t + rng.uniform(0, 2 * np.pi)))
    elif kind != "white":
        raise ValueError(f"unknown noise kind {kind!r}")
    std = np.std(w)
    if std == 0.0:
        w = rng.standard_normal(n)
        std = np.std(w)
    return 0.1 * w / std


def synth_pair(seed, spec):
    rng = np.random.default_rng(seed)
    n, sr = spec.segment_length, spec.sample_rate
    clean = Waveform(synth_speech(rng, n, sr), sr)
    noise = Waveform(synth_noise(rng, n, sr), sr)
    level = float(rng.choice(np.asarray(spec.snr_levels_db)))
    return mix_at_snr(clean, noise, level)


def pair_seeds(spec):
    """Per-pair integer seeds derived from the corpus seed."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.count)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> 1) for c in children]


def synth_corpus(spec):
    """Deterministic list of synthetic clean/noise/noisy triples."""
    return [synth_pair(s, spec) for s in pair_seeds(spec)]


# --------------------------------------------------------------------------
# on-disk corpora


@dataclass
class ManifestEntry:
    clean_path: str
    noise_path: str
    snr_db: float
    seed: int = 0
    extra: dict = field(default_factory=dict)


def write_corpus(spec, out_dir):
    """Write clean/noise WAVs plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, seed in enumerate(pair_seeds(spec)):
        pair = synth_pair(seed, spec)
        clean_name = f"pair{i:05d}.clean.wav"
        noise_name = f"pair{i:05d}.noise.wav"
        write_wav(pair.clean, out_dir / clean_name)
        write_wav(pair.noise, out_dir / noise_name)
        entries.append({"clean_path": clean_name, "noise_path": noise_name, "snr_db": pair.snr_db, "seed": seed})
    manifest = out_dir / "manifest.json"
    doc = {"sample_rate": spec.sample_rate, "segment_length": spec.segment_length, "pairs": entries}
    try:
        manifest.write_text(json.dumps(doc, indent=2))
    except OSError as e:
        raise IoFailure(str(e)) from e
    return manifest


def load_manifest(path):
    """Load a manifest and re-mix each clean/noise pair at its listed SNR.

    Relative paths resolve against the manifest's directory. Noise is
    stored already scaled, so mixing re-applies the (near-unit) gain that
    restores the exact target SNR after quantization.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    entries = doc["pairs"] if isinstance(doc, dict) else doc
    base = path.parent
    pairs = []
    for e in entries:
        clean = read_wav(base / e["clean_path"])
        noise = read_wav(base / e["noise_path"])
        pairs.append(mix_at_snr(clean, noise, float(e["snr_db"])))
    return pairs
