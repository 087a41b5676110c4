import json
import math
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from puttlab.audio import (
    CorpusSpec,
    Waveform,
    load_manifest,
    mix_at_snr,
    power,
    quantize,
    read_wav,
    resample,
    synth_corpus,
    write_corpus,
    write_wav,
)
from puttlab.errors import CorruptHeader, UnsupportedFormat, ZeroEnergyInput


def _write_pcm(path, codes, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as f:
        f.setnchannels(channels)
        f.setsampwidth(width)
        f.setframerate(rate)
        f.writeframes(np.asarray(codes, dtype=f"<i{width}").tobytes())


def _payload(path):
    with wave.open(str(path), "rb") as f:
        return f.readframes(f.getnframes())


class TestWaveform:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Waveform([0.0, np.nan])

    def test_rejects_empty_and_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform([])
        with pytest.raises(ValueError):
            Waveform([0.0], sample_rate=0)

    def test_samples_are_read_only(self):
        w = Waveform([0.1, 0.2])
        with pytest.raises(ValueError):
            w.samples[0] = 1.0


class TestWav:
    def test_read_scaling(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_pcm(p, [0, 16384])
        w = read_wav(p)
        assert w.sample_rate == 16000
        np.testing.assert_array_equal(w.samples, [0.0, 0.5])

    def test_read_zero_payload(self, tmp_path):
        p = tmp_path / "z.wav"
        _write_pcm(p, np.zeros(100))
        w = read_wav(p)
        assert len(w) == 100 and not w.samples.any()

    @pytest.mark.parametrize("x, code", [(0.0, 0), (1.0, 32767), (-1.5, -32767), (-1.0, -32767), (0.5, 16384)])
    def test_quantizer(self, x, code):
        assert quantize([x])[0] == code

    def test_write_payload_bytes(self, tmp_path):
        p = tmp_path / "w.wav"
        write_wav(Waveform([0.0, 1.0, -1.5]), p)
        assert _payload(p) == struct.pack("<3h", 0, 32767, -32767)

    def test_round_trip_is_byte_identity(self, tmp_path):
        rng = np.random.default_rng(7)
        for k in range(20):
            codes = rng.integers(-32767, 32768, size=int(rng.integers(1, 3000)))
            src, dst = tmp_path / f"s{k}.wav", tmp_path / f"d{k}.wav"
            _write_pcm(src, codes, rate=int(rng.choice([8000, 16000, 48000])))
            write_wav(read_wav(src), dst)
            assert _payload(dst) == _payload(src)
            assert src.read_bytes() == dst.read_bytes()

    def test_stereo_rejected(self, tmp_path):
        p = tmp_path / "s.wav"
        _write_pcm(p, np.zeros(8), channels=2)
        with pytest.raises(UnsupportedFormat):
            read_wav(p)

    def test_8bit_rejected(self, tmp_path):
        p = tmp_path / "b.wav"
        with wave.open(str(p), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(1)
            f.setframerate(8000)
            f.writeframes(bytes(10))
        with pytest.raises(UnsupportedFormat):
            read_wav(p)

    def test_float_format_rejected(self, tmp_path):
        p = tmp_path / "f.wav"
        _write_pcm(p, np.zeros(4))
        blob = bytearray(p.read_bytes())
        assert blob[20:22] == b"\x01\x00"
        blob[20:22] = b"\x03\x00"
        p.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedFormat):
            read_wav(p)

    def test_garbage_is_corrupt(self, tmp_path):
        p = tmp_path / "g.wav"
        p.write_bytes(b"not a riff file at all")
        with pytest.raises(CorruptHeader):
            read_wav(p)

    def test_truncated_data_is_corrupt(self, tmp_path):
        p = tmp_path / "t.wav"
        _write_pcm(p, np.arange(100))
        p.write_bytes(p.read_bytes()[:-50])
        with pytest.raises(CorruptHeader):
            read_wav(p)


class TestResample:
    def test_identity(self):
        w = Waveform(np.random.default_rng(0).standard_normal(100), 16000)
        assert resample(w, 16000) is w

    def test_constant(self):
        w = Waveform(np.full(300, 0.3), 48000)
        out = resample(w, 16000)
        assert len(out) == 100 and out.sample_rate == 16000
        np.testing.assert_allclose(out.samples, 0.3, atol=1e-15)

    def test_sine_against_analytic(self):
        t = np.arange(48000) / 48000
        out = resample(Waveform(np.sin(2 * np.pi * 100 * t), 48000), 16000)
        ref = np.sin(2 * np.pi * 100 * np.arange(len(out)) / 16000)
        assert np.corrcoef(out.samples, ref)[0, 1] > 0.999

    def test_length_rounding(self):
        assert len(resample(Waveform(np.zeros(1001), 44100), 16000)) == round(1001 * 16000 / 44100)


class TestMix:
    def test_equal_power_unit_gain(self):
        rng = np.random.default_rng(1)
        s = rng.standard_normal(512)
        s /= np.sqrt(power(s))
        n = rng.standard_normal(512)
        n /= np.sqrt(power(n))
        pair = mix_at_snr(Waveform(s), Waveform(n), 0.0)
        np.testing.assert_allclose(pair.noise.samples, n, rtol=1e-12)

    def test_10db_gain(self):
        s = np.ones(64)
        n = np.tile([1.0, -1.0], 32)
        pair = mix_at_snr(Waveform(s), Waveform(n), 10.0)
        np.testing.assert_allclose(pair.noise.samples / n, 10 ** -0.5, rtol=1e-12)
        assert abs(10 ** -0.5 - 0.3162) < 1e-4

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-20, 40))
    def test_power_meter(self, seed, snr):
        rng = np.random.default_rng(seed)
        s, n = rng.standard_normal(256) * rng.uniform(0.01, 2), rng.standard_normal(256)
        pair = mix_at_snr(Waveform(s), Waveform(n), snr)
        measured = 10 * math.log10(power(pair.clean.samples) / power(pair.noise.samples))
        assert abs(measured - snr) < 1e-6
        assert np.max(np.abs(pair.noisy.samples - pair.clean.samples - pair.noise.samples)) <= 1e-9

    def test_zero_energy(self):
        with pytest.raises(ZeroEnergyInput):
            mix_at_snr(Waveform(np.zeros(8)), Waveform(np.ones(8)), 0.0)
        with pytest.raises(ZeroEnergyInput):
            mix_at_snr(Waveform(np.ones(8)), Waveform(np.zeros(8)), 0.0)


class TestCorpus:
    def test_empty(self):
        assert synth_corpus(CorpusSpec(count=0)) == []

    def test_deterministic(self):
        a = synth_corpus(CorpusSpec(count=5, segment_length=512, seed=3))
        b = synth_corpus(CorpusSpec(count=5, segment_length=512, seed=3))
        for p, q in zip(a, b):
            assert p.clean.samples.tobytes() == q.clean.samples.tobytes()
            assert p.noisy.samples.tobytes() == q.noisy.samples.tobytes()

    def test_seeds_differ(self):
        a = synth_corpus(CorpusSpec(count=1, segment_length=512, seed=3))[0]
        b = synth_corpus(CorpusSpec(count=1, segment_length=512, seed=4))[0]
        assert not np.array_equal(a.clean.samples, b.clean.samples)

    def test_snr_levels_and_invariants(self):
        spec = CorpusSpec(count=100, segment_length=256, snr_levels_db=(0, 5, 10, 15), seed=11)
        for p in synth_corpus(spec):
            assert p.snr_db in spec.snr_levels_db
            assert abs(10 * math.log10(power(p.clean.samples) / power(p.noise.samples)) - p.snr_db) < 1e-6
            assert np.max(np.abs(p.noisy.samples - p.clean.samples - p.noise.samples)) <= 1e-9
            assert len(p.clean) == 256 and np.all(np.isfinite(p.noisy.samples))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            CorpusSpec(count=1, segment_length=32)
        with pytest.raises(ValueError):
            CorpusSpec(count=1, snr_levels_db=())

    def test_manifest_round_trip(self, tmp_path):
        spec = CorpusSpec(count=3, segment_length=512, snr_levels_db=(2.5, 7.5), seed=5)
        manifest = write_corpus(spec, tmp_path)
        doc = json.loads(manifest.read_text())
        assert len(doc["pairs"]) == 3
        assert {"clean_path", "noise_path", "snr_db", "seed"} <= set(doc["pairs"][0])
        loaded = load_manifest(manifest)
        original = synth_corpus(spec)
        for p, q in zip(loaded, original):
            assert p.snr_db == q.snr_db
            assert np.max(np.abs(p.clean.samples - q.clean.samples)) <= 1 / 32768
            assert abs(10 * math.log10(power(p.clean.samples) / power(p.noise.samples)) - p.snr_db) < 1e-6
