import csv
import json

import numpy as np
import pytest

from puttlab.audio import SamplePair, Waveform
from puttlab.errors import LengthNotAligned, RoleMismatch
from puttlab.geometry import decompose, make_basis, project
from puttlab.nets import APPROACH, PUTT, ArchConfig, EnhancerHandle, init_params
from puttlab.pipeline import aggregate, eval_corpus, repeat_single, run_alternating, write_report


class Stub:
    """Hand-written enhancer with the handle interface."""

    def __init__(self, role, fn, alignment=1):
        self.role = role
        self.fn = fn
        self.alignment = alignment
        self.calls = []

    def __call__(self, *inputs):
        self.calls.append(inputs)
        return inputs[0].with_samples(self.fn(*(w.samples for w in inputs)))


def triple(seed=0, T=64):
    rng = np.random.default_rng(seed)
    s, n = rng.standard_normal(T), 0.5 * rng.standard_normal(T)
    return Waveform(s), Waveform(n), Waveform(s + n)


def shrink(x):
    return 0.6 * x


def zero_putt(e, x):
    return np.zeros_like(e)


class TestAlternating:
    def test_zero_putt_single_round(self):
        _, _, x = triple()
        tr = run_alternating(Stub(APPROACH, shrink), Stub(PUTT, zero_putt), x, rounds=1)
        assert tr.labels == ["noisy", "approach_1", "putt_1"]
        np.testing.assert_array_equal(tr[1].waveform.samples, 0.6 * x.samples)
        np.testing.assert_array_equal(tr[2].waveform.samples, tr[1].waveform.samples)
        assert tr[0].scores is None and tr[1].point is None

    def test_recursion_and_original_conditioning(self):
        _, _, x = triple(1)
        approach = Stub(APPROACH, shrink)
        putt = Stub(PUTT, lambda e, xn: 0.1 * e + 0.01 * xn)
        tr = run_alternating(approach, putt, x, rounds=3)
        assert len(tr) == 7
        assert tr.labels == ["noisy", "approach_1", "putt_1", "approach_2", "putt_2", "approach_3", "putt_3"]
        z = x.samples
        for i in range(1, 4):
            e = 0.6 * z
            np.testing.assert_array_equal(tr.by_label(f"approach_{i}").waveform.samples, e)
            z = e - (0.1 * e + 0.01 * x.samples)
            np.testing.assert_array_equal(tr.by_label(f"putt_{i}").waveform.samples, z)
        # every Putt call sees the original noisy input
        assert all(call[1] is x for call in putt.calls)
        np.testing.assert_array_equal(approach.calls[1][0].samples, tr[2].waveform.samples)

    def test_definitional_identity(self):
        s, _, x = triple(2)
        tr = run_alternating(Stub(APPROACH, shrink), Stub(PUTT, lambda e, xn: np.sin(e)), x, 3, clean=s)
        for i in range(1, 4):
            a, p = tr.by_label(f"approach_{i}"), tr.by_label(f"putt_{i}")
            np.testing.assert_array_equal(a.waveform.samples - p.artifact, p.waveform.samples)

    def test_oracle_models_collapse_to_origin(self):
        s, _, x = triple(3)
        approach = Stub(APPROACH, lambda z: s.samples.copy())
        putt = Stub(PUTT, lambda e, xn: decompose(e, s, xn).artifact)
        # basis is undefined when the approach is perfect: no projections, scores still filled
        tr = run_alternating(approach, putt, x, 2, clean=s)
        np.testing.assert_array_equal(tr.by_label("putt_1").waveform.samples, s.samples)
        assert tr.by_label("putt_2").scores.perfect

    def test_oracle_putt_lands_on_line(self):
        s, _, x = triple(4)
        rng = np.random.default_rng(404)  # independent of the draws inside triple()
        approach = Stub(APPROACH, lambda z: s.samples + 0.2 * rng.standard_normal(z.size))
        putt = Stub(PUTT, lambda e, xn: decompose(e, s, xn).artifact)
        tr = run_alternating(approach, putt, x, 3, clean=s)
        for i in range(1, 4):
            p = tr.by_label(f"putt_{i}")
            assert p.scores.artifact_norm <= 1e-9
            assert abs(p.point.y) <= 1e-9
            assert tr.by_label(f"approach_{i}").scores.artifact_norm > 0.1

    def test_projection_consistency(self):
        s, _, x = triple(5)
        tr = run_alternating(Stub(APPROACH, np.tanh), Stub(PUTT, lambda e, xn: 0.2 * np.cos(e)), x, 3, clean=s)
        first = tr.by_label("approach_1")
        basis = make_basis(first.waveform, s, x)
        for st in tr.stages:
            q = project(st.waveform, basis)
            assert abs(q.x - st.point.x) <= 1e-9 and abs(q.y - st.point.y) <= 1e-9
        assert tr[0].point.y == pytest.approx(0.0, abs=1e-9)

    def test_deterministic_with_networks(self):
        _, _, x = triple(6, T=64)
        ha = EnhancerHandle(init_params(ArchConfig.tiny(APPROACH), 0), APPROACH)
        hp = EnhancerHandle(init_params(ArchConfig.tiny(PUTT), 0), PUTT)
        a = run_alternating(ha, hp, x, 2)
        b = run_alternating(ha, hp, x, 2)
        assert all(p.waveform.samples.tobytes() == q.waveform.samples.tobytes() for p, q in zip(a.stages, b.stages))

    def test_errors(self):
        _, _, x = triple()
        a, p = Stub(APPROACH, shrink), Stub(PUTT, zero_putt)
        with pytest.raises(ValueError):
            run_alternating(a, p, x, rounds=0)
        with pytest.raises(RoleMismatch):
            run_alternating(p, a, x)
        with pytest.raises(LengthNotAligned, match="divisible by 128"):
            run_alternating(a, Stub(PUTT, zero_putt, alignment=128), x)


class TestRepeatSingle:
    def test_idempotent_stub(self):
        s, _, x = triple(7)
        tr = repeat_single(Stub(APPROACH, lambda z: np.clip(z, -0.5, 0.5)), x, 3, clean=s)
        assert tr.labels == ["noisy", "approach_1", "approach_2", "approach_3"]
        for k in (2, 3):
            np.testing.assert_array_equal(tr[k].waveform.samples, tr[1].waveform.samples)

    def test_putt_only(self):
        _, _, x = triple(8)
        tr = repeat_single(Stub(PUTT, lambda z, xn: 0.5 * z), x, 2)
        assert tr.labels == ["noisy", "putt_1", "putt_2"]
        np.testing.assert_allclose(tr[2].waveform.samples, 0.25 * x.samples)

    def test_rounds_zero(self):
        with pytest.raises(ValueError):
            repeat_single(Stub(APPROACH, shrink), triple()[2], 0)


class TestExports:
    def test_trace_csv(self, tmp_path):
        s, _, x = triple(9)
        tr = run_alternating(Stub(APPROACH, np.tanh), Stub(PUTT, lambda e, xn: 0.1 * e), x, 2, clean=s)
        tr.write_csv(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["stage", "label", "x", "y", "si_sdr_db", "seg_snr_db", "stoi", "artifact_norm", "proximity_norm"]
        assert [r[1] for r in rows[1:]] == tr.labels
        assert float(rows[2][7]) == pytest.approx(tr[1].scores.artifact_norm, rel=1e-12)
        assert rows[1][6] == ""  # STOI undefined on 4 ms signals

    def test_blind_csv(self, tmp_path):
        _, _, x = triple(10)
        tr = run_alternating(Stub(APPROACH, np.tanh), Stub(PUTT, zero_putt), x, 1)
        tr.write_csv(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert all(r[2:] == [""] * 7 for r in rows[1:])

    def test_spill(self, tmp_path):
        _, _, x = triple(11)
        x = x.with_samples(0.1 * x.samples)
        tr = run_alternating(Stub(APPROACH, shrink), Stub(PUTT, zero_putt), x, 1)
        names = [p.name for p in tr.spill(tmp_path, "utt")]
        assert names == ["utt.stage0.noisy.wav", "utt.stage1.approach_1.wav", "utt.stage2.putt_1.wav"]


def corpus_of(snrs, T=64):
    out = []
    for i, snr in enumerate(snrs):
        s, n, x = triple(100 + i, T)
        out.append(SamplePair(s, n, x, snr))
    return out


class TestEval:
    def test_single_sample(self):
        corpus = corpus_of([2.5])
        rep, traces = eval_corpus(Stub(APPROACH, shrink), Stub(PUTT, zero_putt), corpus, rounds=1)
        stats = rep["2.5"]["approach_1"]["si_sdr_db"]
        assert stats["std"] == 0.0 and stats["n"] == 1
        assert stats["mean"] == traces[0][1].scores.si_sdr_db
        assert rep["all"] == rep["2.5"]

    def test_identical_stubs(self):
        corpus = corpus_of([2.5, 7.5, 2.5])
        ident = Stub(APPROACH, lambda z: z)
        rep, _ = eval_corpus(ident, Stub(PUTT, zero_putt), corpus, rounds=2)
        stages = rep["all"]
        for label in ("approach_1", "putt_1", "approach_2", "putt_2"):
            for m in ("si_sdr_db", "seg_snr_db", "proximity_norm"):
                assert stages[label][m] == stages["noisy"][m]

    def test_grouping_partitions(self):
        snrs = [2.5, 7.5, 12.5, 2.5, 12.5, 12.5, 7.5]
        rep, _ = eval_corpus(Stub(APPROACH, shrink), Stub(PUTT, zero_putt), corpus_of(snrs), rounds=1)
        counts = {k: v["noisy"]["si_sdr_db"]["n"] for k, v in rep.items() if k != "all"}
        assert counts == {"2.5": 2, "7.5": 2, "12.5": 3}
        assert sum(counts.values()) == rep["all"]["noisy"]["si_sdr_db"]["n"] == len(snrs)

    def test_threads_match_serial(self):
        corpus = corpus_of([2.5, 7.5, 12.5, 17.5])
        a, p = Stub(APPROACH, np.tanh), Stub(PUTT, lambda e, xn: 0.1 * e)
        assert eval_corpus(a, p, corpus, 2)[0] == eval_corpus(a, p, corpus, 2, jobs=3)[0]

    def test_baseline(self):
        corpus = corpus_of([2.5, 7.5])
        rep, traces = eval_corpus(Stub(APPROACH, shrink), Stub(PUTT, zero_putt), corpus, 3, baseline=APPROACH)
        assert traces[0].labels == ["noisy", "approach_1", "approach_2", "approach_3"]

    def test_errors_name_sample(self):
        corpus = corpus_of([2.5, 7.5])

        def bad(z):
            raise ValueError("boom")

        with pytest.raises(RuntimeError, match="sample 0"):
            eval_corpus(Stub(APPROACH, bad), Stub(PUTT, zero_putt), corpus)
        with pytest.raises(ValueError):
            eval_corpus(Stub(APPROACH, shrink), Stub(PUTT, zero_putt), [])

    def test_report_json(self, tmp_path):
        s, _, x = triple(12)
        tr = run_alternating(Stub(APPROACH, lambda z: s.samples.copy()), Stub(PUTT, zero_putt), x, 1, clean=s)
        rep = aggregate([tr], [5.0])
        write_report(rep, tmp_path / "r.json")
        loaded = json.loads((tmp_path / "r.json").read_text())
        # the perfect stage has no finite SI-SDR to average
        assert loaded["5"]["approach_1"]["si_sdr_db"] == {"mean": None, "std": None, "n": 0}
