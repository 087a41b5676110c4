"""Alternating Approach/Putt refinement, baselines, and corpus evaluation."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav
from .errors import DegenerateBasis, DegenerateLine, LengthNotAligned, RoleMismatch
from .geometry import PlanePoint, make_basis, project
from .metrics import ScoreCard, score
from .nets import APPROACH, PUTT

NOISY = "noisy"


@dataclass(frozen=True, eq=False)
class StageRecord:
    label: str
    waveform: Waveform
    scores: ScoreCard | None = None
    point: PlanePoint | None = None
    artifact: np.ndarray | None = None  # raw Putt output for putt stages


@dataclass(eq=False)
class StageTrace:
    stages: list = field(default_factory=list)

    def __len__(self):
        return len(self.stages)

    def __getitem__(self, i):
        return self.stages[i]

    @property
    def labels(self):
        return [s.label for s in self.stages]

    @property
    def final(self):
        return self.stages[-1].waveform

    def by_label(self, label):
        for s in self.stages:
            if s.label == label:
                return s
        raise KeyError(label)

    def write_csv(self, path):
        cols = ["stage", "label", "x", "y", "si_sdr_db", "seg_snr_db", "stoi", "artifact_norm", "proximity_norm"]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for k, s in enumerate(self.stages):
                row = [k, s.label]
                row += [_fmt(s.point.x), _fmt(s.point.y)] if s.point else ["", ""]
                if s.scores:
                    sc = s.scores
                    row += [_fmt(v) for v in (sc.si_sdr_db, sc.seg_snr_db, sc.stoi, sc.artifact_norm, sc.proximity_norm)]
                else:
                    row += [""] * 5
                w.writerow(row)

    def spill(self, directory, stem):
        """Write every stage as ``<stem>.stage<k>.<label>.wav``."""
        directory = Path(directory)
        paths = []
        for k, s in enumerate(self.stages):
            p = directory / f"{stem}.stage{k}.{s.label}.wav"
            write_wav(s.waveform, p)
            paths.append(p)
        return paths


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, float) and math.isnan(v):
        return ""
    return f"{v:.15g}"


def _check(handle, role, noisy):
    if handle.role != role:
        raise RoleMismatch(f"expected a {role} handle, got {handle.role}")
    if len(noisy) % handle.alignment:
        raise LengthNotAligned(f"length {len(noisy)} must be divisible by {handle.alignment}")


class _Recorder:
    def __init__(self, noisy, clean):
        self.noisy = noisy
        self.clean = clean
        self.basis = None
        self.trace = StageTrace()

    def add(self, label, w, artifact=None):
        scores = point = None
        if self.clean is not None:
            scores = score(w, self.clean, self.noisy)
            if self.basis is None and label != NOISY:
                try:
                    self.basis = make_basis(w, self.clean, self.noisy)
                except (DegenerateBasis, DegenerateLine):
                    self.basis = False
            if self.basis:
                # noisy was recorded before the basis existed
                for i, s in enumerate(self.trace.stages):
                    if s.point is None:
                        self.trace.stages[i] = StageRecord(s.label, s.waveform, s.scores, project(s.waveform, self.basis), s.artifact)
                point = project(w, self.basis)
        self.trace.stages.append(StageRecord(label, w, scores, point, artifact))


def run_alternating(approach, putt, noisy, rounds=3, clean=None):
    """Approach, Putt, Approach, Putt, ... starting from ``noisy``.

    The Putt network is always conditioned on the original ``noisy``. The
    projection plane is fixed by the first Approach output.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    _check(approach, APPROACH, noisy)
    _check(putt, PUTT, noisy)
    rec = _Recorder(noisy, clean)
    rec.add(NOISY, noisy)
    current = noisy
    for i in range(1, rounds + 1):
        enhanced = approach(current)
        rec.add(f"approach_{i}", enhanced)
        xi = putt(enhanced, noisy)
        current = enhanced.with_samples(enhanced.samples - xi.samples)
        rec.add(f"putt_{i}", current, artifact=xi.samples)
    return rec.trace


def repeat_single(handle, noisy, rounds=3, clean=None):
    """Apply one model repeatedly; the control condition for alternation.

    Approach handles iterate ``Z <- Sp(Z)``. Putt handles iterate
    ``Z <- Z - Xi(Z; noisy)`` starting from ``Z = noisy``.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    _check(handle, handle.role, noisy)
    rec = _Recorder(noisy, clean)
    rec.add(NOISY, noisy)
    current = noisy
    for i in range(1, rounds + 1):
        if handle.role == APPROACH:
            current = handle(current)
            rec.add(f"approach_{i}", current)
        else:
            xi = handle(current, noisy)
            current = current.with_samples(current.samples - xi.samples)
            rec.add(f"putt_{i}", current, artifact=xi.samples)
    return rec.trace


METRIC_FIELDS = ("si_sdr_db", "seg_snr_db", "stoi", "artifact_norm", "proximity_norm")


def _stats(values):
    vals = np.array([v for v in values if v is not None and math.isfinite(v)], dtype=np.float64)
    if vals.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}


def aggregate(traces, snrs):
    """``{snr -> {stage -> {metric -> {mean, std, n}}}}`` plus an ``"all"`` group."""
    groups = defaultdict(list)
    for tr, snr in zip(traces, snrs):
        groups[_snr_key(snr)].append(tr)
        groups["all"].append(tr)
    report = {}
    for key, trs in groups.items():
        per_stage = {}
        for k, label in enumerate(trs[0].labels):
            cards = [t.stages[k].scores for t in trs]
            per_stage[label] = {m: _stats([getattr(c, m) for c in cards]) for m in METRIC_FIELDS}
        report[key] = per_stage
    return report


def _snr_key(snr):
    return "nan" if snr is None or math.isnan(snr) else f"{float(snr):g}"


def eval_corpus(approach, putt, corpus, rounds=3, jobs=1, baseline=None):
    """Alternate on every pair and aggregate ScoreCards per SNR and stage.

    ``baseline`` may be ``"approach"`` or ``"putt"`` to evaluate the
    single-model repetition instead. Returns ``(report, traces)``.
    """
    if not corpus:
        raise ValueError("empty corpus")

    def one(indexed):
        i, pair = indexed
        try:
            if baseline is None:
                return run_alternating(approach, putt, pair.noisy, rounds, pair.clean)
            handle = approach if baseline == APPROACH else putt
            return repeat_single(handle, pair.noisy, rounds, pair.clean)
        except Exception as e:
            raise RuntimeError(f"sample {i}: {e}") from e

    items = list(enumerate(corpus))
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            traces = list(pool.map(one, items))
    else:
        traces = [one(it) for it in items]
    return aggregate(traces, [p.snr_db for p in corpus]), traces


def write_report(report, path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
