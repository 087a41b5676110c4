"""Losses, AdamW, the re-pairing batch stream and the two training loops."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audio import TRAIN_SNRS_DB, mix_at_snr
from .errors import NonFiniteLoss, SegmentTooLong, ShapeMismatch
from .geometry import artifact_vector, line_epsilon
from .nets import APPROACH, PUTT, ArchConfig, ModelParams, approach_batch, init_params, load_params, save_params, unet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    segment_length: int = 8192
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1
    seed: int = 0
    grad_clip: float | None = None
    snr_levels_db: tuple = TRAIN_SNRS_DB
    checkpoint_every: int = 0

    def __post_init__(self):
        self.snr_levels_db = tuple(float(s) for s in self.snr_levels_db)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.segment_length < 1:
            raise ValueError("segment_length must be >= 1")
        if self.learning_rate <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and eps must be positive, weight_decay non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if not self.snr_levels_db:
            raise ValueError("snr_levels_db must be non-empty")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["snr_levels_db"] = list(self.snr_levels_db)
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    wall_time: float
    batches: int
    skipped: int = 0


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    checkpoint: str | None = None
    params: ModelParams | None = field(default=None, repr=False)

    def to_jsonl(self):
        lines = []
        for r in self.epochs:
            d = asdict(r)
            d["checkpoint"] = self.checkpoint
            lines.append(json.dumps(d))
        return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# losses


def _check_shapes(*arrays):
    shapes = {tuple(ad.as_tensor(a).shape) for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatch(f"shape mismatch: {sorted(shapes)}")


def loss_approach(predicted, clean):
    """Batch mean of ``|predicted - clean|^2 / T``."""
    _check_shapes(predicted, clean)
    return ad.mse(predicted, clean)


def loss_putt(predicted_artifact, enhanced, clean, noisy):
    """Batch mean of ``|artifact(enhanced) - predicted|^2 / T``."""
    _check_shapes(predicted_artifact, enhanced, clean, noisy)
    target = artifact_vector(enhanced, clean, noisy)
    return ad.mse(predicted_artifact, target)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params, grads, state, cfg):
    """One AdamW update, in place.

    Adam moments with bias correction first, then the decoupled decay
    ``p <- p - lr * wd * p``. ``grads`` maps tensor names to arrays.
    """
    state.step += 1
    t = state.step
    b1, b2, lr = cfg.beta1, cfg.beta2, cfg.learning_rate
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, tensor in params.trainable():
        g = grads.get(name)
        if g is None:
            g = np.zeros(tensor.shape)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(tensor.shape)
            state.v[name] = np.zeros(tensor.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p = tensor.data
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay:
            p -= lr * cfg.weight_decay * p


def collect_grads(params, clip=None):
    grads = {n: (t.grad if t.grad is not None else np.zeros(t.shape)) for n, t in params.trainable()}
    if clip is not None:
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > clip:
            grads = {n: g * (clip / total) for n, g in grads.items()}
    return grads


# --------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    clean: np.ndarray
    noise: np.ndarray
    noisy: np.ndarray
    snr_db: np.ndarray


def make_batches(corpus, cfg, epoch):
    """Yield shuffled batches for one epoch.

    Each epoch pairs clean signal ``i`` with the noise of pair ``perm[i]``,
    re-mixes at an SNR drawn from ``cfg.snr_levels_db`` and cuts
    ``segment_length`` pieces. The stream is a pure function of
    ``(cfg.seed, epoch)`` and the corpus.
    """
    if not corpus:
        raise ValueError("empty corpus")
    seg = cfg.segment_length
    if all(min(len(p.clean), len(p.noise)) < seg for p in corpus):
        raise SegmentTooLong(f"segment_length {seg} exceeds every signal length")
    rng = np.random.default_rng([cfg.seed, epoch])
    perm = rng.permutation(len(corpus))
    levels = np.asarray(cfg.snr_levels_db)
    segments = []
    for i, j in enumerate(perm):
        clean = corpus[i].clean
        noise = corpus[j].noise
        n = min(len(clean), len(noise))
        snr = float(rng.choice(levels))
        if n < seg:
            continue
        if len(clean) != n:
            clean = clean.with_samples(clean.samples[:n])
        if len(noise) != n:
            noise = noise.with_samples(noise.samples[:n])
        pair = mix_at_snr(clean, noise, snr)
        count = n // seg
        offset = int(rng.integers(0, n - count * seg + 1))
        for k in range(count):
            sl = slice(offset + k * seg, offset + (k + 1) * seg)
            segments.append((pair.clean.samples[sl], pair.noise.samples[sl], pair.noisy.samples[sl], snr))
    order = rng.permutation(len(segments))
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        picked = [segments[k] for k in idx]
        yield Batch(
            clean=np.stack([s[0] for s in picked]),
            noise=np.stack([s[1] for s in picked]),
            noisy=np.stack([s[2] for s in picked]),
            snr_db=np.array([s[3] for s in picked]),
        )


def fixed_batches(corpus, batch_size):
    """Batches over the corpus as given (no re-pairing), for validation."""
    for start in range(0, len(corpus), batch_size):
        chunk = corpus[start : start + batch_size]
        yield Batch(
            clean=np.stack([p.clean.samples for p in chunk]),
            noise=np.stack([p.noise.samples for p in chunk]),
            noisy=np.stack([p.noisy.samples for p in chunk]),
            snr_db=np.array([p.snr_db for p in chunk]),
        )


def non_degenerate(batch):
    """Mask of batch rows whose clean/noisy line is well defined."""
    norms = np.linalg.norm(batch.clean - batch.noisy, axis=1)
    return norms > line_epsilon(batch.clean.shape[1])


# --------------------------------------------------------------------------
# loops


def _run(params, corpus, cfg, step_loss, val_loss, val_corpus, checkpoint_path, label):
    report = TrainReport(params=params)
    state = AdamState()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total, count, batches, skipped = 0.0, 0, 0, 0
        for bi, batch in enumerate(make_batches(corpus, cfg, epoch)):
            params.zero_grad()
            loss, n, dropped = step_loss(params, batch)
            skipped += dropped
            if loss is None:
                continue
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(bi, value)
            loss.backward()
            optimizer_step(params, collect_grads(params, cfg.grad_clip), state, cfg)
            params.zero_grad()
            total += value * n
            count += n
            batches += 1
        val = val_loss(params, val_corpus) if val_corpus else None
        rec = EpochRecord(epoch, total / max(count, 1), val, time.perf_counter() - t0, batches, skipped)
        report.epochs.append(rec)
        log.info(
            "%s epoch %d: train %.6g%s (%.1fs)",
            label,
            epoch,
            rec.train_loss,
            "" if val is None else f", val {val:.6g}",
            rec.wall_time,
        )
        if checkpoint_path and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_params(params, checkpoint_path)
    if checkpoint_path:
        save_params(params, checkpoint_path)
        report.checkpoint = str(checkpoint_path)
    return report


def train_approach(corpus, cfg, arch=None, params=None, checkpoint_path=None, val_corpus=None):
    """Fit Sp to map noisy segments onto their clean counterparts (MSE)."""
    if params is None:
        params = init_params(arch or ArchConfig.approach(), cfg.seed)
    if params.arch.variant != APPROACH:
        raise ValueError("train_approach needs approach parameters")

    def step(p, b):
        pred = unet(p, b.noisy[:, None, :], training=True)
        return loss_approach(pred, b.clean[:, None, :]), len(b.clean), 0

    def val(p, corpus):
        losses = []
        for b in fixed_batches(corpus, cfg.batch_size):
            pred = approach_batch(p, b.noisy)
            losses.append(float(np.mean((pred - b.clean) ** 2)) * len(b.clean))
        return sum(losses) / len(corpus)

    return _run(params, corpus, cfg, step, val, val_corpus, checkpoint_path, "approach")


def _putt_inputs(approach, b, targets):
    keep = non_degenerate(b)
    dropped = int((~keep).sum())
    if dropped:
        log.info("dropping %d degenerate pairs from a putt batch", dropped)
    if not keep.any():
        return None, dropped
    clean, noisy = b.clean[keep], b.noisy[keep]
    enhanced = approach_batch(approach, noisy)
    if targets == "artifact":
        target = artifact_vector(enhanced, clean, noisy)
    elif targets == "zero":
        target = np.zeros_like(enhanced)
    else:
        raise ValueError(f"unknown putt targets {targets!r}")
    return (np.stack([enhanced, noisy], axis=1), target[:, None, :]), dropped


def train_putt(approach, corpus, cfg, arch=None, params=None, checkpoint_path=None, val_corpus=None, targets="artifact"):
    """Fit the Putt network to the artifacts of a frozen Approach model.

    ``approach`` is a checkpoint path or approach ModelParams; it is only
    ever run in eval mode. ``targets="zero"`` replaces the artifact targets
    by zeros (a sanity mode used by tests).
    """
    if not isinstance(approach, ModelParams):
        approach = load_params(approach)
    if approach.arch.variant != APPROACH:
        raise ValueError("train_putt needs an approach checkpoint")
    if params is None:
        params = init_params(arch or ArchConfig.putt(), cfg.seed)
    if params.arch.variant != PUTT:
        raise ValueError("train_putt needs putt parameters")

    def step(p, b):
        inputs, dropped = _putt_inputs(approach, b, targets)
        if inputs is None:
            return None, 0, dropped
        x, target = inputs
        pred = unet(p, x, training=True)
        return ad.mse(pred, target), len(x), dropped

    def val(p, corpus):
        total, n = 0.0, 0
        for b in fixed_batches(corpus, cfg.batch_size):
            inputs, _ = _putt_inputs(approach, b, targets)
            if inputs is None:
                continue
            x, target = inputs
            with ad.no_grad():
                pred = unet(p, x).data
            total += float(np.mean((pred - target) ** 2)) * len(x)
            n += len(x)
        return total / max(n, 1)

    return _run(params, corpus, cfg, step, val, val_corpus, checkpoint_path, "putt")
