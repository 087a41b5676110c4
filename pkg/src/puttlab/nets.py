"""The Approach enhancer and the Putt artifact predictor.

Both are waveform U-Nets built from CBP units (convolution, batch norm,
PReLU) with concatenating skip connections. The Approach variant maps
``[1, T]`` to ``[1, T]`` and unpools with transposed convolutions. The Putt
variant reads the stacked ``[enhanced, noisy]`` pair, adds dilated dense
blocks before pooling, a Bi-LSTM bottleneck, and unpools with sub-pixel
convolutions; its output is the predicted artifact.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audio import Waveform
from .errors import (
    CorruptCheckpoint,
    LengthMismatch,
    LengthNotAligned,
    RoleMismatch,
    ShapeMismatch,
    VersionMismatch,
)

APPROACH = "approach"
PUTT = "putt"
FORMAT_VERSION = 1
MAGIC = b"PUTT"


@dataclass(frozen=True)
class ArchConfig:
    variant: str = PUTT
    depth: int = 5
    channels: tuple = (16, 32, 64, 128, 256)
    kernel_size: int = 5
    pool_stride: int = 2
    lstm_layers: int = 2
    lstm_hidden: int | None = None
    dense_blocks: int = 3
    dense_dilations: tuple = (1, 2, 4)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "dense_dilations", tuple(int(d) for d in self.dense_dilations))
        if self.lstm_hidden is None:
            object.__setattr__(self, "lstm_hidden", self.channels[-1] if self.channels else 0)
        if self.variant not in (APPROACH, PUTT):
            raise ValueError(f"variant must be {APPROACH!r} or {PUTT!r}")
        if self.depth < 1 or len(self.channels) != self.depth:
            raise ValueError("depth must be >= 1 and match len(channels)")
        if self.pool_stride < 2:
            raise ValueError("pool_stride must be >= 2")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.variant == PUTT:
            if self.lstm_layers < 1 or self.dense_blocks < 1:
                raise ValueError("putt variant needs lstm_layers >= 1 and dense_blocks >= 1")
            if self.dense_blocks > self.depth:
                raise ValueError("at most one dense block per level")
            if not self.dense_dilations:
                raise ValueError("dense_dilations must be non-empty")
        elif self.lstm_layers != 0 or self.dense_blocks != 0:
            raise ValueError("approach variant has no LSTM or dense blocks")

    @classmethod
    def approach(cls, **kw):
        kw.setdefault("lstm_layers", 0)
        kw.setdefault("dense_blocks", 0)
        return cls(variant=APPROACH, **kw)

    @classmethod
    def putt(cls, **kw):
        return cls(variant=PUTT, **kw)

    @classmethod
    def tiny(cls, variant, channels=(8, 16, 32), **kw):
        """Desk-scale architecture: one level per entry of ``channels``."""
        channels = tuple(channels)
        kw.setdefault("depth", len(channels))
        if variant == PUTT:
            kw.setdefault("dense_blocks", min(3, len(channels)))
            return cls.putt(channels=channels, **kw)
        return cls.approach(channels=channels, **kw)

    @property
    def in_channels(self):
        return 1 if self.variant == APPROACH else 2

    @property
    def alignment(self):
        return self.pool_stride**self.depth

    def dense_levels(self):
        return list(range(self.dense_blocks))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(eq=False)
class ModelParams:
    arch: ArchConfig
    tensors: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __getitem__(self, name):
        return self.tensors[name]

    def trainable(self):
        return [(n, t) for n, t in self.tensors.items() if t.requires_grad]

    def num_parameters(self):
        return sum(t.size for _, t in self.trainable())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self):
        tensors = {}
        for n, t in self.tensors.items():
            c = ad.Tensor(t.data.copy(), requires_grad=t.requires_grad, name=n)
            tensors[n] = c
        return ModelParams(self.arch, tensors, self.version)

    def equals(self, other):
        if self.arch != other.arch or self.tensors.keys() != other.tensors.keys():
            return False
        return all(np.array_equal(t.data, other.tensors[n].data) for n, t in self.tensors.items())


# --------------------------------------------------------------------------
# parameter layout


def _slots(arch):
    """Yield ``(name, shape, kind, fan_in)`` for every tensor the arch needs."""
    K, s = arch.kernel_size, arch.pool_stride
    ch = arch.channels

    def cbp(prefix, c_in, c_out, k=K, conv_out=None):
        conv_out = conv_out or c_out
        yield f"{prefix}.conv.weight", (conv_out, c_in, k), "weight", c_in * k
        yield f"{prefix}.conv.bias", (conv_out,), "bias", None
        yield f"{prefix}.bn.gamma", (c_out,), "gamma", None
        yield f"{prefix}.bn.beta", (c_out,), "beta", None
        yield f"{prefix}.bn.running_mean", (c_out,), "running_mean", None
        yield f"{prefix}.bn.running_var", (c_out,), "running_var", None
        yield f"{prefix}.prelu.alpha", (c_out,), "alpha", None

    c_in = arch.in_channels
    for lvl in range(arch.depth):
        c = ch[lvl]
        yield from cbp(f"enc{lvl}.cbp0", c_in, c)
        yield from cbp(f"enc{lvl}.cbp1", c, c)
        if lvl in arch.dense_levels():
            for j, _ in enumerate(arch.dense_dilations):
                yield from cbp(f"dense{lvl}.layer{j}", c * (j + 1), c)
            n = len(arch.dense_dilations)
            yield f"dense{lvl}.merge.weight", (c, c * (n + 1), 1), "weight", c * (n + 1)
            yield f"dense{lvl}.merge.bias", (c,), "bias", None
        yield from cbp(f"pool{lvl}", c, c)
        c_in = c

    if arch.variant == PUTT:
        H = arch.lstm_hidden
        feat = ch[-1]
        for k in range(arch.lstm_layers):
            for d in ("fwd", "bwd"):
                yield f"lstm{k}.{d}.w_ih", (4 * H, feat), "lstm", H
                yield f"lstm{k}.{d}.w_hh", (4 * H, H), "lstm", H
                yield f"lstm{k}.{d}.bias", (4 * H,), "bias", None
            feat = 2 * H
        yield "lstm.proj.weight", (ch[-1], 2 * H, 1), "weight", 2 * H
        yield "lstm.proj.bias", (ch[-1],), "bias", None

    for lvl in reversed(range(arch.depth)):
        c = ch[lvl]
        if arch.variant == APPROACH:
            yield f"unpool{lvl}.tconv.weight", (c, c, 2 * s), "weight", c * 2 * s
            yield f"unpool{lvl}.tconv.bias", (c,), "bias", None
            for name, shape, kind, fan in cbp(f"unpool{lvl}", c, c):
                if ".conv." not in name:
                    yield name, shape, kind, fan
        else:
            yield from cbp(f"unpool{lvl}", c, c, conv_out=s * c)
        c_out = ch[lvl - 1] if lvl > 0 else ch[0]
        yield from cbp(f"dec{lvl}.cbp0", 2 * c, c)
        yield from cbp(f"dec{lvl}.cbp1", c, c_out)
    yield "out.weight", (1, ch[0], 1), "weight", ch[0]
    yield "out.bias", (1,), "bias", None


def param_layout(arch):
    return [(n, shape) for n, shape, _, _ in _slots(arch)]


def init_params(arch, seed=0):
    """Uniform(-b, b) weights with b = sqrt(1/fan_in); zero biases; PReLU slope 0.25."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, kind, fan_in in _slots(arch):
        trainable = True
        if kind in ("weight", "lstm"):
            bound = np.sqrt(1.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif kind in ("bias", "beta", "running_mean"):
            data = np.zeros(shape)
            trainable = kind != "running_mean"
        elif kind in ("gamma", "running_var"):
            data = np.ones(shape)
            trainable = kind == "gamma"
        elif kind == "alpha":
            data = np.full(shape, 0.25)
        else:  # pragma: no cover
            raise AssertionError(kind)
        tensors[name] = ad.Tensor(data, requires_grad=trainable, name=name)
    return ModelParams(arch, tensors)


def count_blocks(arch):
    """Structural census of an architecture (used to audit parameter layouts)."""
    names = [n for n, _ in param_layout(arch)]
    prefixes = {n.split(".")[0] for n in names}
    return {
        "encoders": sum(1 for p in prefixes if p.startswith("enc")),
        "decoders": sum(1 for p in prefixes if p.startswith("dec")),
        "lstm_layers": len({p for p in prefixes if p.startswith("lstm") and p != "lstm"}),
        "dense_blocks": sum(1 for p in prefixes if p.startswith("dense")),
        "pool": sum(1 for p in prefixes if p.startswith("pool")),
        "unpool": sum(1 for p in prefixes if p.startswith("unpool")),
    }


# --------------------------------------------------------------------------
# forward pass


def _cbp(p, prefix, x, training, stride=1, dilation=1):
    t = p.tensors
    K = t[f"{prefix}.conv.weight"].shape[2]
    pad = dilation * (K - 1) // 2
    y = ad.conv1d(x, t[f"{prefix}.conv.weight"], t[f"{prefix}.conv.bias"], stride=stride, dilation=dilation, padding=pad)
    return _bp(p, prefix, y, training)


def _bp(p, prefix, y, training):
    t = p.tensors
    y = ad.batch_norm(
        y,
        t[f"{prefix}.bn.gamma"],
        t[f"{prefix}.bn.beta"],
        t[f"{prefix}.bn.running_mean"].data,
        t[f"{prefix}.bn.running_var"].data,
        training,
    )
    return ad.prelu(y, t[f"{prefix}.prelu.alpha"])


def _dense_block(p, lvl, x, training):
    feats = [x]
    for j, d in enumerate(p.arch.dense_dilations):
        inp = feats[0] if j == 0 else ad.concat(feats, axis=1)
        feats.append(_cbp(p, f"dense{lvl}.layer{j}", inp, training, dilation=d))
    t = p.tensors
    return ad.conv1d(ad.concat(feats, axis=1), t[f"dense{lvl}.merge.weight"], t[f"dense{lvl}.merge.bias"])


def _bottleneck(p, x, training):
    t = p.tensors
    seq = x.transpose(0, 2, 1)  # [B, L, C]
    h = seq
    for k in range(p.arch.lstm_layers):
        fwd = tuple(t[f"lstm{k}.{d}"] for d in ("fwd.w_ih", "fwd.w_hh", "fwd.bias"))
        bwd = tuple(t[f"lstm{k}.{d}"] for d in ("bwd.w_ih", "bwd.w_hh", "bwd.bias"))
        h = ad.bilstm(h, fwd, bwd)
    proj = ad.conv1d(h.transpose(0, 2, 1), t["lstm.proj.weight"], t["lstm.proj.bias"])
    return x + proj


def _unpool(p, lvl, x, training):
    t = p.tensors
    s = p.arch.pool_stride
    if p.arch.variant == APPROACH:
        L = x.shape[2]
        y = ad.transposed_conv1d(x, t[f"unpool{lvl}.tconv.weight"], t[f"unpool{lvl}.tconv.bias"], stride=s, padding=s // 2)
        if y.shape[2] != s * L:
            y = y[:, :, : s * L]
        return _bp(p, f"unpool{lvl}", y, training)
    y = ad.subpixel_conv1d(x, t[f"unpool{lvl}.conv.weight"], t[f"unpool{lvl}.conv.bias"], upscale=s)
    return _bp(p, f"unpool{lvl}", y, training)


def unet(p, x, training=False):
    """Forward pass on a batch ``x`` of shape ``[B, C_in, T]``; returns ``[B, 1, T]``."""
    arch = p.arch
    x = ad.as_tensor(x)
    if x.ndim != 3 or x.shape[1] != arch.in_channels:
        raise ShapeMismatch(f"expected [B, {arch.in_channels}, T], got {x.shape}")
    T = x.shape[2]
    if T % arch.alignment:
        raise LengthNotAligned(f"length {T} must be divisible by {arch.pool_stride}^{arch.depth} = {arch.alignment}")
    dense = set(arch.dense_levels())
    skips = []
    h = x
    for lvl in range(arch.depth):
        h = _cbp(p, f"enc{lvl}.cbp0", h, training)
        h = _cbp(p, f"enc{lvl}.cbp1", h, training)
        skips.append(h)
        if lvl in dense:
            h = _dense_block(p, lvl, h, training)
        h = _cbp(p, f"pool{lvl}", h, training, stride=arch.pool_stride)
    if arch.variant == PUTT:
        h = _bottleneck(p, h, training)
    for lvl in reversed(range(arch.depth)):
        h = _unpool(p, lvl, h, training)
        h = ad.concat([h, skips[lvl]], axis=1)
        h = _cbp(p, f"dec{lvl}.cbp0", h, training)
        h = _cbp(p, f"dec{lvl}.cbp1", h, training)
    return ad.conv1d(h, p.tensors["out.weight"], p.tensors["out.bias"])


def _check_role(p, role):
    if p.arch.variant != role:
        raise RoleMismatch(f"expected {role} parameters, got {p.arch.variant}")


def approach_batch(p, noisy):
    """Sp applied to a ``[B, T]`` array in eval mode; returns ``[B, T]``."""
    _check_role(p, APPROACH)
    x = np.asarray(noisy, dtype=np.float64)
    with ad.no_grad():
        return unet(p, x[:, None, :]).data[:, 0, :]


def putt_batch(p, enhanced, noisy):
    """Artifact prediction for ``[B, T]`` arrays in eval mode; returns ``[B, T]``."""
    _check_role(p, PUTT)
    e = np.asarray(enhanced, dtype=np.float64)
    x = np.asarray(noisy, dtype=np.float64)
    if e.shape != x.shape:
        raise LengthMismatch(f"enhanced {e.shape} and noisy {x.shape} differ")
    with ad.no_grad():
        return unet(p, np.stack([e, x], axis=1)).data[:, 0, :]


def approach_forward(p, x):
    """X~ = Sp(X) for one waveform."""
    return x.with_samples(approach_batch(p, x.samples[None])[0])


def putt_forward(p, enhanced, noisy):
    """Predicted artifact for one (enhanced, noisy) pair."""
    if len(enhanced) != len(noisy):
        raise LengthMismatch(f"enhanced has {len(enhanced)} samples, noisy has {len(noisy)}")
    return enhanced.with_samples(putt_batch(p, enhanced.samples[None], noisy.samples[None])[0])


def apply_putt(p, enhanced, noisy):
    """enhanced minus the predicted artifact."""
    xi = putt_forward(p, enhanced, noisy)
    return enhanced.with_samples(enhanced.samples - xi.samples)


@dataclass(frozen=True, eq=False)
class EnhancerHandle:
    """A trained network bundled with its role, callable on waveforms.

    Approach handles take ``(x)`` and return Sp(x); Putt handles take
    ``(enhanced, noisy)`` and return the predicted artifact.
    """

    params: ModelParams
    role: str

    def __post_init__(self):
        _check_role(self.params, self.role)

    @classmethod
    def load(cls, path):
        p = load_params(path)
        return cls(p, p.arch.variant)

    @property
    def alignment(self):
        return self.params.arch.alignment

    def __call__(self, *inputs):
        if self.role == APPROACH:
            return approach_forward(self.params, *inputs)
        return putt_forward(self.params, *inputs)

    def batch(self, *arrays):
        if self.role == APPROACH:
            return approach_batch(self.params, *arrays)
        return putt_batch(self.params, *arrays)


# --------------------------------------------------------------------------
# checkpoints


def params_to_bytes(p):
    arch = json.dumps(p.arch.to_dict(), sort_keys=True).encode()
    out = [MAGIC, struct.pack("<I", p.version), struct.pack("<I", len(arch)), arch]
    out.append(struct.pack("<I", len(p.tensors)))
    for name, t in p.tensors.items():
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", 1 if t.requires_grad else 0))
        out.append(struct.pack("<I", t.ndim))
        out.append(struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def params_from_bytes(blob):
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptCheckpoint("missing PUTT magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("CRC32 mismatch")
    try:
        off = 8
        (n,) = struct.unpack_from("<I", body, off)
        off += 4
        arch = ArchConfig.from_dict(json.loads(body[off : off + n]))
        off += n
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off : off + n].decode()
            off += n
            trainable, rank = struct.unpack_from("<BI", body, off)
            off += 5
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
            tensors[name] = ad.Tensor(data, requires_grad=bool(trainable), name=name)
    except (struct.error, ValueError, TypeError, UnicodeDecodeError) as e:
        raise CorruptCheckpoint(f"malformed checkpoint body: {e}") from e
    if off != len(body):
        raise CorruptCheckpoint("trailing bytes after tensor records")
    expected = dict(param_layout(arch))
    if expected.keys() != tensors.keys() or any(tuple(expected[k]) != tensors[k].shape for k in tensors):
        raise CorruptCheckpoint("tensor set does not match the stored architecture")
    return ModelParams(arch, tensors, version)


def save_params(p, path):
    Path(path).write_bytes(params_to_bytes(p))


def load_params(path):
    return params_from_bytes(Path(path).read_bytes())
