"""Command-line entry point: ``puttlab <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error. Machine
readable payloads go to stdout, progress and diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .audio import TRAIN_SNRS_DB, CorpusSpec, load_manifest, read_wav, write_corpus, write_wav
from .errors import DegenerateLine, PuttlabError
from .geometry import (
    decompose,
    default_grid,
    grid_points,
    make_basis,
    sample_field,
    write_field_csv,
)
from .metrics import score
from .nets import APPROACH, PUTT, ArchConfig, EnhancerHandle
from .pipeline import eval_corpus, run_alternating, write_report
from .training import TrainConfig, train_approach, train_putt

log = logging.getLogger("puttlab")

SEED_ENV = "PUTTLAB_SEED"
HOOKS_ENV = "PUTTLAB_TEST_HOOKS"
STUBS = ("identity", "clean")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# flag parsing helpers


def _float_list(text):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list must be non-empty")
    return vals


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _pair_ref(text):
    """``MANIFEST[:INDEX]`` selecting one pair of a corpus."""
    path, _, idx = text.rpartition(":")
    if path and idx.isdigit():
        return Path(path), int(idx)
    return Path(text), 0


def _grid_spec(text):
    """``NXxNY`` with optional ``@X0:X1,Y0:Y1`` plane ranges."""
    dims, _, ranges = text.partition("@")
    try:
        nx, ny = (int(v) for v in dims.lower().split("x"))
        if nx < 1 or ny < 1:
            raise ValueError
        span = None
        if ranges:
            xs, ys = ranges.split(",")
            span = (tuple(float(v) for v in xs.split(":")), tuple(float(v) for v in ys.split(":")))
            if any(len(r) != 2 for r in span):
                raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 21x21 or 21x21@-1:1,-1:1, got {text!r}") from None
    return nx, ny, span


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(a):
    spec = CorpusSpec(count=a.count, segment_length=a.segment_len, snr_levels_db=a.snr, seed=a.seed)
    manifest = write_corpus(spec, a.out)
    log.info("wrote %d pairs to %s", a.count, a.out)
    print(json.dumps({"manifest": str(manifest), "count": a.count}))


def _train_config(a):
    doc = {}
    arch = None
    if a.config:
        doc = json.loads(Path(a.config).read_text())
        arch = doc.pop("arch", None)
    overrides = {
        "epochs": a.epochs,
        "batch_size": a.batch_size,
        "learning_rate": a.lr,
        "weight_decay": a.weight_decay,
        "segment_length": a.segment_len,
        "grad_clip": a.grad_clip,
        "seed": a.seed,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" not in doc:
        doc["seed"] = _default_seed()
    return TrainConfig.from_dict(doc), arch


def _arch(variant, a, from_config):
    if a.channels:
        return ArchConfig.tiny(variant, channels=a.channels)
    if from_config:
        return ArchConfig.from_dict({**from_config, "variant": variant})
    return ArchConfig.approach() if variant == APPROACH else ArchConfig.putt()


def _emit_report(rep):
    print(json.dumps({"checkpoint": rep.checkpoint, "epochs": [json.loads(s) for s in rep.to_jsonl().splitlines()]}))


def cmd_train_approach(a):
    cfg, arch = _train_config(a)
    corpus = load_manifest(a.corpus)
    val = load_manifest(a.val) if a.val else None
    rep = train_approach(corpus, cfg, arch=_arch(APPROACH, a, arch), checkpoint_path=a.out, val_corpus=val)
    _emit_report(rep)


def cmd_train_putt(a):
    cfg, arch = _train_config(a)
    corpus = load_manifest(a.corpus)
    val = load_manifest(a.val) if a.val else None
    rep = train_putt(a.approach, corpus, cfg, arch=_arch(PUTT, a, arch), checkpoint_path=a.out, val_corpus=val)
    _emit_report(rep)


def _handles(a):
    return EnhancerHandle.load(a.approach), EnhancerHandle.load(a.putt)


def cmd_enhance(a):
    approach, putt = _handles(a)
    noisy = read_wav(a.input)
    trace = run_alternating(approach, putt, noisy, rounds=a.stages)
    write_wav(trace.final, a.out)
    if a.trace:
        trace.write_csv(a.trace)
    log.info("enhanced %s (%d stages) -> %s", a.input, a.stages, a.out)


def cmd_eval(a):
    approach, putt = _handles(a)
    corpus = load_manifest(a.corpus)
    baseline = None if a.baseline == "none" else a.baseline
    report, _ = eval_corpus(approach, putt, corpus, rounds=a.stages, jobs=a.jobs, baseline=baseline)
    if a.out:
        write_report(report, a.out)
    else:
        print(json.dumps(report, sort_keys=True))


def cmd_decompose(a):
    e, s, x = read_wav(a.enhanced), read_wav(a.clean), read_wav(a.noisy)
    decompose(e, s, x)  # raises DegenerateLine with a message when S = X
    print(json.dumps(score(e, s, x).to_json()))


def _load_pair(ref):
    path, idx = ref
    corpus = load_manifest(path)
    if not 0 <= idx < len(corpus):
        raise PuttlabError(f"pair index {idx} outside corpus of {len(corpus)}")
    return corpus[idx]


def _stub_reference(pair):
    """Fixed off-line reference for the stub hook: midpoint plus a seeded orthogonal offset."""
    s, x = pair.clean.samples, pair.noisy.samples
    mid = 0.5 * (s + x)
    r = np.random.default_rng(0).standard_normal(s.size)
    r -= decompose(mid + r, s, x).proximity - decompose(mid, s, x).proximity
    r *= 0.25 * np.linalg.norm(x - s) / max(np.linalg.norm(r), 1e-300)
    return pair.clean.with_samples(mid + r)


def cmd_field(a):
    pair = _load_pair(a.sample)
    s, x = pair.clean, pair.noisy
    if a.stub_enhancer:
        reference = EnhancerHandle.load(a.approach)(x) if a.approach else _stub_reference(pair)
        if a.stub_enhancer == "identity":
            enhancer = lambda z: z  # noqa: E731
        else:
            enhancer = lambda z: s  # noqa: E731
    elif a.putt_pair:
        approach, putt = (EnhancerHandle.load(p) for p in a.putt_pair)
        reference = approach(x)
        enhancer = lambda z: z.with_samples(z.samples - putt(z, x).samples)  # noqa: E731
    else:
        approach = EnhancerHandle.load(a.approach)
        reference = approach(x)
        enhancer = approach
    basis = make_basis(reference, s, x)
    nx, ny, span = a.grid
    grid = default_grid(reference, s, x, nx, ny) if span is None else grid_points(span[0], span[1], nx, ny)
    samples = sample_field(enhancer, basis, grid, s.sample_rate, jobs=a.jobs)
    write_field_csv(samples, a.out)
    log.info("wrote %d field vectors to %s", len(samples), a.out)


def cmd_trace(a):
    approach, putt = _handles(a)
    pair = _load_pair(a.pair)
    trace = run_alternating(approach, putt, pair.noisy, rounds=a.stages, clean=pair.clean)
    trace.write_csv(a.out)
    log.info("wrote %d stages to %s", len(trace), a.out)


# --------------------------------------------------------------------------
# parser


def _train_flags(p):
    p.add_argument("--corpus", required=True, help="training manifest.json")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--config", help="JSON with TrainConfig fields (plus optional 'arch')")
    p.add_argument("--val", help="validation manifest.json")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--segment-len", type=int)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV}, then 0")
    p.add_argument("--channels", type=_int_list, help="per-level channels, e.g. 8,16,32 (sets depth)")


def build_parser():
    parser = _Parser(prog="puttlab", description="Approach/Putt speech enhancement toolkit.")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic clean/noise corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--segment-len", type=int, default=8192)
    p.add_argument("--snr", type=_float_list, default=TRAIN_SNRS_DB)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-approach", help="train the first-stage network")
    _train_flags(p)
    p.set_defaults(func=cmd_train_approach)

    p = sub.add_parser("train-putt", help="train the artifact-removal network")
    _train_flags(p)
    p.add_argument("--approach", required=True, help="frozen approach checkpoint")
    p.set_defaults(func=cmd_train_putt)

    p = sub.add_parser("enhance", help="alternate approach and putt on one WAV")
    p.add_argument("--approach", required=True)
    p.add_argument("--putt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--trace", help="optional per-stage CSV")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="per-stage metrics over a corpus")
    p.add_argument("--approach", required=True)
    p.add_argument("--putt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--out", help="report path (stdout when omitted)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--baseline", choices=("none", APPROACH, PUTT), default="none")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decompose", help="print the score card of one enhanced WAV")
    p.add_argument("--enhanced", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--noisy", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("field", help="sample an enhancer's vector field on the diagnostic plane")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--approach", help="field of the approach network")
    src.add_argument("--putt-pair", nargs=2, metavar=("APPROACH", "PUTT"), help="field of Z -> Z - Xi(Z; X)")
    p.add_argument("--sample", type=_pair_ref, required=True, help="MANIFEST[:INDEX]")
    p.add_argument("--grid", type=_grid_spec, default=(21, 21, None), help="NXxNY[@X0:X1,Y0:Y1]")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--stub-enhancer", choices=STUBS, help=f"test hook, needs {HOOKS_ENV}=1")
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("trace", help="per-stage trajectory and metrics for one pair")
    p.add_argument("--approach", required=True)
    p.add_argument("--putt", required=True)
    p.add_argument("--pair", type=_pair_ref, required=True, help="MANIFEST[:INDEX]")
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)
    return parser


def _validate(a):
    for name in ("stages", "jobs", "count", "epochs", "batch_size", "segment_len"):
        v = getattr(a, name, None)
        if v is not None and v < (0 if name in ("count", "epochs") else 1):
            raise UsageError(f"--{name.replace('_', '-')} out of range: {v}")
    if a.command == "synth" and a.seed is None:
        a.seed = _default_seed()
    if a.command == "field":
        if a.stub_enhancer and os.environ.get(HOOKS_ENV) != "1":
            raise UsageError(f"--stub-enhancer is a test hook; set {HOOKS_ENV}=1")
        if not (a.stub_enhancer or a.approach or a.putt_pair):
            raise UsageError("field needs --approach, --putt-pair or --stub-enhancer")


def main(argv=None):
    try:
        a = build_parser().parse_args(argv)
        _validate(a)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 2
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING if a.quiet else logging.INFO, format="%(message)s", force=True)
    try:
        a.func(a)
    except DegenerateLine as e:
        print(f"DegenerateLine: {e}", file=sys.stderr)
        return 1
    except (PuttlabError, OSError, ValueError, KeyError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
