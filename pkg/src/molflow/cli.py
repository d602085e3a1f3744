"""Command-line entry point.

    molflow corpus        --config C --seed N --out DIR
    molflow train-teacher --config C --corpus DIR --out teacher.ckpt
    molflow distill       --config C --teacher teacher.ckpt --kind non-affine --out student.ckpt
    molflow synthesize    --student student.ckpt --cond clip.wav --seed N --out out.wav
    molflow evaluate      --student student.ckpt --teacher teacher.ckpt --corpus DIR

Exit codes: 0 ok, 1 user error, 2 numerical failure. Training logs are
line-delimited JSON; wall-clock times are only recorded with ``--timing`` so
seeded runs reproduce byte-identical logs.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .conditioner import KINDS, ConditionerConfig, load_checkpoint, save_checkpoint
from .config import dump_config, load_config
from .distill import corpus_batches, distill, teacher_batches
from .errors import CheckpointError, NumericalError, UserError
from .evaluation import evaluate, format_report, synthesize
from .flow import FlowStack
from .optim import AdamState
from .signal import (Waveform, cond_for, make_synthetic_corpus, read_corpus, wav_read,
                     wav_write, write_corpus)
from .teacher import Teacher, teacher_fit_mle

EXIT_OK, EXIT_USER, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


class _JsonLog:
    def __init__(self, path):
        self.path = Path(path) if path else None
        self.fh = None

    def __enter__(self):
        if self.path:
            try:
                self.fh = open(self.path, "w")
            except OSError as exc:
                raise UserError(f"cannot write log {self.path}: {exc}") from exc
        return self

    def __call__(self, rec):
        if self.fh:
            self.fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def __exit__(self, *exc):
        if self.fh:
            self.fh.close()


def _clock(args):
    return time.perf_counter if getattr(args, "timing", False) else None


def _log_path(args):
    return args.log if args.log else str(args.out) + ".log.jsonl"


def _dataset(clips):
    return [(c.waveform.samples, c.cond) for c in clips]


# --- checkpoints ------------------------------------------------------------

def save_teacher(path, teacher: Teacher, extra=None):
    meta = {"type": "teacher", "config": dataclasses.asdict(teacher.config), **(extra or {})}
    save_checkpoint(path, teacher.params, meta)


def load_teacher(path) -> Teacher:
    params, meta, _ = load_checkpoint(path)
    if meta.get("type") != "teacher":
        raise CheckpointError(f"{path} is not a teacher checkpoint")
    teacher = Teacher(ConditionerConfig(**meta["config"]), params)
    _check_slices(path, teacher.params, Teacher.zeroed(teacher.config).params)
    return teacher


def save_student(path, student: FlowStack, step, opt_state: AdamState | None, extra=None):
    meta = {"type": "student", "kind": student.kind, "step": int(step),
            "flows": [dataclasses.asdict(l.config) for l in student.layers],
            "adam_t": opt_state.t if opt_state else 0, **(extra or {})}
    save_checkpoint(path, student.params, meta, opt_state.extras() if opt_state else None)


def load_student(path):
    """Return (student, meta, optimizer state or None)."""
    params, meta, extras = load_checkpoint(path)
    if meta.get("type") != "student":
        raise CheckpointError(f"{path} is not a student checkpoint")
    configs = [ConditionerConfig(**c) for c in meta["flows"]]
    template = FlowStack.build(configs)
    _check_slices(path, params, template.params)
    state = None
    if "adam_m" in extras:
        state = AdamState(extras["adam_m"], extras["adam_v"], int(meta.get("adam_t", 0)))
    return FlowStack(template.layers, params), meta, state


def _check_slices(path, params, template):
    if params.shapes != template.shapes:
        raise CheckpointError(f"{path}: parameter layout does not match its declared config")


# --- commands ---------------------------------------------------------------

def cmd_corpus(args):
    cfg = load_config(args.config).with_seed(args.seed)
    corpus_cfg = cfg.corpus
    if args.clips is not None:
        corpus_cfg = _replace(corpus_cfg, n_clips=args.clips)
    clips = make_synthetic_corpus(corpus_cfg, cfg.seed)
    manifest = write_corpus(clips, args.out, corpus_cfg, cfg.seed)
    print(f"wrote {len(clips)} clips and {manifest}")


def _replace(obj, **changes):
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise UserError(str(exc)) from exc


def cmd_train_teacher(args):
    cfg = load_config(args.config).with_seed(args.seed)
    clips = read_corpus(args.corpus)
    train = cfg.train_config("teacher_train")
    if args.iterations is not None:
        train = _replace(train, iterations=args.iterations)
    teacher = Teacher.build(cfg.teacher, seed=cfg.seed)
    with _JsonLog(_log_path(args)) as log:
        fitted, summary = teacher_fit_mle(teacher, _dataset(clips), train, on_record=log,
                                          clock=_clock(args))
        log({"summary": summary})
    save_teacher(args.out, fitted, {"seed": cfg.seed, "summary": summary})
    print(f"teacher NLL {summary['initial_nll']:.4f} -> {summary['final_nll']:.4f}; saved {args.out}")


def cmd_distill(args):
    cfg = load_config(args.config).with_seed(args.seed)
    teacher = load_teacher(args.teacher)
    train = cfg.train_config("distill")
    if args.iterations is not None:
        train = _replace(train, iterations=args.iterations)
    start_step, opt_state = 0, None
    if args.resume:
        student, meta, opt_state = load_student(args.resume)
        if meta["kind"] != args.kind:
            raise CheckpointError(f"resume checkpoint is {meta['kind']}, requested {args.kind}")
        start_step = int(meta["step"])
    else:
        student = FlowStack.build(cfg.student.conditioner_configs(args.kind), seed=cfg.seed)
    if student.cond_channels != teacher.config.cond_channels and teacher.config.cond_channels:
        raise UserError("student and teacher disagree on conditioning channels")
    if args.corpus:
        batches = corpus_batches(_dataset(read_corpus(args.corpus)), train)
    else:
        batches = teacher_batches(teacher, train, seed=cfg.seed, cond_channels=student.cond_channels)
    with _JsonLog(_log_path(args)) as log:
        student, opt_state, records = distill(student, teacher, batches, train, start_step=start_step,
                                              opt_state=opt_state, on_record=log,
                                              stft=cfg.power_stft, clock=_clock(args))
    step = start_step + train.iterations
    save_student(args.out, student, step, opt_state, {"seed": cfg.seed})
    last = records[-1]
    print(f"{args.kind} student step {step}: kld {last['kld']:.4f} ce {last['ce']:.4f} "
          f"h {last['h']:.4f}; saved {args.out}")


def cmd_synthesize(args):
    student, _, _ = load_student(args.student)
    rng = np.random.default_rng(args.seed)
    if args.cond:
        ref = wav_read(args.cond)
        cond, rate = cond_for(ref.samples), ref.sample_rate
        if not student.cond_channels:
            cond = None
            x = synthesize(student, None, rng, length=len(ref))
        else:
            x = synthesize(student, cond, rng)
    else:
        if args.length is None:
            raise UserError("synthesize needs --cond WAV or --length N")
        rate = args.sample_rate
        x = synthesize(student, None, rng, length=args.length)
    wav_write(args.out, Waveform(x, rate))
    print(f"wrote {len(x)} samples to {args.out}")


def cmd_evaluate(args):
    cfg = load_config(args.config).with_seed(args.seed)
    student, _, _ = load_student(args.student)
    teacher = load_teacher(args.teacher)
    clips = read_corpus(args.corpus)
    if args.limit:
        clips = clips[:args.limit]
    mc = args.mc or cfg.evaluate.mc_samples
    report = evaluate(student, teacher, clips, seed=cfg.seed, mc_samples=mc, stft=cfg.metric_stft)
    print(format_report(report, label=student.kind))
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def cmd_show_config(args):
    print(dump_config(load_config(args.config).with_seed(args.seed)), end="")


def build_parser():
    parser = _Parser(prog="molflow", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if out:
            p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("corpus", help="generate the synthetic corpus")
    common(p)
    p.add_argument("--clips", type=int, help="overrides corpus.n_clips")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train-teacher", help="fit the teacher by maximum likelihood")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--log")
    p.add_argument("--timing", action="store_true", help="record wall-clock times in the log")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill a student flow from a teacher")
    common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--kind", choices=KINDS, default="non-affine")
    p.add_argument("--corpus", help="crop conditioning and power-loss targets from this corpus")
    p.add_argument("--resume", help="student checkpoint to continue from")
    p.add_argument("--iterations", type=int)
    p.add_argument("--log")
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("synthesize", help="generate a waveform in one parallel pass")
    p.add_argument("--student", required=True)
    p.add_argument("--cond", help="WAV file whose conditioning frames drive synthesis")
    p.add_argument("--length", type=int)
    p.add_argument("--sample-rate", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="L2 spectral distance and cross-entropy report")
    common(p, out=False)
    p.add_argument("--student", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mc", type=int, help="Monte-Carlo draws per clip")
    p.add_argument("--limit", type=int)
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("show-config", help="print the effective config")
    common(p, out=False)
    p.set_defaults(func=cmd_show_config)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        # non-finite values are checked explicitly and reported as exit code 2
        with np.errstate(all="ignore"):
            args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UserError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
