"""Command-line entry points.

Every subcommand exits 0 on success and 1 with a single ``oovtag <cmd>: error: ...``
line on stderr otherwise (2 for malformed arguments).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .archive import ArchiveError, atomic_write_text, load_model
from .baselines import (KINDS, TEACHER_MIN_FREQ, BaselineArtifacts, fit_linear_map, load_baseline,
                        random_unk_vector, save_baseline, train_recon_student, train_single_unk)
from .config import FIELDS, Config, parse_config, flag_name
from .corpus import (CharVocab, NgramVocab, build_vocab, partition_oov, read_conll, save_json, write_conll)
from .evalkit import write_metrics
from .experiment import baseline_tagger, evaluate, student_tagger, teacher_tagger
from .student import PredictionConfig, Student, train_student
from .synth import DEFAULT_RULES, gen_synthetic, write_synthetic
from .teacher import Teacher, train_teacher

log = logging.getLogger("oovtag")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of config keys")
    group = p.add_argument_group("config overrides")
    for key in FIELDS:
        group.add_argument(flag_name(key), dest=f"cfg_{key}", default=None, metavar="V")


def _overrides(args) -> dict:
    return {k: getattr(args, f"cfg_{k}") for k in FIELDS if getattr(args, f"cfg_{k}", None) is not None}


def _config(args, base: Config | None = None) -> Config:
    return parse_config(getattr(args, "config", None), _overrides(args), base.to_dict() if base else None)


def _echo_config(out: Path, cfg: Config) -> None:
    save_json(out.with_name(out.name + ".config.json"), cfg.to_dict())


def _read(path, split, cfg: Config, label_set=None, iob1=False, with_tags=True, encoding="utf-8"):
    return read_conll(path, split, label_set, lowercase=cfg.lowercase, to_iob2=iob1, with_tags=with_tags,
                      encoding=encoding)


def _raw(corpus):
    for s in corpus.sentences:
        s.tokens = list(s.raw_tokens)
    return corpus


def _metrics_path(args, out: Path) -> Path:
    return Path(args.metrics) if getattr(args, "metrics", None) else out.with_name(out.name + ".metrics.jsonl")


def _load_teacher(path) -> Teacher:
    arch = load_model(path)
    if arch.component not in ("teacher", "single_unk"):
        raise ArchiveError(f"{path}: expected a teacher archive, found component {arch.component!r}")
    return Teacher.from_archive(arch)


def _tagger(args, cfg: Config):
    """(tagger, train-frequency table) for --teacher plus optional --student/--baseline."""
    pcfg = PredictionConfig.from_config(cfg)
    if args.student and args.baseline:
        raise UsageError("give at most one of --student and --baseline")
    if args.baseline:
        teacher = _load_teacher(args.teacher) if args.teacher else None
        kind, art = load_baseline(args.baseline, teacher)
        art.threshold, art.K = cfg.oov_threshold, cfg.K_iter
        ref = art.single_unk_teacher if kind == "single_unk" else teacher
        if ref is None:
            raise UsageError(f"baseline {kind!r} needs --teacher")
        return baseline_tagger(kind, art, pcfg), ref
    if not args.teacher:
        raise UsageError("--teacher is required")
    teacher = _load_teacher(args.teacher)
    if args.student:
        return student_tagger(teacher, Student.load(args.student), pcfg), teacher
    return teacher_tagger(teacher), teacher


def _parse_rules(text: str | None):
    if not text:
        return DEFAULT_RULES
    rules = []
    for item in text.split(","):
        suffix, sep, tag = item.partition(":")
        if not sep or not tag:
            raise UsageError(f"bad rule {item!r}; expected suffix:TAG")
        rules.append((suffix, tag))
    return tuple(rules)


# ---------------------------------------------------------------- commands


def cmd_gen_synth(args) -> None:
    data = gen_synthetic(args.vocab_size, args.n_test_words, args.n_train, args.n_dev, args.n_test,
                         _parse_rules(args.rules), args.seed)
    for split, path in write_synthetic(data, args.out).items():
        print(f"{split}\t{path}")


def cmd_preprocess(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = _read(args.train, "train", cfg, iob1=args.iob1)
    write_conll(train, out / "train.conll", raw=False)
    for split in ("dev", "test"):
        path = getattr(args, split)
        if path:
            write_conll(_read(path, split, cfg, train.label_set, args.iob1), out / f"{split}.conll", raw=False)
    save_json(out / "vocab.json", build_vocab(train, cfg.vocab_min_freq).to_json())
    save_json(out / "chars.json", CharVocab.build(train).itos)
    save_json(out / "ngrams.json", NgramVocab.build(train, cfg.k_ngram).to_json())
    save_json(out / "config.json", cfg.to_dict())
    print(f"wrote {out}")


def cmd_stats(args) -> None:
    cfg = _config(args)
    train = _read(args.train, "train", cfg, iob1=args.iob1, encoding=args.encoding)
    if args.raw_tokens:
        _raw(train)
    freq = build_vocab(train, 1).freq
    lines = []
    for path in args.eval:
        ev = _read(path, "eval", cfg, train.label_set, args.iob1, encoding=args.encoding)
        if args.raw_tokens:
            _raw(ev)
        rep = partition_oov(ev, freq, cfg.oov_threshold, task=cfg.task).report(cfg.task)
        lines.append(json.dumps({"file": str(path), **rep}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)


def cmd_train_teacher(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    train = _read(args.train, "train", cfg, iob1=args.iob1)
    dev = _read(args.dev, "dev", cfg, train.label_set, args.iob1) if args.dev else None
    curve: list = []
    teacher = train_teacher(train, dev, cfg, curve=curve)
    teacher.save(out, metrics={"curve": curve})
    _echo_config(out, cfg)
    write_metrics(_metrics_path(args, out), curve)
    print(f"wrote {out}")


def cmd_train_student(args) -> None:
    teacher = _load_teacher(args.teacher)
    cfg = _config(args, teacher.cfg)
    out = Path(args.out)
    train = _read(args.train, "train", cfg, teacher.labels, args.iob1)
    dev = _read(args.dev, "dev", cfg, teacher.labels, args.iob1) if args.dev else None
    curve: list = []
    student = train_student(teacher, train, dev, cfg, curve=curve)
    student.save(out, metrics={"curve": curve})
    _echo_config(out, cfg)
    write_metrics(_metrics_path(args, out), curve)
    print(f"wrote {out}")


def cmd_train_baseline(args) -> None:
    kind = args.kind
    out = Path(args.out)
    curve: list = []
    if kind == "single_unk":
        cfg = _config(args)
        train = _read(args.train, "train", cfg, iob1=args.iob1)
        dev = _read(args.dev, "dev", cfg, train.label_set, args.iob1) if args.dev else None
        art = BaselineArtifacts(single_unk_teacher=train_single_unk(train, dev, cfg, curve=curve))
        cfg = cfg.replace(vocab_min_freq=TEACHER_MIN_FREQ["single_unk"])
    else:
        if not args.teacher:
            raise UsageError(f"baseline {kind!r} needs --teacher")
        teacher = _load_teacher(args.teacher)
        cfg = _config(args, teacher.cfg)
        art = BaselineArtifacts(teacher=teacher, threshold=cfg.oov_threshold, K=cfg.K_iter,
                                extra={"seed": cfg.seed})
        if kind == "random_unk":
            art.random_vector = random_unk_vector(cfg.seed, cfg.word_dim)
        elif kind in ("linear_map", "recon_student"):
            if not args.train:
                raise UsageError(f"baseline {kind!r} needs --train")
            train = _read(args.train, "train", cfg, teacher.labels, args.iob1)
            if kind == "linear_map":
                losses: list = []
                art.linear_map = fit_linear_map(train, teacher, cfg, epochs=args.epochs, curve=losses)
                curve = [{"epoch": i + 1, "train_loss": v} for i, v in enumerate(losses)]
            else:
                dev = _read(args.dev, "dev", cfg, teacher.labels, args.iob1) if args.dev else None
                art.recon_student = train_recon_student(teacher, train, dev, cfg, curve=curve)
    save_baseline(out, kind, art, cfg, metrics={"curve": curve})
    _echo_config(out, cfg)
    write_metrics(_metrics_path(args, out), curve)
    print(f"wrote {out}")


def cmd_eval(args) -> None:
    base = _load_teacher(args.teacher).cfg if args.teacher else None
    cfg = _config(args, base)
    tagger, ref = _tagger(args, cfg)
    corpus = _read(args.data, "eval", cfg, ref.labels, args.iob1)
    rec = {"data": str(args.data), "model": args.student or args.baseline or args.teacher,
           **evaluate(corpus, tagger, ref.vocab.freq, cfg.oov_threshold, cfg.task)}
    if args.out:
        out = Path(args.out)
        write_metrics(out, [rec])
        _echo_config(out, cfg)
    print(json.dumps(rec, sort_keys=True))


def cmd_predict(args) -> None:
    base = _load_teacher(args.teacher).cfg if args.teacher else None
    cfg = _config(args, base)
    tagger, ref = _tagger(args, cfg)
    corpus = _read(args.input, "predict", cfg, ref.labels, with_tags=False)
    blocks = []
    for s in corpus.sentences:
        tags = tagger(s.tokens)
        blocks.append("".join(f"{w}\t{t}\n" for w, t in zip(s.raw_tokens, tags)))
    text = "\n".join(blocks)
    if args.out:
        atomic_write_text(args.out, text)
        _echo_config(Path(args.out), cfg)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oovtag", description="Sequence tagging with OOV word-vector prediction.")
    parser.add_argument("--version", action="version", version=f"oovtag {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="write a synthetic suffix-tagged corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=500)
    p.add_argument("--n-test-words", type=int, default=200)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--rules", help="comma-separated suffix:TAG pairs")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("preprocess", help="normalise corpora and write vocabularies")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--out", required=True)
    p.add_argument("--iob1", action="store_true", help="convert IOB1 tags to BIO")
    _add_config_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stats", help="OOV counts and rates of evaluation files")
    p.add_argument("--train", required=True)
    p.add_argument("--eval", required=True, nargs="+")
    p.add_argument("--out")
    p.add_argument("--iob1", action="store_true")
    p.add_argument("--encoding", default="utf-8", help="input encoding (CoNLL-2002 ships latin-1)")
    p.add_argument("--raw-tokens", action="store_true", help="count surface tokens without number/URL folding")
    _add_config_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train-teacher", help="train the BiLSTM-CRF tagger")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    p.add_argument("--iob1", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="train the OOV student against a frozen teacher")
    p.add_argument("--teacher", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    p.add_argument("--iob1", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("train-baseline", help="build one of the comparison methods")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--teacher")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, help="linear_map epochs (default max_epochs)")
    p.add_argument("--metrics")
    p.add_argument("--iob1", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_baseline)

    for name, func, help_text in (("eval", cmd_eval, "score a model on a tagged corpus"),
                                  ("predict", cmd_predict, "tag a one-column CoNLL file")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--teacher")
        p.add_argument("--student")
        p.add_argument("--baseline")
        if name == "eval":
            p.add_argument("--data", required=True)
            p.add_argument("--iob1", action="store_true")
        else:
            p.add_argument("--input", required=True)
        p.add_argument("--out")
        _add_config_flags(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except KeyboardInterrupt:
        print(f"oovtag {args.command}: error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # one line, whatever went wrong
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"oovtag {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
