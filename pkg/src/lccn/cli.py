"""Command-line entry points: ``python -m lccn <command>``.

Settings come from ``RunConfig`` defaults, then an optional ``--config`` file of
``key=value`` lines, then ``--set key=value`` overrides, then dedicated flags.
The effective configuration is printed to stderr at startup.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch

from . import diffcore
from .corpus import (
    CorpusFormatError,
    SynthConfig,
    generate_synthetic_corpus,
    load_keywords,
    load_tsv,
)
from .decoder import MaskMode
from .evaluate import corpus_scores, write_report
from .lattice import Segmenter, lattice_from_segmenters
from .model import LCCN, ModelConfig
from .vocab import build_char_vocab

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("lccn")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    preset: str = "desk"
    beam: int = 10
    keyword_n: int = 10
    max_len: int = 40
    seed: int = 0
    mask_mode: str = "hard"
    norm: str = "chars"
    epochs: int = 10
    batch_size: int = 8
    warmup: int = 400
    lr_scale: float = 1.0
    vocab_size: int = 5000
    r: int = 8
    selector_epochs: int = 5
    selector_hidden: int = 64
    n_pairs: int = 2000
    workers: int = 1

    def __post_init__(self):
        if self.preset not in ("desk", "paper"):
            raise UsageError(f"preset must be desk or paper, got {self.preset!r}")
        if self.mask_mode not in ("hard", "zero"):
            raise UsageError(f"mask_mode must be hard or zero, got {self.mask_mode!r}")
        if self.norm not in ("chars", "steps"):
            raise UsageError(f"norm must be chars or steps, got {self.norm!r}")
        for name in ("beam", "max_len", "epochs", "batch_size", "warmup", "r", "workers", "n_pairs"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive")

    def update(self, items: dict[str, str]) -> "RunConfig":
        types = {f.name: type(f.default) for f in fields(self)}
        values = asdict(self)
        for key, raw in items.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise UsageError(f"unknown config key {key!r}")
            try:
                values[key] = types[key](raw.strip())
            except ValueError:
                raise UsageError(f"bad value for {key}: {raw!r}") from None
        return RunConfig(**values)


def parse_config_file(path: str) -> dict[str, str]:
    items = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        items[k] = v
    return items


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = cfg.update(parse_config_file(args.config))
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = v
    for key in ("seed", "beam", "workers"):
        if getattr(args, key, None) is not None:
            overrides[key] = str(getattr(args, key))
    return cfg.update(overrides)


def _need(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _segmenters(paths) -> list[Segmenter]:
    return [Segmenter.from_file(_need(p, "dictionary")) for p in paths or []]


def _model_segmenters(model_dir: Path, extra) -> list[Segmenter]:
    if extra:
        return _segmenters(extra)
    return [Segmenter.from_file(p) for p in sorted(model_dir.glob("dict*.txt"))]


def _read_sources(path: Path) -> list[str]:
    """Sources from a TSV corpus (first column) or plain one-text-per-line file."""
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        src = line.split("\t", 1)[0]
        if not src:
            raise DataError(f"{path}:{lineno}: empty source")
        out.append(src)
    return out


def _read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


# commands --------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    corpus = generate_synthetic_corpus(SynthConfig(n_pairs=cfg.n_pairs + args.n_test, seed=cfg.seed))
    train, test = corpus.split(cfg.n_pairs)
    train.save(out, "train")
    if args.n_test:
        test.save(out, "test")
    print(f"wrote {len(train.pairs)} train / {len(test.pairs)} test pairs to {out}")
    return EXIT_OK


def cmd_lattice(args, cfg: RunConfig) -> int:
    lat = lattice_from_segmenters(args.text, _segmenters(args.dict), cfg.r)
    sys.stdout.write(lat.dump())
    print()
    for row in lat.relpos:
        print(" ".join(f"{v:2d}" for v in row))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from .train import TrainConfig, pairs_to_examples, train_lccn

    pairs = load_tsv(_need(args.data, "training corpus"))
    segs = _segmenters(args.dict)
    lattices, summaries = pairs_to_examples(pairs, segs, cfg.r, words=not args.no_words)
    dev = None
    if args.dev:
        dev = pairs_to_examples(load_tsv(_need(args.dev, "dev corpus")), segs, cfg.r, words=not args.no_words)
    vocab = build_char_vocab([p.source + p.summary for p in pairs], cfg.vocab_size)
    model = LCCN(vocab, ModelConfig.preset(cfg.preset, r=cfg.r))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.no_words:
        for i, p in enumerate(args.dict or []):
            shutil.copyfile(p, out / f"dict{i}.txt")
    history = train_lccn(
        model, lattices, summaries,
        TrainConfig(cfg.epochs, cfg.batch_size, cfg.warmup, cfg.lr_scale, cfg.seed),
        dev=dev, checkpoint_dir=out,
    )
    for rec in history:
        print("\t".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items()))
    return EXIT_OK


def cmd_train_selector(args, cfg: RunConfig) -> int:
    from .selector import WordSelector, save_selector, train_selector

    pairs = load_tsv(_need(args.data, "training corpus"))
    gold = load_keywords(_need(args.gold, "keyword file"), len(pairs))
    segs = _segmenters(args.dict)
    lattices = [lattice_from_segmenters(p.source, segs, cfg.r) for p in pairs]
    examples = [
        (lat, [int(lat.tokens[i].chars in g) for i in lat.word_indices]) for lat, g in zip(lattices, gold)
    ]
    vocab = build_char_vocab([p.source for p in pairs], cfg.vocab_size)
    selector = WordSelector(vocab, cfg.selector_hidden)
    history = train_selector(selector, examples, cfg.selector_epochs, seed=cfg.seed, log=print)
    out = Path(args.out)
    save_selector(selector, out)
    for i, p in enumerate(args.dict or []):
        shutil.copyfile(p, out / f"dict{i}.txt")
    print(f"final bce {history[-1]:.4f}")
    return EXIT_OK


def _output(path):
    if path:
        return open(path, "w", encoding="utf-8")
    return contextlib.nullcontext(sys.stdout)


def cmd_select_keywords(args, cfg: RunConfig) -> int:
    from .selector import load_selector, select_keywords

    sel_dir = _need(args.selector, "selector directory")
    selector = load_selector(sel_dir)
    segs = _model_segmenters(sel_dir, args.dict)
    with _output(args.out) as f:
        for i, src in enumerate(_read_sources(_need(args.data, "corpus"))):
            mask = select_keywords(lattice_from_segmenters(src, segs, cfg.r), selector, cfg.keyword_n)
            for score, tok in mask.selected:
                f.write(f"{i}\t{tok.chars}\t{tok.span.start}\t{tok.span.end}\t{score:.6f}\n")
    return EXIT_OK


def cmd_summarize(args, cfg: RunConfig) -> int:
    from .selector import load_selector, select_keywords
    from .train import summarize

    model_dir = _need(args.model, "model directory")
    model = LCCN.load(model_dir)
    segs = [] if args.no_words else _model_segmenters(model_dir, args.dict)
    sources = _read_sources(_need(args.data, "corpus"))
    lattices = [lattice_from_segmenters(s, segs, model.cfg.r) for s in sources]
    masks = None
    mode = MaskMode(cfg.mask_mode)
    if args.keywords:
        selector = load_selector(_need(args.keywords, "selector directory"))
        masks = [select_keywords(lat, selector, cfg.keyword_n, mode).keep for lat in lattices]
    outputs = summarize(model, lattices, cfg.beam, cfg.max_len, masks, words=not args.no_words,
                        mode=mode, norm=cfg.norm)
    with _output(args.out) as f:
        for o in outputs:
            f.write(o + "\n")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    cands = _read_lines(_need(args.cand, "candidate file"))
    ref_path = _need(args.ref, "reference file")
    refs = [p.summary for p in load_tsv(ref_path)] if args.ref_tsv else _read_lines(ref_path)
    if len(cands) != len(refs):
        raise DataError(f"{len(cands)} candidates vs {len(refs)} references")
    scores = corpus_scores(cands, refs)
    for k, v in scores.items():
        print(f"{k}\t{v:.6f}")
    if args.out:
        write_report(args.out, scores)
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .train import gradient_check

    report = gradient_check(cfg.seed, args.samples)
    name, idx, analytic, numeric, rel = report.worst
    status = "PASS" if report.passed(args.tol) else "FAIL"
    print(f"{status} max_rel_err={report.max_rel_error:.3e} at {name}{list(idx)} "
          f"(analytic {analytic:.6e}, numeric {numeric:.6e})")
    return EXIT_OK if report.passed(args.tol) else EXIT_CHECK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="torch intra-op threads; deterministic only at 1")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lccn", description="Lexicon-constrained copying summarizer")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-test", type=int, default=200)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("lattice", parents=[common], help="dump a text's lattice and relative positions")
    s.add_argument("text")
    s.add_argument("--dict", action="append")
    s.set_defaults(func=cmd_lattice)

    s = sub.add_parser("train", parents=[common], help="train the summarizer")
    s.add_argument("--data", required=True)
    s.add_argument("--dev")
    s.add_argument("--dict", action="append")
    s.add_argument("--out", required=True)
    s.add_argument("--no-words", action="store_true", help="character-only lattices")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-selector", parents=[common], help="train the keyword selector")
    s.add_argument("--data", required=True)
    s.add_argument("--gold", required=True, help="pair_index<TAB>keyword file")
    s.add_argument("--dict", action="append")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_selector)

    s = sub.add_parser("select-keywords", parents=[common], help="print the top-n selected words per text")
    s.add_argument("--selector", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--dict", action="append")
    s.add_argument("--out")
    s.set_defaults(func=cmd_select_keywords)

    s = sub.add_parser("summarize", parents=[common], help="decode summaries")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--dict", action="append")
    s.add_argument("--keywords", metavar="SELECTOR_DIR", help="mask copy attention to selected words")
    s.add_argument("--beam", type=int)
    s.add_argument("--no-words", action="store_true", help="character-only lattice and decoding")
    s.add_argument("--out")
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("evaluate", parents=[common], help="ROUGE and duplicate rates")
    s.add_argument("--cand", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--ref-tsv", action="store_true", help="read references from a source<TAB>summary corpus")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--samples", type=int, default=50)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", force=True)
    try:
        cfg = resolve_config(args)
        print("# config: " + " ".join(f"{k}={v}" for k, v in asdict(cfg).items()), file=sys.stderr)
        torch.set_num_threads(cfg.workers)
        diffcore.set_seed(cfg.seed)
        return args.func(args, cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusFormatError, FileNotFoundError, UnicodeDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
