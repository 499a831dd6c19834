"""Command-line entry point: train, segment, evaluate, stats, multirun, synth,
gradcheck.

Every command is a deterministic function of its configuration, input files,
and seed. Exit statuses: 0 success, 1 usage/config error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .corpus import (SentencePair, build_vocabularies, encode_pairs,
                     load_parallel, load_symbol_inventory)
from .errors import ConfigError, DataError, NumericError
from .evaluation import (MetricsReport, build_report, corpus_stats,
                         length_attention_correlation, read_report, write_report)
from .gradcheck import run_gradcheck
from .model import ATTENTION_MODES, LOSS_MODES, HyperParams, Model
from .segmentation import (SegmentedSentence, dump_attention, force_decode_corpus,
                           load_segmented, segment_corpus, write_segmented)
from .synth import synth_corpus, write_lines
from .training import (LossBreakdown, estimate_length_ratio, train,
                       write_loss_log)

MODES = ("base", "bias", "aux", "aux_ratio")

# Presets: the user-facing mode fixes (attention_mode, loss_mode) jointly,
# but the two stay independently overridable.
MODE_PRESETS = {
    "base": ("plain", "base"),
    "bias": ("length_bias", "base"),
    "aux": ("plain", "aux"),
    "aux_ratio": ("plain", "aux_ratio"),
}


@dataclass
class RunConfig:
    """Flat bag of every knob; hyperparameters mirror HyperParams fields."""

    mode: str = "base"
    attention_mode: str = ""      # derived from mode unless set explicitly
    loss_mode: str = ""
    embedding_dim: int = 64
    encoder_hidden: int = 64
    decoder_hidden: int = 64
    attention_hidden: int = 64
    dropout_rate: float = 0.5
    temperature: float = 1.0
    epochs: int = 800
    wait: int = 200
    batch_size: int = 64
    learning_rate: float = 0.001
    ratio: float = 1.0
    ratio_include_eos: bool = False
    seed: int = 0
    runs: int = 10
    ratio_source: str = "first_100_gold"   # or "explicit"
    correlation_exclude_eos: bool = False

    def resolved(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        attention, loss = MODE_PRESETS[self.mode]
        cfg = replace(self)
        cfg.attention_mode = self.attention_mode or attention
        cfg.loss_mode = self.loss_mode or loss
        if cfg.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")
        if cfg.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        return cfg

    def hyperparams(self) -> HyperParams:
        cfg = self.resolved()
        hp_fields = {f.name for f in fields(HyperParams)}
        values = {k: v for k, v in asdict(cfg).items() if k in hp_fields}
        hp = HyperParams(**values)
        hp.validate()
        return hp


def write_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for key, value in asdict(cfg).items():
            handle.write(f"{key} = {value}\n")


def read_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().split("\n")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    by_name = {f.name: f for f in fields(RunConfig)}
    kwargs = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        key, sep, value = text.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip()
        value = value.strip()
        if key not in by_name:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        ftype = by_name[key].type
        if ftype == "int":
            kwargs[key] = int(value)
        elif ftype == "float":
            kwargs[key] = float(value)
        elif ftype == "bool":
            kwargs[key] = value == "True"
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors -> exit 1, not argparse's 2
        raise ConfigError(message)


def _add_hyper_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file with 'key = value' lines")
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--attention-mode", dest="attention_mode", choices=ATTENTION_MODES)
    parser.add_argument("--loss-mode", dest="loss_mode", choices=LOSS_MODES)
    for name, kind in (("embedding-dim", int), ("encoder-hidden", int),
                       ("decoder-hidden", int), ("attention-hidden", int),
                       ("dropout-rate", float), ("temperature", float),
                       ("epochs", int), ("wait", int), ("batch-size", int),
                       ("learning-rate", float), ("ratio", float), ("seed", int)):
        parser.add_argument(f"--{name}", dest=name.replace("-", "_"), type=kind)
    parser.add_argument("--ratio-source", dest="ratio_source",
                        choices=("first_100_gold", "explicit"))
    parser.add_argument("--ratio-include-eos", dest="ratio_include_eos",
                        action="store_const", const=True)
    parser.add_argument("--correlation-exclude-eos", dest="correlation_exclude_eos",
                        action="store_const", const=True)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = read_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {f.name: getattr(args, f.name)
                 for f in fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    return replace(cfg, **overrides).resolved()


def _load_corpus(args: argparse.Namespace, gold: bool) -> list[SentencePair]:
    inventory = load_symbol_inventory(args.inventory) if args.inventory else None
    return load_parallel(args.source, args.target, gold=gold, inventory=inventory)


def _resolve_ratio(cfg: RunConfig, pairs: list[SentencePair]) -> tuple[RunConfig, float | None]:
    """For aux_ratio with a gold corpus, estimate r from the first 100 sentences."""
    if cfg.loss_mode != "aux_ratio" or cfg.ratio_source == "explicit":
        return cfg, None
    ratio = estimate_length_ratio(pairs, 100, cfg.ratio_include_eos)
    return replace(cfg, ratio=ratio), ratio


def _print_breakdown(label: str, row: LossBreakdown) -> None:
    print(f"{label}: nll={row.nll:.6f} aux={row.aux:.6f} "
          f"lambda={row.lambda_aux:.6f} total={row.total:.6f}")


def _train_once(cfg: RunConfig, pairs: list[SentencePair],
                quiet: bool = False) -> tuple[Model, list[LossBreakdown]]:
    hp = cfg.hyperparams()
    every = max(1, hp.epochs // 10)

    def progress(epoch: int, row: LossBreakdown) -> None:
        if not quiet and (epoch % every == 0 or epoch == hp.epochs):
            print(f"  epoch {epoch}/{hp.epochs} nll={row.nll:.4f} "
                  f"aux={row.aux:.4f} lambda={row.lambda_aux:.4f}", file=sys.stderr)

    return train(pairs, hp, progress)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    pairs = _load_corpus(args, args.gold)
    cfg, ratio = _resolve_ratio(cfg, pairs)
    model, log = _train_once(cfg, pairs)
    model.save(args.model)
    if args.loss_log:
        header = f"ratio {ratio!r}" if ratio is not None else None
        write_loss_log(log, args.loss_log, header)
    if args.echo_config:
        write_config(cfg, args.echo_config)
    if ratio is not None:
        print(f"length ratio (first 100 gold sentences): {ratio:.6f}")
    _print_breakdown("final", log[-1])
    return 0


def _segment_with_model(model: Model, pairs: list[SentencePair]):
    encoded = encode_pairs(pairs, model.src_vocab, model.tgt_vocab)
    matrices = force_decode_corpus(encoded, model, model.hp.batch_size)
    segmented = segment_corpus(encoded, matrices)
    unk = sum(p.unk_count for p in encoded)
    return encoded, matrices, segmented, unk


def cmd_segment(args: argparse.Namespace) -> int:
    model = Model.load(args.model)
    pairs = _load_corpus(args, args.gold)
    encoded, matrices, segmented, unk = _segment_with_model(model, pairs)
    write_segmented(segmented, args.output)
    if args.attention_dump:
        dump_attention(matrices, args.attention_dump)
    print(f"segmented {len(segmented)} sentences ({unk} unknown symbols mapped to UNK)")
    return 0


def _print_stats(label: str, stats) -> None:
    print(f"{label}: tokens={stats.tokens} types={stats.types} "
          f"avg_token_len={stats.avg_token_len:.2f} avg_sent_len={stats.avg_sent_len:.2f}")


def cmd_evaluate(args: argparse.Namespace) -> int:
    pred = load_segmented(args.pred)
    gold = load_segmented(args.gold)
    report = build_report(pred, gold)
    if args.report:
        write_report(report, args.report)
    for name, value in report.as_rows():
        print(f"{name}\t{value}")
    _print_stats("pred", report.stats)
    _print_stats("gold", corpus_stats(gold))
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    sentences = load_segmented(args.input)
    _print_stats(args.input, corpus_stats(sentences))
    return 0


def _gold_sentences(pairs: list[SentencePair]) -> list[SegmentedSentence]:
    gold = []
    for pair in pairs:
        if pair.gold_boundaries is None:
            raise DataError("multirun needs a gold-segmented target corpus")
        gold.append(SegmentedSentence(list(pair.units), set(pair.gold_boundaries)))
    return gold


def cmd_multirun(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if args.runs is not None:
        cfg = replace(cfg, runs=args.runs)
    if cfg.runs < 1:
        raise ConfigError(f"runs must be >= 1, got {cfg.runs}")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pairs = _load_corpus(args, gold=True)
    cfg, _ = _resolve_ratio(cfg, pairs)
    write_config(cfg, str(outdir / "config.txt"))
    gold_segmented = _gold_sentences(pairs)

    reports = []
    for run, seed in enumerate(range(cfg.seed, cfg.seed + cfg.runs)):
        run_cfg = replace(cfg, seed=seed)
        print(f"run {run + 1}/{cfg.runs} (seed {seed})", file=sys.stderr)
        model, _ = _train_once(run_cfg, pairs)
        encoded, matrices, segmented, _ = _segment_with_model(model, pairs)
        correlation = length_attention_correlation(
            matrices, encoded, include_eos=not cfg.correlation_exclude_eos)
        report = build_report(segmented, gold_segmented, correlation)
        write_segmented(segmented, str(outdir / f"run_{seed}.seg"))
        write_report(report, str(outdir / f"run_{seed}.report"))
        reports.append(read_report(str(outdir / f"run_{seed}.report")))

    names = list(reports[0])
    with open(outdir / "summary.txt", "w", encoding="utf-8") as handle:
        handle.write("metric\tmean\tstd\n")
        for name in names:
            values = np.array([r[name] for r in reports if name in r])
            handle.write(f"{name}\t{values.mean()!r}\t{values.std()!r}\n")
            print(f"{name}\tmean={values.mean():.4f}\tstd={values.std():.4f}")
    return 0


def p_to_gold(pair: SentencePair):
    from .segmentation import SegmentedSentence
    if pair.gold_boundaries is None:
        raise DataError("multirun needs a gold-segmented target corpus")
    return SegmentedSentence(list(pair.units), set(pair.gold_boundaries))


def cmd_synth(args: argparse.Namespace) -> int:
    source_lines, target_lines = synth_corpus(
        args.sentences, args.source_vocab, args.seed,
        args.min_word_len, args.max_word_len,
        args.min_sent_len, args.max_sent_len)
    write_lines(source_lines, args.source_out)
    write_lines(target_lines, args.target_out)
    print(f"wrote {args.sentences} sentence pairs to "
          f"{args.source_out} / {args.target_out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradcheck(args.step)
    worst = 0.0
    for res in results:
        status = "ok" if res.max_error < args.tolerance else "FAIL"
        print(f"{res.attention_mode:12s} {res.loss_name:12s} "
              f"max_rel_err={res.max_error:.3e} {status}")
        worst = max(worst, res.max_error)
    print("per-parameter worst case across checks:")
    names = results[0].per_parameter.keys()
    for name in names:
        err = max(res.per_parameter[name] for res in results)
        print(f"  {name:12s} {err:.3e}")
    if worst >= args.tolerance:
        raise NumericError(
            f"gradient check failed: max relative error {worst:.3e} "
            f">= tolerance {args.tolerance:.1e}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="attnseg",
                     description="Attention-based bilingual word segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a parallel corpus")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--gold", action="store_true",
                   help="target lines are space-segmented references")
    p.add_argument("--inventory", help="symbol inventory file (one unit per line)")
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--loss-log", dest="loss_log")
    p.add_argument("--echo-config", dest="echo_config")
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="force-decode and segment a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--gold", action="store_true",
                   help="strip spaces from segmented target lines first")
    p.add_argument("--inventory")
    p.add_argument("--output", required=True)
    p.add_argument("--attention-dump", dest="attention_dump")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="score a segmentation against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="corpus statistics of a segmented file")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("multirun", help="train/segment/evaluate over several seeds")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True, help="gold-segmented target corpus")
    p.add_argument("--inventory")
    p.add_argument("--outdir", required=True)
    p.add_argument("--runs", type=int)
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_multirun)

    p = sub.add_parser("synth", help="generate a synthetic parallel corpus")
    p.add_argument("--sentences", type=int, required=True)
    p.add_argument("--source-vocab", dest="source_vocab", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-word-len", dest="min_word_len", type=int, default=2)
    p.add_argument("--max-word-len", dest="max_word_len", type=int, default=6)
    p.add_argument("--min-sent-len", dest="min_sent_len", type=int, default=3)
    p.add_argument("--max-sent-len", dest="max_sent_len", type=int, default=8)
    p.add_argument("--source-out", dest="source_out", required=True)
    p.add_argument("--target-out", dest="target_out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
