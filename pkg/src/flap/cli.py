"""Command-line entry point: ``flap <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .augment import BandEnergyTagger, EndpointConfig, FileTagger, augment_manifest, merge_manifest, write_augmented
from .config import ConfigError, apply_overrides, load_config
from .evaluation import evaluate_checkpoint, format_table, reports_to_json
from .flops import DEFAULT_BATCH, DEFAULT_ENCODER, masking_cost_curve, write_cost_curve
from .manifest import read_manifest, write_manifest
from .synthetic import make_tone_dataset, toy_config
from .text import Vocab, build_vocab
from .training import train


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def cmd_synth(args: argparse.Namespace) -> int:
    manifest = make_tone_dataset(args.out, count=args.count, seconds=args.seconds, seed=args.seed)
    config_path = Path(args.out) / "toy.cfg"
    config_path.write_text(toy_config().dumps(), encoding="utf-8")
    print(f"wrote {len(manifest)} clips, {Path(args.out) / 'manifest.jsonl'} and {config_path}")
    return 0


def cmd_vocab(args: argparse.Namespace) -> int:
    vocab = build_vocab(read_manifest(args.manifest).all_captions())
    vocab.save(args.out)
    print(f"{len(vocab)} tokens -> {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    overrides = _overrides(args.set)
    overrides.setdefault("train.checkpoint_dir", args.out)
    overrides.setdefault("train.log_path", str(Path(args.out) / "train_log.csv"))
    config = apply_overrides(config, overrides)
    vocab = Vocab.load(args.vocab) if args.vocab else None
    result = train(read_manifest(args.manifest), config, vocab)
    last = result.history[-1]
    print(f"{len(result.history)} steps; final loss {last.total:.4f}; checkpoint {result.checkpoint}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    reports = evaluate_checkpoint(args.checkpoint, read_manifest(args.manifest))
    print(format_table(reports))
    if args.json:
        Path(args.json).write_text(reports_to_json(reports) + "\n", encoding="utf-8")
    return 0


def cmd_flops(args: argparse.Namespace) -> int:
    config = apply_overrides(load_config(args.config), _overrides(args.set)) if args.config or args.set else None
    model = config.model if config else DEFAULT_ENCODER
    audio = config.audio if config else None
    ratios = [float(r) for r in args.ratios.split(",")]
    rows = masking_cost_curve(args.strategy, ratios, model, audio, args.batch)
    sys.stdout.write(write_cost_curve(rows, args.out))
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    tagger = FileTagger(args.tags) if args.tags else BandEnergyTagger()
    endpoint = EndpointConfig.from_env(url=args.url, max_in_flight=args.max_in_flight)
    items = augment_manifest(manifest, tagger, endpoint, cleaned=args.cleaned)
    write_augmented(items, args.captions_out)
    write_manifest(merge_manifest(manifest, items), args.out)
    print(f"{len(items)} generated captions; merged manifest -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic tone/caption corpus")
    p.add_argument("out")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seconds", type=float, default=1.28)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("vocab", help="build a word vocabulary from a manifest")
    p.add_argument("manifest")
    p.add_argument("out")
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("train", help="train on a manifest")
    p.add_argument("manifest")
    p.add_argument("--config")
    p.add_argument("--vocab")
    p.add_argument("--out", default="run")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="retrieval recall of a checkpoint (masking off)")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("flops", help="encoder cost curve as CSV")
    p.add_argument("--strategy", choices=["1d", "2d"], default="2d")
    p.add_argument("--ratios", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.75")
    p.add_argument("--batch", type=int, default=DEFAULT_BATCH)
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("augment", help="generate extra captions through a text endpoint")
    p.add_argument("manifest")
    p.add_argument("--tags", help="tag JSON file or directory of <id>.json (default: band-energy tagger)")
    p.add_argument("--url", help="endpoint URL (default: $FLAP_LLM_URL)")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--cleaned", action="store_true", help="use the grammatical prompt variant")
    p.add_argument("--captions-out", default="augmented.jsonl")
    p.add_argument("--out", default="manifest.augmented.jsonl")
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"flap {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
