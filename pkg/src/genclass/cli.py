"""Command-line entry point: ``genclass synth|train|eval|baseline|report``.

Exit codes: 0 success, 1 usage or config error, 2 data or format error,
3 numeric abort during training.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import RunSettings, load_config
from .errors import ConfigError, GenClassError

SEED_ENV = "GENCLASS_SEED"

_EPILOG = (f"If --seed is not given, the environment variable {SEED_ENV} (an integer) is used "
           "as the seed when set; otherwise the config file or built-in default applies.")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _seed_override(args):
    if args.seed is not None:
        return args.seed
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _settings(args, overrides):
    """Config file (if any) then flag overrides; returns settings and the override echo."""
    settings = load_config(args.config) if getattr(args, "config", None) else RunSettings()
    applied = []
    for key, value in overrides.items():
        if value is not None:
            settings.set(key, str(value))
            applied.append(f"{key} = {value}")
    return settings, applied


def _emit(text, out):
    sys.stdout.write(text)
    if out is not None:
        out = Path(out)
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def cmd_synth(args):
    from .data import make_synthetic, save_dataset

    seed = _seed_override(args)
    settings, _ = _settings(args, {"synth.k": args.k, "synth.l": args.l, "synth.d_a": args.d_a,
                                   "synth.d_x": args.d_x, "synth.sigma": args.sigma,
                                   "synth.train_per_class": args.train_per_class,
                                   "synth.test_per_class": args.test_per_class, "synth.seed": seed})
    ds = make_synthetic(settings.synth)
    digest = save_dataset(ds, args.out)
    print(f"dataset written to {args.out}")
    print(f"content_hash = {digest}")
    return 0


def cmd_train(args):
    from .data import load_dataset
    from .trainer import train

    seed = _seed_override(args)
    settings, applied = _settings(args, {"iterations": args.iterations, "seed": seed})
    config = settings.train.check()
    dataset = load_dataset(args.data)
    result = train(config, dataset, args.out, settings_echo=settings.echo())
    manifest = Path(args.out) / "run_manifest.txt"
    with manifest.open("a", encoding="utf-8") as fh:
        fh.write(f"config_file = {args.config or '-'}\n")
        for line in applied:
            fh.write(f"flag.{line}\n")
    last = result.log_lines[-1] if result.log_lines else "(no log lines)"
    print(f"trained {config.iterations} iterations; checkpoint at {result.checkpoint_dir}")
    print(f"checkpoint_fingerprint = {result.checkpoint_fingerprint}")
    print(f"last log line: {last}")
    return 0


def _load_pair(args):
    from .data import load_dataset
    from .models import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    return model, dataset


def cmd_eval(args):
    from .inference import evaluate_gzsl, evaluate_zsl

    seed = _seed_override(args)
    settings, _ = _settings(args, {"eval.mode": args.mode, "eval.n_g": args.ng, "eval.seed": seed})
    opts = settings.eval.check()
    model, dataset = _load_pair(args)
    fn = evaluate_zsl if opts.mode == "zsl" else evaluate_gzsl
    report = fn(model, dataset, n_g=opts.n_g, seed=opts.seed, checkpoint=str(args.checkpoint))
    _emit(report.to_text(), args.out)
    return 0


def cmd_baseline(args):
    from .baseline import evaluate_softmax

    seed = _seed_override(args)
    settings, _ = _settings(args, {"eval.mode": args.mode, "eval.seed": seed,
                                   "baseline.samples_per_class": args.samples_per_class,
                                   "baseline.epochs": args.epochs, "baseline.lr": args.lr})
    opts = settings.eval.check()
    base = settings.baseline.check()
    model, dataset = _load_pair(args)
    report, clf = evaluate_softmax(model, dataset, opts.mode, base, seed=opts.seed,
                                   checkpoint=str(args.checkpoint))
    _emit(report.to_text(), args.out)
    if args.save_classifier:
        Path(args.save_classifier).mkdir(parents=True, exist_ok=True)
        clf.save(args.save_classifier)
    return 0


def cmd_report(args):
    from .errors import DataError

    path = Path(args.path)
    if path.is_dir():
        path = path / "run_manifest.txt"
    if not path.is_file():
        raise DataError(f"no report or manifest at {path}")
    _emit(path.read_text(encoding="utf-8"), args.out)
    return 0


def build_parser():
    parser = _Parser(prog="genclass", description="Generative zero-shot classifier.", epilog=_EPILOG)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset", epilog=_EPILOG)
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--config", help="key = value config file (synth.* keys)")
    p.add_argument("--k", type=int, help="number of seen classes (>= 2)")
    p.add_argument("--l", type=int, help="number of unseen classes (>= 2)")
    p.add_argument("--d-a", dest="d_a", type=int, help="attribute dimension")
    p.add_argument("--d-x", dest="d_x", type=int, help="feature dimension")
    p.add_argument("--sigma", type=float, help="relative within-class noise")
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train generator, critic and pair classifier", epilog=_EPILOG)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="run directory (checkpoint, loss log, manifest)")
    p.add_argument("--iterations", type=int, help="override the number of outer iterations")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate with the integrated pair classifier"),
                                 ("baseline", cmd_baseline, "evaluate a softmax head on generated features")):
        p = sub.add_parser(name, help=helptext, epilog=_EPILOG)
        p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--mode", choices=("zsl", "gzsl"))
        p.add_argument("--config", help="key = value config file (eval.* / baseline.* keys)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="also write the report to this file")
        p.set_defaults(func=func)
        if name == "eval":
            p.add_argument("--ng", type=int, help="generated samples per class prototype")
        else:
            p.add_argument("--samples-per-class", type=int, help="generated training samples per class")
            p.add_argument("--epochs", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--save-classifier", help="directory for the fitted softmax weights")

    p = sub.add_parser("report", help="print a saved report or run manifest")
    p.add_argument("path", help="report file, manifest file or run directory")
    p.add_argument("--out", help="also copy to this file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except GenClassError as exc:
        print(f"genclass: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"genclass: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
