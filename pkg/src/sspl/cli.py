"""Command-line entry point: ``sspl {gen-data,train,eval,ablate,viz}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .ablate import AXES, ablate, format_table
from .config import load_config
from .errors import SSPLError, UsageError
from .synthdata import GeneratorConfig, generate, load_dataset, write_dataset
from .train import evaluate, model_from_checkpoint, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser():
    parser = _Parser(prog="sspl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    _common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=2000)
    g.add_argument("--start", type=int, default=0, help="index of the first scene")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--sigma-image", type=float, default=0.05)
    g.add_argument("--sigma-spec", type=float, default=0.1)

    t = sub.add_parser("train", help="train a model")
    _common(t)
    t.add_argument("--checkpoint", help="output checkpoint path (default <out_dir>/model.ckpt)")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="dataset file (default: test_dataset from the config)")
    e.add_argument("--pcm-T", type=int, dest="pcm_T", help="override the number of PCM cycles")
    e.add_argument("--report", help="write the comma-separated report here")

    a = sub.add_parser("ablate", help="run one ablation axis")
    _common(a)
    a.add_argument("axis", choices=sorted(AXES))
    a.add_argument("--out", help="write the table here")

    v = sub.add_parser("viz", help="export heatmaps as PPM files")
    _common(v)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--indices", default="0", help="comma-separated sample indices")
    v.add_argument("--out-dir", required=True)
    v.add_argument("--pcm-T", type=int, dest="pcm_T")
    return parser


def _cfg(args):
    return load_config(args.config, args.set, args.seed)


def cmd_gen_data(args):
    seed = args.seed if args.seed is not None else 0
    gcfg = GeneratorConfig(k=args.classes, sigma_image=args.sigma_image, sigma_spec=args.sigma_spec, seed=seed)
    if args.count < 1:
        raise UsageError("--count must be positive")
    write_dataset(generate(gcfg, args.count, args.start), args.out)
    print(f"wrote {args.count} scenes to {args.out}")


def cmd_train(args):
    cfg = _cfg(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt = args.checkpoint or os.path.join(cfg.out_dir, "model.ckpt")
    log = os.path.join(cfg.out_dir, "metrics.jsonl")
    result = train(cfg, log_path=log, checkpoint_path=ckpt, progress=lambda e: print(json.dumps(e), flush=True))
    print(f"best epoch {result.best_epoch} of {result.epochs_run}; checkpoint {ckpt}")
    if cfg.test_dataset:
        report = evaluate(result.model, load_dataset(cfg.test_dataset))
        print(f"test success@0.5 {report.ciou_at_half:.4f} auc {report.auc:.4f}")


def cmd_eval(args):
    model, cfg = model_from_checkpoint(args.checkpoint)
    for item in args.set:
        # allow --set test_dataset=... without a full training config
        key, _, value = item.partition("=")
        if key.strip() == "test_dataset":
            cfg.test_dataset = value.strip()
    path = args.data or cfg.test_dataset
    if not path:
        raise UsageError("no evaluation dataset: pass --data or set test_dataset")
    report = evaluate(model, load_dataset(path), pcm_T=args.pcm_T)
    text = report.to_csv()
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def cmd_ablate(args):
    cfg = _cfg(args)
    if not cfg.dataset or not cfg.test_dataset:
        raise UsageError("ablate needs both dataset and test_dataset")
    rows = ablate(args.axis, cfg, load_dataset(cfg.dataset), load_dataset(cfg.test_dataset))
    text = format_table(args.axis, rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def cmd_viz(args):
    from .viz import visualize

    model, _ = model_from_checkpoint(args.checkpoint)
    try:
        indices = [int(i) for i in args.indices.split(",") if i.strip()]
    except ValueError:
        raise UsageError(f"bad --indices {args.indices!r}") from None
    for p in visualize(model, load_dataset(args.data), indices, args.out_dir, args.pcm_T):
        print(p)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "viz": cmd_viz}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except SSPLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
