"""Command-line entry point: ``memvir {train,eval,gradcheck,sweep}``."""

import argparse
import json
import logging
import sys
from dataclasses import fields

from .config import ConfigError, load_config
from .gradcheck import GradcheckSettings, run_gradcheck
from .sweep import parse_axis, run_sweep
from .train import eval_checkpoint, run_training

log = logging.getLogger("memvir")


def cmd_train(args):
    cfg = load_config(args.config)
    out = cfg.resolve_output_dir(args.output_dir)
    result = run_training(cfg, out_dir=out)
    final = result.records[-1]
    print(f"wrote {out} | step {final['step']} loss {final['loss']:.4f} "
          f"R@1 {final['recall_at'][str(cfg.recall_ks[0])]:.4f} MAP@R {final['map_at_r']:.4f}")
    return 0


def cmd_eval(args):
    report = eval_checkpoint(args.checkpoint, args.data)
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args):
    settings = GradcheckSettings()
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        known = {f.name for f in fields(GradcheckSettings)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown gradcheck keys: {sorted(unknown)}")
        if "variants" in doc:
            doc["variants"] = tuple(doc["variants"])
        settings = GradcheckSettings(**doc)
    report = run_gradcheck(settings)
    print(report.table())
    if not report.ok:
        print("failing variants: " + ", ".join(report.failing), file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)  # validates the base document
    axes = [parse_axis(a) for a in args.axis]
    out = cfg.resolve_output_dir(args.output_dir)
    rows = run_sweep(cfg.raw, axes, out, jobs=args.jobs)
    failed = [r["cell"] for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} cells, {len(failed)} failed; summary at {out / 'summary.csv'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="memvir", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss variant")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="cartesian sweep over NAME=V1,V2,... axes")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", action="append", required=True, metavar="NAME=V1,V2,...")
    p.add_argument("--output-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
