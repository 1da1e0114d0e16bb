"""Command line front end: ``run``, ``grid`` and ``generate``."""

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .core import EnsembleError
from .data_io import CorpusError, generate_synthetic, specs_from_config
from .experiment import ConfigError, load_config, run, run_grids


def _parser():
    p = argparse.ArgumentParser(prog="ensemblekit", description="Ensemble experiments on opcode-sequence corpora.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=True):
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, help="output directory")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    r = sub.add_parser("run", help="train and evaluate every experiment in a config")
    r.add_argument("config")
    r.add_argument("--no-models", action="store_true", help="skip writing model files")
    common(r)
    g = sub.add_parser("grid", help="grid search the config's parameter grids")
    g.add_argument("config")
    common(g)
    s = sub.add_parser("generate", help="write a synthetic corpus from a spec file")
    s.add_argument("spec")
    common(s, jobs=False)
    return p


def _generate(args):
    path = Path(args.spec)
    try:
        spec = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    if not isinstance(spec, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    out = Path(args.out or spec.get("out") or "corpus")
    fam = {k: v for k, v in spec.items() if k not in ("seed", "out")}
    specs = specs_from_config(fam, seed)
    generate_synthetic(specs, seed, out)
    n = sum(s.count for s in specs)
    print(f"wrote {n} samples in {len(specs)} families to {out}")


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "generate":
            _generate(args)
            return 0
        raw = load_config(args.config)
        base_dir = Path(args.config).resolve().parent
        if args.command == "run":
            res = run(raw, args.out, args.jobs, args.seed, base_dir, save_models=not args.no_models)
            print((res.out_dir / "report.txt").read_text(encoding="utf-8"), end="")
        else:
            summary = run_grids(raw, args.out, args.jobs, args.seed, base_dir)
            for family, s in summary.items():
                print(f"{family}: best {s['best']} {s['metric']}={s['best_score']:.4f} "
                      f"({s['evaluated']} evaluated, {s['infeasible']} infeasible)")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, EnsembleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
