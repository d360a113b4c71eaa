"""Command line entry point: ``adrsig run | gen | describe``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import synthgen
from .errors import AdrsigError
from .pipeline import RunConfig, run
from .store import load_clean

log = logging.getLogger("adrsig")

# flag name -> (RunConfig field, parser)
_RUN_KEYS = {
    "dataset-dir": ("dataset_dir", Path),
    "truth": ("truth", Path),
    "drugs": ("drugs", lambda v: [d.strip() for d in v.split(",") if d.strip()]),
    "algorithms": ("algorithms", lambda v: [a.strip() for a in v.split(",") if a.strip()]),
    "seed": ("rng_seed", int),
    "out": ("out_dir", Path),
    "jobs": ("jobs", int),
    "mutara-tr": ("mutara_tr", int),
    "tpd-variant": ("tpd_variant", int),
    "quantile-tol": ("quantile_tol", float),
}


def read_key_values(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise AdrsigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise AdrsigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def build_run_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        for key, raw in read_key_values(args.config).items():
            if key not in _RUN_KEYS:
                raise AdrsigError(f"unknown run config key {key!r}")
            values[key] = raw
    for key in _RUN_KEYS:
        raw = getattr(args, key.replace("-", "_"))
        if raw is not None:
            values[key] = raw
    for required in ("dataset-dir", "out"):
        if required not in values:
            raise AdrsigError(f"--{required} is required")
    parsed = {}
    for key, raw in values.items():
        name, parse = _RUN_KEYS[key]
        try:
            parsed[name] = parse(raw)
        except ValueError as exc:
            raise AdrsigError(f"invalid value for {key}: {raw!r}") from exc
    return RunConfig(**parsed)


def cmd_run(args) -> int:
    return run(build_run_config(args))


def cmd_gen(args) -> int:
    config = synthgen.load_config(args.config) if args.config else synthgen.GeneratorConfig()
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.n_patients is not None:
        overrides["n_patients"] = args.n_patients
    if overrides:
        config = replace(config, **overrides)
    out = synthgen.generate(config, args.out)
    print(out)
    return 0


def cmd_describe(args) -> int:
    db = load_clean(args.dataset_dir)
    drugs = [d.strip() for d in args.drugs.split(",")] if args.drugs else None
    summary = synthgen.describe(db, drugs)
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adrsig", description="ADR signal detection on longitudinal patient data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="rank events for drugs with one or more algorithms")
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--dataset-dir")
    p.add_argument("--truth", help="ground_truth.csv")
    p.add_argument("--drugs", help="comma-separated drug codes")
    p.add_argument("--algorithms", help="comma-separated: ROR05,MUTARA60,MUTARA180,HUNT60,HUNT180,TPD1,TPD2 "
                                        "(MUTARA/HUNT/TPD pick up --mutara-tr/--tpd-variant; ALL for every one)")
    p.add_argument("--seed")
    p.add_argument("--out")
    p.add_argument("--jobs")
    p.add_argument("--mutara-tr", choices=["60", "180"])
    p.add_argument("--tpd-variant", choices=["1", "2"])
    p.add_argument("--quantile-tol")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--config", help="generator key=value file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-patients", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("describe", help="per-drug era counts, mean age and male proportion")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--drugs")
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("ADRSIG_LOG", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AdrsigError as exc:
        print(f"adrsig: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
