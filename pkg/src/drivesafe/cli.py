"""Command-line entry point: run a sweep and write report.csv plus manifest.json."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .experiment import AttackSetting, ExperimentConfig, perturbation_sweep, run_experiment
from .ingest import SchemaError, ValidationFailed
from .scenario import INTENTIONS, Intention

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)} - {"sweep", "scenario_docs", "out_dir"}


class ConfigError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drivesafe", description=__doc__)
    p.add_argument("--config", type=Path, help="JSON experiment config (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--attack", choices=["none", "pgd", "patch", "effect-perturb", "effect-patch"], default="none")
    p.add_argument("--alpha", type=float, default=0.1, help="pgd step intensity")
    p.add_argument("--eps", type=float, default=0.1, help="pgd per-step clip bound")
    p.add_argument("--iters", type=int, default=10, help="pgd iterations")
    p.add_argument("--patch-radius", type=int, default=16)
    p.add_argument("--placement", choices=["random", "specific"], default="random")
    p.add_argument("--intention", choices=["left", "straight", "right", "all"], default="all")
    p.add_argument("--algo", choices=["astar", "gbfs"])
    p.add_argument("--out", type=Path, help="output directory; CSV goes to stdout when omitted")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--n-scenarios", type=int)
    p.add_argument("--road-mix", type=float, help="fraction of street scenarios")
    p.add_argument("--detector", choices=["gt", "surrogate"])
    p.add_argument("--theta", help="surrogate parameter file")
    p.add_argument("--patch", help="trained patch image (.ppm) for --attack patch")
    return p


def _sweep(args) -> tuple[AttackSetting, ...]:
    if args.attack == "effect-perturb":
        return perturbation_sweep()
    none = AttackSetting("none")
    if args.attack == "none":
        return (none,)
    if args.attack == "pgd":
        return none, AttackSetting("pgd", alpha=args.alpha, eps=args.eps, iters=args.iters)
    return none, AttackSetting(args.attack, placement=args.placement, patch_radius=args.patch_radius)


def load_config_file(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = set(doc) - CONFIG_KEYS - {"scenarios"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    out = {k: v for k, v in doc.items() if k != "scenarios"}
    docs = []
    for i, item in enumerate(doc.get("scenarios", [])):
        if isinstance(item, str):
            item_path = (path.parent / item).resolve()
            try:
                item = json.loads(item_path.read_text())
            except json.JSONDecodeError as e:
                raise ConfigError(f"{item_path}: invalid JSON ({e.msg})") from None
        if not isinstance(item, dict):
            raise ConfigError(f"scenarios[{i}]: expected an object or a path")
        docs.append(item)
    if docs:
        out["scenario_docs"] = tuple(docs)
        out.setdefault("n_scenarios", len(docs))
    if "intentions" in out:
        out["intentions"] = tuple(out["intentions"])
    return out


def make_config(args) -> ExperimentConfig:
    base = load_config_file(args.config) if args.config else {}
    over = {
        "seed": args.seed,
        "algo": args.algo,
        "n_scenarios": args.n_scenarios,
        "road_mix": args.road_mix,
        "detector": args.detector,
        "theta_path": args.theta,
        "patch_path": args.patch,
    }
    base.update({k: v for k, v in over.items() if v is not None})
    if args.intention != "all":
        base["intentions"] = (Intention(args.intention),)
    base.setdefault("intentions", INTENTIONS)
    cfg = ExperimentConfig(**base, sweep=_sweep(args), jobs=args.jobs)
    if args.out is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = make_config(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, SchemaError, ValidationFailed, ValueError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = run_experiment(cfg)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (SchemaError, ValidationFailed) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out is None:
        sys.stdout.write(res.csv)
    else:
        print(f"wrote {args.out / 'report.csv'} and {args.out / 'manifest.json'}")
    if args.verbose:
        labels = [s.label for s in cfg.sweep]
        for r in res.report.sorted_rows():
            k = labels.index(r.setting)
            mine = [c for c in res.cells if c.setting == k and c.outcome.intention is r.intention]
            mean = sum(c.expanded for c in mine) / len(mine)
            print(f"{r.intention.value:8s} {r.setting:28s} mean expanded nodes {mean:.1f}", file=sys.stderr)
        print(f"elapsed {res.manifest['elapsed_s']} s, errors {res.manifest['errors']}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
