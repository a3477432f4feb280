"""Command line entry point: ``federico run|sweep|compare``.

Log level comes from the FEDERICO_LOG environment variable (default WARNING).
Exit codes: 0 success, 1 run failure, 2 bad arguments or configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from .config import ExperimentConfig, config_from_dict, parse_config, set_path
from .errors import ConfigError, FedericoError
from .experiment import COMPARE_METHODS, ExperimentResult, compare_methods, run_experiment, \
    split_means
from .traces import MANIFEST_FILE, emit_traces

log = logging.getLogger("federico")


def _setup_logging():
    level = os.environ.get("FEDERICO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _scalar(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="federico",
                                description="Decentralized personalized federated learning simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON config file (may be empty)")
        sp.add_argument("--out", help="output directory (default: config output_dir)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--workers", type=int, default=1, help="threads per round (default 1)")

    common(sub.add_parser("run", help="run one experiment"))
    sp = sub.add_parser("sweep", help="vary one config entry over a list of values")
    common(sp)
    sp.add_argument("--param", required=True, help="dotted config key, e.g. sampler.epsilon")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: the config seed)")
    sp = sub.add_parser("compare", help="federico and the baselines on shared splits and seeds")
    common(sp)
    sp.add_argument("--splits", type=int, default=5, help="number of data splits (default 5)")
    sp.add_argument("--seeds", type=int, default=3, help="number of seeds per split (default 3)")
    sp.add_argument("--methods", default=",".join(COMPARE_METHODS),
                    help="comma-separated methods (default: %(default)s)")
    return p


def _load(args) -> tuple[dict, ExperimentConfig]:
    cfg = parse_config(args.config)
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
        cfg = config_from_dict(raw)
    return raw, cfg


def run_one(cfg: ExperimentConfig, out_dir, workers=1) -> ExperimentResult:
    """Run and write traces; on failure write what exists, then re-raise."""
    result = ExperimentResult(cfg, cfg.metric, [])
    try:
        run_experiment(cfg, workers=workers, result=result)
    except Exception as exc:
        emit_traces(result, out_dir, error=exc)
        raise
    emit_traces(result, out_dir)
    return result


def cmd_run(args):
    _, cfg = _load(args)
    out = args.out or cfg.output_dir
    res = run_one(cfg, out, args.workers)
    print(f"{cfg.method} {cfg.metric} (weighted) = {res.weighted:.6f}  -> {out}")


def cmd_sweep(args):
    raw, cfg = _load(args)
    out = args.out or cfg.output_dir
    values = [_scalar(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("no values given", key="--values")
    seeds = args.seeds or [cfg.seed]
    rows = []
    for value in values:
        run_raw = set_path(raw, args.param, value)
        for seed in seeds:
            run_raw["seed"] = seed
            run_cfg = config_from_dict(run_raw)
            name = f"{args.param}={value}" + (f"/seed={seed}" if len(seeds) > 1 else "")
            res = run_one(run_cfg, os.path.join(out, name), args.workers)
            rows.append([args.param, json.dumps(value), seed, repr(res.weighted)])
            print(f"{name}: {run_cfg.metric} (weighted) = {res.weighted:.6f}")
    with open(os.path.join(out, "sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "seed", "weighted_metric"])
        w.writerows(rows)


def cmd_compare(args):
    _, cfg = _load(args)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    splits = [cfg.data.seed + s for s in range(args.splits)]
    seeds = [cfg.seed + s for s in range(args.seeds)]
    manifest = {"config": cfg.to_dict(), "splits": splits, "seeds": seeds, "methods": methods,
                "complete": False}
    rows = []
    try:
        rows = compare_methods(cfg, splits, seeds, methods, args.workers,
                               on_result=lambda row, _: log.info("%s", row))
        manifest["complete"] = True
    finally:
        with open(os.path.join(out, "compare.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "seed", "method", "weighted_metric"])
            w.writerows([r.split, r.seed, r.method, repr(r.weighted)] for r in rows)
        with open(os.path.join(out, MANIFEST_FILE), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    means = split_means(rows)
    print(f"weighted {cfg.metric}, mean over {len(seeds)} seed(s)")
    print("split  " + "  ".join(f"{m:>12}" for m in methods))
    for s in splits:
        print(f"{s:<5}  " + "  ".join(f"{means[m][s]:12.4f}" for m in methods))
    print("mean   " + "  ".join(
        f"{sum(means[m].values()) / len(splits):12.4f}" for m in methods))


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare}[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FedericoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
