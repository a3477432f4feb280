"""Plot-ready trace files for one experiment.

Rows are ordered by round, then i, then j. Floats are written with ``repr`` so
the files round-trip exactly and identical runs give identical bytes.
``metrics.json`` carries no timing; wall-clock lives in ``manifest.json``.
"""
from __future__ import annotations

import csv
import json
import os
from importlib import metadata

from .experiment import ExperimentResult, weighted_average

WEIGHTS_FILE = "weights.csv"
LOSS_FILE = "loss.csv"
COMM_FILE = "comm.csv"
METRICS_FILE = "metrics.json"
MANIFEST_FILE = "manifest.json"


def _f(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def metrics_dict(result: ExperimentResult) -> dict:
    trace = [{"round": r, "per_client": [float(v) for v in vals],
              "weighted_average": weighted_average(vals, result.n_test)}
             for r, vals in result.metric_trace]
    out = {"method": result.config.method, "metric": result.metric, "n_test": result.n_test,
           "trace": trace}
    if result.per_client:
        out["per_client"] = [float(v) for v in result.per_client]
        out["weighted_average"] = result.weighted
    return out


def emit_traces(result: ExperimentResult, out_dir, error=None) -> list[str]:
    """Write every trace file for ``result`` into ``out_dir`` and return their names.

    Partial results are written as far as they go, with ``complete: false`` in
    the manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if result.weights:
        rows = ((r, i, j, _f(W[i, j])) for r, W in result.weights
                for i in range(W.shape[0]) for j in range(W.shape[1]))
        _write_csv(os.path.join(out_dir, WEIGHTS_FILE), ["round", "i", "j", "w_ij"], rows)
        written.append(WEIGHTS_FILE)
    if result.train_loss:
        rows = ((r, i, _f(v)) for r, losses in result.train_loss for i, v in enumerate(losses))
        _write_csv(os.path.join(out_dir, LOSS_FILE), ["round", "i", "train_loss"], rows)
        written.append(LOSS_FILE)
    if result.comm:
        keys = ["round", "bytes_sent", "all_to_all_bytes", "messages"]
        _write_csv(os.path.join(out_dir, COMM_FILE), keys,
                   ([c[k] for k in keys] for c in result.comm))
        written.append(COMM_FILE)
    _write_json(os.path.join(out_dir, METRICS_FILE), metrics_dict(result))
    written.append(METRICS_FILE)
    cfg = result.config
    _write_json(os.path.join(out_dir, MANIFEST_FILE), {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "data_seed": cfg.data.seed,
        "complete": bool(result.complete and error is None),
        "error": None if error is None else str(error),
        "wall_clock_s": result.wall_clock_s,
        "files": written,
        "version": _version(),
    })
    return written + [MANIFEST_FILE]
