"""Cartesian hyper-parameter sweeps over training runs."""

import copy
import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import parse_config, set_by_path
from .train import run_training

log = logging.getLogger(__name__)

# sweep axis name -> dotted config key
AXES = {
    "batch_size": "batch_size",
    "class_ratio": "class_ratio",
    "N": "memvir.n_steps",
    "M": "memvir.margin",
    "mode": "memvir.mode",
    "seed": "seed",
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_axis(spec):
    """``'N=1,2,2'`` -> ``('N', [1, 2])``; duplicates are dropped with a warning."""
    if "=" not in spec:
        raise ValueError(f"axis must look like NAME=V1,V2,..., got {spec!r}")
    name, _, values = spec.partition("=")
    name = name.strip()
    if name not in AXES:
        raise ValueError(f"unknown sweep axis {name!r}; choose from {sorted(AXES)}")
    out = []
    for raw in values.split(","):
        v = _parse_value(raw.strip())
        if v in out:
            log.warning("duplicate value %r on axis %s ignored", v, name)
            continue
        out.append(v)
    if not out:
        raise ValueError(f"axis {name} has no values")
    return name, out


def cell_name(index, assignment):
    parts = "_".join(f"{k}={v}" for k, v in assignment.items())
    return f"cell{index:03d}_{parts}"


def _run_cell(args):
    index, doc, assignment, out_dir = args
    row = {"cell": cell_name(index, assignment), **assignment}
    try:
        cfg = parse_config(doc)
        result = run_training(cfg, out_dir=out_dir)
        final = result.records[-1]
        row["status"] = "ok"
        row["error"] = ""
        row["step"] = final["step"]
        row["loss"] = final["loss"]
        row["active_classes"] = final["active_classes"]
        for k, v in final["recall_at"].items():
            row[f"recall_at_{k}"] = v
        for key in ("p_at_1", "r_precision", "map_at_r", "mean_cos_to_weight"):
            row[key] = final[key]
    except Exception as exc:  # partial-failure policy: record and move on
        log.error("sweep cell %s failed: %s", row["cell"], exc)
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(base_doc: dict, axes, out_dir, jobs=1):
    """Run every combination of ``axes`` (list of (name, values)) on top of ``base_doc``.

    Writes one run directory per cell plus ``summary.csv``; returns the summary rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = [name for name, _ in axes]
    tasks = []
    for index, combo in enumerate(itertools.product(*(values for _, values in axes))):
        assignment = dict(zip(names, combo))
        doc = copy.deepcopy(base_doc)
        doc.pop("output_dir", None)
        for name, value in assignment.items():
            set_by_path(doc, AXES[name], value)
        tasks.append((index, doc, assignment, str(out_dir / cell_name(index, assignment))))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, tasks))
    else:
        rows = [_run_cell(t) for t in tasks]

    fields = ["cell", *names, "status"]
    for row in rows:
        for key in row:
            if key not in fields and key != "error":
                fields.append(key)
    fields.append("error")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return rows
