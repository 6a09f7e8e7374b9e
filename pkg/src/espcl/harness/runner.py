"""Execute one configured run and persist its artifacts.

A run directory holds::

    config.json          canonical config echo
    metrics.json         accuracy matrix, average accuracy, forgetting, status
    accuracy_matrix.csv  row t = accuracy on every task after training task t
    timing.csv           per-task backbone / regularizer / eval seconds
    pf_log.csv           per-step entropies and plasticity factors (esp only)
    model.ckpt           final network parameters

``metrics.json`` carries no timings, so repeated runs produce identical bytes.
"""

import csv
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..continual import average_accuracy, forgetting, run_sequence
from ..network import save_checkpoint

OUTPUT_ENV = "ESPCL_OUTPUT_ROOT"
TIMING_COLUMNS = (
    "task_id",
    "method",
    "backbone_seconds",
    "regularizer_seconds",
    "eval_seconds",
    "total_seconds",
)


class RunExistsError(RuntimeError):
    pass


def output_root(override=None):
    return Path(override or os.environ.get(OUTPUT_ENV) or "runs")


def run_dir_for(cfg, root=None):
    return output_root(root) / f"{cfg.config_hash()}-seed{cfg.seed}"


def read_metrics(run_dir):
    p = Path(run_dir) / "metrics.json"
    if not p.exists():
        return None
    return json.loads(p.read_text(encoding="utf-8"))


def is_complete(run_dir):
    m = read_metrics(run_dir)
    return bool(m and m.get("complete"))


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class RunArtifacts:
    run_dir: Path
    config: dict
    config_hash: str
    accuracy_matrix: np.ndarray
    average_accuracy: float
    forgetting: list
    timing: list = field(default_factory=list)
    pf_log: Path = None
    steps_per_task: list = field(default_factory=list)

    def metrics(self):
        return {
            "complete": True,
            "version": __version__,
            "config_hash": self.config_hash,
            "config": self.config,
            "method": self.config["method"],
            "seed": self.config["seed"],
            "accuracy_matrix": self.accuracy_matrix.tolist(),
            "average_accuracy": self.average_accuracy,
            "forgetting": self.forgetting,
            "steps_per_task": self.steps_per_task,
        }

    @property
    def backbone_seconds(self):
        return sum(r["backbone_seconds"] for r in self.timing)

    @property
    def regularizer_seconds(self):
        return sum(r["regularizer_seconds"] for r in self.timing)


def _write_matrix(path, acc):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["after_task"] + [f"task_{j}" for j in range(acc.shape[1])])
        for t, row in enumerate(acc):
            w.writerow([t] + [repr(float(v)) for v in row])


def _timing_rows(method, records, eval_seconds):
    return [
        {
            "task_id": r.task_id,
            "method": method,
            "backbone_seconds": r.backbone_seconds,
            "regularizer_seconds": r.regularizer_seconds,
            "eval_seconds": e,
            "total_seconds": r.total_seconds,
        }
        for r, e in zip(records, eval_seconds)
    ]


def _write_timing(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TIMING_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def execute(cfg, run_dir=None, force=False, pf_override=None):
    """Run ``cfg`` and write its artifacts; returns :class:`RunArtifacts`.

    An existing complete run is only replaced with ``force``. On failure the
    directory keeps whatever finished plus ``metrics.json`` with
    ``"complete": false``.
    """
    run_dir = Path(run_dir) if run_dir is not None else run_dir_for(cfg)
    if run_dir.exists():
        if is_complete(run_dir) and not force:
            raise RunExistsError(f"{run_dir} already holds a complete run (use --force to overwrite)")
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    echo = cfg.canonical()
    chash = cfg.config_hash()
    _dump_json(run_dir / "config.json", echo)

    rows_done = []

    def on_task_end(t, net, strategy):
        rows_done.append(t)

    pf_path = run_dir / "pf_log.csv" if cfg.method == "esp" else None
    try:
        stream = cfg.build_stream()
        res = run_sequence(
            stream,
            cfg.method,
            cfg.train_settings(),
            cfg.seed,
            block_widths=cfg.arch.block_widths,
            pf_log_path=pf_path,
            pf_override=pf_override,
            on_task_end=on_task_end,
        )
    except Exception as exc:
        _dump_json(
            run_dir / "metrics.json",
            {
                "complete": False,
                "version": __version__,
                "config_hash": chash,
                "config": echo,
                "error": f"{type(exc).__name__}: {exc}",
                "completed_tasks": len(rows_done),
            },
        )
        raise

    art = RunArtifacts(
        run_dir,
        echo,
        chash,
        res.accuracy,
        average_accuracy(res.accuracy),
        forgetting(res.accuracy),
        _timing_rows(cfg.method, res.records, res.eval_seconds),
        pf_path,
        [r.steps for r in res.records],
    )
    _write_matrix(run_dir / "accuracy_matrix.csv", res.accuracy)
    _write_timing(run_dir / "timing.csv", art.timing)
    save_checkpoint(res.net, run_dir / "model.ckpt")
    _dump_json(run_dir / "metrics.json", art.metrics())
    return art
