"""Method x replay-fraction grids, several seeds per cell."""

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from ..continual import METHODS
from .config import ConfigValidationError, parse_config
from .reports import format_table, write_csv
from .runner import execute, is_complete, output_root, read_metrics, run_dir_for


@dataclass
class Cell:
    method: str
    replay_fraction: float
    order: tuple
    seed: int
    average_accuracy: float = None
    error: str = None
    run_dir: str = None


def _run_cell(cfg_dict, root, force):
    cfg = parse_config(cfg_dict)
    rd = run_dir_for(cfg, root)
    try:
        if is_complete(rd) and not force:
            return read_metrics(rd)["average_accuracy"], None, str(rd)
        return execute(cfg, rd, force=True).average_accuracy, None, str(rd)
    except Exception as exc:  # a failed cell must not stop the sweep
        return None, f"{type(exc).__name__}: {exc}", str(rd)


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else float("nan")


def sweep(base, methods, fractions, seeds=3, orders=None, workers=1, root=None, force=False):
    """Run every (method, fraction, order, seed) cell and summarize.

    Seeds are ``base.seed, base.seed + 1, ...``. Returns ``(cells, pooled,
    text, sweep_dir)`` where ``pooled[(method, fraction)]`` is the mean of the
    per-seed average accuracies over all seeds and orders.
    """
    if not methods or not fractions or seeds < 1:
        raise ConfigValidationError("sweep grid is empty: need methods, fractions and seeds >= 1")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigValidationError(f"methods: unknown {bad}; choose from {list(METHODS)}")
    orders = [tuple(base.task_order or range(base.tasks))] if not orders else [tuple(o) for o in orders]
    cells, jobs = [], []
    for m in methods:
        for f in fractions:
            for o in orders:
                for k in range(seeds):
                    cfg = base.with_updates(
                        method=m, replay_fraction=f, task_order=list(o), seed=base.seed + k
                    )
                    cells.append(Cell(m, f, o, cfg.seed))
                    jobs.append(cfg.canonical())
    root = output_root(root)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs, [root] * len(jobs), [force] * len(jobs)))
    else:
        results = [_run_cell(j, root, force) for j in jobs]
    for c, (avg, err, rd) in zip(cells, results):
        c.average_accuracy, c.error, c.run_dir = avg, err, rd

    pooled = {
        (m, f): _mean(c.average_accuracy for c in cells if (c.method, c.replay_fraction) == (m, f))
        for m in methods
        for f in fractions
    }
    by_order = {
        (m, f, o): _mean(
            c.average_accuracy for c in cells if (c.method, c.replay_fraction, c.order) == (m, f, o)
        )
        for m in methods
        for f in fractions
        for o in orders
    }

    grid_id = hashlib.sha256(
        json.dumps(
            {"base": base.config_hash(), "seed": base.seed, "m": methods, "f": fractions,
             "s": seeds, "o": [list(o) for o in orders]},
            sort_keys=True,
        ).encode()
    ).hexdigest()[:12]
    out = Path(root) / f"sweep-{grid_id}"
    out.mkdir(parents=True, exist_ok=True)
    header = ["method"] + [f"{f:g}" for f in fractions]
    table = [[m] + [pooled[(m, f)] for f in fractions] for m in methods]
    write_csv(out / "summary.csv", header, table)
    write_csv(
        out / "summary_by_order.csv",
        ["method", "replay_fraction", "order", "mean_average_accuracy"],
        [[m, f, "-".join(map(str, o)), v] for (m, f, o), v in by_order.items()],
    )
    write_csv(
        out / "cells.csv",
        ["method", "replay_fraction", "order", "seed", "average_accuracy", "error", "run_dir"],
        [
            [c.method, c.replay_fraction, "-".join(map(str, c.order)), c.seed,
             "" if c.average_accuracy is None else repr(c.average_accuracy), c.error or "", c.run_dir]
            for c in cells
        ],
    )
    text = format_table(header, table)
    if len(orders) > 1:
        for o in orders:
            text += f"\n\norder {'-'.join(map(str, o))}\n" + format_table(
                header, [[m] + [by_order[(m, f, o)] for f in fractions] for m in methods]
            )
    failed = [c for c in cells if c.error]
    if failed:
        text += f"\n\n{len(failed)} cell(s) failed; see {out / 'cells.csv'}"
    (out / "summary.txt").write_text(text + "\n", encoding="utf-8")
    return cells, pooled, text, out
