"""Plain CSV / aligned-text reports over finished run directories."""

import csv
import json
from collections import defaultdict
from pathlib import Path

from ..plasticity import PF_LOG_COLUMNS
from .runner import TIMING_COLUMNS


class MissingLogError(FileNotFoundError):
    pass


def format_table(header, rows):
    cells = [[str(h) for h in header]] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _config(run_dir):
    p = Path(run_dir) / "config.json"
    if not p.exists():
        raise MissingLogError(f"{run_dir}: config.json not found")
    return json.loads(p.read_text(encoding="utf-8"))


def read_pf_log(run_dir):
    path = Path(run_dir) / "pf_log.csv"
    if not path.exists():
        raise MissingLogError(f"{run_dir}: pf_log.csv not found (only esp runs write one)")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PF_LOG_COLUMNS:
            raise MissingLogError(f"{path}: unexpected columns {reader.fieldnames}")
        return list(reader)


def pf_means(rows):
    """Per-block means across all steps and tasks, and per (task, block).

    Returns ``(overall, per_task)`` where ``overall[block] = (mean_pf,
    mean_entropy, frozen_share, steps)`` and ``per_task[(task, block)]`` has
    the same tuple.
    """
    acc = defaultdict(lambda: [0.0, 0.0, 0, 0])
    acc_t = defaultdict(lambda: [0.0, 0.0, 0, 0])
    for r in rows:
        b, t = int(r["block_index"]), int(r["task_id"])
        for a in (acc[b], acc_t[(t, b)]):
            a[0] += float(r["pf"])
            a[1] += float(r["entropy"])
            a[2] += int(r["frozen_flag"])
            a[3] += 1

    def done(d):
        return {k: (s / n, e / n, f / n, n) for k, (s, e, f, n) in sorted(d.items())}

    return done(acc), done(acc_t)


PF_REPORT_HEADER = ("replay_fraction", "run", "task_id", "block_index", "mean_pf", "mean_entropy", "frozen_share", "steps")


def report_pf(run_dirs):
    """Long-format rows for every run plus a block x replay-fraction text table."""
    rows = []
    by_frac = defaultdict(lambda: defaultdict(list))
    for rd in run_dirs:
        frac = _config(rd)["replay_fraction"]
        overall, per_task = pf_means(read_pf_log(rd))
        name = Path(rd).name
        for b, (m, e, f, n) in overall.items():
            rows.append((frac, name, "all", b, m, e, f, n))
            by_frac[frac][b].append(m)
        for (t, b), (m, e, f, n) in per_task.items():
            rows.append((frac, name, t, b, m, e, f, n))
    fracs = sorted(by_frac)
    blocks = sorted({b for d in by_frac.values() for b in d})
    table = [
        [b] + [sum(by_frac[f][b]) / len(by_frac[f][b]) if by_frac[f][b] else "" for f in fracs]
        for b in blocks
    ]
    text = format_table(["block"] + [f"replay={f:g}" for f in fracs], table)
    return rows, text


TIME_REPORT_HEADER = ("method", "replay_fraction", "runs", "backbone_seconds", "regularizer_seconds", "total_seconds")


def read_timing(run_dir):
    path = Path(run_dir) / "timing.csv"
    if not path.exists():
        raise MissingLogError(f"{run_dir}: timing.csv not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TIMING_COLUMNS:
            raise MissingLogError(f"{path}: unexpected columns {reader.fieldnames}")
        return list(reader)


def report_time(run_dirs):
    """Backbone vs regularizer seconds per (method, replay fraction), averaged over runs."""
    groups = defaultdict(list)
    for rd in run_dirs:
        cfg = _config(rd)
        rows = read_timing(rd)
        bb = sum(float(r["backbone_seconds"]) for r in rows)
        rg = sum(float(r["regularizer_seconds"]) for r in rows)
        groups[(cfg["method"], cfg["replay_fraction"])].append((bb, rg))
    out = []
    for (method, frac), vals in sorted(groups.items()):
        bb = sum(v[0] for v in vals) / len(vals)
        rg = sum(v[1] for v in vals) / len(vals)
        out.append((method, frac, len(vals), bb, rg, bb + rg))
    return out, format_table(TIME_REPORT_HEADER, out)
