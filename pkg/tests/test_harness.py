import csv
import json
import time

import numpy as np
import pytest

from espcl import continual
from espcl.harness import cli
from espcl.harness.config import ConfigValidationError, load_config, parse_config
from espcl.harness.reports import MissingLogError, pf_means, read_pf_log, report_pf, report_time
from espcl.harness.runner import OUTPUT_ENV, RunExistsError, execute, read_metrics, run_dir_for
from espcl.harness.sweep import sweep
from espcl.plasticity import PF_LOG_COLUMNS

SMALL = {
    "arch": {"block_widths": [8, 8, 8]},
    "dataset": {"kind": "gaussian", "train_per_class": 40, "test_per_class": 10},
}


def small(**kw):
    d = json.loads(json.dumps(SMALL))
    d.update(kw)
    return parse_config(d)


def test_minimal_config_runs(tmp_path):
    cfg = parse_config({})
    assert cfg.method == "esp" and cfg.arch.block_widths == [64] * 4
    art = execute(cfg, tmp_path / "run")
    for name in ("config.json", "metrics.json", "accuracy_matrix.csv", "timing.csv", "pf_log.csv", "model.ckpt"):
        assert (tmp_path / "run" / name).exists()
    m = read_metrics(tmp_path / "run")
    assert m["complete"] and len(m["accuracy_matrix"]) == 5
    assert m["average_accuracy"] == pytest.approx(np.mean(m["accuracy_matrix"][-1]))
    assert art.config_hash == m["config_hash"]


def test_invalid_fraction_names_field():
    with pytest.raises(ConfigValidationError, match="replay_fraction"):
        parse_config({"replay_fraction": 1.5})
    with pytest.raises(ConfigValidationError, match="bogus"):
        parse_config({"bogus": 1})
    with pytest.raises(ConfigValidationError, match="dataset"):
        parse_config({"dataset": {"kind": "gaussian", "class_count": 9}})


def test_hash_stable_under_key_reordering(tmp_path):
    a = {"method": "si", "replay_fraction": 0.3, "optimizer": {"lr": 0.01, "kind": "sgd"}}
    b = {"optimizer": {"kind": "sgd", "lr": 0.01}, "replay_fraction": 0.3, "method": "si"}
    assert parse_config(a).config_hash() == parse_config(b).config_hash()
    assert parse_config(a).config_hash() == parse_config({**a, "seed": 9}).config_hash()
    assert parse_config(a).config_hash() != parse_config({**a, "replay_fraction": 0.4}).config_hash()
    p = tmp_path / "c.json"
    p.write_text(json.dumps(b))
    assert load_config(p).config_hash() == parse_config(a).config_hash()


def test_repeated_runs_are_bit_identical(tmp_path):
    cfg = small(method="esp", tau=0.5)
    execute(cfg, tmp_path / "a")
    execute(cfg, tmp_path / "b")
    for name in ("metrics.json", "pf_log.csv", "accuracy_matrix.csv", "model.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_existing_run_needs_force(tmp_path):
    cfg = small(method="plasticity")
    execute(cfg, tmp_path / "r")
    with pytest.raises(RunExistsError):
        execute(cfg, tmp_path / "r")
    execute(cfg, tmp_path / "r", force=True)


def test_failed_run_marks_incomplete(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\n1,oops\n")
    cfg = parse_config({"dataset": {"kind": "csv", "path": str(bad)}, "tasks": 1})
    with pytest.raises(ValueError):
        execute(cfg, tmp_path / "r")
    m = read_metrics(tmp_path / "r")
    assert m["complete"] is False and "line 2" in m["error"]


def test_sweep_grid(tmp_path):
    base = small()
    cells, pooled, text, out = sweep(base, ["plasticity", "stability"], [0.0, 0.2], seeds=3, root=tmp_path)
    assert len(cells) == 12 and not any(c.error for c in cells)
    run_dirs = {c.run_dir for c in cells}
    assert len(run_dirs) == 12
    for (m, f), v in pooled.items():
        accs = [read_metrics(c.run_dir)["average_accuracy"] for c in cells if (c.method, c.replay_fraction) == (m, f)]
        assert v == pytest.approx(sum(accs) / 3, abs=1e-12)
    assert (out / "summary.csv").exists() and "plasticity" in text

    # complete runs are reused, not recomputed
    stamp = {d: (tmp_path / d.split("/")[-1] / "metrics.json").stat().st_mtime_ns for d in run_dirs}
    time.sleep(0.01)
    sweep(base, ["plasticity", "stability"], [0.0, 0.2], seeds=3, root=tmp_path)
    assert all((tmp_path / d.split("/")[-1] / "metrics.json").stat().st_mtime_ns == s for d, s in stamp.items())


def test_sweep_orders_and_empty_grid(tmp_path):
    base = small()
    cells, pooled, text, out = sweep(base, ["plasticity"], [0.2], seeds=1, orders=[[0, 1, 2, 3, 4], [4, 3, 2, 1, 0]], root=tmp_path)
    assert len(cells) == 2 and "order 4-3-2-1-0" in text
    assert (out / "summary_by_order.csv").read_text().count("\n") == 3
    with pytest.raises(ConfigValidationError):
        sweep(base, [], [0.2], root=tmp_path)
    with pytest.raises(ConfigValidationError):
        sweep(base, ["plasticity"], [0.2], seeds=0, root=tmp_path)


def _fake_pf_run(path, values, frac=0.2):
    """values[step][block] -> one synthetic pf_log row each."""
    path.mkdir()
    (path / "config.json").write_text(json.dumps({"replay_fraction": frac, "method": "esp"}))
    with open(path / "pf_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PF_LOG_COLUMNS)
        for s, row in enumerate(values):
            for b, v in enumerate(row):
                w.writerow([0, s, b, 1.0, v, 0])


def test_report_pf_constant_and_two_step(tmp_path):
    _fake_pf_run(tmp_path / "c", [[0.75, 0.75]] * 5)
    overall, _ = pf_means(read_pf_log(tmp_path / "c"))
    assert overall[0][0] == 0.75 and overall[1][0] == 0.75
    _fake_pf_run(tmp_path / "t", [[0.2], [0.4]], frac=0.5)
    overall, per_task = pf_means(read_pf_log(tmp_path / "t"))
    assert overall[0][0] == pytest.approx(0.3, abs=1e-15)
    assert per_task[(0, 0)][3] == 2
    rows, text = report_pf([tmp_path / "c", tmp_path / "t"])
    assert "replay=0.2" in text and "replay=0.5" in text


def test_report_pf_matches_streaming_pass(tmp_path):
    execute(small(method="esp"), tmp_path / "r")
    overall, per_task = pf_means(read_pf_log(tmp_path / "r"))
    # independent single pass with running means
    mean, count = {}, {}
    with open(tmp_path / "r" / "pf_log.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            b = int(r["block_index"])
            count[b] = count.get(b, 0) + 1
            mean[b] = mean.get(b, 0.0) + (float(r["pf"]) - mean.get(b, 0.0)) / count[b]
    for b in mean:
        assert abs(mean[b] - overall[b][0]) < 1e-12
    assert {t for t, _ in per_task} == set(range(5))


def test_report_pf_missing_log(tmp_path):
    execute(small(method="plasticity"), tmp_path / "r")
    with pytest.raises(MissingLogError):
        report_pf([tmp_path / "r"])


def test_report_time(tmp_path, monkeypatch):
    fit_secs = []
    orig = continual.fit_branches

    def timed(*a, **kw):
        t0 = time.perf_counter()
        out = orig(*a, **kw)
        fit_secs.append(time.perf_counter() - t0)
        return out

    monkeypatch.setattr(continual, "fit_branches", timed)
    execute(small(method="esp", method_params={"branch_epochs": 3}), tmp_path / "esp")
    execute(small(method="plasticity"), tmp_path / "pl")
    rows, text = report_time([tmp_path / "esp", tmp_path / "pl"])
    by = {r[0]: r for r in rows}
    assert by["plasticity"][4] == 0.0
    assert by["esp"][4] > 0
    # regularizer time = branch fitting plus the few microseconds of sample selection
    assert by["esp"][4] == pytest.approx(sum(fit_secs), rel=0.1, abs=2e-3)
    for r in rows:
        assert r[5] == pytest.approx(r[3] + r[4], abs=1e-12)
    assert "backbone_seconds" in text


def _write_cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    d = json.loads(json.dumps(SMALL))
    d.update(kw)
    p.write_text(json.dumps(d))
    return p


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "runs"))
    cfg = _write_cfg(tmp_path, method="esp")
    assert cli.main(["run", "--config", str(cfg)]) == 0
    rd = run_dir_for(load_config(cfg))
    assert rd.parent == tmp_path / "runs" and (rd / "metrics.json").exists()
    assert cli.main(["run", "--config", str(cfg)]) == 0  # already complete: no-op
    assert "already holds" in capsys.readouterr().out
    assert cli.main(["report-pf", "--run", str(rd)]) == 0
    assert (rd / "pf_report.csv").exists()
    assert cli.main(["report-time", "--runs", str(rd), "--out", str(tmp_path / "t.csv")]) == 0

    bad = _write_cfg(tmp_path, replay_fraction=1.5)
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert "replay_fraction" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["run"])
    assert exc.value.code == 2

    pl = _write_cfg(tmp_path, method="plasticity")
    assert cli.main(["run", "--config", str(pl)]) == 0
    assert cli.main(["report-pf", "--run", str(run_dir_for(load_config(pl)))]) == 1

    csvbad = tmp_path / "bad.csv"
    csvbad.write_text("0,1\n1,oops\n")
    broken = _write_cfg(tmp_path, dataset={"kind": "csv", "path": "bad.csv"}, tasks=1)
    assert cli.main(["run", "--config", str(broken)]) == 1


def test_cli_sweep(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    code = cli.main(
        ["--output-root", str(tmp_path / "o"), "sweep", "--config", str(cfg), "--methods", "plasticity,linear",
         "--fractions", "0.2", "--seeds", "1"]
    )
    assert code == 0
    assert len([p for p in (tmp_path / "o").iterdir() if not p.name.startswith("sweep-")]) == 2
    assert cli.main(["sweep", "--config", str(cfg), "--methods", "nope", "--fractions", "0.2"]) == 2
