"""
Run directories and reports
===========================

The harness writes each configured run to its own directory. Reports then
read those directories back: mean plasticity factors per block and replay
fraction, and the backbone vs regularizer time split.
"""

import tempfile
from pathlib import Path

from espcl.harness.config import parse_config
from espcl.harness.reports import report_pf, report_time
from espcl.harness.runner import execute, run_dir_for

root = Path(tempfile.mkdtemp(prefix="espcl-demo-"))
dirs, esp_dirs = [], []
for method, fraction in [("esp", 0.2), ("esp", 0.5), ("oewc", 0.2), ("plasticity", 0.2)]:
    cfg = parse_config({"method": method, "replay_fraction": fraction})
    rd = run_dir_for(cfg, root)
    execute(cfg, rd)
    dirs.append(rd)
    if method == "esp":
        esp_dirs.append(rd)
    print("wrote", rd.name, sorted(p.name for p in rd.iterdir()))

_, pf_text = report_pf(esp_dirs)
print("\n" + pf_text)

_, time_text = report_time(dirs)
print("\n" + time_text)
