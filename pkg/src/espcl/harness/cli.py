"""Command line entry point.

    espcl run --config cfg.json [--force]
    espcl sweep --config cfg.json --methods esp,plasticity --fractions 0.1,0.2 --seeds 3
    espcl report-pf --run runs/<id> [runs/<id> ...]
    espcl report-time --runs runs/<id> [runs/<id> ...]

Exit codes: 0 success, 2 invalid configuration or arguments, 1 runtime failure.
The output root defaults to ``./runs`` and can be set with ``ESPCL_OUTPUT_ROOT``.
"""

import argparse
import sys
from pathlib import Path

from .config import ConfigValidationError, load_config
from .reports import PF_REPORT_HEADER, TIME_REPORT_HEADER, MissingLogError, report_pf, report_time, write_csv
from .runner import RunExistsError, execute, run_dir_for
from .sweep import sweep

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _csv_list(conv):
    def parse(s):
        try:
            return [conv(v) for v in s.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def _orders(s):
    return [[int(v) for v in part.split(",")] for part in s.split(";") if part.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def build_parser():
    p = _Parser(prog="espcl", description="Entropy-based stability-plasticity experiments")
    p.add_argument("--output-root", help="override $ESPCL_OUTPUT_ROOT")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one configured experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--force", action="store_true", help="overwrite an existing complete run")

    s = sub.add_parser("sweep", help="method x replay-fraction grid")
    s.add_argument("--config", required=True)
    s.add_argument("--methods", type=_csv_list(str), required=True)
    s.add_argument("--fractions", type=_csv_list(float), required=True)
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--orders", type=_orders, help="task orders, e.g. '0,1,2,3,4;4,3,2,1,0'")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--force", action="store_true")

    f = sub.add_parser("report-pf", help="per-block mean plasticity factors")
    f.add_argument("--run", nargs="+", required=True)
    f.add_argument("--out", help="CSV path (default: pf_report.csv in the first run dir)")

    t = sub.add_parser("report-time", help="backbone vs regularizer time split")
    t.add_argument("--runs", nargs="+", required=True)
    t.add_argument("--out", help="optional CSV path")
    return p


def cli_run(config_path, force=False, output_root=None):
    cfg = load_config(config_path)
    rd = run_dir_for(cfg, output_root)
    art = execute(cfg, rd, force=force)
    print(f"run complete: {rd}")
    print(f"average accuracy: {art.average_accuracy:.2f}")
    return art


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            try:
                cli_run(args.config, args.force, args.output_root)
            except RunExistsError as exc:
                print(str(exc))
        elif args.command == "sweep":
            if args.seeds < 1 or args.workers < 1:
                raise ConfigValidationError("--seeds and --workers must be >= 1")
            base = load_config(args.config)
            cells, _, text, out = sweep(
                base, args.methods, args.fractions, args.seeds, args.orders,
                args.workers, args.output_root, args.force,
            )
            print(text)
            print(f"\nsummary written to {out}")
        elif args.command == "report-pf":
            rows, text = report_pf(args.run)
            out = Path(args.out) if args.out else Path(args.run[0]) / "pf_report.csv"
            write_csv(out, PF_REPORT_HEADER, rows)
            print(text)
            print(f"\nwritten to {out}")
        elif args.command == "report-time":
            rows, text = report_time(args.runs)
            if args.out:
                write_csv(args.out, TIME_REPORT_HEADER, rows)
            print(text)
    except ConfigValidationError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except MissingLogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
