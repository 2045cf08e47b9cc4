"""Command-line interface.

Subcommands: ingest, synth, run, automl, report. Exit codes: 0 success,
1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError
from .runner import replay_log, run_automl, run_single
from .report import emit_report
from .synth import generate_synthetic, parse_house_spec
from .timeseries import align, load_csv, resample, write_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="wattsplit",
                     description="Energy disaggregation with automated model selection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a CSV dataset onto a uniform grid")
    p.add_argument("csv", help="input CSV (timestamp,aggregate,<appliance>,...)")
    p.add_argument("--period", type=float, default=60.0, help="target period, seconds")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic house CSV")
    p.add_argument("spec", help="house spec file")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("run", help="run one configured model (mode = single)")
    p.add_argument("config")

    p = sub.add_parser("automl", help="run the model search (mode = automl)")
    p.add_argument("config")

    p = sub.add_parser("report", help="rebuild report files from a trial log")
    p.add_argument("trial_log")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_ingest(args) -> None:
    with open(args.csv, "rb") as fh:
        channels = load_csv(fh)
    channels = [resample(ch, args.period) for ch in channels]
    ds = align(channels[0], channels[1:])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "dataset.csv", "w", encoding="utf-8") as fh:
        write_csv(ds, fh)
    with open(out / "manifest.txt", "w", encoding="utf-8") as fh:
        fh.write("file = dataset.csv\n")
        fh.write(f"period = {ds.period:g}\n")
        fh.write(f"channels = {','.join(ch.label for ch in (ds.aggregate, *ds.appliances))}\n")
    print(f"wrote {out / 'dataset.csv'} ({len(ds)} rows)")


def _cmd_synth(args) -> None:
    with open(args.spec, "r", encoding="utf-8") as fh:
        house = parse_house_spec(fh.read())
    ds = generate_synthetic(house)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        write_csv(ds, fh)
    print(f"wrote {out} ({len(ds)} rows, {len(ds.appliances)} appliances)")


def _cmd_run(args) -> None:
    cfg = load_config(args.config)
    if cfg.mode != "single":
        raise ConfigError("the run command needs mode = single")
    result = run_single(cfg)
    rep = result.report
    print(f"family {cfg.family}: test MAE {rep.mae_overall:.3f} W, "
          f"accuracy {rep.accuracy_overall:.4f}")
    print(f"outputs in {result.out_dir}")


def _cmd_automl(args) -> None:
    cfg = load_config(args.config)
    if cfg.mode != "automl":
        raise ConfigError("the automl command needs mode = automl")
    result = run_automl(cfg)
    best = result.best
    print(f"best trial {best.id}: {best.config} "
          f"(validation MAE {best.loss:.3f} W)")
    print(f"final test MAE {result.report.mae_overall:.3f} W, "
          f"accuracy {result.report.accuracy_overall:.4f}")
    print(f"outputs in {result.out_dir}")


def _cmd_report(args) -> None:
    history, final = replay_log(args.trial_log)
    final_mae = final.get("test_mae") if final else None
    files = emit_report(history, args.out, final_test_mae=final_mae)
    print("wrote " + ", ".join(str(f) for f in files))


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "ingest": _cmd_ingest,
            "synth": _cmd_synth,
            "run": _cmd_run,
            "automl": _cmd_automl,
            "report": _cmd_report,
        }[args.command]
        handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
