"""Command-line front end.

Subcommands:

* ``train``  - one training run; writes metrics.csv, checkpoint.json, report.json
* ``sweep``  - rates x {TC on, off} x seeds; one run directory per cell plus a
               merged Table-2-style report (CSV and Markdown)
* ``audit``  - consistency audit of a checkpoint via both the phi passes and
               the explicit reachability oracle
* ``report`` - merge report rows from one or more run directories

Exit codes: 0 success, 2 invalid config/input, 3 numeric failure during
training (the checkpoint of the last finite epoch is still written). An audit
that finds phi/oracle disagreement exits with 1.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import topo
from .backend import backend_name
from .config import (
    ConfigError,
    build_dataset,
    build_prune_config,
    build_spec,
    config_hash,
    load_config,
    target_from_rate,
)
from .netgraph import total_prunable
from .train import (
    NumericFailure,
    build_checkpoint,
    load_checkpoint_masks,
    metrics_to_csv,
    network_report,
    report_row,
    run_training,
)

REPORT_COLUMNS = (
    "pruning_rate_percent",
    "tc_enabled",
    "parameter_count",
    "percent_ac",
    "accuracy_percent",
)


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_run(out_dir, result, cfg, chash):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        fh.write(metrics_to_csv(result.metrics_rows))
    _write_json(out_dir / "checkpoint.json", build_checkpoint(result, cfg))
    row = report_row(result, cfg.tc_enabled, chash)
    _write_json(out_dir / "report.json", {"rows": [row], "backend": backend_name()})
    return row


def _run_once(config, spec, dataset, cfg, seed, out_dir, chash):
    try:
        result = run_training(spec, dataset, cfg, seed)
    except NumericFailure as err:
        # keep whatever was finite so the run can still be inspected
        row = _write_run(out_dir, err.partial, cfg, chash)
        row["status"] = f"numeric failure: {err}"
        return row, 3
    row = _write_run(out_dir, result, cfg, chash)
    row["status"] = "ok"
    return row, 0


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    seed = config.get("seed", 0)
    dataset = build_dataset(config)
    spec = build_spec(config, dataset)
    cfg = build_prune_config(config, spec)
    out_dir = args.out or config.get("out_dir", "runs/train")
    row, code = _run_once(config, spec, dataset, cfg, seed, out_dir, config_hash(config))
    print(
        f"rate={row['pruning_rate_percent']:.2f}% tc={row['tc_enabled']} "
        f"kept={row['parameter_count']} %A-C={row['percent_ac']:.2f} "
        f"acc={row['accuracy_percent']:.2f}% ({row['status']})"
    )
    return code


def _parse_rates(text):
    rates = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        rate = float(piece)
        if not (0.0 <= rate < 100.0):
            raise ConfigError(f"rates: {rate} outside [0, 100)")
        rates.append(rate)
    if not rates:
        raise ConfigError("rates: empty list")
    deduped = list(dict.fromkeys(rates))
    if len(deduped) != len(rates):
        print("warning: duplicate rates ignored", file=sys.stderr)
    return deduped


def _parse_seeds(text, fallback):
    if text is None:
        return [fallback]
    return [int(piece) for piece in text.split(",") if piece.strip()]


def cmd_sweep(args):
    config = load_config(args.config)
    dataset = build_dataset(config)
    spec = build_spec(config, dataset)
    base_cfg = build_prune_config(config, spec)
    rates = _parse_rates(args.rates)
    seeds = _parse_seeds(args.seeds, config.get("seed", 0))
    tc_modes = {"both": (False, True), "on": (True,), "off": (False,)}[args.tc]
    out_dir = Path(args.out or config.get("out_dir", "runs/sweep"))
    chash = config_hash(config)
    total = total_prunable(spec)
    rows = []
    worst = 0
    for rate in rates:
        target = target_from_rate(rate, total)
        for tc in tc_modes:
            for seed in seeds:
                cfg = replace(base_cfg, target_kept=target, tc_enabled=tc)
                tag = f"rate{rate:g}_tc{'on' if tc else 'off'}_seed{seed}"
                row, code = _run_once(
                    config, spec, dataset, cfg, seed, out_dir / tag, chash
                )
                row["requested_rate_percent"] = rate
                rows.append(row)
                worst = max(worst, code)
                print(
                    f"{tag}: kept={row['parameter_count']} "
                    f"%A-C={row['percent_ac']:.2f} "
                    f"acc={row['accuracy_percent']:.2f}% ({row['status']})"
                )
    rows.sort(key=_row_order)
    _write_json(out_dir / "sweep_report.json", {"rows": rows, "backend": backend_name()})
    (out_dir / "sweep_report.csv").write_text(_rows_to_csv(rows))
    (out_dir / "sweep_report.md").write_text(_rows_to_markdown(rows))
    print(f"sweep report written to {out_dir}")
    return worst


def _row_order(row):
    rate = row.get("requested_rate_percent", row.get("pruning_rate_percent", 0.0))
    return (rate, bool(row.get("tc_enabled")), row.get("seed", 0))


def _rows_to_csv(rows):
    header = list(REPORT_COLUMNS) + ["seed", "requested_rate_percent", "status"]
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for col in header:
            value = row.get(col, "")
            cells.append(repr(value) if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _fmt(value, digits=2):
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _rows_to_markdown(rows):
    lines = [
        "| Pruning rate (%) | TC | # kept parameters | % of A-C | Accuracy (%) | seed |",
        "|---|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            "| {rate} | {tc} | {params} | {ac} | {acc} | {seed} |".format(
                rate=_fmt(row.get("pruning_rate_percent", "")),
                tc="yes" if row.get("tc_enabled") else "no",
                params=row.get("parameter_count", ""),
                ac=_fmt(row.get("percent_ac", "")),
                acc=_fmt(row.get("accuracy_percent", "")),
                seed=row.get("seed", ""),
            )
        )
    summary = _summarize(rows)
    if summary:
        lines.append("")
        lines.append("Mean +/- std over seeds:")
        lines.append("")
        lines.append("| Pruning rate (%) | TC | % of A-C | Accuracy (%) | runs |")
        lines.append("|---|---|---|---|---|")
        for entry in summary:
            lines.append(
                "| {rate} | {tc} | {ac} | {acc} | {n} |".format(
                    rate=_fmt(entry["rate"]),
                    tc="yes" if entry["tc"] else "no",
                    ac=f"{entry['ac_mean']:.2f} +/- {entry['ac_std']:.2f}",
                    acc=f"{entry['acc_mean']:.2f} +/- {entry['acc_std']:.2f}",
                    n=entry["n"],
                )
            )
    return "\n".join(lines) + "\n"


def _summarize(rows):
    groups = {}
    for row in rows:
        if "accuracy_percent" not in row:
            continue
        key = (
            row.get("requested_rate_percent", round(row.get("pruning_rate_percent", 0.0))),
            bool(row.get("tc_enabled")),
        )
        groups.setdefault(key, []).append(row)
    if all(len(v) <= 1 for v in groups.values()):
        return []
    out = []
    for (rate, tc), members in sorted(groups.items()):
        acc = np.array([m["accuracy_percent"] for m in members], dtype=float)
        ac = np.array([m["percent_ac"] for m in members], dtype=float)
        out.append(
            {
                "rate": rate,
                "tc": tc,
                "acc_mean": float(acc.mean()),
                "acc_std": float(acc.std()),
                "ac_mean": float(ac.mean()),
                "ac_std": float(ac.std()),
                "n": len(members),
            }
        )
    return out


def cmd_audit(args):
    try:
        with open(args.checkpoint) as fh:
            payload = json.load(fh)
        spec, masks = load_checkpoint_masks(payload)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
        print(f"error: cannot read checkpoint: {err}", file=sys.stderr)
        return 2
    oracle = network_report(spec, masks, sets_fn=topo.reachable_sets_oracle)
    phi = network_report(spec, masks, sets_fn=topo.reachable_sets_phi)
    agree = oracle.to_dict() == phi.to_dict()
    out = {
        "oracle": oracle.to_dict(),
        "phi": phi.to_dict(),
        "agreement": agree,
    }
    if args.json:
        print(json.dumps(out, indent=2, sort_keys=True))
    else:
        print(
            f"kept={oracle.total_kept} A-C={oracle.ac_kept} "
            f"%A-C={oracle.percent_ac:.2f} (oracle)"
        )
        print(
            f"kept={phi.total_kept} A-C={phi.ac_kept} "
            f"%A-C={phi.percent_ac:.2f} (phi passes)"
        )
        print(f"agreement: {'ok' if agree else 'INTERNAL-CONSISTENCY FAILURE'}")
    return 0 if agree else 1


def cmd_report(args):
    rows = []
    for run_dir in args.dirs:
        run_dir = Path(run_dir)
        found = None
        for name in ("report.json", "sweep_report.json"):
            if (run_dir / name).exists():
                found = run_dir / name
                break
        if found is None:
            rows.append({"run_dir": str(run_dir), "status": "incomplete"})
            continue
        with open(found) as fh:
            payload = json.load(fh)
        for row in payload.get("rows", []):
            row.setdefault("status", "ok")
            rows.append(row)
    if not any("accuracy_percent" in row for row in rows):
        print("error: no completed runs found", file=sys.stderr)
        return 2
    complete = [r for r in rows if "accuracy_percent" in r]
    complete.sort(key=_row_order)
    incomplete = [r for r in rows if "accuracy_percent" not in r]
    if args.format == "csv":
        print(_rows_to_csv(complete), end="")
    else:
        print(_rows_to_markdown(complete), end="")
    for row in incomplete:
        print(f"incomplete: {row['run_dir']}", file=sys.stderr)
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="topoprune",
        description="Topologically consistent magnitude pruning at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training configuration")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="pruning-rate sweep with/without TC")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--rates", required=True, help="comma list, e.g. 50,75,88,95,99")
    p_sweep.add_argument("--tc", choices=("both", "on", "off"), default="both")
    p_sweep.add_argument("--seeds", default=None, help="comma list of seeds")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_audit = sub.add_parser("audit", help="consistency audit of a checkpoint")
    p_audit.add_argument("--checkpoint", required=True)
    p_audit.add_argument("--json", action="store_true")
    p_audit.set_defaults(func=cmd_audit)

    p_report = sub.add_parser("report", help="merge run reports into one table")
    p_report.add_argument("dirs", nargs="+")
    p_report.add_argument("--format", choices=("md", "csv"), default="md")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        for message in err.messages:
            print(f"config error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
