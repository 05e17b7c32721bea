"""Command-line front end: experiments, utility tables and layout export."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import enum
import logging
import math
import shutil
import sys
import tempfile
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from .config import AllocationMode, DropConfig, config_to_dict, dump_config, parse_config
from .engine import (CDF_COLUMNS, SAMPLE_COLUMNS, MetricsReport, read_summary, run_campaign, run_drop,
                     summary_items, write_cdf_csv, write_samples_csv, write_summary)
from .errors import ConfigError
from .topology import write_node_roster
from .utility import utility_sweep

log = logging.getLogger("ltem2m")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class Experiment(str, enum.Enum):
    LAMBDA_SWEEP = "LAMBDA_SWEEP"
    WITH_WITHOUT_M2M = "WITH_WITHOUT_M2M"
    GRAPH_VS_REUSE = "GRAPH_VS_REUSE"
    CUSTOM = "CUSTOM"


@dataclass
class RunManifest:
    config_path: Optional[Path]
    experiment: Experiment
    output_dir: Path
    seed: Optional[int] = None
    overrides: list[str] = field(default_factory=list)
    workers: int = 1
    verbosity: int = 0

    def to_dict(self) -> dict:
        return {"config_path": str(self.config_path) if self.config_path else None,
                "experiment": self.experiment.value, "output_dir": str(self.output_dir),
                "seed": self.seed, "overrides": list(self.overrides), "workers": self.workers,
                "version": __version__}


def campaigns(experiment: Experiment, cfg: DropConfig) -> list[tuple[str, DropConfig]]:
    """(label, config) for every campaign of an experiment; all share the master seed."""
    if experiment is Experiment.LAMBDA_SWEEP:
        return [(f"lambda_{k / 10:.1f}", cfg.replace(lam=k / 10)) for k in range(11)]
    if experiment is Experiment.WITH_WITHOUT_M2M:
        without = dataclasses.replace(cfg.population, outdoor_mtcds_per_sector=0,
                                      indoor_pairs_per_block=0, mtcgs_per_sector=0)
        return [("with_m2m", cfg), ("without_m2m", cfg.replace(population=without))]
    if experiment is Experiment.GRAPH_VS_REUSE:
        return [("graph_based", cfg.replace(allocation_mode=AllocationMode.GRAPH_BASED)),
                ("full_reuse", cfg.replace(allocation_mode=AllocationMode.FULL_REUSE))]
    return [("custom", cfg)]


def experiment_summary(experiment: Experiment, reports: Sequence[MetricsReport]) -> list[tuple[str, str]]:
    by = {r.label: r for r in reports}
    items: list[tuple[str, str]] = [("experiment", experiment.value)]
    if experiment is Experiment.WITH_WITHOUT_M2M:
        w, wo = by["with_m2m"].aggregate_cell_utility, by["without_m2m"].aggregate_cell_utility
        diff = w - wo
        items += [("with_m2m.aggregate", repr(w)), ("without_m2m.aggregate", repr(wo)),
                  ("aggregate_difference", repr(diff)),
                  ("aggregate_difference_sign", "positive" if diff > 0 else "negative" if diff < 0 else "zero")]
    elif experiment is Experiment.GRAPH_VS_REUSE:
        g = by["graph_based"].percentiles.get("PAIR", {}).get(10, math.nan)
        f = by["full_reuse"].percentiles.get("PAIR", {}).get(10, math.nan)
        winner = "graph_based" if g > f else "full_reuse" if f > g else "tie"
        items += [("graph_based.PAIR.p10", repr(g)), ("full_reuse.PAIR.p10", repr(f)),
                  ("pair_p10_winner", winner)]
    elif experiment is Experiment.LAMBDA_SWEEP:
        for pop in ("H2H", "M2M"):
            series = [r.percentiles.get(pop, {}).get(10, math.nan) for r in reports]
            items.append((f"{pop}.p10_by_lambda", " ".join(repr(x) for x in series)))
    return items


def validate_outputs(out: Path, labels: Sequence[str], cfg: DropConfig) -> None:
    """Raise ValueError unless every output file matches its documented format."""
    with open(out / "samples.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != SAMPLE_COLUMNS:
        raise ValueError("samples.csv: bad header")
    for row in rows[1:]:
        if len(row) != len(SAMPLE_COLUMNS) or row[0] not in labels:
            raise ValueError(f"samples.csv: malformed row {row}")
        int(row[2]), int(row[4])
        if float(row[5]) < 0 or not 0.0 <= float(row[6]) <= 1.0:
            raise ValueError(f"samples.csv: value out of range in {row}")
    for label in labels:
        with open(out / f"cdf_{label}.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != CDF_COLUMNS:
            raise ValueError(f"cdf_{label}.csv: bad header")
        last: dict[str, tuple[float, float]] = {}
        for row in rows[1:]:
            x, p = float(row[2]), float(row[3])
            px, pp = last.get(row[1], (-math.inf, 0.0))
            if x < px or p < pp or not 0.0 < p <= 1.0:
                raise ValueError(f"cdf_{label}.csv: CDF not monotone at {row}")
            last[row[1]] = (x, p)
        if any(abs(p - 1.0) > 1e-12 for _, p in last.values()):
            raise ValueError(f"cdf_{label}.csv: CDF does not reach 1")
    read_summary(out / "summary.txt")
    if parse_config(out / "config.yaml") != cfg:
        raise ValueError("config.yaml does not re-parse to the effective configuration")


def run_experiment(manifest: RunManifest) -> int:
    """Run every campaign of the manifest into a fresh output directory."""
    try:
        overrides = list(manifest.overrides)
        if manifest.seed is not None:
            overrides.append(f"seed={manifest.seed}")
        cfg = parse_config(manifest.config_path, overrides)
    except (ConfigError, OSError) as e:
        log.error("configuration error: %s", e)
        return EXIT_USAGE

    out = manifest.output_dir
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        log.error("output directory %s already exists and is not empty", out)
        return EXIT_USAGE
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        dump_config(cfg, staging / "config.yaml")
        (staging / "manifest.yaml").write_text(yaml.safe_dump(manifest.to_dict(), sort_keys=False))
        plan = campaigns(manifest.experiment, cfg)
        reports = []
        for label, ccfg in plan:
            log.info("campaign %s: %d drops", label, ccfg.num_drops)
            rep = run_campaign(ccfg, workers=manifest.workers, label=label)
            if rep.violations:
                raise RuntimeError(f"campaign {label}: orthogonality violated: {rep.violations[:3]}")
            reports.append(rep)
            write_cdf_csv(staging / f"cdf_{label}.csv", [rep])
            if manifest.verbosity >= 2:
                _write_debug(staging / "debug" / label, ccfg)
        write_samples_csv(staging / "samples.csv", reports)
        headline = experiment_summary(manifest.experiment, reports)
        items = headline + [kv for rep in reports for kv in summary_items(rep)]
        write_summary(staging / "summary.txt", items)
        validate_outputs(staging, [lbl for lbl, _ in plan], cfg)
        if out.exists():
            out.rmdir()
        staging.rename(out)
    except Exception as e:  # any failure removes partial outputs
        log.error("experiment failed: %s", e)
        log.debug("%s", traceback.format_exc())
        shutil.rmtree(staging, ignore_errors=True)
        return EXIT_FAILURE
    log.info("results written to %s", out)
    for key, value in headline:
        print(f"{key} = {value}")
    return EXIT_OK


def _write_debug(path: Path, cfg: DropConfig) -> None:
    """Roster, allocation and per-record SINR of the campaign's first drop."""
    path.mkdir(parents=True, exist_ok=True)
    res = run_drop(cfg, 0, keep_details=True)
    d = res.details
    write_node_roster(path / "roster_drop0.csv", d.nodes)
    d.allocation.dump(path / "allocation_drop0.csv")
    with open(path / "sinr_drop0.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "rb", "kind", "tx", "rx", "power_dbm", "sinr_db"])
        for rec, s in d.record_sinr_db.items():
            w.writerow([rec.slot, rec.rb, rec.kind.value, rec.tx, rec.rx, repr(rec.power_dbm), repr(s)])


def _cmd_run(args) -> int:
    manifest = RunManifest(args.config, Experiment(args.experiment), args.output, args.seed,
                           args.overrides, args.workers, args.verbose)
    return run_experiment(manifest)


def _cmd_utility_sweep(args) -> int:
    try:
        cfg = parse_config(args.config, args.overrides)
    except (ConfigError, OSError) as e:
        log.error("configuration error: %s", e)
        return EXIT_USAGE
    spec = getattr(cfg.utility, args.population)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["rate_bps", "utility"])
    for r, u in utility_sweep(spec, args.r_max, args.points):
        w.writerow([repr(float(r)), repr(float(u))])
    return EXIT_OK


def _cmd_layout(args) -> int:
    try:
        cfg = parse_config(args.config, args.overrides)
    except (ConfigError, OSError) as e:
        log.error("configuration error: %s", e)
        return EXIT_USAGE
    res = run_drop(cfg, args.drop, keep_details=True)
    write_node_roster(args.output, res.details.nodes)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltem2m", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", type=Path, help="YAML configuration file (defaults if omitted)")
        sp.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v progress, -vv debug dumps of each campaign's first drop")
        sp.add_argument("overrides", nargs="*", metavar="KEY=VALUE",
                        help="config overrides, e.g. lambda=0.8 or layout.num_sites=7")

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("experiment", choices=[e.value for e in Experiment])
    run.add_argument("-o", "--output", type=Path, required=True, help="output directory (must be new or empty)")
    run.add_argument("-s", "--seed", type=int, help="master seed (overrides the config)")
    run.add_argument("-j", "--workers", type=int, default=1, help="parallel drop workers")
    common(run)
    run.set_defaults(func=_cmd_run)

    us = sub.add_parser("utility-sweep", help="print a rate/utility table for one population")
    us.add_argument("population", choices=["ue", "mtcd", "pair"])
    us.add_argument("--r-max", type=float, default=2e6, help="upper rate in bit/s")
    us.add_argument("--points", type=int, default=101)
    common(us)
    us.set_defaults(func=_cmd_utility_sweep)

    lay = sub.add_parser("layout", help="write the node roster of one drop")
    lay.add_argument("-o", "--output", type=Path, required=True)
    lay.add_argument("--drop", type=int, default=0)
    common(lay)
    lay.set_defaults(func=_cmd_layout)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    # overrides may follow options; anything else left over is an error
    bad = [x for x in extra if x.startswith("-") or "=" not in x]
    if bad:
        parser.error(f"unrecognized arguments: {' '.join(bad)}")
    args.overrides = list(args.overrides) + extra
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        log.error("--workers must be >= 1")
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
