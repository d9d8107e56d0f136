"""Command-line scenario runner.

    formation-planner --mode single --scenario dense.cfg --swarm swarm.cfg --seed 3 --out runs/a
    formation-planner --mode sweep --scenario dense.cfg --seeds 1-20 --out runs/dense
    formation-planner --mode oracle-check

Configuration comes only from the files and flags given; the environment is
never consulted. Exit codes: 0 ok (a failed episode is data), 1 bad
configuration or arguments, 2 oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checks
from .config import ConfigError
from .swarm_sim import SwarmConfig, run_episode
from .world import ScenarioError, ScenarioSpec

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE = 0, 1, 2

SUMMARY_COLUMNS = ("seed", "success", "reason", "avg_ef", "max_ef", "completion_time",
                   "min_scale", "min_obstacle_clearance", "min_mutual_distance")
TABLE_COLUMNS = ("episodes", "suc_percent", "avg_ef", "avg_ef_max")

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which is reserved for oracle failures
    def error(self, message):
        raise UsageError(message)


def parse_seeds(text):
    """``"3"``, ``"1,4,9"`` or ``"1-20"`` (inclusive) to a sorted unique list."""
    seeds = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep and lo:
                a, b = int(lo), int(hi)
                if b < a:
                    raise UsageError(f"empty seed range {part!r}")
                seeds.update(range(a, b + 1))
            else:
                seeds.add(int(part))
        except ValueError:
            raise UsageError(f"bad seed {part!r}") from None
    if not seeds:
        raise UsageError("need at least one seed")
    for s in seeds:
        if not 0 <= s < 2**64:
            raise UsageError(f"seed {s} is not a 64-bit unsigned integer")
    return sorted(seeds)


def build_parser():
    p = _Parser(prog="formation-planner", description="Seeded formation-flight episodes.")
    p.add_argument("--mode", choices=("single", "sweep", "oracle-check"), default="single")
    p.add_argument("--scenario", type=Path, help="scenario config file")
    p.add_argument("--swarm", type=Path, help="swarm config file (defaults if omitted)")
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed", help="one seed")
    seeds.add_argument("--seeds", help="seed list, e.g. 1-20 or 1,4,9")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel episodes in sweep mode")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _run_seed(args):
    scenario, swarm, seed = args
    report = run_episode(swarm.with_seed(seed), scenario.with_seed(seed))
    return seed, report


def write_episode(out_dir, seed, report):
    d = out_dir / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "trace.csv").write_text(report.trace_csv())
    (d / "report.json").write_text(report.to_text())


def summarise(reports):
    """Per-seed rows sorted by seed and the aggregate table row."""
    rows = []
    for seed, r in sorted(reports, key=lambda sr: sr[0]):
        rows.append((seed, int(r.success), r.reason, r.avg_similarity, r.max_similarity,
                     r.completion_time, r.min_scale, r.min_obstacle_clearance,
                     r.min_mutual_distance))
    n = len(rows)
    table = (n, 100.0 * sum(row[1] for row in rows) / n,
             float(np.mean([row[3] for row in rows])), float(np.mean([row[4] for row in rows])))
    return rows, table


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run(args):
    if args.scenario is None:
        raise UsageError(f"--scenario is required in {args.mode} mode")
    if args.out is None:
        raise UsageError(f"--out is required in {args.mode} mode")
    seed_text = args.seed if args.seed is not None else args.seeds
    seeds = parse_seeds(seed_text if seed_text is not None else "0")
    if args.mode == "single" and len(seeds) != 1:
        raise UsageError("single mode takes exactly one seed")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    scenario = ScenarioSpec.from_file(args.scenario)
    swarm = SwarmConfig.from_file(args.swarm) if args.swarm else SwarmConfig()

    args.out.mkdir(parents=True, exist_ok=True)
    jobs = [(scenario, swarm, s) for s in seeds]
    reports = []
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = pool.map(_run_seed, jobs)
            for seed, report in results:
                write_episode(args.out, seed, report)
                reports.append((seed, report))
    else:
        for job in jobs:
            seed, report = _run_seed(job)
            write_episode(args.out, seed, report)
            reports.append((seed, report))
    for seed, r in sorted(reports, key=lambda sr: sr[0]):
        print(f"seed {seed}: {r.reason} ef_avg={r.avg_similarity:.4f} "
              f"ef_max={r.max_similarity:.4f} t={r.completion_time:.1f}s")
    if args.mode == "sweep":
        rows, table = summarise(reports)
        _write_csv(args.out / "summary.csv", SUMMARY_COLUMNS, rows)
        _write_csv(args.out / "table.csv", TABLE_COLUMNS, [table])
        print(f"suc {table[1]:.0f}%  avg ef {table[2]:.4f}  avg ef_max {table[3]:.4f}")
    return EXIT_OK


def oracle_check(seed=0):
    ok = True
    for name, fn in checks.SUITES.items():
        t = time.perf_counter()
        res = fn(seed=seed)
        status = "PASS" if res.passed else "FAIL"
        extra = f"; {res.detail}" if res.detail else ""
        print(f"{name}: {status} ({res.cases} cases, {time.perf_counter() - t:.1f}s{extra})")
        ok &= res.passed
    return EXIT_OK if ok else EXIT_ORACLE


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.mode == "oracle-check":
            seed = parse_seeds(args.seed)[0] if args.seed is not None else 0
            return oracle_check(seed)
        return run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
