"""simharness CLI: run scenarios and the throughput bench.

    simharness run --config scenario.json [--seed N] [--report out.json]
    simharness bench --patient-days 1000 [--patients 20] [--report out.json]

Exit code is nonzero when any invariant audit fails.
"""

from __future__ import annotations

import argparse
import json
import tempfile
from pathlib import Path

from rehabpipe.simharness.scenario import run_scenario, throughput_bench
from rehabpipe.simharness.synth import ScenarioConfig


def _emit(report, path: str | None) -> int:
    payload = json.dumps(report.to_json(), indent=2)
    if path:
        Path(path).write_text(payload)
    print(payload)
    return 1 if report.invariant_failures else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="simharness")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run a scenario from a config file")
    run_parser.add_argument("--config", required=True)
    run_parser.add_argument("--seed", type=int, default=None)
    run_parser.add_argument("--report", default=None)
    run_parser.add_argument("--workdir", default=None)

    bench_parser = sub.add_parser("bench", help="desk-scale throughput bench")
    bench_parser.add_argument("--patient-days", type=int, default=1000)
    bench_parser.add_argument("--patients", type=int, default=20)
    bench_parser.add_argument("--seed", type=int, default=1)
    bench_parser.add_argument("--report", default=None)
    bench_parser.add_argument("--workdir", default=None)

    args = parser.parse_args(argv)

    if args.command == "run":
        config = ScenarioConfig.from_json(args.config)
        if args.seed is not None:
            config.seed = args.seed
        workdir = args.workdir or tempfile.mkdtemp(prefix="simharness-")
        report = run_scenario(config, workdir)
        return _emit(report, args.report)

    workdir = args.workdir or tempfile.mkdtemp(prefix="simharness-bench-")
    report = throughput_bench(
        patient_days=args.patient_days, patients=args.patients,
        seed=args.seed, workdir=workdir)
    return _emit(report, args.report)


if __name__ == "__main__":
    raise SystemExit(main())
