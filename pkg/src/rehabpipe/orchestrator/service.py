"""Orchestrator daemon: periodic ticks plus a read-only run ledger view."""

from __future__ import annotations

import argparse
import logging
import threading
from pathlib import Path

from rehabpipe.analytics import builtin_services
from rehabpipe.httpd import Router, json_response, make_server
from rehabpipe.orchestrator.engine import FileBlockSource, Orchestrator
from rehabpipe.orchestrator.ledger import RunLedger, RunState
from rehabpipe.orchestrator.registry import default_descriptors, load_registry


def build_router(orchestrator: Orchestrator) -> Router:
    router = Router()

    def get_runs(match, query, body):
        state = RunState(query["state"]) if query.get("state") else None
        workflow = query.get("workflow") or None
        runs = orchestrator.ledger.runs(state=state, workflow_id=workflow)
        return json_response([r.to_json() for r in runs])

    def get_status(match, query, body):
        counts: dict[str, int] = {}
        for run in orchestrator.ledger.runs():
            counts[run.state.value] = counts.get(run.state.value, 0) + 1
        return json_response({
            "runs": counts,
            "quiescent": orchestrator.quiescent(),
            "checkpoint": orchestrator.ledger.checkpoint_offset,
        })

    router.add("GET", r"/v1/runs", get_runs)
    router.add("GET", r"/v1/status", get_status)
    return router


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rehab-orchestrator")
    parser.add_argument("--core-dir", required=True,
                        help="shared compute-core data dir (landing zone writes it)")
    parser.add_argument("--registry", default=None,
                        help="workflow registry JSON; defaults to the shipped set")
    parser.add_argument("--tick-interval", type=float, default=30.0)
    parser.add_argument("--port", type=int, default=8471)
    parser.add_argument("--retry-backoff-ms", type=int, default=30_000)
    args = parser.parse_args(argv)

    core = Path(args.core_dir)
    descriptors = load_registry(args.registry) if args.registry else default_descriptors()
    orchestrator = Orchestrator(
        descriptors=descriptors,
        services=builtin_services(),
        ledger=RunLedger(core / "runs.journal"),
        events_path=core / "store" / "events.ndjson",
        block_source=FileBlockSource(core / "store"),
        retry_backoff_ms=args.retry_backoff_ms,
    )
    server = make_server(build_router(orchestrator), port=args.port)
    stop = threading.Event()

    log = logging.getLogger(__name__)

    def loop() -> None:
        while not stop.is_set():
            try:
                orchestrator.tick()
            except Exception:  # noqa: BLE001 - tick errors must not kill the daemon
                log.warning("tick failed", exc_info=True)
            stop.wait(args.tick_interval)

    worker = threading.Thread(target=loop, daemon=True)
    worker.start()
    print(f"orchestrator on 127.0.0.1:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
