"""Export HTTP service: bundles, dashboards, static reports."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from rehabpipe.export.bundle import build_bundle
from rehabpipe.export.dashboard import BadRequest, DashboardBuilder
from rehabpipe.export.report import render_static_report
from rehabpipe.export.source import CoreDataView
from rehabpipe.httpd import Router, json_response, make_server

PSEUDONYM_RE = r"([0-9a-f]{32})"


def build_export_router(view: CoreDataView,
                        frequencies: dict[str, int] | None = None) -> Router:
    router = Router()
    dashboards = DashboardBuilder(view, frequencies)

    def get_bundle(match, query, body):
        view.refresh()
        pseudonym = match.group(1)
        window_start = int(query.get("from", 0)) or 1
        window_end = int(query.get("to", 0)) or (2 ** 62)
        bundle = build_bundle(view.observations(pseudonym), pseudonym,
                              window_start, window_end)
        return json_response(bundle.to_json())

    def get_dashboard(match, query, body):
        view.refresh()
        try:
            dashboard = dashboards.build(match.group(1),
                                         query.get("perspective", "clinician"))
        except BadRequest as exc:
            return json_response({"error": str(exc)}, 400)
        return json_response(dashboard)

    def get_report(match, query, body):
        view.refresh()
        dashboard = dashboards.build(match.group(1), "clinician")
        document = render_static_report(dashboard)
        return 200, "text/html; charset=utf-8", document.encode("utf-8")

    router.add("GET", rf"/v1/export/{PSEUDONYM_RE}", get_bundle)
    router.add("GET", rf"/v1/patients/{PSEUDONYM_RE}/dashboard", get_dashboard)
    router.add("GET", rf"/v1/patients/{PSEUDONYM_RE}/report", get_report)
    return router


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rehab-export")
    parser.add_argument("--core-dir", required=True)
    parser.add_argument("--port", type=int, default=8472)
    parser.add_argument("--frequencies", default=None,
                        help="JSON file: instrument -> assessments per week")
    args = parser.parse_args(argv)

    frequencies = None
    if args.frequencies:
        frequencies = {k: int(v) for k, v in
                       json.loads(Path(args.frequencies).read_text()).items()}
    view = CoreDataView(args.core_dir)
    server = make_server(build_export_router(view, frequencies), port=args.port)
    print(f"export api on 127.0.0.1:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
