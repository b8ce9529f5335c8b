"""Node daemon: loopback ingestion API plus the packaging/transmit worker."""

from __future__ import annotations

import argparse
import logging
import threading

from rehabpipe.dtn.config import NodeConfig
from rehabpipe.dtn.node import DataTransferNode, StorageError, now_ms
from rehabpipe.dtn.transport import ChaosTransport, LandingZoneClient
from rehabpipe.httpd import Router, json_response, make_server
from rehabpipe.model import NodeProfile, ValidationError
from rehabpipe.privacy import ClinicKeyring


def build_router(node: DataTransferNode) -> Router:
    router = Router()

    def post_ingest(match, query, body):
        try:
            receipt = node.ingest(body)
        except ValidationError as exc:
            return json_response({"error": str(exc), "field": exc.field}, 400)
        except StorageError as exc:
            return json_response({"error": str(exc)}, 500)
        return json_response(receipt)

    def get_status(match, query, body):
        return json_response(node.status())

    def get_prompts(match, query, body):
        since = int(query.get("since", 0))
        prompts = [
            {"instrument": p.instrument.value, "due_at": p.due_at}
            for p in node.prompts.emitted() if p.due_at >= since
        ]
        return json_response(prompts)

    def post_flush(match, query, body):
        # operational endpoint: force one package+transmit round
        node.drain_queue(force=True)
        report = node.transmit_cycle()
        return json_response({"sent": report.sent, "acked": report.acked,
                              "failed": report.failed, **node.status()})

    router.add("POST", r"/v1/ingest", post_ingest)
    router.add("GET", r"/v1/status", get_status)
    router.add("GET", r"/v1/prompts", get_prompts)
    router.add("POST", r"/v1/flush", post_flush)
    return router


def worker_loop(node: DataTransferNode, stop: threading.Event,
                poll_interval_s: float) -> None:
    log = logging.getLogger(__name__)
    while not stop.is_set():
        try:
            node.prompts.tick(now_ms())
            node.scan_cis_drop()
            node.drain_queue()
            if node.store.outbox_depth():
                node.transmit_cycle()
        except Exception:  # noqa: BLE001 - worker must survive transient errors
            log.warning("node worker iteration failed", exc_info=True)
        stop.wait(poll_interval_s)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rehab-dtn")
    parser.add_argument("--config", required=True)
    parser.add_argument("--profile", choices=["clinic", "home"], default=None)
    parser.add_argument("--data-dir", required=True)
    parser.add_argument("--poll-interval", type=float, default=1.0)
    args = parser.parse_args(argv)

    config = NodeConfig.from_json(args.config)
    if args.profile:
        config.profile = NodeProfile(args.profile)
    if not config.keyring_path:
        raise SystemExit("config.keyring_path is required (provisioned at registration)")
    keyring = ClinicKeyring.load(config.keyring_path)
    transport = LandingZoneClient(config.landing_zone_address, config.node_id)
    if config.chaos_packet_loss or config.chaos_ack_loss:
        transport = ChaosTransport(
            transport, config.chaos_packet_loss, config.chaos_ack_loss,
            config.chaos_seed)
    node = DataTransferNode(config, args.data_dir, keyring, transport)

    server = make_server(build_router(node), port=config.listen_port)
    stop = threading.Event()
    worker = threading.Thread(
        target=worker_loop, args=(node, stop, args.poll_interval), daemon=True)
    worker.start()
    print(f"dtn {config.node_id} ({config.profile.value}) on "
          f"127.0.0.1:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
