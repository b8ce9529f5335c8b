"""Landing zone core and HTTP service.

Receive is all-or-nothing per packet: authentication or format failure
stores nothing. Duplicate packets (by packet_id) and duplicate blocks (by
content hash) are absorbed idempotently, which is the receiving half of the
pipeline's exactly-once effect.
"""

from __future__ import annotations

import argparse
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from rehabpipe import chaos
from rehabpipe.httpd import Router, json_response, make_server
from rehabpipe.landingzone.store import NotFound, ObjectStore
from rehabpipe.privacy import (
    AuthenticationError,
    FormatError,
    IntegrityError,
    decrypt_packet,
)


@dataclass(frozen=True)
class Ack:
    packet_id: str
    status: str  # accepted | duplicate | rejected
    reason: str = ""

    def to_json(self) -> dict:
        out = {"packet_id": self.packet_id, "status": self.status}
        if self.reason:
            out["reason"] = self.reason
        return out


class LandingZone:
    def __init__(self, store: ObjectStore, node_keys: dict[str, bytes],
                 capture_dir: str | Path | None = None, clock=None) -> None:
        self.store = store
        self.node_keys = node_keys
        self.capture_dir = Path(capture_dir) if capture_dir else None
        if self.capture_dir:
            self.capture_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock or (lambda: int(time.time() * 1000))
        self._captured = 0
        self._capture_lock = threading.Lock()

    def _capture(self, packet: bytes) -> None:
        if not self.capture_dir:
            return
        with self._capture_lock:
            self._captured += 1
            n = self._captured
        (self.capture_dir / f"{n:06d}.pkt").write_bytes(packet)

    def _open(self, packet: bytes, node_id: str | None):
        keys = ([self.node_keys[node_id]] if node_id and node_id in self.node_keys
                else list(self.node_keys.values()))
        last_error: Exception = AuthenticationError("no transport keys registered")
        for key in keys:
            try:
                return decrypt_packet(packet, key)
            except (AuthenticationError, FormatError, IntegrityError) as exc:
                last_error = exc
        raise last_error

    def receive(self, packet: bytes, node_id: str | None = None) -> Ack:
        """Authenticate, decrypt, dedup, store blocks, emit availability events."""
        self._capture(packet)
        try:
            manifest, blocks = self._open(packet, node_id)
        except (AuthenticationError, FormatError, IntegrityError) as exc:
            return Ack(packet_id="", status="rejected", reason=str(exc))
        if self.store.packet_seen(manifest.packet_id):
            return Ack(packet_id=manifest.packet_id, status="duplicate")
        chaos.crash_point("lz.after_decrypt")
        now = self.clock()
        for i, (descriptor, payload) in enumerate(zip(manifest.blocks, blocks)):
            self.store.put(
                descriptor.content_hash, payload, descriptor.payload_kind.value,
                manifest.pseudonym, now, manifest.packet_id)
            if i == 0:
                chaos.crash_point("lz.mid_store")
        chaos.crash_point("lz.before_packet_mark")
        self.store.mark_packet(manifest.packet_id, now)
        return Ack(packet_id=manifest.packet_id, status="accepted")

    def get_block(self, digest: str):
        return self.store.get(digest)

    def status(self) -> dict:
        return {"blocks": self.store.block_count(),
                "packets": self.store.packet_count()}


def build_router(zone: LandingZone) -> Router:
    router = Router()

    def post_packet(match, query, body):
        node_id = query.get("_header_node_id") or None
        ack = zone.receive(body, node_id)
        return json_response(ack.to_json(), 400 if ack.status == "rejected" else 200)

    def get_blocks(match, query, body):
        entries = zone.store.list_blocks(
            payload_kind=query.get("kind") or None,
            pseudonym=query.get("pseudonym") or None,
            since=int(query["since"]) if query.get("since") else None,
        )
        return json_response([e.__dict__ for e in entries])

    def get_block(match, query, body):
        try:
            payload, entry = zone.get_block(match.group(1))
        except NotFound:
            return json_response({"error": "unknown content hash"}, 404)
        return 200, "application/octet-stream", payload

    def get_status(match, query, body):
        return json_response(zone.status())

    router.add("POST", r"/v1/packets", post_packet)
    router.add("GET", r"/v1/blocks/([0-9a-f]{64})", get_block)
    router.add("GET", r"/v1/blocks", get_blocks)
    router.add("GET", r"/v1/status", get_status)
    return router


def load_node_keys(path: str | Path) -> dict[str, bytes]:
    """Registry written at node registration: {node_id: transport_key_hex}."""
    raw = json.loads(Path(path).read_text())
    return {node_id: bytes.fromhex(hexkey) for node_id, hexkey in raw.items()}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rehab-landing-zone")
    parser.add_argument("--data-dir", required=True)
    parser.add_argument("--keys", required=True,
                        help="JSON file mapping node_id -> transport key hex")
    parser.add_argument("--port", type=int, default=8470)
    parser.add_argument("--capture-dir", default=None,
                        help="archive raw received packets here (audits)")
    args = parser.parse_args(argv)

    store = ObjectStore(Path(args.data_dir) / "store")
    zone = LandingZone(store, load_node_keys(args.keys), capture_dir=args.capture_dir)
    server = make_server(build_router(zone), port=args.port)
    print(f"landing zone on 127.0.0.1:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
