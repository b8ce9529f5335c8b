"""Delivery of sealed packets to the landing zone.

Transport is at-least-once: any response that is not a definite accept or
duplicate counts as failure and the packet stays queued. ChaosTransport
injects send loss and ack loss for the simulation harness; a lost ack means
the landing zone processed the packet but the node retries anyway,
exercising receiver-side dedup.
"""

from __future__ import annotations

import json
import random

from rehabpipe.httpd import TransportError, http_request


class LandingZoneClient:
    def __init__(self, address: str, node_id: str, timeout: float = 10.0) -> None:
        self.base_url = f"http://{address}"
        self.node_id = node_id
        self.timeout = timeout

    def send(self, packet: bytes) -> dict:
        status, body = http_request(
            "POST", f"{self.base_url}/v1/packets", packet,
            headers={"X-Node-Id": self.node_id}, timeout=self.timeout)
        try:
            ack = json.loads(body)
        except json.JSONDecodeError:
            raise TransportError(f"malformed ack: {body[:200]!r}") from None
        if status != 200 or ack.get("status") not in ("accepted", "duplicate"):
            raise TransportError(f"landing zone refused packet: {status} {ack}")
        return ack


class ChaosTransport:
    """Wraps a transport with seeded loss injection for scenario runs."""

    def __init__(self, inner, packet_loss_prob: float = 0.0,
                 ack_loss_prob: float = 0.0, seed: int = 0) -> None:
        self.inner = inner
        self.packet_loss_prob = packet_loss_prob
        self.ack_loss_prob = ack_loss_prob
        self._rng = random.Random(seed)

    def send(self, packet: bytes) -> dict:
        if self._rng.random() < self.packet_loss_prob:
            raise TransportError("injected: packet lost in transit")
        ack = self.inner.send(packet)
        if self._rng.random() < self.ack_loss_prob:
            raise TransportError("injected: ack lost in transit")
        return ack
