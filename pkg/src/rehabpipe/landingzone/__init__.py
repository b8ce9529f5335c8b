"""Trusted-environment entry point: receive, authenticate, store, notify."""

from rehabpipe.landingzone.store import IndexEntry, NotFound, ObjectStore
from rehabpipe.landingzone.service import Ack, LandingZone

__all__ = ["Ack", "IndexEntry", "LandingZone", "NotFound", "ObjectStore"]
