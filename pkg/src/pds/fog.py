"""Per-region fog node: windowed homomorphic aggregation and shard routing."""

from __future__ import annotations

import random
import threading
from collections import Counter
from dataclasses import dataclass

from . import paillier
from .errors import DuplicateTick, FingerprintMismatch, ForeignDevice, LateReport, ZeroShards
from .model import (
    AggregateRecord,
    DeviceIdentity,
    EncryptedReport,
    Region,
    WindowId,
    decode_report,
    encode_record,
    window_of,
)
from .paillier import Ciphertext, PublicKey


def shard_for(window_index: int, shard_count: int) -> int:
    """Round-robin over time: consecutive windows never share a shard when N >= 2."""
    if shard_count < 1:
        raise ZeroShards("shard_count must be at least 1")
    return window_index % shard_count


@dataclass
class _OpenWindow:
    window: WindowId
    ciphertext: Ciphertext
    count: int


class FogNode:
    """Aggregates one region's encrypted reports.

    The node only ever sees public keys; nothing here can turn a ciphertext
    back into a reading.
    """

    def __init__(
        self,
        region: Region,
        window_width: int,
        shard_count: int = 2,
        rng: random.Random | None = None,
    ):
        if window_width <= 0:
            raise ValueError("window_width must be positive")
        if shard_count < 1:
            raise ZeroShards("shard_count must be at least 1")
        self.region = region
        self.id = region.fog_node_id
        self.window_width = window_width
        self.shard_count = shard_count
        self.device_registry: dict[DeviceIdentity, PublicKey] = {}
        self.open_windows: dict[tuple[DeviceIdentity, int], _OpenWindow] = {}
        self.stats: Counter = Counter()
        self._seen_ticks: set[tuple[DeviceIdentity, int]] = set()
        self._closed_through = 0
        self._rng = rng
        self._lock = threading.Lock()

    def register(self, device: DeviceIdentity, public_key: PublicKey) -> None:
        if device not in self.region:
            raise ForeignDevice(f"{device} is not in region R{self.region.index}")
        self.device_registry[device] = public_key

    def ingest(self, report: EncryptedReport) -> None:
        device = report.device
        if device not in self.region:
            raise ForeignDevice(f"{device} is not in region R{self.region.index}")
        pk = self.device_registry.get(device)
        if pk is None:
            raise ForeignDevice(f"{device} is not registered at {self.id}")
        if report.ciphertext.key_fingerprint != pk.fingerprint:
            raise FingerprintMismatch(f"{device} report under {report.ciphertext.key_fingerprint}, registered {pk.fingerprint}")
        if report.timestamp < 0:
            raise ValueError("timestamps are non-negative ticks")
        window = window_of(report.timestamp, self.window_width)

        with self._lock:
            if window.end_tick <= self._closed_through:
                raise LateReport(f"{device} tick {report.timestamp}: window {window.index} already flushed")
            if (device, report.timestamp) in self._seen_ticks:
                raise DuplicateTick(f"{device} already reported at tick {report.timestamp}")
            key = (device, window.index)
            entry = self.open_windows.get(key)
            if entry is None:
                self.open_windows[key] = _OpenWindow(window, report.ciphertext, 1)
            else:
                entry.ciphertext = paillier.add_cipher(pk, entry.ciphertext, report.ciphertext)
                entry.count += 1
                self.stats["add"] += 1
            self._seen_ticks.add((device, report.timestamp))
            self.stats["ingested"] += 1

    def ingest_frame(self, frame: bytes) -> None:
        self.ingest(decode_report(frame))

    def close_window(self, up_to_tick: int) -> list[tuple[int, AggregateRecord]]:
        """Flush every open window ending at or before ``up_to_tick``.

        Emission order is (device, window index); each aggregate is
        rerandomized before it leaves the node.
        """
        if up_to_tick < 0:
            raise ValueError("up_to_tick must be non-negative")
        with self._lock:
            due = sorted(k for k, e in self.open_windows.items() if e.window.end_tick <= up_to_tick)
            out = []
            for key in due:
                entry = self.open_windows.pop(key)
                device = key[0]
                pk = self.device_registry[device]
                ct = paillier.rerandomize(pk, entry.ciphertext, rng=self._rng)
                self.stats["rerandomize"] += 1
                rec = AggregateRecord(device, entry.window, ct, entry.count, pk.fingerprint)
                out.append((shard_for(entry.window.index, self.shard_count), rec))
            self._closed_through = max(self._closed_through, up_to_tick)
            self._seen_ticks = {(d, t) for d, t in self._seen_ticks if t >= self._closed_through - self._closed_through % self.window_width}
            self.stats["emitted"] += len(out)
            return out

    def close_window_frames(self, up_to_tick: int) -> list[tuple[int, bytes]]:
        return [(shard, encode_record(rec)) for shard, rec in self.close_window(up_to_tick)]
