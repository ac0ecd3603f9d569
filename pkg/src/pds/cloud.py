"""Outsourced cloud: sharded ciphertext storage and identity-keyed queries.

Each shard persists its records as an append-only log of frames, each a
4-byte big-endian length followed by the canonical JSON AggregateRecord.
The coordinator (:class:`Cloud`) gathers across shards.  Nothing in this
module touches private keys.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path

from . import paillier
from .errors import (
    CorruptLog,
    DuplicateWindow,
    EmptyRange,
    InvalidRange,
    KeyMismatch,
    MalformedFrame,
    UnknownDevice,
    WrongShard,
)
from .fog import shard_for
from .model import (
    WIRE_VERSION,
    AggregateRecord,
    DeviceIdentity,
    decode_record,
    dumps,
    encode_record,
    ensure_canonical,
    loads,
    record_from_obj,
    record_to_obj,
)
from .paillier import Ciphertext, PublicKey, from_hex, to_hex

logger = logging.getLogger(__name__)

_LEN = struct.Struct(">I")


def log_name(shard_id: int) -> str:
    return f"shard-{shard_id}.log"


def frame(payload: bytes) -> bytes:
    return _LEN.pack(len(payload)) + payload


def replay(data: bytes) -> list[AggregateRecord]:
    """Decode every frame of a shard log, in order.

    Raises CorruptLog at the offset of the first frame that is truncated or
    does not decode; ``CorruptLog.records`` keeps what came before it.
    """
    out: list[AggregateRecord] = []
    pos = 0
    while pos < len(data):
        if pos + _LEN.size > len(data):
            raise CorruptLog("truncated frame header", pos, out)
        (length,) = _LEN.unpack_from(data, pos)
        end = pos + _LEN.size + length
        if end > len(data):
            raise CorruptLog("truncated frame payload", pos, out)
        try:
            out.append(decode_record(data[pos + _LEN.size:end]))
        except MalformedFrame as e:
            raise CorruptLog(f"undecodable frame: {e}", pos, out) from None
        pos = end
    return out


class CloudShard:
    def __init__(self, shard_id: int, shard_count: int, log_path: str | os.PathLike | None = None):
        if not 0 <= shard_id < shard_count:
            raise ValueError(f"shard id {shard_id} outside [0, {shard_count})")
        self.shard_id = shard_id
        self.shard_count = shard_count
        self.log_path = Path(log_path) if log_path is not None else None
        self.records: dict[tuple[DeviceIdentity, int], AggregateRecord] = {}
        self._memlog = bytearray()
        self._lock = threading.RLock()

    def _check(self, rec: AggregateRecord) -> tuple[DeviceIdentity, int]:
        if shard_for(rec.window.index, self.shard_count) != self.shard_id:
            raise WrongShard(f"window {rec.window.index} routes to shard {shard_for(rec.window.index, self.shard_count)}, not {self.shard_id}")
        key = (rec.device, rec.window.index)
        if key in self.records:
            raise DuplicateWindow(f"{rec.device} window {rec.window.index} already stored")
        return key

    def store(self, rec: AggregateRecord) -> None:
        with self._lock:
            key = self._check(rec)
            data = frame(encode_record(rec))
            if self.log_path is not None:
                with open(self.log_path, "ab") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
            else:
                self._memlog += data
            self.records[key] = rec

    def store_frame(self, payload: bytes) -> None:
        self.store(decode_record(payload))

    def log_bytes(self) -> bytes:
        if self.log_path is not None:
            return self.log_path.read_bytes() if self.log_path.exists() else b""
        return bytes(self._memlog)

    def holdings(self, device: DeviceIdentity) -> list[AggregateRecord]:
        with self._lock:
            return sorted((r for (d, _), r in self.records.items() if d == device), key=lambda r: r.window.index)

    def devices(self) -> set[DeviceIdentity]:
        with self._lock:
            return {d for d, _ in self.records}

    @classmethod
    def recover(cls, shard_id: int, shard_count: int, log_path: str | os.PathLike) -> CloudShard:
        """Rebuild a shard by replaying its log.  A missing log is an empty shard."""
        shard = cls(shard_id, shard_count, log_path)
        if not shard.log_path.exists():
            logger.warning("no log at %s; shard %d starts empty", shard.log_path, shard_id)
            return shard
        try:
            records = replay(shard.log_path.read_bytes())
        except CorruptLog as e:
            e.records = {(r.device, r.window.index): r for r in e.records}
            raise
        for rec in records:
            shard.records[shard._check(rec)] = rec
        return shard

    @classmethod
    def recover_bytes(cls, shard_id: int, shard_count: int, data: bytes) -> CloudShard:
        shard = cls(shard_id, shard_count)
        for rec in replay(data):
            shard.records[shard._check(rec)] = rec
        shard._memlog += data
        return shard


@dataclass(frozen=True)
class QueryRequest:
    """Fetch by identity number; ``from_index``/``to_index`` both None means ALL."""

    id_number: str
    from_index: int | None = None
    to_index: int | None = None
    combine: bool = False

    def __post_init__(self):
        if (self.from_index is None) != (self.to_index is None):
            raise InvalidRange("give both ends of the window range or neither")
        if self.from_index is not None and self.from_index > self.to_index:
            raise InvalidRange(f"empty window range [{self.from_index}, {self.to_index}]")

    def covers(self, index: int) -> bool:
        return self.from_index is None or self.from_index <= index <= self.to_index


def encode_query(req: QueryRequest) -> bytes:
    obj = {"v": WIRE_VERSION, "dev": req.id_number}
    if req.from_index is not None:
        obj["from"] = req.from_index
        obj["to"] = req.to_index
    obj["combine"] = req.combine
    return dumps(obj)


def decode_query(data: bytes) -> QueryRequest:
    obj = loads(data)
    if tuple(obj) not in (("v", "dev", "combine"), ("v", "dev", "from", "to", "combine")):
        raise MalformedFrame(f"unexpected query fields {list(obj)}", 0)
    if not isinstance(obj["dev"], str) or not isinstance(obj["combine"], bool):
        raise MalformedFrame("bad query field types", 0)
    for k in ("from", "to"):
        if k in obj and (isinstance(obj[k], bool) or not isinstance(obj[k], int)):
            raise MalformedFrame(f"field {k!r} must be an integer", 0)
    req = QueryRequest(obj["dev"], obj.get("from"), obj.get("to"), obj["combine"])
    ensure_canonical(data, encode_query(req))
    return req


@dataclass(frozen=True)
class QueryResponse:
    """Ciphertexts only; opening one takes the device owner's private key."""

    device: DeviceIdentity
    records: tuple[AggregateRecord, ...]
    key_fingerprint: str
    combined: Ciphertext | None = None

    def __post_init__(self):
        if any(r.key_fingerprint != self.key_fingerprint for r in self.records):
            raise KeyMismatch("response mixes key fingerprints")
        if self.combined is not None and self.combined.key_fingerprint != self.key_fingerprint:
            raise KeyMismatch("combined ciphertext under a different key")


RESPONSE_FIELDS = ("v", "dev", "kfp", "records", "combined")


def encode_response(resp: QueryResponse) -> bytes:
    obj = {
        "v": WIRE_VERSION,
        "dev": resp.device.id_number,
        "kfp": resp.key_fingerprint,
        "records": [record_to_obj(r) for r in resp.records],
    }
    if resp.combined is not None:
        obj["combined"] = to_hex(resp.combined.value)
    return dumps(obj)


def decode_response(data: bytes) -> QueryResponse:
    obj = loads(data)
    if tuple(obj) not in (RESPONSE_FIELDS, RESPONSE_FIELDS[:-1]):
        raise MalformedFrame(f"unexpected response fields {list(obj)}", 0)
    try:
        device = DeviceIdentity.parse(obj["dev"])
        kfp = obj["kfp"]
        if not isinstance(kfp, str) or not isinstance(obj["records"], list):
            raise ValueError("bad field types")
        records = tuple(record_from_obj(r) for r in obj["records"])
        combined = Ciphertext(from_hex(obj["combined"]), kfp) if "combined" in obj else None
        resp = QueryResponse(device, records, kfp, combined)
    except MalformedFrame:
        raise
    except (KeyError, ValueError, TypeError, AttributeError) as e:
        raise MalformedFrame(f"bad response field: {e}", 0) from None
    ensure_canonical(data, encode_response(resp))
    return resp


@dataclass
class Cloud:
    """Query coordinator over N shards plus the public device directory."""

    shards: list[CloudShard]
    directory: dict[DeviceIdentity, PublicKey] = field(default_factory=dict)

    @classmethod
    def create(cls, shard_count: int = 2, log_dir: str | os.PathLike | None = None) -> Cloud:
        if shard_count < 1:
            raise ValueError("need at least one shard")
        if log_dir is not None:
            Path(log_dir).mkdir(parents=True, exist_ok=True)
        paths = [Path(log_dir) / log_name(i) if log_dir is not None else None for i in range(shard_count)]
        return cls([CloudShard(i, shard_count, p) for i, p in enumerate(paths)])

    @classmethod
    def recover(cls, shard_count: int, log_dir: str | os.PathLike, directory: dict | None = None) -> Cloud:
        shards = [CloudShard.recover(i, shard_count, Path(log_dir) / log_name(i)) for i in range(shard_count)]
        return cls(shards, dict(directory or {}))

    @property
    def shard_count(self) -> int:
        return len(self.shards)

    def register_device(self, device: DeviceIdentity, public_key: PublicKey) -> None:
        self.directory[device] = public_key

    def store(self, shard_id: int, rec: AggregateRecord) -> None:
        self.shards[shard_id].store(rec)

    def _resolve(self, id_number: str) -> tuple[DeviceIdentity, PublicKey]:
        try:
            device = DeviceIdentity.parse(id_number)
        except ValueError:
            raise UnknownDevice(f"malformed identity number {id_number!r}") from None
        pk = self.directory.get(device)
        if pk is None:
            raise UnknownDevice(f"no device {id_number} registered")
        return device, pk

    def _gather(self, req: QueryRequest) -> tuple[DeviceIdentity, PublicKey, list[list[AggregateRecord]]]:
        device, pk = self._resolve(req.id_number)
        per_shard = [[r for r in s.holdings(device) if req.covers(r.window.index)] for s in self.shards]
        if not any(per_shard):
            raise EmptyRange(f"{req.id_number} has no stored windows in range")
        return device, pk, per_shard

    def _fold(self, pk: PublicKey, cts: Iterable[Ciphertext]) -> Ciphertext:
        return reduce(lambda a, b: paillier.add_cipher(pk, a, b), cts)

    def query(self, req: QueryRequest) -> QueryResponse:
        device, pk, per_shard = self._gather(req)
        records = tuple(sorted((r for part in per_shard for r in part), key=lambda r: r.window.index))
        combined = None
        if req.combine:
            # shard-local partial sums, then one fold at the coordinator
            partials = [self._fold(pk, (r.ciphertext for r in part)) for part in per_shard if part]
            combined = self._fold(pk, partials)
        return QueryResponse(device, records, pk.fingerprint, combined)

    def query_frame(self, frame_bytes: bytes) -> bytes:
        return encode_response(self.query(decode_query(frame_bytes)))

    def aggregate_range(self, device: DeviceIdentity, from_index: int | None = None, to_index: int | None = None) -> Ciphertext:
        req = QueryRequest(device.id_number, from_index, to_index)
        _, pk, per_shard = self._gather(req)
        ordered = sorted((r for part in per_shard for r in part), key=lambda r: r.window.index)
        return self._fold(pk, (r.ciphertext for r in ordered))
