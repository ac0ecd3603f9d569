"""Regions, devices, ticks, windows, and the canonical JSON wire format.

Frames are single JSON objects with a fixed field order, no whitespace,
and big integers as lowercase hex.  Decoding is strict: a frame is only
accepted if re-encoding the decoded value reproduces it byte for byte, so
byte equality and value equality coincide.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import MalformedFrame, UnsupportedVersion, ZeroWidth
from .paillier import Ciphertext, from_hex, to_hex

WIRE_VERSION = 1

_ID_RE = re.compile(r"R([1-9][0-9]*)-I([1-9][0-9]*)")


@dataclass(frozen=True, order=True)
class DeviceIdentity:
    region_index: int
    device_index: int

    def __post_init__(self):
        if self.region_index < 1 or self.device_index < 1:
            raise ValueError("region and device indices start at 1")

    @property
    def id_number(self) -> str:
        return f"R{self.region_index}-I{self.device_index}"

    @classmethod
    def parse(cls, id_number: str) -> DeviceIdentity:
        m = _ID_RE.fullmatch(id_number) if isinstance(id_number, str) else None
        if m is None:
            raise ValueError(f"not an identity number: {id_number!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return self.id_number


@dataclass(frozen=True)
class Region:
    index: int
    device_count: int
    fog_node_id: str = ""

    def __post_init__(self):
        if self.index < 1 or self.device_count < 1:
            raise ValueError("a region needs index >= 1 and at least one device")
        if not self.fog_node_id:
            object.__setattr__(self, "fog_node_id", f"FN{self.index}")

    def devices(self) -> list[DeviceIdentity]:
        return [DeviceIdentity(self.index, j) for j in range(1, self.device_count + 1)]

    def __contains__(self, device: DeviceIdentity) -> bool:
        return device.region_index == self.index and device.device_index <= self.device_count


@dataclass(frozen=True)
class Reading:
    device: DeviceIdentity
    timestamp: int
    value: int


@dataclass(frozen=True)
class EncryptedReport:
    device: DeviceIdentity
    timestamp: int
    ciphertext: Ciphertext


@dataclass(frozen=True)
class WindowId:
    """Half-open tick interval ``[start_tick, start_tick + width)``."""

    start_tick: int
    width: int

    def __post_init__(self):
        if self.width <= 0:
            raise ZeroWidth(f"window width must be positive, got {self.width}")
        if self.start_tick % self.width:
            raise ValueError(f"window start {self.start_tick} is not aligned to width {self.width}")

    @property
    def index(self) -> int:
        return self.start_tick // self.width

    @property
    def end_tick(self) -> int:
        return self.start_tick + self.width

    def __contains__(self, tick: int) -> bool:
        return self.start_tick <= tick < self.end_tick


def window_of(timestamp: int, width: int) -> WindowId:
    if width <= 0:
        raise ZeroWidth(f"window width must be positive, got {width}")
    return WindowId(width * (timestamp // width), width)


@dataclass(frozen=True)
class AggregateRecord:
    device: DeviceIdentity
    window: WindowId
    ciphertext: Ciphertext
    report_count: int
    key_fingerprint: str

    def __post_init__(self):
        if not 1 <= self.report_count <= self.window.width:
            raise ValueError(f"report_count {self.report_count} outside [1, {self.window.width}]")
        if self.ciphertext.key_fingerprint != self.key_fingerprint:
            raise ValueError("record fingerprint disagrees with its ciphertext")


# -- codec ------------------------------------------------------------------

def dumps(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True).encode("ascii")


def loads(data: bytes, expected_keys: tuple[str, ...] | None = None) -> dict:
    """Parse one frame and check the version field.

    Only the shape is checked here; callers finish with :func:`ensure_canonical`.
    """
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as e:
        raise MalformedFrame("frame is not ASCII", e.start) from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedFrame(f"invalid JSON: {e.msg}", e.pos) from None
    if not isinstance(obj, dict):
        raise MalformedFrame("frame is not a JSON object", 0)
    if obj.get("v") != WIRE_VERSION:
        raise UnsupportedVersion(f"unsupported frame version {obj.get('v')!r}", 0)
    if expected_keys is not None and tuple(obj) != expected_keys:
        raise MalformedFrame(f"expected fields {list(expected_keys)}, got {list(obj)}", 0)
    return obj


def ensure_canonical(data: bytes, reencoded: bytes) -> None:
    if data != reencoded:
        pos = next((i for i, (a, b) in enumerate(zip(data, reencoded)) if a != b), min(len(data), len(reencoded)))
        raise MalformedFrame("frame is not in canonical form", pos)


def _field(obj: dict, name: str, kind):
    value = obj[name]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise MalformedFrame(f"field {name!r} must be an integer", 0)
    if kind is str and not isinstance(value, str):
        raise MalformedFrame(f"field {name!r} must be a string", 0)
    return value


REPORT_FIELDS = ("v", "dev", "ts", "c", "kfp")
RECORD_FIELDS = ("v", "dev", "win_start", "win_width", "c", "kfp", "count")


def report_to_obj(r: EncryptedReport) -> dict:
    return {
        "v": WIRE_VERSION,
        "dev": r.device.id_number,
        "ts": r.timestamp,
        "c": to_hex(r.ciphertext.value),
        "kfp": r.ciphertext.key_fingerprint,
    }


def report_from_obj(obj: dict) -> EncryptedReport:
    try:
        device = DeviceIdentity.parse(_field(obj, "dev", str))
        ts = _field(obj, "ts", int)
        if ts < 0:
            raise ValueError("negative timestamp")
        ct = Ciphertext(from_hex(_field(obj, "c", str)), _field(obj, "kfp", str))
    except MalformedFrame:
        raise
    except (KeyError, ValueError) as e:
        raise MalformedFrame(f"bad report field: {e}", 0) from None
    return EncryptedReport(device, ts, ct)


def encode_report(r: EncryptedReport) -> bytes:
    return dumps(report_to_obj(r))


def decode_report(data: bytes) -> EncryptedReport:
    report = report_from_obj(loads(data, REPORT_FIELDS))
    ensure_canonical(data, encode_report(report))
    return report


def record_to_obj(rec: AggregateRecord) -> dict:
    return {
        "v": WIRE_VERSION,
        "dev": rec.device.id_number,
        "win_start": rec.window.start_tick,
        "win_width": rec.window.width,
        "c": to_hex(rec.ciphertext.value),
        "kfp": rec.key_fingerprint,
        "count": rec.report_count,
    }


def record_from_obj(obj: dict) -> AggregateRecord:
    if tuple(obj) != RECORD_FIELDS:
        raise MalformedFrame(f"expected fields {list(RECORD_FIELDS)}, got {list(obj)}", 0)
    try:
        device = DeviceIdentity.parse(_field(obj, "dev", str))
        window = WindowId(_field(obj, "win_start", int), _field(obj, "win_width", int))
        kfp = _field(obj, "kfp", str)
        ct = Ciphertext(from_hex(_field(obj, "c", str)), kfp)
        return AggregateRecord(device, window, ct, _field(obj, "count", int), kfp)
    except MalformedFrame:
        raise
    except (KeyError, ValueError) as e:
        raise MalformedFrame(f"bad record field: {e}", 0) from None


def encode_record(rec: AggregateRecord) -> bytes:
    return dumps(record_to_obj(rec))


def decode_record(data: bytes) -> AggregateRecord:
    rec = record_from_obj(loads(data, RECORD_FIELDS))
    ensure_canonical(data, encode_record(rec))
    return rec
