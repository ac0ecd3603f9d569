"""Deterministic end-to-end simulation and verification.

A run wires devices -> fog nodes -> cloud shards in-process, pushing every
hop through the wire codec.  The :class:`ShadowLedger` records plaintext
readings before encryption and is the oracle :func:`verify` checks the
stored ciphertexts against.

Seeds form a hierarchy: every device and fog node gets its own stream
derived from the master seed, so adding a device leaves the others'
readings and ciphertexts unchanged.
"""

from __future__ import annotations

import json
import logging
import os
import random
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import paillier
from .client import OwnerKeyring
from .cloud import Cloud, QueryRequest, decode_response, encode_query, log_name
from .errors import ConfigInvalid, EmptyRange, MalformedCiphertext, PDSError
from .fog import FogNode
from .model import DeviceIdentity, Reading, Region, decode_record, decode_report, encode_record, encode_report
from .paillier import HashDRBG, PublicKey

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReadingModel:
    """Synthetic telemetry source.  ``constant`` emits ``min`` (== ``max``) every tick."""

    distribution: str = "uniform"
    min: int = -10
    max: int = 10

    @property
    def max_abs(self) -> int:
        return max(abs(self.min), abs(self.max))

    def draw(self, rng: random.Random) -> int:
        if self.distribution == "constant":
            return self.min
        return rng.randint(self.min, self.max)


@dataclass(frozen=True)
class SimConfig:
    regions: tuple[int, ...]
    period_ticks: int = 1
    window_width: int = 5
    total_ticks: int = 20
    shard_count: int = 2
    key_bits: int = 512
    seed: int = 0
    reading_model: ReadingModel = field(default_factory=ReadingModel)
    parallel: bool = False

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        self.validate()

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigInvalid(name, msg)

        need(len(self.regions) >= 1 and all(isinstance(c, int) and c >= 1 for c in self.regions),
             "regions", "need at least one region, each with device_count >= 1")
        need(self.period_ticks >= 1, "period_ticks", "must be >= 1")
        need(self.window_width >= 1, "window_width", "must be >= 1")
        need(self.total_ticks >= 1, "total_ticks", "must be >= 1")
        need(self.shard_count >= 1, "shard_count", "must be >= 1")
        need(self.key_bits >= 8 and self.key_bits % 2 == 0, "key_bits", "must be an even integer >= 8")
        need(self.window_width % self.period_ticks == 0, "window_width % period_ticks == 0",
             f"window of {self.window_width} ticks does not hold whole periods of {self.period_ticks}")
        need(self.total_ticks % self.window_width == 0, "total_ticks % window_width == 0",
             f"{self.total_ticks} ticks do not end on a window boundary of {self.window_width}")
        rm = self.reading_model
        need(rm.distribution in ("uniform", "constant"), "reading_model.distribution", f"unknown {rm.distribution!r}")
        need(rm.min <= rm.max, "reading_model.min <= max", f"{rm.min} > {rm.max}")
        need(rm.distribution != "constant" or rm.min == rm.max, "reading_model constant",
             "constant readings need min == max")
        # n has exactly key_bits bits, so n > 2^(key_bits-1); the whole-run total
        # bounds every window sum and every range total
        reports = self.total_ticks // self.period_ticks
        need(4 * reports * rm.max_abs < 2 ** (self.key_bits - 1), "signed-sum headroom",
             f"{reports} reports x |reading| <= {rm.max_abs} can exceed n/4 for {self.key_bits}-bit keys")

    @property
    def region_list(self) -> list[Region]:
        return [Region(i, c) for i, c in enumerate(self.regions, start=1)]

    @property
    def devices(self) -> list[DeviceIdentity]:
        return [d for r in self.region_list for d in r.devices()]

    @property
    def window_count(self) -> int:
        return self.total_ticks // self.window_width

    def to_json(self) -> dict:
        d = asdict(self)
        d["regions"] = [{"device_count": c} for c in self.regions]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> SimConfig:
        obj = dict(obj)
        try:
            obj["regions"] = tuple(r["device_count"] if isinstance(r, dict) else r for r in obj["regions"])
            obj["reading_model"] = ReadingModel(**obj.get("reading_model", {}))
            return cls(**obj)
        except ConfigInvalid:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigInvalid("config schema", str(e)) from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> SimConfig:
        try:
            with open(path) as fh:
                return cls.from_json(json.load(fh))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigInvalid("config file", str(e)) from None


@dataclass
class ShadowLedger:
    """Plaintext sums per (device, window), filled from readings only."""

    window_width: int
    sums: dict[tuple[DeviceIdentity, int], int] = field(default_factory=dict)
    counts: dict[tuple[DeviceIdentity, int], int] = field(default_factory=dict)

    def record(self, reading: Reading) -> None:
        key = (reading.device, reading.timestamp // self.window_width)
        self.sums[key] = self.sums.get(key, 0) + reading.value
        self.counts[key] = self.counts.get(key, 0) + 1

    def merge(self, other: ShadowLedger) -> None:
        for k, v in other.sums.items():
            self.sums[k] = self.sums.get(k, 0) + v
            self.counts[k] = self.counts.get(k, 0) + other.counts[k]

    @property
    def totals(self) -> dict[DeviceIdentity, int]:
        out: dict[DeviceIdentity, int] = defaultdict(int)
        for (d, _), v in self.sums.items():
            out[d] += v
        return dict(out)

    def windows_of(self, device: DeviceIdentity) -> list[int]:
        return sorted(w for d, w in self.sums if d == device)

    def to_json(self) -> dict:
        return {
            "window_width": self.window_width,
            "windows": [{"dev": d.id_number, "win": w, "sum": self.sums[(d, w)], "count": self.counts[(d, w)]}
                        for d, w in sorted(self.sums)],
            "totals": {d.id_number: t for d, t in sorted(self.totals.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> ShadowLedger:
        ledger = cls(obj["window_width"])
        for e in obj["windows"]:
            key = (DeviceIdentity.parse(e["dev"]), e["win"])
            ledger.sums[key] = e["sum"]
            ledger.counts[key] = e["count"]
        return ledger

    def __eq__(self, other):
        if not isinstance(other, ShadowLedger):
            return NotImplemented
        return (self.window_width, self.sums, self.counts) == (other.window_width, other.sums, other.counts)


@dataclass
class RunMetrics:
    reports_emitted: int = 0
    aggregates_stored: dict[int, int] = field(default_factory=dict)
    ops: dict[str, int] = field(default_factory=dict)
    wall_time: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "reports_emitted": self.reports_emitted,
            "aggregates_stored": {str(k): v for k, v in sorted(self.aggregates_stored.items())},
            "ops": dict(sorted(self.ops.items())),
            "wall_time_s": {k: round(v, 6) for k, v in self.wall_time.items()},
        }


@dataclass
class SystemState:
    config: SimConfig
    keyring: OwnerKeyring
    fogs: list[FogNode]
    cloud: Cloud


@dataclass
class SimulationRun:
    state: SystemState
    ledger: ShadowLedger
    metrics: RunMetrics


def _drive_region(cfg: SimConfig, region: Region, keyring: OwnerKeyring, fog: FogNode):
    """Stream one region's readings through its fog node.

    Returns the region's ledger and its emissions as (flush tick, shard, frame).
    """
    ledger = ShadowLedger(cfg.window_width)
    devices = region.devices()
    reading_rng = {d: random.Random(paillier.derive_seed(cfg.seed, "reading", d.id_number)) for d in devices}
    nonce_rng = {d: HashDRBG(paillier.derive_seed(cfg.seed, "nonce", d.id_number)) for d in devices}
    emitted = []
    for tick in range(0, cfg.total_ticks, cfg.period_ticks):
        for d in devices:
            reading = Reading(d, tick, cfg.reading_model.draw(reading_rng[d]))
            ledger.record(reading)
            report = keyring.produce_report(reading, rng=nonce_rng[d])
            fog.ingest(decode_report(encode_report(report)))
        boundary = tick + cfg.period_ticks
        if boundary % cfg.window_width == 0:
            emitted.extend((boundary, shard, frame) for shard, frame in fog.close_window_frames(boundary))
    return ledger, emitted


def run_simulation(cfg: SimConfig, rundir: str | os.PathLike | None = None,
                   keyring: OwnerKeyring | None = None) -> SimulationRun:
    """Run ``cfg`` end to end.  With ``rundir`` the shard logs and run files land there."""
    metrics = RunMetrics()
    t0 = time.perf_counter()
    if keyring is None:
        keyring = OwnerKeyring.generate(cfg.devices, cfg.key_bits, cfg.seed)
    missing = [d for d in cfg.devices if d not in keyring]
    if missing:
        raise ConfigInvalid("keyring", f"no keys for {', '.join(map(str, missing))}")
    metrics.wall_time["keygen"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    log_dir = Path(rundir) / "cloud" if rundir is not None else None
    if log_dir is not None:
        for i in range(cfg.shard_count):
            (log_dir / log_name(i)).unlink(missing_ok=True)
    cloud = Cloud.create(cfg.shard_count, log_dir)
    fogs = []
    for region in cfg.region_list:
        fog = FogNode(region, cfg.window_width, cfg.shard_count,
                      rng=HashDRBG(paillier.derive_seed(cfg.seed, "fog", region.fog_node_id)))
        for d in region.devices():
            pk = keyring.public_key(d)
            fog.register(d, pk)
            cloud.register_device(d, pk)
        fogs.append(fog)

    jobs = list(zip(cfg.region_list, fogs))
    if cfg.parallel and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(lambda j: _drive_region(cfg, j[0], keyring, j[1]), jobs))
    else:
        results = [_drive_region(cfg, region, keyring, fog) for region, fog in jobs]

    ledger = ShadowLedger(cfg.window_width)
    for part, _ in results:
        ledger.merge(part)
    # store in flush-time order, regions in index order within a flush
    emissions = sorted(
        ((tick, r, seq, shard, frame) for r, (_, em) in enumerate(results) for seq, (tick, shard, frame) in enumerate(em)),
        key=lambda e: e[:3],
    )
    for _, _, _, shard, frame in emissions:
        cloud.store(shard, decode_record(frame))
    metrics.wall_time["stream"] = time.perf_counter() - t0

    ops = Counter()
    for fog in fogs:
        ops.update(fog.stats)
    metrics.reports_emitted = ops.pop("ingested", 0)
    ops.pop("emitted", None)
    ops["encrypt"] = keyring.stats["encrypt"]
    ops["decrypt"] = keyring.stats["decrypt"]
    metrics.ops = dict(ops)
    metrics.aggregates_stored = {s.shard_id: len(s.records) for s in cloud.shards}

    state = SystemState(cfg, keyring, fogs, cloud)
    if rundir is not None:
        save_run(Path(rundir), state, ledger, metrics)
    return SimulationRun(state, ledger, metrics)


# -- run directory -----------------------------------------------------------

def _write_json(path: Path, obj, mode: int | None = None) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n")
    if mode is not None:
        os.chmod(path, mode)


def save_run(rundir: Path, state: SystemState, ledger: ShadowLedger, metrics: RunMetrics) -> None:
    rundir.mkdir(parents=True, exist_ok=True)
    _write_json(rundir / "config.json", state.config.to_json())
    _write_json(rundir / "directory.json",
                [{"dev": d.id_number, "public": pk.to_json()} for d, pk in sorted(state.cloud.directory.items())])
    _write_json(rundir / "ledger.json", ledger.to_json())
    _write_json(rundir / "metrics.json", metrics.to_json())
    state.keyring.save(rundir / "keyring.json")


def load_directory(path: Path) -> dict[DeviceIdentity, PublicKey]:
    with open(path) as fh:
        return {DeviceIdentity.parse(e["dev"]): PublicKey.from_json(e["public"]) for e in json.load(fh)}


def load_cloud(rundir: str | os.PathLike) -> Cloud:
    """Recover every shard of a finished run from its log."""
    rundir = Path(rundir)
    cfg = SimConfig.load(rundir / "config.json")
    return Cloud.recover(cfg.shard_count, rundir / "cloud", load_directory(rundir / "directory.json"))


def load_ledger(path: str | os.PathLike) -> ShadowLedger:
    with open(path) as fh:
        return ShadowLedger.from_json(json.load(fh))


# -- verification --------------------------------------------------------------

PASS, FAIL, SKIP = "pass", "fail", "skip"


@dataclass(frozen=True)
class CheckResult:
    kind: str
    device: str
    window: int | None
    status: str
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list[CheckResult] = field(default_factory=list)

    def add(self, kind, device, window, ok, detail=""):
        status = ok if isinstance(ok, str) else (PASS if ok else FAIL)
        self.checks.append(CheckResult(kind, device.id_number, window, status, detail))

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if c.status == FAIL]

    @property
    def ok(self) -> bool:
        return not self.failures

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, Counter] = defaultdict(Counter)
        for c in self.checks:
            out[c.kind][c.status] += 1
        return {k: {s: v.get(s, 0) for s in (PASS, FAIL, SKIP)} for k, v in sorted(out.items())}

    def outcome(self) -> list[tuple]:
        """Comparable summary: every check with its status, detail dropped."""
        return sorted((c.kind, c.device, -1 if c.window is None else c.window, c.status) for c in self.checks)

    def summary(self) -> dict:
        return {"ok": self.ok, "checks": len(self.checks), "failures": len(self.failures), "by_kind": self.counts()}


def verify(state: SystemState | tuple[Cloud, OwnerKeyring], ledger: ShadowLedger) -> VerificationReport:
    """Check what the cloud holds against the plaintext ledger.

    Check kinds, per (device, window): ``gather`` (the window is stored
    somewhere, and nothing unexpected is), ``window_sum`` (it decrypts to
    the ledger sum), ``count`` (its report count matches).  Per device:
    ``total`` (the cloud-side range aggregate decrypts to the grand total;
    skipped when a window of that device already failed, so a single bad
    window yields a single failure) and ``partition`` (with N >= 2 no shard
    holds every window of a device that has two or more).

    The query path goes through the wire format in both directions.
    """
    cloud, keyring = (state.cloud, state.keyring) if isinstance(state, SystemState) else state
    report = VerificationReport()
    devices = sorted({d for d, _ in ledger.sums} | set(cloud.directory))
    for device in devices:
        expected = ledger.windows_of(device)
        try:
            resp = decode_response(cloud.query_frame(encode_query(QueryRequest(device.id_number))))
            stored = {r.window.index: r for r in resp.records}
        except EmptyRange:
            stored = {}
        window_failed = False
        for w in expected:
            rec = stored.get(w)
            report.add("gather", device, w, rec is not None, "" if rec else "window missing from every shard")
            if rec is None:
                report.add("window_sum", device, w, SKIP, "not stored")
                report.add("count", device, w, SKIP, "not stored")
                window_failed = True
                continue
            try:
                got = keyring.decrypt_signed(device, rec.ciphertext)
                detail = f"decrypted {got}, ledger {ledger.sums[(device, w)]}"
                ok = got == ledger.sums[(device, w)]
            except (MalformedCiphertext, PDSError) as e:
                ok, detail = False, f"undecryptable: {e}"
            report.add("window_sum", device, w, ok, "" if ok else detail)
            count_ok = rec.report_count == ledger.counts[(device, w)]
            report.add("count", device, w, count_ok,
                       "" if count_ok else f"count {rec.report_count}, ledger {ledger.counts[(device, w)]}")
            window_failed |= not (ok and count_ok)
        for w in sorted(set(stored) - set(expected)):
            report.add("gather", device, w, False, "stored window absent from ledger")
            window_failed = True

        if not expected:
            continue
        if window_failed:
            report.add("total", device, None, SKIP, "a window of this device already failed")
        else:
            total = ledger.totals[device]
            try:
                got = keyring.decrypt_signed(device, cloud.aggregate_range(device))
                report.add("total", device, None, got == total, "" if got == total else f"decrypted {got}, ledger {total}")
            except PDSError as e:
                report.add("total", device, None, False, f"aggregate failed: {e}")

        if cloud.shard_count >= 2 and len(expected) >= 2:
            held = [len(s.holdings(device)) for s in cloud.shards]
            ok = max(held) < len(expected)
            report.add("partition", device, None, ok, "" if ok else f"per-shard holdings {held}")
    return report


# -- fault injection -------------------------------------------------------------

def corrupt_stored_ciphertext(cloud: Cloud, device: DeviceIdentity, window_index: int, digit: int = 5) -> int:
    """Flip one hex digit of a stored ciphertext in the shard's log, then reload it.

    Returns the shard id touched.  ``digit`` counts from the most significant
    hex digit; the first digit is never chosen so the value stays canonical.
    """
    from .cloud import CloudShard

    for shard in cloud.shards:
        rec = shard.records.get((device, window_index))
        if rec is None:
            continue
        data = bytearray(shard.log_bytes())
        payload = encode_record(rec)
        start = data.find(payload)
        c_at = start + payload.find(b'"c":"') + 5 + max(1, digit)
        data[c_at] = ord("a") if data[c_at] != ord("a") else ord("b")
        if shard.log_path is not None:
            shard.log_path.write_bytes(bytes(data))
            fresh = CloudShard.recover(shard.shard_id, shard.shard_count, shard.log_path)
        else:
            fresh = CloudShard.recover_bytes(shard.shard_id, shard.shard_count, bytes(data))
        cloud.shards[shard.shard_id] = fresh
        return shard.shard_id
    raise KeyError(f"{device} window {window_index} is not stored")
