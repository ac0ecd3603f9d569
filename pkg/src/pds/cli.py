"""``pds`` command line: keygen, simulate, query, verify.

Exit codes: 0 success, 1 verification failures, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .client import OwnerKeyring
from .cloud import QueryRequest, decode_response, encode_query
from .errors import ConfigInvalid, PDSError
from .harness import SimConfig, load_cloud, load_ledger, run_simulation, verify
from .model import Region

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _emit(obj) -> None:
    print(json.dumps(obj, separators=(",", ":")))


def _err(msg: str) -> None:
    print(f"pds: {msg}", file=sys.stderr)


def parse_devices(spec: str) -> list[int]:
    """``"3,2"`` -> region 1 has 3 devices, region 2 has 2."""
    try:
        counts = [int(x) for x in spec.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"device spec must be comma-separated counts, got {spec!r}") from None
    if not counts or min(counts) < 1:
        raise argparse.ArgumentTypeError("every region needs at least one device")
    return counts


def cmd_keygen(args) -> int:
    devices = [d for i, c in enumerate(args.devices, 1) for d in Region(i, c).devices()]
    keyring = OwnerKeyring.generate(devices, args.bits, args.seed)
    keyring.save(args.out)
    _emit({"keyring": str(args.out), "devices": len(keyring), "bits": args.bits})
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = SimConfig.load(args.config)
    keyring = OwnerKeyring.load(args.keyring) if args.keyring else None
    run = run_simulation(cfg, args.out, keyring=keyring)
    if args.report:
        from .report import plot_shard_layout

        Path(args.report).mkdir(parents=True, exist_ok=True)
        plot_shard_layout(run.state.cloud, Path(args.report) / "shard_layout.png")
    _emit(run.metrics.to_json())
    return EXIT_OK


def cmd_query(args) -> int:
    rundir = Path(args.rundir)
    cloud = load_cloud(rundir)
    keyring = OwnerKeyring.load(args.keyring or rundir / "keyring.json")
    req = QueryRequest(args.device, args.from_index, args.to_index, args.combine)
    response_frame = cloud.query_frame(encode_query(req))
    if args.raw:
        sys.stdout.write(response_frame.decode("ascii") + "\n")
        return EXIT_OK
    _emit(keyring.open_response(decode_response(response_frame)).to_json())
    return EXIT_OK


def cmd_verify(args) -> int:
    rundir = Path(args.rundir)
    cloud = load_cloud(rundir)
    keyring = OwnerKeyring.load(args.keyring or rundir / "keyring.json")
    ledger = load_ledger(args.ledger or rundir / "ledger.json")
    report = verify((cloud, keyring), ledger)
    if args.report:
        from .report import write_report

        write_report(report, cloud, args.report)
    for c in report.failures:
        _err(f"FAIL {c.kind} {c.device} window={c.window} {c.detail}")
    _emit({**report.summary(), "ops": {"decrypt": keyring.stats["decrypt"]}})
    return EXIT_OK if report.ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pds", description="Private data storage pipeline simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="generate one Paillier key pair per device")
    k.add_argument("--bits", type=int, default=512)
    k.add_argument("--seed", type=int, required=True)
    k.add_argument("--devices", type=parse_devices, required=True, help='devices per region, e.g. "3,3"')
    k.add_argument("--out", type=Path, required=True)
    k.set_defaults(func=cmd_keygen)

    s = sub.add_parser("simulate", help="run a configured simulation into a run directory")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--keyring", type=Path, help="use existing keys instead of deriving them from the config seed")
    s.add_argument("--report", type=Path, help="directory for the shard layout figure")
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("query", help="fetch a device's aggregates by identity number and open them")
    q.add_argument("--rundir", type=Path, required=True)
    q.add_argument("--device", required=True, help="identity number, e.g. R1-I2")
    q.add_argument("--from", dest="from_index", type=int)
    q.add_argument("--to", dest="to_index", type=int)
    q.add_argument("--combine", action="store_true")
    q.add_argument("--keyring", type=Path)
    q.add_argument("--raw", action="store_true", help="print the ciphertext response frame instead of opening it")
    q.set_defaults(func=cmd_query)

    v = sub.add_parser("verify", help="check stored aggregates against the plaintext ledger")
    v.add_argument("--rundir", type=Path, required=True)
    v.add_argument("--ledger", type=Path)
    v.add_argument("--keyring", type=Path)
    v.add_argument("--report", type=Path, help="directory for checks.csv and figures")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigInvalid as e:
        _err(f"config error: {e}")
    except (PDSError, OSError, json.JSONDecodeError, KeyError) as e:
        _err(f"{type(e).__name__}: {e}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
