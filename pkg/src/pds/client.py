"""Device-owner side: key custody, report encryption, and opening responses."""

from __future__ import annotations

import json
import os
import random
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

from . import paillier
from .cloud import QueryResponse
from .errors import InconsistentResponse, KeyMismatch, UnknownDevice
from .model import DeviceIdentity, EncryptedReport, Reading
from .paillier import KeyPair, PrivateKey, PublicKey


def key_seed(master_seed: int, device: DeviceIdentity) -> int:
    return paillier.derive_seed(master_seed, "key", device.id_number)


class OwnerKeyring:
    """Holds one Paillier key pair per device.  The only holder of private keys."""

    def __init__(self, keys: dict[DeviceIdentity, KeyPair], seed: int | None = None):
        self._keys = dict(keys)
        self.seed = seed
        self.stats: Counter = Counter()

    @classmethod
    def generate(cls, devices: Iterable[DeviceIdentity], bits: int, seed: int) -> OwnerKeyring:
        keys = {d: paillier.keygen(bits, key_seed(seed, d)) for d in sorted(devices)}
        return cls(keys, seed)

    def __contains__(self, device: DeviceIdentity) -> bool:
        return device in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def devices(self) -> list[DeviceIdentity]:
        return sorted(self._keys)

    def public_key(self, device: DeviceIdentity) -> PublicKey:
        try:
            return self._keys[device].public
        except KeyError:
            raise UnknownDevice(f"{device} has no key in this keyring") from None

    def _private(self, device: DeviceIdentity, fingerprint: str) -> PrivateKey:
        kp = self._keys.get(device)
        if kp is None:
            raise KeyMismatch(f"no key for {device}")
        if kp.public.fingerprint != fingerprint:
            raise KeyMismatch(f"{device} data is under key {fingerprint}, keyring holds {kp.public.fingerprint}")
        return kp.private

    def produce_report(self, reading: Reading, rng: random.Random | None = None) -> EncryptedReport:
        pk = self.public_key(reading.device)
        m = paillier.encode_signed(pk, reading.value)
        self.stats["encrypt"] += 1
        return EncryptedReport(reading.device, reading.timestamp, paillier.encrypt(pk, m, rng=rng))

    def decrypt_signed(self, device: DeviceIdentity, ct: paillier.Ciphertext) -> int:
        sk = self._private(device, ct.key_fingerprint)
        self.stats["decrypt"] += 1
        return paillier.decode_signed(sk.public, paillier.decrypt(sk, ct))

    def open_response(self, resp: QueryResponse) -> OpenedResponse:
        self._private(resp.device, resp.key_fingerprint)
        windows = [(r.window.index, self.decrypt_signed(resp.device, r.ciphertext)) for r in resp.records]
        total = None
        if resp.combined is not None:
            total = self.decrypt_signed(resp.device, resp.combined)
            if total != sum(v for _, v in windows):
                raise InconsistentResponse(f"{resp.device}: combined total {total} != sum of windows")
        return OpenedResponse(resp.device, windows, total)

    # -- file format: JSON array of {dev, public, private} -----------------

    def to_json(self) -> list[dict]:
        return [
            {"dev": d.id_number, "public": kp.public.to_json(), "private": kp.private.to_json()}
            for d, kp in sorted(self._keys.items())
        ]

    @classmethod
    def from_json(cls, entries: list[dict]) -> OwnerKeyring:
        keys = {}
        for e in entries:
            pk = PublicKey.from_json(e["public"])
            sk = PrivateKey.from_json(e["private"])
            keys[DeviceIdentity.parse(e["dev"])] = KeyPair(pk, sk, pk.n.bit_length())
        return cls(keys)

    def save(self, path: str | os.PathLike) -> None:
        """Write the keyring readable by the owner only (mode 0600)."""
        path = Path(path)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)
        os.chmod(path, 0o600)

    @classmethod
    def load(cls, path: str | os.PathLike) -> OwnerKeyring:
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class OpenedResponse:
    device: DeviceIdentity
    windows: list[tuple[int, int]]
    total: int | None = None

    def to_json(self) -> dict:
        out = {"dev": self.device.id_number, "windows": [list(w) for w in self.windows]}
        if self.total is not None:
            out["total"] = self.total
        return out
