"""Paillier cryptosystem, g = n + 1 variant.

Keys and ciphertexts are immutable values.  Randomness is drawn from a
``random.Random``-compatible generator passed by the caller; when none is
given a ``secrets.SystemRandom`` is used.  :class:`HashDRBG` provides the
seeded, reproducible generator used for key generation and test vectors.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import re
import secrets
from dataclasses import dataclass, field

from .errors import (
    BadNonce,
    GenerationFailure,
    InvalidBitLength,
    KeyMismatch,
    MalformedCiphertext,
    PlaintextOutOfRange,
    ValueOutOfRange,
)

logger = logging.getLogger(__name__)

MILLER_RABIN_ROUNDS = 40
MIN_PRODUCTION_BITS = 512
MAX_PRIME_ATTEMPTS = 100_000
MAX_PAIR_ATTEMPTS = 1_000

_SMALL_PRIMES = [p for p in range(3, 2000, 2) if all(p % d for d in range(3, math.isqrt(p) + 1, 2))]

_sysrand = secrets.SystemRandom()
_HEX_RE = re.compile(r"0|[1-9a-f][0-9a-f]*")


class HashDRBG(random.Random):
    """SHA-256 counter-mode generator behind the ``random.Random`` API."""

    def __init__(self, seed: int | bytes | str = 0):
        self._key = b""
        self._counter = 0
        self._pool = b""
        super().__init__(seed)

    def seed(self, a=0, version=2) -> None:
        if isinstance(a, int):
            a = a.to_bytes(max(1, (a.bit_length() + 8) // 8), "big", signed=True)
        elif isinstance(a, str):
            a = a.encode()
        self._key = hashlib.sha256(b"pds-drbg|" + bytes(a)).digest()
        self._counter = 0
        self._pool = b""

    def _take(self, nbytes: int) -> bytes:
        while len(self._pool) < nbytes:
            block = hashlib.sha256(self._key + self._counter.to_bytes(8, "big")).digest()
            self._counter += 1
            self._pool += block
        out, self._pool = self._pool[:nbytes], self._pool[nbytes:]
        return out

    def getrandbits(self, k: int) -> int:
        if k < 0:
            raise ValueError("number of bits must be non-negative")
        if k == 0:
            return 0
        nbytes = (k + 7) // 8
        return int.from_bytes(self._take(nbytes), "big") >> (8 * nbytes - k)

    def random(self) -> float:
        return self.getrandbits(53) / (1 << 53)

    def getstate(self):
        return (self._key, self._counter, self._pool)

    def setstate(self, state) -> None:
        self._key, self._counter, self._pool = state


def derive_seed(master: int, *labels) -> int:
    """64-bit child seed for ``labels`` under ``master``."""
    text = "|".join([str(master), *map(str, labels)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def is_probable_prime(n: int, rng: random.Random | None = None, rounds: int = MILLER_RABIN_ROUNDS) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    if n == 2:
        return True
    if n % 2 == 0:
        return False
    rng = rng or _sysrand
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    for _ in range(MAX_PRIME_ATTEMPTS):
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if is_probable_prime(candidate, rng):
            return candidate
    raise GenerationFailure(f"no {bits}-bit prime after {MAX_PRIME_ATTEMPTS} candidates")


def fingerprint_of(n: int) -> str:
    return hashlib.sha256(to_hex(n).encode()).hexdigest()[:16]


def to_hex(x: int) -> str:
    if x < 0:
        raise ValueError("negative integers have no canonical hex form")
    return format(x, "x")


def from_hex(s: str) -> int:
    if not isinstance(s, str) or not _HEX_RE.fullmatch(s):
        raise ValueError(f"not a canonical hex integer: {s!r}")
    return int(s, 16)


@dataclass(frozen=True)
class PublicKey:
    n: int
    n_squared: int = field(init=False, repr=False)
    g: int = field(init=False, repr=False)
    fingerprint: str = field(init=False)

    def __post_init__(self):
        if self.n < 15 or self.n % 2 == 0:
            raise ValueError(f"modulus must be odd and >= 15, got {self.n}")
        object.__setattr__(self, "n_squared", self.n * self.n)
        object.__setattr__(self, "g", self.n + 1)
        object.__setattr__(self, "fingerprint", fingerprint_of(self.n))

    def to_json(self) -> dict:
        return {"n": to_hex(self.n), "fingerprint": self.fingerprint}

    @classmethod
    def from_json(cls, obj: dict) -> PublicKey:
        pk = cls(from_hex(obj["n"]))
        if obj.get("fingerprint", pk.fingerprint) != pk.fingerprint:
            raise KeyMismatch("stored fingerprint does not match modulus")
        return pk


@dataclass(frozen=True)
class PrivateKey:
    lam: int = field(repr=False)
    mu: int = field(repr=False)
    public: PublicKey
    # prime factors are kept only when the key was generated locally
    p: int | None = field(default=None, repr=False, compare=False)
    q: int | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = self.public.n
        if not 1 <= self.mu < n or (self.lam * self.mu) % n != 1:
            raise ValueError("lambda * mu must be 1 mod n with 1 <= mu < n")

    def to_json(self) -> dict:
        return {"lambda": to_hex(self.lam), "mu": to_hex(self.mu), "n": to_hex(self.public.n)}

    @classmethod
    def from_json(cls, obj: dict) -> PrivateKey:
        return cls(from_hex(obj["lambda"]), from_hex(obj["mu"]), PublicKey(from_hex(obj["n"])))


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey
    bit_length: int

    def __post_init__(self):
        if self.private.public != self.public:
            raise KeyMismatch("private key does not belong to public key")


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_fingerprint: str

    def to_json(self) -> dict:
        return {"c": to_hex(self.value), "kfp": self.key_fingerprint}

    @classmethod
    def from_json(cls, obj: dict) -> Ciphertext:
        return cls(from_hex(obj["c"]), obj["kfp"])


@dataclass(frozen=True)
class Plaintext:
    """A raw element of Z_n together with the modulus it lives in."""

    value: int
    n: int

    def __post_init__(self):
        if not 0 <= self.value < self.n:
            raise PlaintextOutOfRange(f"{self.value} not in [0, {self.n})")

    @property
    def signed_view(self) -> int:
        return self.value if 2 * self.value <= self.n else self.value - self.n


def _keypair(p: int, q: int) -> KeyPair:
    n = p * q
    lam = math.lcm(p - 1, q - 1)
    mu = pow(lam, -1, n)
    pk = PublicKey(n)
    return KeyPair(pk, PrivateKey(lam, mu, pk, p, q), n.bit_length())


def unsafe_keypair_from_primes(p: int, q: int) -> KeyPair:
    """Build a key pair from caller-chosen primes.

    Test fixtures only: exhaustive checks over tiny rings such as n = 35
    need keys far below any secure size.
    """
    if p == q or not (is_probable_prime(p) and is_probable_prime(q)) or p == 2 or q == 2:
        raise ValueError("p and q must be distinct odd primes")
    if math.gcd(p * q, (p - 1) * (q - 1)) != 1:
        raise ValueError("gcd(pq, (p-1)(q-1)) must be 1")
    return _keypair(p, q)


def keygen(bit_length: int, seed: int) -> KeyPair:
    """Deterministic key pair with an n of exactly ``bit_length`` bits."""
    if not isinstance(bit_length, int) or bit_length < 8 or bit_length % 2:
        raise InvalidBitLength(f"bit_length must be an even integer >= 8, got {bit_length!r}")
    if bit_length < MIN_PRODUCTION_BITS:
        logger.warning("generating a %d-bit key; below the %d-bit production minimum", bit_length, MIN_PRODUCTION_BITS)
    rng = HashDRBG(("keygen", bit_length, seed).__repr__())
    half = bit_length // 2
    for _ in range(MAX_PAIR_ATTEMPTS):
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q or (p * q).bit_length() != bit_length:
            continue
        if math.gcd(p * q, (p - 1) * (q - 1)) != 1:
            continue
        return _keypair(p, q)
    raise GenerationFailure(f"no valid prime pair for {bit_length} bits after {MAX_PAIR_ATTEMPTS} attempts")


def _check(pk: PublicKey, *cts: Ciphertext) -> None:
    for c in cts:
        if c.key_fingerprint != pk.fingerprint:
            raise KeyMismatch(f"ciphertext under key {c.key_fingerprint}, expected {pk.fingerprint}")


def _random_unit(n: int, rng: random.Random) -> int:
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def encrypt(pk: PublicKey, m: Plaintext | int, r: int | None = None, rng: random.Random | None = None) -> Ciphertext:
    value = m.value if isinstance(m, Plaintext) else m
    if isinstance(m, Plaintext) and m.n != pk.n:
        raise PlaintextOutOfRange("plaintext belongs to a different modulus")
    if not 0 <= value < pk.n:
        raise PlaintextOutOfRange(f"{value} not in [0, n)")
    if r is None:
        r = _random_unit(pk.n, rng or _sysrand)
    elif not 1 <= r < pk.n or math.gcd(r, pk.n) != 1:
        raise BadNonce("nonce must lie in [1, n) and be coprime to n")
    n2 = pk.n_squared
    # (n+1)^m = 1 + m*n (mod n^2)
    gm = (1 + value * pk.n) % n2
    return Ciphertext(gm * pow(r, pk.n, n2) % n2, pk.fingerprint)


def decrypt(sk: PrivateKey, c: Ciphertext) -> Plaintext:
    pk = sk.public
    _check(pk, c)
    if not 1 <= c.value < pk.n_squared:
        raise MalformedCiphertext("ciphertext value outside [1, n^2)")
    u = pow(c.value, sk.lam, pk.n_squared)
    if (u - 1) % pk.n:
        raise MalformedCiphertext("c^lambda - 1 is not a multiple of n")
    return Plaintext((u - 1) // pk.n * sk.mu % pk.n, pk.n)


def add_cipher(pk: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _check(pk, a, b)
    return Ciphertext(a.value * b.value % pk.n_squared, pk.fingerprint)


def scalar_mul(pk: PublicKey, a: Ciphertext, k: int) -> Ciphertext:
    _check(pk, a)
    if k < 0:
        raise ValueError("scalar must be non-negative")
    return Ciphertext(pow(a.value, k, pk.n_squared), pk.fingerprint)


def rerandomize(pk: PublicKey, a: Ciphertext, rng: random.Random | None = None, s: int | None = None) -> Ciphertext:
    """Multiply in a fresh encryption of zero.  ``s`` pins the nonce for tests."""
    _check(pk, a)
    if s is None:
        s = _random_unit(pk.n, rng or _sysrand)
    elif not 1 <= s < pk.n or math.gcd(s, pk.n) != 1:
        raise BadNonce("nonce must lie in [1, n) and be coprime to n")
    return Ciphertext(a.value * pow(s, pk.n, pk.n_squared) % pk.n_squared, pk.fingerprint)


def encode_signed(pk: PublicKey, v: int) -> Plaintext:
    if 4 * abs(v) >= pk.n:
        raise ValueOutOfRange(f"|{v}| must be below n/4")
    return Plaintext(v % pk.n, pk.n)


def decode_signed(pk: PublicKey, m: Plaintext) -> int:
    if m.n != pk.n:
        raise KeyMismatch("plaintext belongs to a different modulus")
    return m.signed_view
