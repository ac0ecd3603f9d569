import math
from pathlib import Path

import pytest

from pds import paillier

DATA = Path(__file__).parent / "data"


def modpow(base, exp, mod):
    """Square-and-multiply, written out so it does not share code with pow()."""
    result, base = 1, base % mod
    while exp:
        if exp & 1:
            result = result * base % mod
        base = base * base % mod
        exp >>= 1
    return result


def units(n):
    return [r for r in range(1, n) if math.gcd(r, n) == 1]


@pytest.fixture(scope="session")
def tiny():
    """n = 35 from injected primes 5 and 7."""
    return paillier.unsafe_keypair_from_primes(5, 7)


@pytest.fixture(scope="session")
def kp64():
    return paillier.keygen(64, seed=42)


@pytest.fixture(scope="session")
def kp512():
    return paillier.keygen(512, seed=1)


@pytest.fixture
def drbg():
    return paillier.HashDRBG(1234)
