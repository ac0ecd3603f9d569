"""Privacy-preserving IoT telemetry storage on outsourced clouds.

Devices encrypt readings under their own Paillier keys, fog nodes sum the
ciphertexts per device over fixed tick windows, and sharded cloud stores
keep and further combine the aggregates without ever decrypting them.
"""

from .client import OwnerKeyring
from .cloud import Cloud, CloudShard, QueryRequest, QueryResponse
from .fog import FogNode, shard_for
from .harness import ShadowLedger, SimConfig, run_simulation, verify
from .model import AggregateRecord, DeviceIdentity, EncryptedReport, Reading, Region, WindowId, window_of
from .paillier import Ciphertext, KeyPair, Plaintext, PrivateKey, PublicKey, keygen

__all__ = [
    "AggregateRecord", "Ciphertext", "Cloud", "CloudShard", "DeviceIdentity", "EncryptedReport",
    "FogNode", "KeyPair", "OwnerKeyring", "Plaintext", "PrivateKey", "PublicKey", "QueryRequest",
    "QueryResponse", "Reading", "Region", "ShadowLedger", "SimConfig", "WindowId", "keygen",
    "run_simulation", "shard_for", "verify", "window_of",
]
