"""Exception hierarchy shared by every tier of the storage pipeline."""


class PDSError(Exception):
    """Base class for all errors raised by this package."""


# crypto
class InvalidBitLength(PDSError, ValueError):
    pass


class GenerationFailure(PDSError, RuntimeError):
    pass


class PlaintextOutOfRange(PDSError, ValueError):
    pass


class ValueOutOfRange(PDSError, ValueError):
    pass


class BadNonce(PDSError, ValueError):
    pass


class KeyMismatch(PDSError, ValueError):
    pass


class MalformedCiphertext(PDSError, ValueError):
    pass


# wire format
class MalformedFrame(PDSError, ValueError):
    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at byte {position})"
        super().__init__(message)
        self.position = position


class UnsupportedVersion(MalformedFrame):
    pass


class ZeroWidth(PDSError, ValueError):
    pass


# fog
class ForeignDevice(PDSError, ValueError):
    pass


class FingerprintMismatch(PDSError, ValueError):
    pass


class DuplicateTick(PDSError, ValueError):
    pass


class LateReport(PDSError, ValueError):
    pass


class ZeroShards(PDSError, ValueError):
    pass


# cloud
class WrongShard(PDSError, ValueError):
    pass


class DuplicateWindow(PDSError, ValueError):
    pass


class UnknownDevice(PDSError, LookupError):
    pass


class EmptyRange(PDSError, LookupError):
    pass


class InvalidRange(PDSError, ValueError):
    pass


class CorruptLog(PDSError):
    """Raised when a shard log cannot be replayed past ``offset``.

    ``records`` holds everything decoded before the bad frame.
    """

    def __init__(self, message: str, offset: int, records=None):
        super().__init__(f"{message} (log offset {offset})")
        self.offset = offset
        self.records = records if records is not None else {}


# client / harness
class InconsistentResponse(PDSError, ValueError):
    pass


class ConfigInvalid(PDSError, ValueError):
    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint
