"""Exception hierarchy shared across the package."""


class RehablinkError(Exception):
    """Base class for all package errors."""


# --- ingestion ---------------------------------------------------------------

class DuplicateDevice(RehablinkError):
    pass


class UnknownDevice(RehablinkError):
    pass


class UnknownPatient(RehablinkError):
    pass


class UnknownAssessmentCode(RehablinkError):
    pass


class IllegalPayloadKind(RehablinkError):
    pass


class EmptyPayload(RehablinkError):
    pass


class SchemaVersionUnsupported(RehablinkError):
    pass


class MalformedPayload(RehablinkError):
    """Payload bytes do not parse as the declared kind."""


# --- scoring -----------------------------------------------------------------

class ArityError(RehablinkError):
    pass


class RangeError(RehablinkError):
    pass


class UnknownInstrument(RehablinkError):
    pass


class NonPositiveDuration(RehablinkError):
    pass


# --- IMU metrics -------------------------------------------------------------

class StreamTooShort(RehablinkError):
    pass


class InconsistentIntervals(RehablinkError):
    pass


class NoOverlap(RehablinkError):
    pass


class UnknownAffectedSide(RehablinkError):
    pass


# --- HL7 ---------------------------------------------------------------------

class MalformedMessage(RehablinkError):
    pass


class TruncatedMessage(MalformedMessage):
    pass


class InvalidMessage(RehablinkError):
    pass


class EmptyResults(RehablinkError):
    pass


class UnmappedMetric(RehablinkError):
    pass


class EndpointUnavailable(RehablinkError):
    pass


# --- crypto / relay ----------------------------------------------------------

class NoActiveKey(RehablinkError):
    pass


class IntegrityFailure(RehablinkError):
    """Envelope failed verification.

    ``reason`` distinguishes what failed: "tag" (AEAD tag mismatch),
    "manifest" (plaintext digest does not match the manifest),
    "key" (envelope names a key the store does not hold) or
    "format" (byte layout is not a valid envelope).
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"integrity failure ({reason}): {detail}" if detail
                         else f"integrity failure ({reason})")


class UnknownKey(IntegrityFailure):
    def __init__(self, key_id: str):
        super().__init__("key", f"key {key_id} not in keystore")
        self.key_id = key_id


class DeliveryExhausted(RehablinkError):
    pass


# --- store / pipeline --------------------------------------------------------

class IntegrityError(RehablinkError):
    """Referential integrity violated (store-level)."""


class AlreadyStored(RehablinkError):
    pass


class UnknownRecord(RehablinkError):
    pass


class WrongStatus(RehablinkError):
    pass


class UnknownScope(RehablinkError):
    pass


class InvalidSpec(RehablinkError):
    pass
