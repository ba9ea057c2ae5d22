"""At-least-once envelope relay with exponential backoff, plus the receiving
side's idempotence guard. Exactly-once is deliberately not attempted: the
receiver collapses duplicate deliveries by envelope id instead."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .clock import SystemClock
from .crypto import SealedEnvelope
from .errors import DeliveryExhausted


@dataclass(frozen=True)
class BackoffPolicy:
    base_s: float = 1.0
    factor: float = 2.0
    max_attempts: int = 5

    def delay(self, attempt: int) -> float:
        """Sleep before attempt ``attempt + 1`` (attempts count from 1)."""
        return self.base_s * (self.factor ** (attempt - 1))


@dataclass
class TransferReceipt:
    envelope_id: str
    destination: str
    attempts: int = 0
    delivered: bool = False
    errors: list[str] = field(default_factory=list)


def relay(envelope: SealedEnvelope, destination,
          policy: BackoffPolicy | None = None, clock=None) -> TransferReceipt:
    """Push one envelope to a destination, retrying on failure.

    ``destination`` needs ``.name`` and ``.deliver(envelope_bytes)``; any
    exception from deliver counts as a failed attempt. After the policy's
    attempt budget the envelope is left to the caller to park on the
    dead-letter path and DeliveryExhausted carries the receipt.
    """
    policy = policy or BackoffPolicy()
    clock = clock or SystemClock()
    receipt = TransferReceipt(
        envelope_id=envelope.envelope_id,
        destination=getattr(destination, "name", repr(destination)),
    )
    payload = envelope.to_bytes()
    while receipt.attempts < policy.max_attempts:
        receipt.attempts += 1
        try:
            destination.deliver(payload)
            receipt.delivered = True
            return receipt
        except Exception as exc:  # scripted faults and transport errors alike
            receipt.errors.append(f"attempt {receipt.attempts}: {exc}")
            if receipt.attempts < policy.max_attempts:
                clock.sleep(policy.delay(receipt.attempts))
    exc = DeliveryExhausted(
        f"envelope {envelope.envelope_id} undelivered after {receipt.attempts} attempts")
    exc.receipt = receipt
    raise exc


class EnvelopeReceiver:
    """Receiving side of the relay: one processing job per envelope id,
    no matter how many times the same envelope arrives."""

    def __init__(self, on_envelope, name: str = "compute-core"):
        self.name = name
        self._on_envelope = on_envelope
        self._seen: set[str] = set()
        self._lock = threading.Lock()

    def deliver(self, payload: bytes) -> None:
        envelope = SealedEnvelope.from_bytes(payload)
        with self._lock:
            if envelope.envelope_id in self._seen:
                return
            self._seen.add(envelope.envelope_id)
        self._on_envelope(envelope)

    @property
    def accepted(self) -> int:
        return len(self._seen)
