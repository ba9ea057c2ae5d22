"""Relay retry/backoff behavior and receiver idempotence, in virtual time."""

import pytest

from rehablink.clock import VirtualClock
from rehablink.crypto import KeyStore, seal
from rehablink.errors import DeliveryExhausted
from rehablink.relay import BackoffPolicy, EnvelopeReceiver, TransferReceipt, relay


class ScriptedDestination:
    """Fails the first ``failures`` deliveries, then accepts everything."""

    name = "scripted"

    def __init__(self, failures: int):
        self.failures = failures
        self.calls = 0
        self.delivered: list[bytes] = []

    def deliver(self, payload: bytes) -> None:
        self.calls += 1
        if self.calls <= self.failures:
            raise ConnectionError(f"scripted fault {self.calls}")
        self.delivered.append(payload)


@pytest.fixture
def envelope(tmp_path):
    ks = KeyStore.generate(tmp_path / "keys.json")
    return seal(b"relay payload", ks, record_id="rec-1")


def test_healthy_destination_single_attempt(envelope):
    dest = ScriptedDestination(failures=0)
    receipt = relay(envelope, dest, clock=VirtualClock())
    assert receipt.delivered is True
    assert receipt.attempts == 1
    assert dest.delivered == [envelope.to_bytes()]


def test_transient_faults_then_delivery(envelope):
    dest = ScriptedDestination(failures=2)
    clock = VirtualClock()
    receipt = relay(envelope, dest, clock=clock)
    assert receipt.delivered is True
    assert receipt.attempts == 3
    assert len(receipt.errors) == 2
    assert clock.sleeps == [1.0, 2.0]  # base 1 s, factor 2


def test_exhaustion_after_five_attempts(envelope):
    dest = ScriptedDestination(failures=99)
    clock = VirtualClock()
    with pytest.raises(DeliveryExhausted) as exc:
        relay(envelope, dest, clock=clock)
    receipt: TransferReceipt = exc.value.receipt
    assert receipt.attempts == 5
    assert receipt.delivered is False
    assert clock.sleeps == [1.0, 2.0, 4.0, 8.0]


def test_policy_is_configurable(envelope):
    dest = ScriptedDestination(failures=99)
    clock = VirtualClock()
    with pytest.raises(DeliveryExhausted) as exc:
        relay(envelope, dest, policy=BackoffPolicy(base_s=0.5, factor=3, max_attempts=3),
              clock=clock)
    assert exc.value.receipt.attempts == 3
    assert clock.sleeps == [0.5, 1.5]


def test_receiver_collapses_duplicate_envelopes(envelope):
    jobs = []
    receiver = EnvelopeReceiver(on_envelope=jobs.append)
    payload = envelope.to_bytes()
    for _ in range(7):
        receiver.deliver(payload)
    assert len(jobs) == 1
    assert receiver.accepted == 1
    assert jobs[0].envelope_id == envelope.envelope_id


def test_receiver_accepts_distinct_envelopes(tmp_path):
    ks = KeyStore.generate(tmp_path / "keys.json")
    jobs = []
    receiver = EnvelopeReceiver(on_envelope=jobs.append)
    for i in range(5):
        receiver.deliver(seal(b"p", ks, record_id=f"rec-{i}").to_bytes())
    assert len(jobs) == 5
