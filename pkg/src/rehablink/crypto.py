"""The encryption node: AES-256-GCM sealed envelopes with a key journal.

Envelope wire layout (little room for ambiguity; all integers big-endian):

    magic "SENV" | version u8 | key_id 16 bytes | nonce 12 bytes
    | manifest length u32 | manifest (canonical JSON, sorted keys, no spaces)
    | ciphertext length u64 | ciphertext | tag 16 bytes

The manifest travels in the clear as AEAD associated data: routing needs
``record_id`` and ``envelope_id`` before decryption, and the binding makes
envelope/manifest swaps detectable. Keys are loaded from a file whose path
comes from the ``REHABLINK_KEYSTORE`` environment variable, never from CLI
flags. Nonces are random draws checked against an append-only journal so a
(key, nonce) pair can never repeat within a deployment.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import EmptyPayload, IntegrityFailure, NoActiveKey, UnknownKey

MAGIC = b"SENV"
VERSION = 1
KEYSTORE_ENV = "REHABLINK_KEYSTORE"
_TAG_LEN = 16
_NONCE_LEN = 12
_KEY_ID_LEN = 16


@dataclass(frozen=True)
class Manifest:
    record_id: str
    content_hash: str  # sha-256 hex of the plaintext
    byte_length: int
    created_at: str    # ISO-8601
    envelope_id: str

    def canonical_bytes(self) -> bytes:
        return json.dumps({
            "byte_length": self.byte_length,
            "content_hash": self.content_hash,
            "created_at": self.created_at,
            "envelope_id": self.envelope_id,
            "record_id": self.record_id,
        }, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Manifest":
        try:
            data = json.loads(raw.decode("utf-8"))
            return cls(
                record_id=data["record_id"],
                content_hash=data["content_hash"],
                byte_length=int(data["byte_length"]),
                created_at=data["created_at"],
                envelope_id=data["envelope_id"],
            )
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            raise IntegrityFailure("format", f"manifest does not parse: {exc}") from None


@dataclass(frozen=True)
class SealedEnvelope:
    envelope_id: str
    key_id: str  # 32 hex chars (16 bytes)
    nonce: bytes
    ciphertext: bytes
    auth_tag: bytes
    manifest: Manifest

    def to_bytes(self) -> bytes:
        manifest_raw = self.manifest.canonical_bytes()
        return b"".join([
            MAGIC,
            VERSION.to_bytes(1, "big"),
            bytes.fromhex(self.key_id),
            self.nonce,
            len(manifest_raw).to_bytes(4, "big"),
            manifest_raw,
            len(self.ciphertext).to_bytes(8, "big"),
            self.ciphertext,
            self.auth_tag,
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedEnvelope":
        pos = 0

        def take(n: int, what: str) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise IntegrityFailure("format", f"envelope truncated in {what}")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        if take(4, "magic") != MAGIC:
            raise IntegrityFailure("format", "bad magic")
        version = take(1, "version")[0]
        if version != VERSION:
            raise IntegrityFailure("format", f"unsupported version {version}")
        key_id = take(_KEY_ID_LEN, "key id").hex()
        nonce = take(_NONCE_LEN, "nonce")
        manifest_len = int.from_bytes(take(4, "manifest length"), "big")
        manifest_raw = take(manifest_len, "manifest")
        ct_len = int.from_bytes(take(8, "ciphertext length"), "big")
        ciphertext = take(ct_len, "ciphertext")
        tag = take(_TAG_LEN, "tag")
        if pos != len(data):
            raise IntegrityFailure("format", f"{len(data) - pos} trailing bytes")
        manifest = Manifest.from_bytes(manifest_raw)
        return cls(
            envelope_id=manifest.envelope_id,
            key_id=key_id,
            nonce=nonce,
            ciphertext=ciphertext,
            auth_tag=tag,
            manifest=manifest,
        )


class KeyStore:
    """256-bit symmetric keys with one active key and retained retired keys.

    Persisted as JSON; the nonce journal is an append-only sidecar file so
    sealing never rewrites key material.
    """

    def __init__(self, keys: dict[str, bytes], active_key_id: str,
                 rotation_journal: list[dict] | None = None,
                 path: Path | None = None):
        if active_key_id not in keys:
            raise NoActiveKey(f"active key {active_key_id} missing from keystore")
        self.keys = dict(keys)
        self.active_key_id = active_key_id
        self.rotation_journal = list(rotation_journal or [])
        self.path = path
        self._nonces: set[tuple[str, bytes]] = set()
        self._lock = threading.Lock()
        if path is not None:
            self._load_nonce_journal()

    # -- construction / persistence

    @classmethod
    def generate(cls, path: Path | str | None = None) -> "KeyStore":
        key_id = uuid.uuid4().hex
        store = cls(
            keys={key_id: os.urandom(32)},
            active_key_id=key_id,
            rotation_journal=[{
                "key_id": key_id,
                "activated_at": datetime.now(timezone.utc).isoformat(),
            }],
            path=Path(path) if path else None,
        )
        if store.path is not None:
            store.save()
        return store

    @classmethod
    def load(cls, path: Path | str) -> "KeyStore":
        path = Path(path)
        data = json.loads(path.read_text())
        return cls(
            keys={kid: bytes.fromhex(k) for kid, k in data["keys"].items()},
            active_key_id=data["active_key_id"],
            rotation_journal=data.get("rotation_journal", []),
            path=path,
        )

    @classmethod
    def from_env(cls) -> "KeyStore":
        path = os.environ.get(KEYSTORE_ENV)
        if not path:
            raise NoActiveKey(f"{KEYSTORE_ENV} is not set")
        return cls.load(path)

    def save(self) -> None:
        if self.path is None:
            return
        payload = {
            "version": 1,
            "active_key_id": self.active_key_id,
            "keys": {kid: k.hex() for kid, k in self.keys.items()},
            "rotation_journal": self.rotation_journal,
        }
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, indent=2))
        tmp.replace(self.path)

    def rotate(self) -> str:
        """Activate a fresh key; retired keys stay available for open()."""
        with self._lock:
            key_id = uuid.uuid4().hex
            self.keys[key_id] = os.urandom(32)
            self.active_key_id = key_id
            self.rotation_journal.append({
                "key_id": key_id,
                "activated_at": datetime.now(timezone.utc).isoformat(),
            })
            self.save()
            return key_id

    # -- nonce journal

    def _nonce_journal_path(self) -> Path | None:
        return self.path.with_suffix(self.path.suffix + ".nonces") if self.path else None

    def _load_nonce_journal(self) -> None:
        journal = self._nonce_journal_path()
        if journal is None or not journal.exists():
            return
        for line in journal.read_text().splitlines():
            if ":" in line:
                kid, nonce_hex = line.split(":", 1)
                self._nonces.add((kid, bytes.fromhex(nonce_hex)))

    def claim_nonce(self, key_id: str, draw=os.urandom) -> bytes:
        """Fresh nonce, guaranteed unused under ``key_id``; journaled."""
        with self._lock:
            while True:
                nonce = draw(_NONCE_LEN)
                if (key_id, nonce) not in self._nonces:
                    break
            self._nonces.add((key_id, nonce))
            journal = self._nonce_journal_path()
            if journal is not None:
                with journal.open("a") as fh:
                    fh.write(f"{key_id}:{nonce.hex()}\n")
            return nonce

    def nonce_pairs(self) -> set[tuple[str, bytes]]:
        return set(self._nonces)


def seal(plaintext: bytes, keystore: KeyStore, record_id: str,
         created_at: datetime | None = None, nonce_draw=os.urandom) -> SealedEnvelope:
    """Authenticated encryption of a payload under the active key."""
    if not plaintext:
        raise EmptyPayload("cannot seal an empty payload")
    if keystore.active_key_id not in keystore.keys:
        raise NoActiveKey("keystore has no active key")
    key_id = keystore.active_key_id
    nonce = keystore.claim_nonce(key_id, draw=nonce_draw)
    manifest = Manifest(
        record_id=record_id,
        content_hash=hashlib.sha256(plaintext).hexdigest(),
        byte_length=len(plaintext),
        created_at=(created_at or datetime.now(timezone.utc)).isoformat(),
        envelope_id=uuid.uuid4().hex,
    )
    sealed = AESGCM(keystore.keys[key_id]).encrypt(
        nonce, plaintext, manifest.canonical_bytes())
    return SealedEnvelope(
        envelope_id=manifest.envelope_id,
        key_id=key_id,
        nonce=nonce,
        ciphertext=sealed[:-_TAG_LEN],
        auth_tag=sealed[-_TAG_LEN:],
        manifest=manifest,
    )


def open_envelope(envelope: SealedEnvelope | bytes, keystore: KeyStore) -> bytes:
    """Decrypt and verify; tag, manifest and format failures are distinguished."""
    if isinstance(envelope, (bytes, bytearray)):
        envelope = SealedEnvelope.from_bytes(bytes(envelope))
    key = keystore.keys.get(envelope.key_id)
    if key is None:
        raise UnknownKey(envelope.key_id)
    try:
        plaintext = AESGCM(key).decrypt(
            envelope.nonce,
            envelope.ciphertext + envelope.auth_tag,
            envelope.manifest.canonical_bytes(),
        )
    except InvalidTag:
        raise IntegrityFailure("tag", "AEAD tag verification failed") from None
    if len(plaintext) != envelope.manifest.byte_length:
        raise IntegrityFailure(
            "manifest", f"plaintext length {len(plaintext)} != manifest "
            f"{envelope.manifest.byte_length}")
    digest = hashlib.sha256(plaintext).hexdigest()
    if digest != envelope.manifest.content_hash:
        raise IntegrityFailure("manifest", "plaintext digest != manifest hash")
    return plaintext
