"""Identities, signatures, sealing and hashing.

Every identity is one 32-byte secret from which an Ed25519 signing key and
an X25519 sealing key are derived. The public identity is the 64-byte
concatenation ``ed25519_public || x25519_public``.

Sealing is ECIES-style: an ephemeral X25519 key agrees a secret with the
recipient, HKDF-SHA256 turns it into a ChaCha20-Poly1305 key, and the
payload is encrypted under a zero nonce (each key is used once). In
deterministic mode the ephemeral key is derived from the recipient and
the payload, so equal inputs give byte-identical envelopes.

Signatures are Ed25519 over ``public || payload`` so that the sealing half
of an identity is bound as well.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import encoding as enc

SEED_SIZE = 32
PUBLIC_SIZE = 64
DIGEST_SIZE = 32
SIGNATURE_SIZE = 64
HINT_SIZE = 4
ZERO_DIGEST = bytes(DIGEST_SIZE)

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_NONCE = bytes(12)

_deterministic: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "dusc_deterministic", default=False
)


class SealError(Exception):
    """A sealed envelope could not be opened by the given key."""


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes

    def __post_init__(self) -> None:
        if len(self.private) != SEED_SIZE:
            raise ValueError("private key must be a 32-byte seed")

    def __getstate__(self) -> dict:
        # cached key objects are not picklable
        return {"public": self.public, "private": self.private}

    def __repr__(self) -> str:
        return f"KeyPair({short(self.public)})"

    @cached_property
    def signing_key(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(_subkey(b"sign", self.private))

    @cached_property
    def sealing_key(self) -> X25519PrivateKey:
        return X25519PrivateKey.from_private_bytes(_subkey(b"seal", self.private))


@dataclass(frozen=True)
class SignedEnvelope:
    payload: bytes
    signature: bytes
    signer: bytes

    def encode(self) -> bytes:
        return enc.record(self.payload, self.signature, self.signer)

    @classmethod
    def decode(cls, data: bytes) -> "SignedEnvelope":
        payload, signature, signer = enc.fields(data, 3)
        return cls(payload, signature, signer)

    def verify(self) -> bool:
        return verify(self.payload, self.signature, self.signer)


@dataclass(frozen=True)
class SealedEnvelope:
    ciphertext: bytes
    recipient_hint: bytes | None = None

    def encode(self) -> bytes:
        return enc.record(self.recipient_hint or b"", self.ciphertext)

    @classmethod
    def decode(cls, data: bytes) -> "SealedEnvelope":
        hint, ciphertext = enc.fields(data, 2)
        if hint and len(hint) != HINT_SIZE:
            raise enc.DecodeError("bad recipient hint")
        return cls(ciphertext, hint or None)


def _subkey(label: bytes, secret: bytes) -> bytes:
    return hashlib.sha256(b"dusc/" + label + b"\x00" + secret).digest()


def generate_identity(seed: bytes | None = None) -> KeyPair:
    if seed is None:
        seed = os.urandom(SEED_SIZE)
    elif len(seed) != SEED_SIZE:
        raise ValueError(f"seed must be {SEED_SIZE} bytes")
    sign_pub = Ed25519PrivateKey.from_private_bytes(
        _subkey(b"sign", seed)
    ).public_key().public_bytes(_RAW, _RAW_PUB)
    seal_pub = X25519PrivateKey.from_private_bytes(
        _subkey(b"seal", seed)
    ).public_key().public_bytes(_RAW, _RAW_PUB)
    return KeyPair(public=sign_pub + seal_pub, private=bytes(seed))


def seed_from_int(value: int) -> bytes:
    return value.to_bytes(SEED_SIZE, "big")


def seed_from_label(*parts: object) -> bytes:
    """Stable seed for named actors in reproducible runs."""
    return hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()


def sign(payload: bytes, key: KeyPair) -> SignedEnvelope:
    if not payload:
        raise ValueError("cannot sign an empty payload")
    # bind the whole 64-byte identity, not only its Ed25519 half
    return SignedEnvelope(payload, key.signing_key.sign(key.public + payload), key.public)


def signature(payload: bytes, key: KeyPair) -> bytes:
    return sign(payload, key).signature


def verify(payload: bytes, signature: bytes, signer: bytes) -> bool:
    try:
        if len(signer) != PUBLIC_SIZE or len(signature) != SIGNATURE_SIZE:
            return False
        Ed25519PublicKey.from_public_bytes(signer[:32]).verify(signature, signer + payload)
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


def fingerprint(public: bytes) -> bytes:
    return hashlib.sha256(public).digest()[:HINT_SIZE]


def _seal_key(shared: bytes, eph_pub: bytes, recipient_xpub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=b"dusc-seal-v1" + eph_pub + recipient_xpub,
    ).derive(shared)


def seal(payload: bytes, recipient: bytes, *, hint: bool = False) -> SealedEnvelope:
    if not payload:
        raise ValueError("cannot seal an empty payload")
    if len(recipient) != PUBLIC_SIZE:
        raise ValueError("recipient must be a 64-byte public identity")
    xpub = recipient[32:]
    if _deterministic.get():
        eph_seed = hashlib.sha256(b"dusc/eph\x00" + recipient + payload).digest()
    else:
        eph_seed = os.urandom(32)
    eph = X25519PrivateKey.from_private_bytes(eph_seed)
    eph_pub = eph.public_key().public_bytes(_RAW, _RAW_PUB)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(xpub))
    key = _seal_key(shared, eph_pub, xpub)
    hint_bytes = fingerprint(recipient) if hint else None
    body = ChaCha20Poly1305(key).encrypt(_NONCE, payload, hint_bytes or b"")
    return SealedEnvelope(eph_pub + body, hint_bytes)


def open(envelope: SealedEnvelope, key: KeyPair) -> bytes:  # noqa: A001
    """Recover the sealed payload or raise :class:`SealError`."""
    ct = envelope.ciphertext
    if len(ct) < 32 + 16:
        raise SealError("ciphertext too short")
    if envelope.recipient_hint is not None and envelope.recipient_hint != fingerprint(key.public):
        raise SealError("envelope addressed to another key")
    eph_pub, body = ct[:32], ct[32:]
    try:
        shared = key.sealing_key.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        aead_key = _seal_key(shared, eph_pub, key.public[32:])
        return ChaCha20Poly1305(aead_key).decrypt(
            _NONCE, body, envelope.recipient_hint or b""
        )
    except (InvalidTag, ValueError) as exc:
        raise SealError("authentication failed") from exc


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hexkey(public: bytes) -> str:
    return public.hex()


def short(public: bytes) -> str:
    return public.hex()[:8]


@contextlib.contextmanager
def deterministic(enabled: bool = True) -> Iterator[None]:
    """Make :func:`seal` output a pure function of its inputs."""
    token = _deterministic.set(enabled)
    try:
        yield
    finally:
        _deterministic.reset(token)


def is_deterministic() -> bool:
    return _deterministic.get()
