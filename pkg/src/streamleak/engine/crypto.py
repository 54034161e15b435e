"""AES-GCM sealing of records crossing the enclave boundary."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .records import EventRecord, decode, encode

# fixed pipeline key, mirroring a key compiled into the enclave image
DEFAULT_KEY_HEX = "000102030405060708090a0b0c0d0e0f"

NONCE_BYTES = 12
TAG_BYTES = 16
_HEADER = struct.Struct(">Q")


class AuthFailure(Exception):
    """Ciphertext, tag, nonce or header failed authentication."""


@dataclass(frozen=True)
class Ciphertext:
    nonce: bytes
    body: bytes
    tag: bytes
    # authenticated but unencrypted: the logical timestamp, used by the untrusted
    # merger in front of two-input stages
    header: bytes = b""

    def __len__(self):
        return len(self.nonce) + len(self.body) + len(self.tag) + len(self.header)

    @property
    def ts(self) -> int:
        return _HEADER.unpack(self.header)[0] if self.header else 0


def parse_key(key) -> bytes:
    if isinstance(key, str):
        key = bytes.fromhex(key)
    if len(key) != 16:
        raise ValueError("AES-128 key must be 16 bytes")
    return key


class Sealer:
    """Encrypts/decrypts records under one key with per-instance unique nonces.

    Nonces are a 4-byte instance prefix followed by a 64-bit counter, so two
    encryptions through the same sealer never reuse a nonce.
    """

    def __init__(self, key=DEFAULT_KEY_HEX, prefix: bytes | None = None):
        self._aead = AESGCM(parse_key(key))
        self._prefix = os.urandom(4) if prefix is None else bytes(prefix)[:4].rjust(4, b"\0")
        self._counter = 0

    def _next_nonce(self) -> bytes:
        self._counter += 1
        return self._prefix + self._counter.to_bytes(8, "big")

    def encrypt(self, rec: EventRecord) -> Ciphertext:
        nonce = self._next_nonce()
        header = _HEADER.pack(rec.ts)
        sealed = self._aead.encrypt(nonce, encode(rec), header)
        return Ciphertext(nonce, sealed[:-TAG_BYTES], sealed[-TAG_BYTES:], header)

    def decrypt(self, ct: Ciphertext) -> EventRecord:
        try:
            plain = self._aead.decrypt(ct.nonce, ct.body + ct.tag, ct.header)
        except (InvalidTag, ValueError) as exc:
            raise AuthFailure("authentication failed") from exc
        return decode(plain)


def encrypt(rec: EventRecord, key=DEFAULT_KEY_HEX) -> Ciphertext:
    return Sealer(key).encrypt(rec)


def decrypt(ct: Ciphertext, key=DEFAULT_KEY_HEX) -> EventRecord:
    return Sealer(key, prefix=b"\0\0\0\0").decrypt(ct)
