#!/usr/bin/env python3
"""
Key pairs, signatures and chain addresses.

Signature scheme: Ed25519 (deterministic, 64-byte signatures, 32-byte raw
public keys). An address is the last 20 bytes of SHA-256 over the raw public
key.
"""

import os
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .encoding import ADDRESS_SIZE, DIGEST_SIZE, Address, digest
from .errors import IdentityError

PRIVATE_KEY_SIZE = 32
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64
KEY_FILE_VERSION = 0x01


@dataclass(frozen=True)
class KeyPair:
    private_key: bytes
    public_key: bytes

    @property
    def address(self) -> Address:
        return address_of(self.public_key)

    def sign(self, message_digest: bytes) -> bytes:
        return sign(self.private_key, message_digest)

    def __repr__(self) -> str:
        # never echo the secret
        return f"KeyPair(address={self.address})"


def _raw_public(private: Ed25519PrivateKey) -> bytes:
    return private.public_key().public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw
    )


def _load_private(private_key: bytes) -> Ed25519PrivateKey:
    if len(private_key) != PRIVATE_KEY_SIZE:
        raise IdentityError(f"Private key must be {PRIVATE_KEY_SIZE} bytes, got {len(private_key)}")
    return Ed25519PrivateKey.from_private_bytes(bytes(private_key))


def keygen(seed: Optional[bytes] = None) -> KeyPair:
    """Generate a key pair; the same 32-byte seed always gives the same pair"""
    if seed is None:
        seed = os.urandom(PRIVATE_KEY_SIZE)
    if len(seed) != PRIVATE_KEY_SIZE:
        raise IdentityError(f"Seed must be {PRIVATE_KEY_SIZE} bytes, got {len(seed)}")
    private = _load_private(seed)
    return KeyPair(private_key=bytes(seed), public_key=_raw_public(private))


def keygen_from_label(label: str) -> KeyPair:
    """Deterministic key pair derived from a text label (simulation actors, tests)"""
    return keygen(digest(label.encode("utf-8")))


def address_of(public_key: bytes) -> Address:
    if not isinstance(public_key, (bytes, bytearray)) or len(public_key) != PUBLIC_KEY_SIZE:
        size = len(public_key) if isinstance(public_key, (bytes, bytearray)) else type(public_key).__name__
        raise IdentityError(f"Public key must be {PUBLIC_KEY_SIZE} bytes, got {size}")
    return Address(digest(bytes(public_key))[-ADDRESS_SIZE:])


def address_to_hex(address: bytes) -> str:
    return Address(address).hex0x()


def address_from_hex(text: str) -> Address:
    """Parse 0x + 40 hex characters; upper case is accepted"""
    return Address.from_hex(text)


def sign(private_key: bytes, message_digest: bytes) -> bytes:
    if len(message_digest) != DIGEST_SIZE:
        raise IdentityError(f"Digest must be {DIGEST_SIZE} bytes, got {len(message_digest)}")
    return _load_private(private_key).sign(bytes(message_digest))


def verify(public_key: bytes, message_digest: bytes, signature: bytes) -> bool:
    """Check a signature; malformed input of any kind gives False"""
    try:
        if len(public_key) != PUBLIC_KEY_SIZE or len(message_digest) != DIGEST_SIZE:
            return False
        if len(signature) != SIGNATURE_SIZE:
            return False
        Ed25519PublicKey.from_public_bytes(bytes(public_key)).verify(bytes(signature), bytes(message_digest))
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


def save_keypair(path: str, keypair: KeyPair) -> None:
    """Write the key file (version byte + raw private key); never overwrites"""
    try:
        with open(path, "xb") as f:
            f.write(bytes([KEY_FILE_VERSION]) + keypair.private_key)
    except FileExistsError:
        raise IdentityError(f"Key file already exists: {path}")
    except OSError as e:
        raise IdentityError(f"Cannot write key file {path}: {e}")
    try:
        os.chmod(path, 0o600)
    except OSError:
        pass


def load_keypair(path: str) -> KeyPair:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IdentityError(f"Cannot read key file {path}: {e}")
    if len(raw) != 1 + PRIVATE_KEY_SIZE:
        raise IdentityError(f"Key file {path} has wrong length {len(raw)}")
    if raw[0] != KEY_FILE_VERSION:
        raise IdentityError(f"Unsupported key file version {raw[0]:#04x}")
    return keygen(raw[1:])
