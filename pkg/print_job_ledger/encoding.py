#!/usr/bin/env python3
"""
Fixed-width byte values and the shared digest.

All hashing in the package goes through `digest` (SHA-256). Byte values are
`bytes` subclasses that check their length once at construction and render as
0x-prefixed lowercase hex.
"""

import hashlib
import struct

from .errors import IdentityError

DIGEST_SIZE = 32
ADDRESS_SIZE = 20
ZERO_HASH = b"\x00" * DIGEST_SIZE


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def u64(value: int) -> bytes:
    return struct.pack(">Q", value)


def u32(value: int) -> bytes:
    return struct.pack(">I", value)


def to_hex(data: bytes) -> str:
    return "0x" + bytes(data).hex()


def from_hex(text: str) -> bytes:
    """Parse 0x-prefixed hex (prefix optional)"""
    if not isinstance(text, str):
        raise IdentityError(f"Expected hex string, got {type(text).__name__}")
    body = text[2:] if text[:2].lower() == "0x" else text
    try:
        return bytes.fromhex(body)
    except ValueError:
        raise IdentityError(f"Invalid hex string: {text!r}")


class FixedBytes(bytes):
    """bytes of one exact length"""

    SIZE = 0

    def __new__(cls, value: bytes):
        if not isinstance(value, (bytes, bytearray, memoryview)):
            raise IdentityError(f"{cls.__name__} must be bytes, got {type(value).__name__}")
        value = bytes(value)
        if len(value) != cls.SIZE:
            raise IdentityError(f"{cls.__name__} must be exactly {cls.SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def from_hex(cls, text: str):
        return cls(from_hex(text))

    def hex0x(self) -> str:
        return to_hex(self)

    def __str__(self) -> str:
        return self.hex0x()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.hex0x()})"


class Hash32(FixedBytes):
    SIZE = DIGEST_SIZE


class Address(FixedBytes):
    """Chain address: last 20 bytes of the digest of a public key"""

    SIZE = ADDRESS_SIZE

    @classmethod
    def from_hex(cls, text: str):
        body = text[2:] if isinstance(text, str) and text[:2].lower() == "0x" else text
        if not isinstance(body, str) or len(body) != 2 * ADDRESS_SIZE:
            raise IdentityError(f"Address must be 40 hex characters: {text!r}")
        return cls(from_hex(body))


def leading_zero_bits(data: bytes) -> int:
    bits = 0
    for byte in data:
        if byte == 0:
            bits += 8
            continue
        return bits + (8 - byte.bit_length())
    return bits
