#!/usr/bin/env python3

import unittest
import os
import random
import sys
import tempfile
import shutil

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from print_job_ledger.encoding import Address, digest, u64
from print_job_ledger.errors import IdentityError
from print_job_ledger.identity import (KeyPair, address_from_hex, address_of, address_to_hex, keygen,
                                       keygen_from_label, load_keypair, save_keypair, sign, verify)


class TestKeyPair(unittest.TestCase):
    """Unit tests for key generation and addresses"""

    def test_keygen_sizes(self):
        """Test that a fresh key pair has raw 32-byte keys"""
        keypair = keygen()
        self.assertEqual(len(keypair.private_key), 32)
        self.assertEqual(len(keypair.public_key), 32)
        self.assertEqual(len(keypair.address), 20)

    def test_keygen_seed_is_deterministic(self):
        """Test that the same seed always gives the same key pair"""
        seed = digest(b"fabricator")
        self.assertEqual(keygen(seed), keygen(seed))
        self.assertNotEqual(keygen(seed).address, keygen(digest(b"printer")).address)

    def test_keygen_rejects_short_seed(self):
        with self.assertRaises(IdentityError):
            keygen(b"short")

    def test_address_is_digest_suffix(self):
        """Test address derivation from the public key"""
        keypair = keygen_from_label("client")
        self.assertEqual(bytes(keypair.address), digest(keypair.public_key)[-20:])
        self.assertEqual(address_of(keypair.public_key), keypair.address)

    def test_addresses_do_not_collide(self):
        """Test that ten thousand seeded key pairs give distinct addresses"""
        addresses = {keygen(digest(u64(index))).address for index in range(10000)}
        self.assertEqual(len(addresses), 10000)

    def test_address_of_rejects_bad_key(self):
        with self.assertRaises(IdentityError):
            address_of(b"\x00" * 31)

    def test_address_hex_format(self):
        """Test 0x-prefixed 40-hex rendering and parsing"""
        address = keygen_from_label("printer").address
        text = address_to_hex(address)
        self.assertTrue(text.startswith("0x"))
        self.assertEqual(len(text), 42)
        self.assertEqual(text, text.lower())
        self.assertEqual(address_from_hex(text), address)
        self.assertEqual(address_from_hex(text.upper().replace("0X", "0x")), address)

    def test_address_hex_rejects_wrong_length(self):
        for bad in ["0x1234", "0x" + "ab" * 21, "zz" * 20]:
            with self.assertRaises(IdentityError):
                address_from_hex(bad)

    def test_repr_hides_private_key(self):
        keypair = keygen_from_label("secret")
        self.assertNotIn(keypair.private_key.hex(), repr(keypair))
        self.assertIn(str(keypair.address), repr(keypair))


class TestSignatures(unittest.TestCase):
    """Sign and verify over 32-byte digests"""

    def setUp(self):
        self.keypair = keygen_from_label("signer")
        self.message = digest(b"print job request")

    def test_sign_and_verify(self):
        signature = self.keypair.sign(self.message)
        self.assertEqual(len(signature), 64)
        self.assertTrue(verify(self.keypair.public_key, self.message, signature))

    def test_signatures_are_deterministic(self):
        self.assertEqual(sign(self.keypair.private_key, self.message),
                         sign(self.keypair.private_key, self.message))

    def test_verify_rejects_other_message(self):
        signature = self.keypair.sign(self.message)
        self.assertFalse(verify(self.keypair.public_key, digest(b"other"), signature))

    def test_verify_rejects_other_key(self):
        signature = self.keypair.sign(self.message)
        other = keygen_from_label("someone else")
        self.assertFalse(verify(other.public_key, self.message, signature))

    def test_verify_rejects_flipped_signature_bytes(self):
        signature = bytearray(self.keypair.sign(self.message))
        for index in range(0, 64, 7):
            mutated = bytearray(signature)
            mutated[index] ^= 0x01
            self.assertFalse(verify(self.keypair.public_key, self.message, bytes(mutated)))

    def test_random_bit_flips_never_verify(self):
        """Test that single-bit flips in the digest or the signature are always rejected"""
        rng = random.Random(1234)
        signature = self.keypair.sign(self.message)
        for _ in range(1000):
            mutated = bytearray(self.message)
            bit = rng.randrange(len(mutated) * 8)
            mutated[bit // 8] ^= 1 << (bit % 8)
            self.assertFalse(verify(self.keypair.public_key, bytes(mutated), signature))
        for _ in range(1000):
            mutated = bytearray(signature)
            bit = rng.randrange(len(mutated) * 8)
            mutated[bit // 8] ^= 1 << (bit % 8)
            self.assertFalse(verify(self.keypair.public_key, self.message, bytes(mutated)))

    def test_cross_message_matrix(self):
        """Test that each signature verifies under its own message and key only"""
        signers = [keygen_from_label(f"signer-{index}") for index in range(4)]
        messages = [digest(f"message-{index}".encode()) for index in range(4)]
        signatures = [signer.sign(message) for signer, message in zip(signers, messages)]
        for i, signature in enumerate(signatures):
            for j, message in enumerate(messages):
                self.assertEqual(verify(signers[i].public_key, message, signature), i == j, (i, j))
                for k, other in enumerate(signers):
                    if k != i:
                        self.assertFalse(verify(other.public_key, message, signature), (i, j, k))

    def test_verify_never_raises_on_malformed_input(self):
        """Test that malformed input gives False instead of an exception"""
        signature = self.keypair.sign(self.message)
        self.assertFalse(verify(b"", self.message, signature))
        self.assertFalse(verify(self.keypair.public_key, b"short", signature))
        self.assertFalse(verify(self.keypair.public_key, self.message, signature[:10]))
        self.assertFalse(verify(None, self.message, signature))

    def test_sign_requires_digest_size(self):
        with self.assertRaises(IdentityError):
            self.keypair.sign(b"not a digest")


class TestKeyFiles(unittest.TestCase):
    """Key file persistence"""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def test_save_and_load(self):
        path = os.path.join(self.test_dir, "client.key")
        keypair = keygen()
        save_keypair(path, keypair)
        self.assertEqual(load_keypair(path), keypair)
        with open(path, "rb") as f:
            self.assertEqual(f.read()[0], 0x01)

    def test_save_refuses_overwrite(self):
        """Test that an existing key file is never overwritten"""
        path = os.path.join(self.test_dir, "client.key")
        first = keygen()
        save_keypair(path, first)
        with self.assertRaises(IdentityError) as context:
            save_keypair(path, keygen())
        self.assertIn("already exists", str(context.exception))
        self.assertEqual(load_keypair(path), first)

    def test_load_rejects_corrupt_file(self):
        path = os.path.join(self.test_dir, "bad.key")
        with open(path, "wb") as f:
            f.write(b"\x02" + b"\x00" * 32)
        with self.assertRaises(IdentityError):
            load_keypair(path)
        with open(path, "wb") as f:
            f.write(b"\x01\x00")
        with self.assertRaises(IdentityError):
            load_keypair(path)

    def test_load_missing_file(self):
        with self.assertRaises(IdentityError):
            load_keypair(os.path.join(self.test_dir, "missing.key"))

    def test_errors_are_value_errors(self):
        with self.assertRaises(ValueError):
            Address(b"\x00" * 3)


if __name__ == '__main__':
    unittest.main()
