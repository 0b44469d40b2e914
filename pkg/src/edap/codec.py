"""Per-cache-line encryption and authentication.

Each naturally aligned 128-byte line is split into eight 16-byte sections.
Sections are XTS-encrypted under ``k1`` with a mask chain seeded from the
encrypted (session id, effective address) tweak block; in parallel a
GHASH-based tag keyed by ``E_k2(0)`` authenticates the tweak and the
ciphertext, truncated to an 8-byte digest. Binding the session id and the
address into both the masks and the digest is what rejects relocated,
replayed-into-other-sessions, or tampered lines.
"""

from __future__ import annotations

import hmac as _hmac
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import AlignmentError, IntegrityError

BLOCK_BYTES = 128
SECTION_BYTES = 16
SECTIONS_PER_BLOCK = BLOCK_BYTES // SECTION_BYTES
DIGEST_BYTES = 8
KEY_BYTES = 16  # AES-128 reference configuration

_MASK128 = (1 << 128) - 1
_GF_POLY_LOW = 0x87  # x^128 + x^7 + x^2 + x + 1, low coefficients
_GHASH_R = 0xE1 << 120

# ---------------------------------------------------------------------------
# AES primitive (cached single-block ECB contexts)
# ---------------------------------------------------------------------------


class _AesCore:
    """Reusable single-block AES-128 encrypt/decrypt contexts for one key."""

    __slots__ = ("_enc", "_dec")

    def __init__(self, key: bytes):
        cipher = Cipher(algorithms.AES(key), modes.ECB())
        self._enc = cipher.encryptor()
        self._dec = cipher.decryptor()

    def encrypt(self, block: bytes) -> bytes:
        return self._enc.update(block)

    def decrypt(self, block: bytes) -> bytes:
        return self._dec.update(block)


_aes_cache: dict[bytes, _AesCore] = {}


def _aes(key: bytes) -> _AesCore:
    core = _aes_cache.get(key)
    if core is None:
        if len(_aes_cache) > 64:
            _aes_cache.clear()
        core = _aes_cache[key] = _AesCore(key)
    return core


def aes_encrypt_block(key: bytes, block: bytes) -> bytes:
    """One AES-128 block encryption (exposed for key derivation and tests)."""
    return _aes(key).encrypt(block)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class XtsKeyPair:
    """Two 16-byte keys: ``k1`` encrypts sections, ``k2`` masks tweaks and keys the digest."""

    k1: bytes
    k2: bytes

    def __post_init__(self):
        if len(self.k1) != KEY_BYTES or len(self.k2) != KEY_BYTES:
            raise ValueError("keys must be exactly 16 bytes")
        if self.k1 == self.k2:
            raise ValueError("k1 and k2 must differ")

    def to_bytes(self) -> bytes:
        return self.k1 + self.k2

    @classmethod
    def from_bytes(cls, raw: bytes) -> "XtsKeyPair":
        if len(raw) != 2 * KEY_BYTES:
            raise ValueError("key pair blob must be 32 bytes")
        return cls(raw[:KEY_BYTES], raw[KEY_BYTES:])


@dataclass(frozen=True)
class Tweak:
    """Session id and effective address of one 128-byte line."""

    seid: int
    ea: int

    def __post_init__(self):
        if not 0 <= self.seid < 1 << 64:
            raise ValueError("seid must be an unsigned 64-bit value")
        if not 0 <= self.ea < 1 << 64:
            raise ValueError("ea must be an unsigned 64-bit value")
        if self.ea % BLOCK_BYTES:
            raise AlignmentError(f"ea 0x{self.ea:x} is not 128-byte aligned")

    def to_bytes(self) -> bytes:
        # big-endian seid || ea; fixed so serialized blocks interoperate
        return self.seid.to_bytes(8, "big") + self.ea.to_bytes(8, "big")


@dataclass(frozen=True)
class EncryptedBlock:
    """Wire/file form of one protected line: address, ciphertext, digest."""

    ea: int
    cipher: bytes
    digest: bytes

    WIRE_BYTES = 8 + BLOCK_BYTES + DIGEST_BYTES

    def __post_init__(self):
        check_cipher(self.cipher)
        if len(self.digest) != DIGEST_BYTES:
            raise ValueError("digest must be exactly 8 bytes")

    def to_bytes(self) -> bytes:
        return self.ea.to_bytes(8, "big") + self.cipher + self.digest

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EncryptedBlock":
        if len(raw) != cls.WIRE_BYTES:
            raise ValueError(f"encrypted block record must be {cls.WIRE_BYTES} bytes")
        ea = int.from_bytes(raw[:8], "big")
        return cls(ea=ea, cipher=raw[8 : 8 + BLOCK_BYTES], digest=raw[8 + BLOCK_BYTES :])


def check_plain(plain: bytes) -> bytes:
    if len(plain) != BLOCK_BYTES:
        raise ValueError(f"plaintext block must be {BLOCK_BYTES} bytes, got {len(plain)}")
    return plain


def check_cipher(cipher: bytes) -> bytes:
    if len(cipher) != BLOCK_BYTES:
        raise ValueError(f"ciphertext block must be {BLOCK_BYTES} bytes, got {len(cipher)}")
    return cipher


# ---------------------------------------------------------------------------
# GF(2^128) arithmetic
# ---------------------------------------------------------------------------


def gf128_mul_xts(t: bytes) -> bytes:
    """Multiply by the primitive element x under the XTS little-endian convention."""
    v = int.from_bytes(t, "little") << 1
    if v >> 128:
        v = (v & _MASK128) ^ _GF_POLY_LOW
    return v.to_bytes(16, "little")


def gf128_mul_ghash(a: bytes, b: bytes) -> bytes:
    """Product in GF(2^128) under the GCM bit-reflected convention."""
    x = int.from_bytes(a, "big")
    v = int.from_bytes(b, "big")
    z = 0
    for i in range(127, -1, -1):
        if (x >> i) & 1:
            z ^= v
        if v & 1:
            v = (v >> 1) ^ _GHASH_R
        else:
            v >>= 1
    return z.to_bytes(16, "big")


class GhashKey:
    """Hash key ``E_k2(0)`` with per-byte product tables for fast digesting."""

    __slots__ = ("h", "_tables")

    def __init__(self, h: bytes):
        if len(h) != 16:
            raise ValueError("hash key must be 16 bytes")
        self.h = h
        self._tables: list[list[int]] | None = None

    def _build_tables(self) -> list[list[int]]:
        # Per byte position j, table[j][b] = (b << 8*(15-j)) . H, built from
        # the eight single-bit products by linearity.
        tables = []
        for j in range(16):
            bit_products = []
            for bit in range(8):
                e = bytearray(16)
                e[j] = 1 << bit
                bit_products.append(int.from_bytes(gf128_mul_ghash(bytes(e), self.h), "big"))
            table = [0] * 256
            for b in range(1, 256):
                low = b & (b - 1)
                table[b] = table[low] ^ bit_products[(b ^ low).bit_length() - 1]
            tables.append(table)
        return tables

    def mul(self, x_int: int) -> int:
        if self._tables is None:
            self._tables = self._build_tables()
        tables = self._tables
        acc = 0
        for j in range(16):
            acc ^= tables[j][(x_int >> (8 * (15 - j))) & 0xFF]
        return acc

    def digest16(self, chunks: list[bytes]) -> bytes:
        """GHASH over 16-byte chunks (callers append the length block)."""
        acc = 0
        for chunk in chunks:
            acc = self.mul(acc ^ int.from_bytes(chunk, "big"))
        return acc.to_bytes(16, "big")


def derive_hash_key(k2: bytes) -> GhashKey:
    """Hash key is the encryption of the all-zero block under k2."""
    if len(k2) != KEY_BYTES:
        raise ValueError("k2 must be exactly 16 bytes")
    return GhashKey(aes_encrypt_block(k2, b"\x00" * 16))


# ---------------------------------------------------------------------------
# XTS data-unit core
# ---------------------------------------------------------------------------


def _xts_masks(k2: bytes, tweak_block: bytes, sections: int) -> list[bytes]:
    t = aes_encrypt_block(k2, tweak_block)
    masks = [t]
    for _ in range(sections - 1):
        t = gf128_mul_xts(t)
        masks.append(t)
    return masks


def encrypt_data_unit(key: XtsKeyPair, tweak_block: bytes, plain: bytes) -> bytes:
    """XTS-encrypt one data unit of 16-byte sections under a raw 16-byte tweak."""
    if len(tweak_block) != 16:
        raise ValueError("tweak block must be 16 bytes")
    if not plain or len(plain) % SECTION_BYTES:
        raise ValueError("data unit length must be a positive multiple of 16")
    enc = _aes(key.k1).encrypt
    out = bytearray()
    for j, t in enumerate(_xts_masks(key.k2, tweak_block, len(plain) // SECTION_BYTES)):
        p = plain[j * SECTION_BYTES : (j + 1) * SECTION_BYTES]
        masked = bytes(x ^ y for x, y in zip(p, t))
        out += bytes(x ^ y for x, y in zip(enc(masked), t))
    return bytes(out)


def decrypt_data_unit(key: XtsKeyPair, tweak_block: bytes, cipher: bytes) -> bytes:
    if len(tweak_block) != 16:
        raise ValueError("tweak block must be 16 bytes")
    if not cipher or len(cipher) % SECTION_BYTES:
        raise ValueError("data unit length must be a positive multiple of 16")
    dec = _aes(key.k1).decrypt
    out = bytearray()
    for j, t in enumerate(_xts_masks(key.k2, tweak_block, len(cipher) // SECTION_BYTES)):
        c = cipher[j * SECTION_BYTES : (j + 1) * SECTION_BYTES]
        masked = bytes(x ^ y for x, y in zip(c, t))
        out += bytes(x ^ y for x, y in zip(dec(masked), t))
    return bytes(out)


# ---------------------------------------------------------------------------
# Line encryption with digest
# ---------------------------------------------------------------------------

_LENGTH_BLOCK = (16 * 8).to_bytes(8, "big") + (BLOCK_BYTES * 8).to_bytes(8, "big")

_hash_key_cache: dict[bytes, GhashKey] = {}


def _hash_key(k2: bytes) -> GhashKey:
    hk = _hash_key_cache.get(k2)
    if hk is None:
        if len(_hash_key_cache) > 64:
            _hash_key_cache.clear()
        hk = _hash_key_cache[k2] = derive_hash_key(k2)
    return hk


def compute_digest(key: XtsKeyPair, tweak: Tweak, cipher: bytes) -> bytes:
    """8-byte tag over (tweak, ciphertext), finalized with the encrypted tweak block."""
    check_cipher(cipher)
    tweak_block = tweak.to_bytes()
    chunks = [tweak_block]
    chunks += [cipher[j * 16 : (j + 1) * 16] for j in range(SECTIONS_PER_BLOCK)]
    chunks.append(_LENGTH_BLOCK)
    s = _hash_key(key.k2).digest16(chunks)
    final = bytes(x ^ y for x, y in zip(s, aes_encrypt_block(key.k2, tweak_block)))
    return final[:DIGEST_BYTES]


def encrypt_block(key: XtsKeyPair, tweak: Tweak, plain: bytes) -> tuple[bytes, bytes]:
    """Encrypt one aligned 128-byte line; returns (ciphertext, digest)."""
    check_plain(plain)
    cipher = encrypt_data_unit(key, tweak.to_bytes(), plain)
    return cipher, compute_digest(key, tweak, cipher)


def decrypt_block(key: XtsKeyPair, tweak: Tweak, cipher: bytes) -> bytes:
    """Inverse of the cipher path only; performs no digest check."""
    check_cipher(cipher)
    return decrypt_data_unit(key, tweak.to_bytes(), cipher)


def verify_and_decrypt(key: XtsKeyPair, tweak: Tweak, cipher: bytes, digest: bytes) -> bytes:
    """Recompute the digest and decrypt only if it matches.

    No plaintext is produced on mismatch; the digest covers the session id
    and the address, so relocation and cross-session replay fail here too.
    """
    if len(digest) != DIGEST_BYTES:
        raise ValueError("digest must be exactly 8 bytes")
    expected = compute_digest(key, tweak, cipher)
    if not _hmac.compare_digest(expected, digest):
        raise IntegrityError(f"digest mismatch for line at ea=0x{tweak.ea:x}")
    return decrypt_block(key, tweak, cipher)
