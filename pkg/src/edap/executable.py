"""Packaging, delivery, and verified loading of protected program images.

A program image is carved into aligned 128-byte lines, each encrypted and
digested under the session keys and its own address. The loader on the
untrusted side stores lines raw; nothing is decrypted until a fetch inside
the trusted footprint verifies the digest under the registered session id
and the requested address.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

from .arch import Privilege, Requester
from .codec import (
    BLOCK_BYTES,
    DIGEST_BYTES,
    EncryptedBlock,
    Tweak,
    encrypt_block,
    verify_and_decrypt,
)
from .errors import (
    AccessDenied,
    AlignmentError,
    BindingError,
    BlockUnmappedError,
    IntegrityError,
)
from .protocol import ProcessorIdentity, SessionContext, StreamTuple, check_pair_freshness

MAGIC = b"EDAP"
FORMAT_VERSION = 1
_HEADER = struct.Struct(">4sHQQI")  # magic, version, seid, entry point, block count


# ---------------------------------------------------------------------------
# Program image (data owner side, cleartext)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProgramImage:
    """Cleartext sections plus the entry point and the thread binding."""

    sections: tuple[tuple[int, bytes], ...]
    entry_point: int
    thread_id: int

    def __post_init__(self):
        spans = []
        for ea, data in self.sections:
            if ea % BLOCK_BYTES:
                raise AlignmentError(f"section at 0x{ea:x} is not 128-byte aligned")
            if not data or len(data) % BLOCK_BYTES:
                raise AlignmentError(
                    f"section at 0x{ea:x} length {len(data)} is not a multiple of 128"
                )
            spans.append((ea, ea + len(data)))
        spans.sort()
        for (_, end_a), (start_b, _) in zip(spans, spans[1:]):
            if start_b < end_a:
                raise ValueError("sections overlap")
        if not any(start <= self.entry_point < end for start, end in spans):
            raise ValueError("entry point lies outside every section")

    def lines(self):
        for ea, data in self.sections:
            for off in range(0, len(data), BLOCK_BYTES):
                yield ea + off, data[off : off + BLOCK_BYTES]

    # -- JSON image files (CLI fixture format) --------------------------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "entry_point": self.entry_point,
                "thread_id": self.thread_id,
                "sections": [
                    {"ea": ea, "data": data.hex()} for ea, data in self.sections
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ProgramImage":
        doc = json.loads(text)
        return cls(
            sections=tuple((s["ea"], bytes.fromhex(s["data"])) for s in doc["sections"]),
            entry_point=doc["entry_point"],
            thread_id=doc["thread_id"],
        )


# ---------------------------------------------------------------------------
# Secure executable (ciphertext, travels to the platform)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecureExecutable:
    """Ordered encrypted lines under one session; opaque to the transporter.

    The thread binding is agreed out of band (it is assigned at run time,
    like the session id) and is therefore not part of the serialized form.
    """

    seid: int
    blocks: tuple[EncryptedBlock, ...]
    entry_point: int
    thread_id: int | None = None

    def __post_init__(self):
        eas = [b.ea for b in self.blocks]
        if len(set(eas)) != len(eas):
            raise ValueError("duplicate effective addresses in executable")

    def addresses(self) -> set[int]:
        return {b.ea for b in self.blocks}

    def to_bytes(self) -> bytes:
        out = bytearray(
            _HEADER.pack(MAGIC, FORMAT_VERSION, self.seid, self.entry_point, len(self.blocks))
        )
        for blk in self.blocks:
            out += blk.to_bytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes, thread_id: int | None = None) -> "SecureExecutable":
        if len(raw) < _HEADER.size:
            raise ValueError("truncated secure executable")
        magic, version, seid, entry, count = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValueError("bad magic; not a secure executable")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {version}")
        expected = _HEADER.size + count * EncryptedBlock.WIRE_BYTES
        if len(raw) != expected:
            raise ValueError(f"executable length {len(raw)} != expected {expected}")
        blocks = []
        for i in range(count):
            off = _HEADER.size + i * EncryptedBlock.WIRE_BYTES
            blocks.append(EncryptedBlock.from_bytes(raw[off : off + EncryptedBlock.WIRE_BYTES]))
        return cls(seid=seid, blocks=tuple(blocks), entry_point=entry, thread_id=thread_id)


def package(image: ProgramImage, ctx: SessionContext) -> SecureExecutable:
    """Encrypt and sign every line of the image under the session keys.

    Claims the (key pair, session id) combination first; reusing one raises
    before any ciphertext is produced.
    """
    check_pair_freshness(ctx)
    blocks = [
        EncryptedBlock(ea, *encrypt_block(ctx.xts_key, Tweak(ctx.seid, ea), chunk))
        for ea, chunk in image.lines()
    ]
    return SecureExecutable(
        seid=ctx.seid,
        blocks=tuple(blocks),
        entry_point=image.entry_point,
        thread_id=image.thread_id,
    )


# ---------------------------------------------------------------------------
# Memory image (platform side, ciphertext at rest)
# ---------------------------------------------------------------------------


class MemoryImage:
    """Real-addressed store of raw (ciphertext, digest) lines.

    Translation from effective to real addresses is identity unless the
    (untrusted) platform remaps it; the digest check at fetch time is what
    makes remapping harmless. Loader-initiated initialization of an already
    mapped frame is refused; engine-initiated writebacks may overwrite.
    """

    def __init__(self, owner_thread: int | None = None):
        self.owner_thread = owner_thread
        self._frames: dict[int, tuple[bytes, bytes]] = {}
        self._translation: dict[int, int] = {}

    def translate(self, ea: int) -> int:
        return self._translation.get(ea, ea)

    def is_mapped(self, ea: int) -> bool:
        return self.translate(ea) in self._frames

    def mapped_eas(self) -> set[int]:
        return set(self._translation)

    def remap(self, ea: int, real: int) -> None:
        """Adversarial hook: point an effective address at an arbitrary frame."""
        self._translation[ea] = real

    def raw_frame(self, ea: int) -> tuple[bytes, bytes]:
        real = self.translate(ea)
        if real not in self._frames:
            raise BlockUnmappedError(f"no frame mapped at ea=0x{ea:x}")
        return self._frames[real]

    def store_line(self, ea: int, cipher: bytes, digest: bytes) -> None:
        """Engine writeback path; overwriting an existing frame is normal here."""
        if len(cipher) != BLOCK_BYTES or len(digest) != DIGEST_BYTES:
            raise ValueError("malformed line")
        real = self.translate(ea)
        self._translation.setdefault(ea, real)
        self._frames[real] = (cipher, digest)

    def drop(self, ea: int) -> None:
        real = self.translate(ea)
        self._frames.pop(real, None)
        self._translation.pop(ea, None)

    def observable_bytes(self) -> bytes:
        """Everything an adversary with platform access reads out of memory."""
        parts = []
        for real in sorted(self._frames):
            cipher, digest = self._frames[real]
            parts.append(real.to_bytes(8, "big") + cipher + digest)
        return b"".join(parts)


def load_block(mem: MemoryImage, tup: StreamTuple, proc: ProcessorIdentity) -> None:
    """Place one streamed line raw into real memory (supervisor load operation).

    The loader holds no keys, so the digest is checked lazily at first fetch;
    re-initializing an already mapped frame is rejected to block replay of
    the load step after execution starts.
    """
    real = mem.translate(tup.ea)
    if real in mem._frames:
        raise IntegrityError(f"frame at ea=0x{tup.ea:x} already initialized")
    mem._translation[tup.ea] = real
    mem._frames[real] = (tup.cipher, tup.digest)


def fetch_block(
    mem: MemoryImage, proc: ProcessorIdentity, ea: int, requester: Requester
) -> bytes:
    """Verify and decrypt one line for the authorized thread in problem state."""
    if requester.privilege is not Privilege.PROBLEM:
        raise AccessDenied(f"{requester.privilege.value} requester may not read cleartext")
    if mem.owner_thread is not None and requester.thread_id != mem.owner_thread:
        raise AccessDenied("requesting thread does not own this image")
    if proc.seid_reg is None:
        raise IntegrityError("no session id registered")
    cipher, digest = mem.raw_frame(ea)
    return verify_and_decrypt(proc.xts_key(), Tweak(proc.seid_reg, ea), cipher, digest)


def verify_code_binding(se: SecureExecutable, thread_id: int, ea: int) -> None:
    """Confirm a block belongs to this executable at this address for this thread."""
    if se.thread_id is not None and thread_id != se.thread_id:
        raise BindingError(f"thread {thread_id} is not bound to this executable")
    if ea not in se.addresses():
        raise BindingError(f"ea=0x{ea:x} is not a signed address of this executable")


def verify_entry(se: SecureExecutable) -> None:
    """Execution must start at the packaged entry point."""
    entry_line = se.entry_point - (se.entry_point % BLOCK_BYTES)
    if entry_line not in se.addresses():
        raise BindingError("entry point does not fall on a packaged block")


def package_shared_data(
    sections: tuple[tuple[int, bytes], ...], ctx: SessionContext, thread_id: int
) -> SecureExecutable:
    """Protect additional data for shared storage; reuses the image path.

    Stub for the shared-storage channel: the running program later pulls
    these blocks exactly like program lines.
    """
    image = ProgramImage(sections=sections, entry_point=sections[0][0], thread_id=thread_id)
    return package(image, ctx)
