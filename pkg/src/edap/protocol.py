"""Actors and messages of the key-exchange and delivery protocol.

Three parties: the data owner (holds the line-encryption keys), the platform
provider (untrusted transporter, issues session ids), and the processor
(trusted footprint holding a burned-in private key). Symmetric keys travel
only wrapped under the processor public key; program lines travel as an
authenticated stream that the processor refuses to accept twice.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives import hashes

from .codec import BLOCK_BYTES, DIGEST_BYTES, EncryptedBlock, XtsKeyPair
from .errors import AuthError, DecryptFailure, FreshnessError, ReplayError
from .rng import ByteSource

SESSION_KEY_BYTES = 32
_WRAP_INFO = b"edap-wrap-v1"
_STREAM_INFO = b"edap-stream-v1"

FRAME_HEADER_BYTES = 16  # seq || ea, both big-endian u64
FRAME_PAYLOAD_BYTES = BLOCK_BYTES + DIGEST_BYTES
FRAME_TAG_BYTES = 16
FRAME_BYTES = FRAME_HEADER_BYTES + FRAME_PAYLOAD_BYTES + FRAME_TAG_BYTES


# ---------------------------------------------------------------------------
# Key encapsulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WrappedKey:
    """Opaque encapsulation of a symmetric key under a processor public key."""

    blob: bytes


def _kem_derive(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=_WRAP_INFO + eph_pub + recipient_pub,
    ).derive(shared)


def wrap_key(recipient_pub: bytes, secret: bytes, rng: ByteSource | None = None) -> WrappedKey:
    """Randomized wrap: fresh ephemeral exchange, then authenticated encryption.

    The ephemeral public key is bound into the AEAD so any corruption of the
    blob, including its key-share bytes, fails the unwrap.
    """
    rng = rng or ByteSource()
    eph = X25519PrivateKey.from_private_bytes(rng.read(32))
    eph_pub = eph.public_key().public_bytes_raw()
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient_pub))
    kek = _kem_derive(shared, eph_pub, recipient_pub)
    nonce = rng.read(12)
    ct = AESGCM(kek).encrypt(nonce, secret, _WRAP_INFO + eph_pub + recipient_pub)
    return WrappedKey(blob=eph_pub + nonce + ct)


def _unwrap_key(priv: X25519PrivateKey, wrapped: WrappedKey) -> bytes:
    blob = wrapped.blob
    if len(blob) < 32 + 12 + 16:
        raise DecryptFailure("wrapped key blob is malformed")
    eph_pub, nonce, ct = blob[:32], blob[32:44], blob[44:]
    recipient_pub = priv.public_key().public_bytes_raw()
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        kek = _kem_derive(shared, eph_pub, recipient_pub)
        return AESGCM(kek).decrypt(nonce, ct, _WRAP_INFO + eph_pub + recipient_pub)
    except (InvalidTag, ValueError) as exc:
        raise DecryptFailure("key unwrap failed") from exc


# ---------------------------------------------------------------------------
# Processor identity (the trusted footprint's secrets)
# ---------------------------------------------------------------------------


class ProcessorIdentity:
    """Burned-in key pair plus the per-session key registers and replay state.

    The private key and any unwrapped symmetric keys never appear in
    ``export_state`` output; accepting a new session clears every register
    installed by the previous one.
    """

    def __init__(self, priv: X25519PrivateKey):
        self._priv = priv
        self.pub = priv.public_key().public_bytes_raw()
        self.seid_reg: int | None = None
        self._session_key_reg: bytes | None = None
        self._xts_key_reg: XtsKeyPair | None = None
        self._stream_watermark = -1
        self._seen_eas: set[int] = set()

    # -- session registers ---------------------------------------------------

    @property
    def session_established(self) -> bool:
        return self._session_key_reg is not None

    @property
    def xts_key_loaded(self) -> bool:
        return self._xts_key_reg is not None

    def xts_key(self) -> XtsKeyPair:
        """Key register access for the in-footprint engine only."""
        if self._xts_key_reg is None:
            raise DecryptFailure("no line-encryption key loaded")
        return self._xts_key_reg

    def clear_session(self) -> None:
        self.seid_reg = None
        self._session_key_reg = None
        self._xts_key_reg = None
        self._stream_watermark = -1
        self._seen_eas = set()

    def export_state(self) -> bytes:
        """Serialized externally visible state; contains no secret key bytes."""
        return json.dumps(
            {
                "pub": self.pub.hex(),
                "seid": self.seid_reg,
                "session_established": self.session_established,
                "xts_key_loaded": self.xts_key_loaded,
                "stream_watermark": self._stream_watermark,
                "seen_ea_count": len(self._seen_eas),
            },
            sort_keys=True,
        ).encode()

    def private_key_bytes_for_confinement_scan(self) -> bytes:
        """Raw private scalar, exposed only so tests can scan transcripts for it."""
        return self._priv.private_bytes_raw()


def provision_processor(seed: int | bytes | None = None) -> ProcessorIdentity:
    """Create a fresh identity; a fixed seed gives a reproducible test fixture."""
    return ProcessorIdentity(X25519PrivateKey.from_private_bytes(ByteSource(seed).read(32)))


def identity_from_private_bytes(priv: bytes) -> ProcessorIdentity:
    """Rehydrate an identity from its stored raw private key."""
    return ProcessorIdentity(X25519PrivateKey.from_private_bytes(priv))


def accept_session(proc: ProcessorIdentity, wrapped: WrappedKey, seid: int) -> None:
    """Install a session key and id; any previously installed session is wiped."""
    session_key = _unwrap_key(proc._priv, wrapped)
    if len(session_key) != SESSION_KEY_BYTES:
        raise DecryptFailure("session key has the wrong width")
    proc.clear_session()
    proc.seid_reg = seid
    proc._session_key_reg = session_key


def load_xts_key(proc: ProcessorIdentity, wrapped: WrappedKey) -> None:
    if not proc.session_established:
        raise DecryptFailure("no session established")
    raw = _unwrap_key(proc._priv, wrapped)
    try:
        proc._xts_key_reg = XtsKeyPair.from_bytes(raw)
    except ValueError as exc:
        raise DecryptFailure("unwrapped key pair is malformed") from exc


# ---------------------------------------------------------------------------
# Data-owner session context
# ---------------------------------------------------------------------------


class FreshnessRegistry:
    """Records (key pair, session id) fingerprints so none is packaged twice."""

    def __init__(self):
        self._seen: set[str] = set()

    @staticmethod
    def fingerprint(key: XtsKeyPair, seid: int) -> str:
        return hashlib.sha256(key.to_bytes() + seid.to_bytes(8, "big")).hexdigest()

    def claim(self, key: XtsKeyPair, seid: int) -> None:
        fp = self.fingerprint(key, seid)
        if fp in self._seen:
            raise FreshnessError("this key pair was already used with this session id")
        self._seen.add(fp)

    def load(self, path) -> None:
        try:
            text = path.read_text()
        except FileNotFoundError:
            return
        self._seen.update(line.strip() for line in text.splitlines() if line.strip())

    def save(self, path) -> None:
        path.write_text("".join(fp + "\n" for fp in sorted(self._seen)))


@dataclass
class SessionContext:
    """The data owner's view of one secure session."""

    seid: int
    session_key: bytes
    xts_key: XtsKeyPair
    processor_pub: bytes
    registry: FreshnessRegistry = field(default_factory=FreshnessRegistry)
    next_seq: int = 0
    rng: ByteSource = field(default_factory=ByteSource)

    @classmethod
    def create(
        cls,
        seid: int,
        processor_pub: bytes,
        rng: ByteSource | None = None,
        registry: FreshnessRegistry | None = None,
    ) -> "SessionContext":
        rng = rng or ByteSource()
        k1 = rng.read(16)
        k2 = rng.read(16)
        while k2 == k1:
            k2 = rng.read(16)
        return cls(
            seid=seid,
            session_key=rng.read(SESSION_KEY_BYTES),
            xts_key=XtsKeyPair(k1, k2),
            processor_pub=processor_pub,
            registry=registry or FreshnessRegistry(),
            rng=rng,
        )


def begin_session(ctx: SessionContext) -> WrappedKey:
    """Wrap the session key for the processor; randomized every call."""
    return wrap_key(ctx.processor_pub, ctx.session_key, ctx.rng)


def wrap_xts_key(ctx: SessionContext) -> WrappedKey:
    return wrap_key(ctx.processor_pub, ctx.xts_key.to_bytes(), ctx.rng)


def check_pair_freshness(ctx: SessionContext) -> None:
    """Claim this (key pair, session id); raises if it was ever claimed before."""
    ctx.registry.claim(ctx.xts_key, ctx.seid)


# ---------------------------------------------------------------------------
# Streaming channel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamTuple:
    """One authenticated stream element: an address-bound encrypted line."""

    seq: int
    ea: int
    cipher: bytes
    digest: bytes

    def block(self) -> EncryptedBlock:
        return EncryptedBlock(ea=self.ea, cipher=self.cipher, digest=self.digest)


def _frame_nonce(seq: int) -> bytes:
    return b"\x00\x00\x00\x00" + seq.to_bytes(8, "big")


def stream_send(ctx: SessionContext, blocks) -> list[bytes]:
    """Frame encrypted blocks for transport; sequence numbers never repeat."""
    aead = AESGCM(ctx.session_key)
    frames = []
    for blk in blocks:
        seq = ctx.next_seq
        ctx.next_seq += 1
        header = seq.to_bytes(8, "big") + blk.ea.to_bytes(8, "big")
        sealed = aead.encrypt(_frame_nonce(seq), blk.cipher + blk.digest, _STREAM_INFO + header)
        frames.append(header + sealed)
    return frames


def stream_receive(proc: ProcessorIdentity, frame: bytes) -> StreamTuple:
    """Authenticate one frame, enforce freshness, and surface the tuple.

    Sequence numbers must strictly increase and an effective address is
    accepted at most once per session; nothing is recorded for rejected
    frames.
    """
    if not proc.session_established:
        raise AuthError("no session established")
    if len(frame) != FRAME_BYTES:
        raise AuthError(f"frame must be {FRAME_BYTES} bytes, got {len(frame)}")
    seq = int.from_bytes(frame[:8], "big")
    ea = int.from_bytes(frame[8:16], "big")
    if seq <= proc._stream_watermark:
        raise ReplayError(f"sequence {seq} at or below watermark {proc._stream_watermark}")
    aead = AESGCM(proc._session_key_reg)
    try:
        payload = aead.decrypt(_frame_nonce(seq), frame[16:], _STREAM_INFO + frame[:16])
    except InvalidTag as exc:
        raise AuthError("frame authentication failed") from exc
    if ea in proc._seen_eas:
        raise ReplayError(f"effective address 0x{ea:x} already streamed this session")
    proc._stream_watermark = seq
    proc._seen_eas.add(ea)
    return StreamTuple(seq=seq, ea=ea, cipher=payload[:BLOCK_BYTES], digest=payload[BLOCK_BYTES:])


# ---------------------------------------------------------------------------
# Platform provider actor
# ---------------------------------------------------------------------------


class PlatformProvider:
    """Untrusted intermediary: grants resources and transports opaque bytes.

    Every byte it handles is recorded in ``observed`` so confidentiality
    tests can scan what an adversarial platform would have seen. Fault
    flags emulate a malicious provider.
    """

    def __init__(self, rng: ByteSource | None = None, garbage_pub: bool = False):
        self.rng = rng or ByteSource()
        self.issued_seids: set[int] = set()
        self.observed: list[bytes] = []
        self.garbage_pub = garbage_pub

    def observe(self, data: bytes) -> None:
        self.observed.append(bytes(data))

    def observed_bytes(self) -> bytes:
        return b"\x00".join(self.observed)


def grant_resources(platform: PlatformProvider, proc: ProcessorIdentity) -> tuple[int, bytes]:
    """Issue a fresh session id and hand out the processor public key."""
    seid = platform.rng.read_u64()
    while seid in platform.issued_seids:
        seid = platform.rng.read_u64()
    platform.issued_seids.add(seid)
    pub = platform.rng.read(32) if platform.garbage_pub else proc.pub
    platform.observe(seid.to_bytes(8, "big"))
    platform.observe(pub)
    return seid, pub


class Channel:
    """Ordered, reliable, in-memory duplex link between two actors."""

    def __init__(self):
        self._a_to_b: deque[bytes] = deque()
        self._b_to_a: deque[bytes] = deque()

    def send_a(self, data: bytes) -> None:
        self._a_to_b.append(bytes(data))

    def send_b(self, data: bytes) -> None:
        self._b_to_a.append(bytes(data))

    def recv_a(self) -> bytes:
        return self._b_to_a.popleft()

    def recv_b(self) -> bytes:
        return self._a_to_b.popleft()
