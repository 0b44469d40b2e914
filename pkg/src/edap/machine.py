"""Functional model of the trusted hardware footprint.

Tracks where cleartext may legally rest for each engine placement, enforces
thread/privilege access rules on it, clears it on control transfers, and
carries a per-value taint flag marking data-owner provenance. The
confidentiality audit walks all state and reports any tainted cleartext
found where the configured footprint does not cover it.

Taint is test instrumentation only: no functional decision reads it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum

from .arch import EDAP_PLACEMENTS, FootprintConfig, Placement, Privilege, Requester
from .caches import LINE_BYTES, SetAssociativeCache
from .codec import Tweak, aes_encrypt_block, encrypt_block, verify_and_decrypt
from .errors import AccessDenied, IntegrityError, StateHashMismatch
from .executable import MemoryImage
from .protocol import ProcessorIdentity

WORD_BYTES = 8
_MASK64 = (1 << 64) - 1

# Synthetic, 128-byte aligned address region for register save slots; keeps
# register-word encryption on the same tweak scheme as memory lines without
# colliding with program addresses.
REG_SPACE_BASE = 0xFFFF_0000_0000_0000


class Form(Enum):
    CLEAR = "clear"
    CIPHER = "cipher"


@dataclass
class Word:
    """One register-sized value: cleartext payload or an encrypted block."""

    form: Form
    data: bytes  # 8-byte payload when CLEAR, 16-byte encrypted block when CIPHER
    owner: int | None
    taint: bool
    slot_ea: int | None = None  # mask address a CIPHER word was sealed under


@dataclass
class CacheLine:
    form: Form
    data: bytes  # 128 bytes; plaintext when CLEAR, ciphertext when CIPHER
    digest: bytes | None
    owner: int | None
    taint: bool
    dirty: bool


@dataclass(frozen=True)
class AuditViolation:
    location: str  # "register", "l1d", "l1i", "buffer", "engine"
    index: int
    placement: Placement
    detail: str

    def record(self) -> str:
        return f"{self.location} {self.index:#x} {self.placement.value} {self.detail}"


# ---------------------------------------------------------------------------
# Encryption engine (in-footprint crypto; plaintext never returned to callers
# outside the rules enforced by the machine operations below)
# ---------------------------------------------------------------------------


class Engine:
    def __init__(self, proc: ProcessorIdentity):
        self.proc = proc
        self.engaged = False
        self._word_masks: dict[int, bytes] = {}

    def _seid(self) -> int:
        if self.proc.seid_reg is None:
            raise IntegrityError("no session id registered")
        return self.proc.seid_reg

    def _word_mask(self, slot_ea: int) -> bytes:
        mask = self._word_masks.get(slot_ea)
        if mask is None:
            key = self.proc.xts_key()
            mask = aes_encrypt_block(key.k2, Tweak(self._seid(), slot_ea).to_bytes())
            self._word_masks[slot_ea] = mask
        return mask

    def encrypt_word(self, payload: bytes, slot_ea: int) -> bytes:
        key = self.proc.xts_key()
        t = self._word_mask(slot_ea)
        padded = payload + b"\x00" * (16 - WORD_BYTES)
        masked = bytes(a ^ b for a, b in zip(padded, t))
        return bytes(a ^ b for a, b in zip(aes_encrypt_block(key.k1, masked), t))

    def decrypt_word(self, cipher: bytes, slot_ea: int) -> bytes:
        from .codec import _aes  # single-block decrypt shares the cached contexts

        key = self.proc.xts_key()
        t = self._word_mask(slot_ea)
        masked = bytes(a ^ b for a, b in zip(cipher, t))
        padded = bytes(a ^ b for a, b in zip(_aes(key.k1).decrypt(masked), t))
        if padded[WORD_BYTES:] != b"\x00" * (16 - WORD_BYTES):
            raise IntegrityError("register word padding damaged")
        return padded[:WORD_BYTES]

    def encrypt_line(self, plain: bytes, ea: int) -> tuple[bytes, bytes]:
        return encrypt_block(self.proc.xts_key(), Tweak(self._seid(), ea), plain)

    def decrypt_line(self, cipher: bytes, digest: bytes, ea: int) -> bytes:
        return verify_and_decrypt(self.proc.xts_key(), Tweak(self._seid(), ea), cipher, digest)


# ---------------------------------------------------------------------------
# Machine state
# ---------------------------------------------------------------------------


class MachineState:
    def __init__(
        self,
        footprint: FootprintConfig,
        proc: ProcessorIdentity,
        mem: MemoryImage,
        protected_thread: int,
        l1d_bytes: int = 32 * 1024,
        l1i_bytes: int = 48 * 1024,
        n_functional_units: int = 4,
        fault_skip_clearing: bool = False,
    ):
        if footprint.placement not in EDAP_PLACEMENTS:
            raise ValueError("machine model requires one of the engine placements")
        self.config = footprint
        self.proc = proc
        self.mem = mem
        self.protected_thread = protected_thread
        self.engine = Engine(proc)
        self.privilege = Privilege.SUPERVISOR  # the platform's process setup runs first
        self.current_thread = protected_thread
        self.regs: dict[int, Word] = {}
        self.l1d = SetAssociativeCache(l1d_bytes)
        self.l1i = SetAssociativeCache(l1i_bytes)
        self.n_functional_units = n_functional_units
        self.active_fu = 0
        self.buffers: list[dict[int, tuple[bytes, int, bool]]] = [
            {} for _ in range(n_functional_units)
        ]
        self.reg_hashes: dict[int, bytes] = {}
        self.fault_skip_clearing = fault_skip_clearing

    # -- helpers ---------------------------------------------------------------

    @property
    def placement(self) -> Placement:
        return self.config.placement

    def _clear_placement(self) -> bool:
        return self.placement in (Placement.CLEARTEXT_REGFILE, Placement.CLEARTEXT_L1)

    def _reg_slot_ea(self, reg: int) -> int:
        return REG_SPACE_BASE + reg * LINE_BYTES

    def _reg(self, reg: int) -> Word:
        word = self.regs.get(reg)
        if word is None:
            if self._clear_placement():
                word = Word(Form.CLEAR, b"\x00" * WORD_BYTES, self.current_thread, False)
            else:
                slot = self._reg_slot_ea(reg)
                cipher = self.engine.encrypt_word(b"\x00" * WORD_BYTES, slot)
                word = Word(Form.CIPHER, cipher, None, False, slot)
            self.regs[reg] = word
        return word

    def _require_engine(self) -> None:
        if not self.engine.engaged:
            raise AccessDenied("encryption engine is disengaged")

    def _require_problem(self, requester: Requester) -> None:
        if requester.privilege is not Privilege.PROBLEM or self.privilege is not Privilege.PROBLEM:
            raise AccessDenied("operation requires problem state")
        if requester.thread_id != self.current_thread:
            raise AccessDenied("requester is not the running thread")


# ---------------------------------------------------------------------------
# Register and memory access
# ---------------------------------------------------------------------------


def read_operand(state: MachineState, reg: int, requester: Requester) -> Word:
    """Raw register read. Cleartext values are gated; ciphertext is opaque."""
    word = state._reg(reg)
    if word.form is Form.CLEAR:
        if requester.privilege is not Privilege.PROBLEM:
            raise AccessDenied("privileged code may not read cleartext registers")
        if word.owner is not None and requester.thread_id != word.owner:
            raise AccessDenied("cleartext register belongs to another thread")
    return word


def operand_value(state: MachineState, reg: int, requester: Requester) -> tuple[bytes, bool]:
    """Cleartext operand as seen by the functional unit; returns (payload, taint).

    Under the in-unit placements this is where decryption happens (or is
    bypassed on a local-buffer hit); the cleartext exists only for the
    duration of the instruction.
    """
    if state.placement is Placement.FU_ENCLAVE_BUFFERED:
        hit = buffer_lookup(state, reg)
        if hit is not None:
            return hit
    word = read_operand(state, reg, requester)
    if word.form is Form.CLEAR:
        return word.data, word.taint
    state._require_problem(requester)
    state._require_engine()
    slot = word.slot_ea if word.slot_ea is not None else state._reg_slot_ea(reg)
    payload = state.engine.decrypt_word(word.data, slot)
    taint = True  # decrypted protected data carries owner provenance
    if state.placement is Placement.FU_ENCLAVE_BUFFERED:
        _buffer_insert(state, reg, payload, taint)
    return payload, taint


def write_result(
    state: MachineState, reg: int, payload: bytes, taint: bool, requester: Requester
) -> None:
    """Instruction result into the register file, placement-appropriately."""
    state._require_problem(requester)
    if state._clear_placement():
        state.regs[reg] = Word(Form.CLEAR, payload, requester.thread_id, taint)
        return
    state._require_engine()
    slot = state._reg_slot_ea(reg)
    cipher = state.engine.encrypt_word(payload, slot)
    state.regs[reg] = Word(Form.CIPHER, cipher, None, False, slot)
    if state.placement is Placement.FU_ENCLAVE_BUFFERED:
        snoop_clear(state, reg)  # the architected value changed everywhere
        _buffer_insert(state, reg, payload, taint)


def _l1_fill(state: MachineState, line_ea: int, cache: SetAssociativeCache) -> CacheLine:
    cipher, digest = state.mem.raw_frame(line_ea)
    if state.placement is Placement.CLEARTEXT_L1:
        plain = state.engine.decrypt_line(cipher, digest, line_ea)
        line = CacheLine(Form.CLEAR, plain, None, state.current_thread, True, False)
    else:
        line = CacheLine(Form.CIPHER, cipher, digest, None, False, False)
    evicted = cache.insert(line_ea, line)
    if evicted is not None:
        _writeback_if_dirty(state, *evicted)
    return line


def _writeback_if_dirty(state: MachineState, line_ea: int, line: CacheLine) -> None:
    if line.form is Form.CLEAR and line.dirty:
        cipher, digest = state.engine.encrypt_line(line.data, line_ea)
        state.mem.store_line(line_ea, cipher, digest)


def read_memory(
    state: MachineState, ea: int, requester: Requester, dst_reg: int | None = None
) -> Word:
    """Load path. What comes back depends on where the engine sits:

    cleartext-L1 hits skip the engine entirely; cleartext-regfile loads
    decrypt on the way to the register; in-unit placements move ciphertext
    into the register untouched (re-sealed for the destination slot).
    """
    if ea % WORD_BYTES:
        raise ValueError("memory reads are word-aligned")
    line_ea = ea - (ea % LINE_BYTES)
    offset = ea % LINE_BYTES
    if state.placement is Placement.CLEARTEXT_L1:
        line = state.l1d.lookup(line_ea)
        if line is None:
            state._require_problem(requester)
            state._require_engine()
            line = _l1_fill(state, line_ea, state.l1d)
        if requester.privilege is not Privilege.PROBLEM:
            raise AccessDenied("privileged code may not read the cleartext cache")
        if line.owner is not None and requester.thread_id != line.owner:
            raise AccessDenied("cache line belongs to another thread")
        payload = line.data[offset : offset + WORD_BYTES]
        return Word(Form.CLEAR, payload, line.owner, line.taint)

    line = state.l1d.lookup(line_ea)
    if line is None:
        line = _l1_fill(state, line_ea, state.l1d)
    state._require_problem(requester)
    state._require_engine()
    plain = state.engine.decrypt_line(line.data, line.digest, line_ea)
    payload = plain[offset : offset + WORD_BYTES]
    if state.placement is Placement.CLEARTEXT_REGFILE:
        return Word(Form.CLEAR, payload, requester.thread_id, True)
    slot = state._reg_slot_ea(dst_reg if dst_reg is not None else -1)
    cipher = state.engine.encrypt_word(payload, slot)
    return Word(Form.CIPHER, cipher, None, False, slot)


def write_memory(
    state: MachineState, ea: int, payload: bytes, taint: bool, requester: Requester
) -> None:
    """Store path; cleartext rests in L1 only under the cleartext-L1 placement."""
    if ea % WORD_BYTES:
        raise ValueError("memory writes are word-aligned")
    state._require_problem(requester)
    state._require_engine()
    line_ea = ea - (ea % LINE_BYTES)
    offset = ea % LINE_BYTES
    if state.placement is Placement.CLEARTEXT_L1:
        line = state.l1d.lookup(line_ea)
        if line is None:
            line = _l1_fill(state, line_ea, state.l1d)
        if line.owner is not None and requester.thread_id != line.owner:
            raise AccessDenied("cache line belongs to another thread")
        line.data = line.data[:offset] + payload + line.data[offset + WORD_BYTES :]
        line.taint = line.taint or taint
        line.dirty = True
        return
    line = state.l1d.lookup(line_ea)
    if line is None:
        line = _l1_fill(state, line_ea, state.l1d)
    plain = state.engine.decrypt_line(line.data, line.digest, line_ea)
    patched = plain[:offset] + payload + plain[offset + WORD_BYTES :]
    cipher, digest = state.engine.encrypt_line(patched, line_ea)
    state.mem.store_line(line_ea, cipher, digest)
    line.data, line.digest = cipher, digest


def fetch_code_line(state: MachineState, ea: int, requester: Requester) -> None:
    """Instruction-side port: verify and stage a code line in the I-cache."""
    line_ea = ea - (ea % LINE_BYTES)
    if state.l1i.contains(line_ea):
        return
    state._require_problem(requester)
    state._require_engine()
    cipher, digest = state.mem.raw_frame(line_ea)
    if state.placement is Placement.CLEARTEXT_L1:
        plain = state.engine.decrypt_line(cipher, digest, line_ea)
        line = CacheLine(Form.CLEAR, plain, None, state.current_thread, True, False)
    else:
        state.engine.decrypt_line(cipher, digest, line_ea)  # verify only
        line = CacheLine(Form.CIPHER, cipher, digest, None, False, False)
    state.l1i.insert(line_ea, line)


# ---------------------------------------------------------------------------
# Local cleartext buffers (in-unit buffered placement)
# ---------------------------------------------------------------------------


def _buffer_insert(state: MachineState, reg: int, payload: bytes, taint: bool) -> None:
    buf = state.buffers[state.active_fu]
    if reg not in buf and len(buf) >= state.config.buffer_entries:
        oldest = next(iter(buf))
        del buf[oldest]
    buf.pop(reg, None)
    buf[reg] = (payload, state.current_thread, taint)


def buffer_lookup(state: MachineState, reg: int) -> tuple[bytes, bool] | None:
    """Cleartext buffer probe; hits only for the owning thread in problem state."""
    if state.placement is not Placement.FU_ENCLAVE_BUFFERED:
        return None
    entry = state.buffers[state.active_fu].get(reg)
    if entry is None:
        return None
    payload, owner, taint = entry
    if state.privilege is not Privilege.PROBLEM or owner != state.current_thread:
        return None
    state.buffers[state.active_fu].pop(reg)
    state.buffers[state.active_fu][reg] = entry  # refresh recency
    return payload, taint


def snoop_clear(state: MachineState, physical_reg: int) -> None:
    """Erase a reallocated register's cleartext from every unit's buffer."""
    for buf in state.buffers:
        buf.pop(physical_reg, None)


# ---------------------------------------------------------------------------
# Control transfer
# ---------------------------------------------------------------------------


def _canonical_register_hash(state: MachineState) -> bytes:
    """Hash of the architected register state, invariant to clear/cipher form."""
    h = hashlib.sha256()
    for reg in sorted(state.regs):
        word = state.regs[reg]
        target_slot = state._reg_slot_ea(reg)
        if word.form is Form.CIPHER:
            if word.slot_ea == target_slot:
                canonical = word.data
            else:  # sealed in transit under another slot: re-bind inside the engine
                payload = state.engine.decrypt_word(word.data, word.slot_ea)
                canonical = state.engine.encrypt_word(payload, target_slot)
        else:
            canonical = state.engine.encrypt_word(word.data, target_slot)
        h.update(reg.to_bytes(4, "big") + canonical)
    return h.digest()


def _clear_protected_state(state: MachineState) -> None:
    if state.fault_skip_clearing:
        return
    if state._clear_placement():
        for reg, word in state.regs.items():
            if word.form is Form.CLEAR:
                slot = state._reg_slot_ea(reg)
                cipher = state.engine.encrypt_word(word.data, slot)
                state.regs[reg] = Word(Form.CIPHER, cipher, None, False, slot)
    for buf in state.buffers:
        buf.clear()
    if state.placement is Placement.CLEARTEXT_L1:
        for cache in (state.l1d, state.l1i):
            for line_ea, line in list(cache.lines()):
                if line.form is Form.CLEAR:
                    if cache is state.l1d:
                        _writeback_if_dirty(state, line_ea, line)
                    cache.remove(line_ea)


def transfer_control(state: MachineState, to_privilege: Privilege) -> None:
    """Privilege transition with clearing, engine gating, and the resume check.

    Entering privileged mode records a hash of the (canonicalized) register
    state; returning to problem state requires the current state to hash to
    the same value, so privileged mutation of saved state is caught.
    """
    if to_privilege is state.privilege:
        return
    if to_privilege is not Privilege.PROBLEM:
        state.reg_hashes[state.current_thread] = _canonical_register_hash(state)
        _clear_protected_state(state)
        state.engine.engaged = False
        state.privilege = to_privilege
        return
    # resuming problem state
    _clear_protected_state(state)
    recorded = state.reg_hashes.get(state.current_thread)
    if recorded is not None and _canonical_register_hash(state) != recorded:
        raise StateHashMismatch("register state changed across the privileged interval")
    state.privilege = Privilege.PROBLEM
    state.engine.engaged = True


# ---------------------------------------------------------------------------
# Privileged support instructions
# ---------------------------------------------------------------------------


def load_and_hide(
    state: MachineState, reg: int, ea: int, caller: Requester, for_thread: int
) -> None:
    """Restore a saved register: decrypt from memory, hide from everyone but the owner."""
    if caller.privilege is Privilege.PROBLEM:
        raise AccessDenied("load-and-hide is a privileged instruction")
    cipher, digest = state.mem.raw_frame(ea)
    plain = state.engine.decrypt_line(cipher, digest, ea)
    state.regs[reg] = Word(Form.CLEAR, plain[:WORD_BYTES], for_thread, True)


def store_and_clear(state: MachineState, reg: int, ea: int, caller: Requester) -> None:
    """Save a register encrypted to memory and erase its cleartext."""
    if caller.privilege is Privilege.PROBLEM:
        raise AccessDenied("store-and-clear is a privileged instruction")
    word = state.regs.get(reg)
    if word is None:
        raise ValueError(f"register {reg} holds nothing to save")
    if word.form is Form.CLEAR:
        payload = word.data
    else:
        slot = word.slot_ea if word.slot_ea is not None else state._reg_slot_ea(reg)
        payload = state.engine.decrypt_word(word.data, slot)
    line = payload + b"\x00" * (LINE_BYTES - WORD_BYTES)
    cipher, digest = state.engine.encrypt_line(line, ea)
    state.mem.store_line(ea, cipher, digest)
    del state.regs[reg]


# ---------------------------------------------------------------------------
# Block lifecycle support instructions
# ---------------------------------------------------------------------------


def init_empty_block(state: MachineState, ea: int, caller: Requester) -> None:
    """Privileged zero-initialization of a free block; no plaintext is exposed."""
    if caller.privilege is Privilege.PROBLEM:
        raise AccessDenied("block initialization is a privileged instruction")
    if state.mem.is_mapped(ea):
        raise AccessDenied(f"block at ea=0x{ea:x} is not free")
    cipher, digest = state.engine.encrypt_line(b"\x00" * LINE_BYTES, ea)
    state.mem.store_line(ea, cipher, digest)


def acquire_block(state: MachineState, ea: int, requester: Requester) -> None:
    """Problem-state claim of a free block for private use."""
    state._require_problem(requester)
    state._require_engine()
    if state.mem.is_mapped(ea):
        raise AccessDenied(f"block at ea=0x{ea:x} is already owned")
    cipher, digest = state.engine.encrypt_line(b"\x00" * LINE_BYTES, ea)
    state.mem.store_line(ea, cipher, digest)


def release_block(state: MachineState, ea: int, requester: Requester) -> None:
    """Erase a block's cleartext and return the frame; later fetches fail."""
    state._require_problem(requester)
    line_ea = ea - (ea % LINE_BYTES)
    line = state.l1d.lookup(line_ea)
    if line is not None and line.owner is not None and line.owner != requester.thread_id:
        raise AccessDenied("cannot release another thread's block")
    state.l1d.remove(line_ea)
    state.l1i.remove(line_ea)
    state.mem.drop(line_ea)


# ---------------------------------------------------------------------------
# Confidentiality audit
# ---------------------------------------------------------------------------


def confidentiality_audit(state: MachineState) -> list[AuditViolation]:
    """Scan all machine state for tainted cleartext outside the footprint.

    In problem state the footprint covers, per placement, the in-unit
    buffers, the register file, and the L1 caches, always restricted to the
    running thread. Outside problem state no tainted cleartext may exist
    anywhere: transfers must have cleared it.
    """
    placement = state.placement
    in_problem = state.privilege is Privilege.PROBLEM
    violations: list[AuditViolation] = []

    def allowed(owner: int | None) -> bool:
        return in_problem and owner == state.current_thread

    for reg, word in state.regs.items():
        if word.form is Form.CLEAR and word.taint:
            if not state._clear_placement():
                violations.append(
                    AuditViolation("register", reg, placement, "cleartext register outside footprint")
                )
            elif not allowed(word.owner):
                violations.append(
                    AuditViolation("register", reg, placement, "cleartext register not cleared")
                )
    for name, cache in (("l1d", state.l1d), ("l1i", state.l1i)):
        for line_ea, line in cache.lines():
            if line.form is Form.CLEAR and line.taint:
                if placement is not Placement.CLEARTEXT_L1:
                    violations.append(
                        AuditViolation(name, line_ea, placement, "cleartext line outside footprint")
                    )
                elif not allowed(line.owner):
                    violations.append(
                        AuditViolation(name, line_ea, placement, "cleartext line not cleared")
                    )
    for fu, buf in enumerate(state.buffers):
        for reg, (payload, owner, taint) in buf.items():
            if taint and (placement is not Placement.FU_ENCLAVE_BUFFERED or not allowed(owner)):
                violations.append(
                    AuditViolation("buffer", (fu << 16) | reg, placement, "buffer entry not cleared")
                )
    if state.engine.engaged and not in_problem:
        violations.append(
            AuditViolation("engine", 0, placement, "engine engaged outside problem state")
        )
    return violations


def audit_report_lines(violations: list[AuditViolation]) -> str:
    return "".join(v.record() + "\n" for v in violations)


def audit_report_json(violations: list[AuditViolation]) -> str:
    return json.dumps(
        [
            {
                "location": v.location,
                "index": v.index,
                "placement": v.placement.value,
                "detail": v.detail,
            }
            for v in violations
        ],
        indent=2,
    )


# ---------------------------------------------------------------------------
# Functional trace execution
# ---------------------------------------------------------------------------


def _mix(parts: list[bytes], seq: int) -> bytes:
    acc = seq & _MASK64
    for p in parts:
        acc = (acc * 0x100000001B3 ^ int.from_bytes(p, "big")) & _MASK64
    return acc.to_bytes(8, "big")


def run_trace(state: MachineState, events, on_transition=None) -> int:
    """Architecturally execute trace events against the machine state.

    ``on_transition`` is called after every privilege change (and once at
    the end) so callers can audit at each boundary. Returns the number of
    instructions executed.
    """
    executed = 0
    for ev in events:
        kind = ev.kind
        if kind == "priv_enter":
            transfer_control(state, Privilege(ev.priv or "supervisor"))
            if on_transition:
                on_transition(state)
            continue
        if kind == "priv_exit":
            transfer_control(state, Privilege.PROBLEM)
            if on_transition:
                on_transition(state)
            continue
        requester = Requester(state.current_thread, state.privilege)
        state.active_fu = executed % state.n_functional_units
        if kind == "load":
            state.regs[ev.dst] = read_memory(state, ev.ea, requester, dst_reg=ev.dst)
        elif kind == "store":
            payload, taint = operand_value(state, ev.srcs[0], requester)
            write_memory(state, ev.ea, payload, taint, requester)
        elif kind == "non_mem":
            values = [operand_value(state, s, requester) for s in ev.srcs]
            if ev.dst is not None:
                mixed = _mix([v[0] for v in values], ev.seq)
                write_result(state, ev.dst, mixed, any(v[1] for v in values), requester)
        elif kind == "branch":
            for s in ev.srcs:
                operand_value(state, s, requester)
        else:
            raise ValueError(f"unknown trace event kind {kind!r}")
        executed += 1
    if on_transition:
        on_transition(state)
    return executed
