"""Dynamic-instruction traces: event type, synthetic generators, file format.

The generators stand in for proprietary workload traces. Four families:
``dep_chain`` (serial register dependences), ``independent`` (no shared
registers inside any issue window), ``mem_bound`` (load streams with a
target L1 hit rate, optionally a pointer chase), and ``mixed`` (a blend
with short register chains, far load consumers, branches, and privilege
round-trips).

File grammar, one event per line, ``-`` for absent fields::

    seq kind dst srcs ea thread priv

``srcs`` is comma-separated register numbers; ``ea`` is hex.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass

from .errors import TraceFormatError

LINE_BYTES = 128
REGISTER_FILE_SIZE = 256

EVENT_KINDS = ("non_mem", "load", "store", "branch", "priv_enter", "priv_exit")

# register pools keep the families' dependence structure from colliding
_CHAIN_REGS = range(0, 48)  # rotating dsts for chained non-memory work
_COLD_REGS = range(48, 64)  # never written: reads from here depend on nothing
_LOAD_REGS = range(64, 192)  # load destinations; wide so consumers outlive reuse

DEFAULT_DATA_BASE = 0x40000

# Calibrated mixed-workload profile for placement-comparison studies: high
# locality, far load consumers, a thin layer of short register chains, and
# one privilege round-trip per ten thousand instructions.
MIXED_SUITE_DEFAULTS = {
    "l1_hit_rate": 0.95,
    "load_fraction": 0.28,
    "store_fraction": 0.12,
    "branch_fraction": 0.10,
    "short_chain_fraction": 0.04,
    "medium_chain_fraction": 0.03,
    "load_consumer_medium_fraction": 0.02,
    "load_consumer_far": (96, 320),
    "priv_switch_period": 10_000,
}


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    srcs: tuple[int, ...]
    dst: int | None
    ea: int | None
    thread_id: int
    priv: str | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind in ("load", "store") and self.ea is None:
            raise ValueError(f"{self.kind} event needs an effective address")
        if len(self.srcs) > 3:
            raise ValueError("an instruction reads at most three registers")
        for r in self.srcs:
            if not 0 <= r < REGISTER_FILE_SIZE:
                raise ValueError(f"source register {r} outside file")
        if self.dst is not None and not 0 <= self.dst < REGISTER_FILE_SIZE:
            raise ValueError(f"destination register {self.dst} outside file")


# ---------------------------------------------------------------------------
# Address stream with a structural hit-rate target
# ---------------------------------------------------------------------------


class AddressStream:
    """Hot-set/cold-stream addresses hitting a target rate under a 32 KiB L1.

    Hot lines occupy dedicated cache sets that the one-shot cold stream can
    never evict, so the realized hit rate is the hot-access probability with
    a one-time compulsory-miss correction.
    """

    L1_SETS = 32  # 32 KiB / (8 ways * 128 B)
    HOT_SETS = 6
    COLD_SETS = 8
    COLD_POOL_LINES = 512  # revisited round-robin: misses L1 but stays L2-resident

    def __init__(self, rng: random.Random, hit_rate: float, expected_accesses: int,
                 data_base: int = DEFAULT_DATA_BASE, cold_pool_lines: int | None = None,
                 hot_sets: int | None = None, cold_sets: int | None = None):
        if not 0.0 <= hit_rate <= 1.0:
            raise ValueError("l1_hit_rate must lie in [0, 1]")
        self.rng = rng
        self.data_base = data_base
        hot = hot_sets or self.HOT_SETS
        cold = cold_sets or self.COLD_SETS
        if hot + cold > self.L1_SETS:
            raise ValueError("hot and cold set footprints exceed the cache")
        hot_lines = hot * 8
        compensation = hot_lines / expected_accesses if expected_accesses else 0.0
        self.p_hot = min(1.0, hit_rate + compensation) if hit_rate < 1.0 else 1.0
        self.hot_lines = [
            data_base + LINE_BYTES * ((i % hot) + self.L1_SETS * (i // hot))
            for i in range(hot_lines)
        ]
        self.cold_base = data_base + LINE_BYTES * self.L1_SETS * 8
        self.cold_first_set = hot
        self.cold_sets = cold
        self.cold_pool = cold_pool_lines or self.COLD_POOL_LINES
        self.cold_count = 0

    def _cold_line(self, k: int) -> int:
        # cold lines map to sets the hot pool never uses, so the one churns
        # without ever evicting the other
        k %= self.cold_pool
        return self.cold_base + LINE_BYTES * (
            self.cold_first_set + (k % self.cold_sets) + self.L1_SETS * (k // self.cold_sets)
        )

    def next_ea(self) -> int:
        if self.rng.random() < self.p_hot:
            line = self.rng.choice(self.hot_lines)
        else:
            line = self._cold_line(self.cold_count)
            self.cold_count += 1
        return line + 8 * self.rng.randrange(LINE_BYTES // 8)

    def cold_ea(self) -> int:
        line = self._cold_line(self.cold_count)
        self.cold_count += 1
        return line

    def span(self) -> tuple[int, int]:
        """Covering address range for image construction, line aligned."""
        rows = (self.cold_pool + self.cold_sets - 1) // self.cold_sets + 1
        end = self.cold_base + LINE_BYTES * self.L1_SETS * (rows + 1)
        return self.data_base, end


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _dep_chain(length: int, thread: int) -> list[TraceEvent]:
    events = []
    prev_dst = 0
    for i in range(length):
        dst = (i + 1) % 32
        events.append(TraceEvent(i, "non_mem", (prev_dst,), dst, None, thread))
        prev_dst = dst
    return events


def _independent(length: int, thread: int) -> list[TraceEvent]:
    return [
        TraceEvent(i, "non_mem", (48 + (i % 16),), i % 32, None, thread)
        for i in range(length)
    ]


def _mem_bound(length: int, params: dict, rng: random.Random, thread: int) -> list[TraceEvent]:
    hit_rate = params.get("l1_hit_rate", 0.9)
    chase = params.get("chase", False)
    events: list[TraceEvent] = []
    if chase:
        # serial pointer chase: every load's address depends on the previous
        # loaded value and every access is a compulsory miss
        stream = AddressStream(rng, 0.0, length, params.get("data_base", DEFAULT_DATA_BASE))
        prev = 64
        for i in range(length):
            dst = 64 + ((i + 1) % len(_LOAD_REGS))
            events.append(TraceEvent(i, "load", (prev,), dst, stream.cold_ea(), thread))
            prev = dst
        return events
    expected_loads = length // 2
    stream = AddressStream(rng, hit_rate, expected_loads, params.get("data_base", DEFAULT_DATA_BASE))
    consumer_at: dict[int, list[int]] = {}
    distance = params.get("consumer_distance", (64, 256))
    load_i = 0
    i = 0
    while i < length:
        due = consumer_at.pop(i, None)
        if due:
            events.append(TraceEvent(i, "non_mem", tuple(due[:3]), (i % 32), None, thread))
            i += 1
            continue
        dst = 64 + (load_i % len(_LOAD_REGS))
        load_i += 1
        events.append(TraceEvent(i, "load", (48 + (i % 16),), dst, stream.next_ea(), thread))
        target = i + rng.randint(*distance)
        if target < length:
            consumer_at.setdefault(target, []).append(dst)
        i += 1
    return events


def _mixed(length: int, params: dict, rng: random.Random, thread: int) -> list[TraceEvent]:
    load_fraction = params.get("load_fraction", 0.25)
    store_fraction = params.get("store_fraction", 0.15)
    branch_fraction = params.get("branch_fraction", 0.05)
    if min(load_fraction, store_fraction, branch_fraction) < 0:
        raise ValueError("fractions must be non-negative")
    if load_fraction + store_fraction + branch_fraction > 1.0:
        raise ValueError("event fractions exceed 1")
    hit_rate = params.get("l1_hit_rate", 0.9)
    priv_period = params.get("priv_switch_period", 0)
    short_chain = params.get("short_chain_fraction", 0.04)
    medium_chain = params.get("medium_chain_fraction", 0.03)
    load_consumer_medium = params.get("load_consumer_medium_fraction", 0.05)
    far_lo, far_hi = params.get("load_consumer_far", (64, 256))

    stream = AddressStream(
        rng, hit_rate, int(length * (load_fraction + store_fraction)) or 1,
        params.get("data_base", DEFAULT_DATA_BASE),
    )
    events: list[TraceEvent] = []
    recent_dsts: deque[int] = deque(maxlen=64)
    consumer_at: dict[int, list[int]] = {}
    seq = 0
    instructions = 0

    def cold_src() -> int:
        return 48 + rng.randrange(16)

    def chained_src() -> int | None:
        if not recent_dsts:
            return None
        if rng.random() < short_chain:
            k = rng.randint(1, min(16, len(recent_dsts)))
        elif rng.random() < medium_chain:
            k = rng.randint(min(17, len(recent_dsts)), min(64, len(recent_dsts)))
        else:
            return None
        return recent_dsts[-k]

    while instructions < length:
        if priv_period and instructions and instructions % priv_period == 0 and (
            not events or events[-1].kind not in ("priv_enter", "priv_exit")
        ):
            events.append(TraceEvent(seq, "priv_enter", (), None, None, thread, "supervisor"))
            seq += 1
            events.append(TraceEvent(seq, "priv_exit", (), None, None, thread, None))
            seq += 1
        due = consumer_at.pop(instructions, None)
        if due:
            dst = rng.choice(tuple(_CHAIN_REGS))
            events.append(TraceEvent(seq, "non_mem", tuple(due[:3]), dst, None, thread))
            recent_dsts.append(dst)
            seq += 1
            instructions += 1
            continue
        roll = rng.random()
        if roll < load_fraction:
            dst = 64 + (instructions % len(_LOAD_REGS))
            events.append(TraceEvent(seq, "load", (cold_src(),), dst, stream.next_ea(), thread))
            if rng.random() < load_consumer_medium:
                target = instructions + rng.randint(12, 48)
            else:
                target = instructions + rng.randint(far_lo, far_hi)
            if target < length:
                consumer_at.setdefault(target, []).append(dst)
        elif roll < load_fraction + store_fraction:
            src = recent_dsts[-1] if recent_dsts and rng.random() < 0.5 else cold_src()
            events.append(TraceEvent(seq, "store", (src,), None, stream.next_ea(), thread))
        elif roll < load_fraction + store_fraction + branch_fraction:
            src = chained_src() or cold_src()
            events.append(TraceEvent(seq, "branch", (src,), None, None, thread))
        else:
            srcs = [chained_src() or cold_src()]
            if rng.random() < 0.5:
                srcs.append(cold_src())
            dst = rng.choice(tuple(_CHAIN_REGS))
            events.append(TraceEvent(seq, "non_mem", tuple(srcs), dst, None, thread))
            recent_dsts.append(dst)
        seq += 1
        instructions += 1
    return events


def generate_trace(kind: str, params: dict | None = None, seed: int = 0) -> list[TraceEvent]:
    """Deterministic synthetic trace of the requested family."""
    params = dict(params or {})
    length = int(params.get("length", 1000))
    if length < 0:
        raise ValueError("length must be non-negative")
    thread = int(params.get("thread_id", 1))
    rng = random.Random(seed)
    if kind == "dep_chain":
        return _dep_chain(length, thread)
    if kind == "independent":
        return _independent(length, thread)
    if kind == "mem_bound":
        return _mem_bound(length, params, rng, thread)
    if kind == "mixed":
        return _mixed(length, params, rng, thread)
    raise ValueError(f"unknown trace kind {kind!r}")


def trace_address_span(events) -> tuple[int, int]:
    """Line-aligned [start, end) range covering every address in the trace."""
    eas = [ev.ea for ev in events if ev.ea is not None]
    if not eas:
        return (DEFAULT_DATA_BASE, DEFAULT_DATA_BASE + LINE_BYTES)
    start = min(eas) - (min(eas) % LINE_BYTES)
    end = max(eas) + LINE_BYTES
    end -= end % LINE_BYTES
    if end <= max(eas):
        end += LINE_BYTES
    return start, end


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def dumps(events) -> str:
    lines = []
    for ev in events:
        srcs = ",".join(str(r) for r in ev.srcs) if ev.srcs else "-"
        dst = str(ev.dst) if ev.dst is not None else "-"
        ea = f"0x{ev.ea:x}" if ev.ea is not None else "-"
        priv = ev.priv if ev.priv else "-"
        lines.append(f"{ev.seq} {ev.kind} {dst} {srcs} {ea} {ev.thread_id} {priv}")
    return "\n".join(lines) + ("\n" if lines else "")


def loads(text: str) -> list[TraceEvent]:
    events = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise TraceFormatError(line_no, f"expected 7 fields, got {len(parts)}")
        seq_s, kind, dst_s, srcs_s, ea_s, thread_s, priv_s = parts
        try:
            seq = int(seq_s)
            thread = int(thread_s)
            dst = None if dst_s == "-" else int(dst_s)
            srcs = () if srcs_s == "-" else tuple(int(x) for x in srcs_s.split(","))
            ea = None if ea_s == "-" else int(ea_s, 16)
        except ValueError as exc:
            raise TraceFormatError(line_no, str(exc)) from None
        priv = None if priv_s == "-" else priv_s
        try:
            events.append(TraceEvent(seq, kind, srcs, dst, ea, thread, priv))
        except ValueError as exc:
            raise TraceFormatError(line_no, str(exc)) from None
    return events


def write_trace(events, path) -> None:
    path.write_text(dumps(events))


def read_trace(path) -> list[TraceEvent]:
    return loads(path.read_text())
