"""Trace-driven timing model of the extended pipelines.

Scheduling contract (shared by the closed-form oracle and the tests'
cycle-stepped reference):

* Stages run in order per instruction; every stage has initiation interval
  one per pipe (``issue_width`` starts per cycle per stage) unless the
  engine is configured unpipelined, and instructions never overtake each
  other within a stage (equal start cycles are allowed).
* The front end is elastic: a delayed instruction buffers rather than
  jamming earlier stages.
* Data readiness: consumers wait for cleartext at EX (register-file and
  cache placements forward EX to EX; loads forward from the end of their
  last data stage). Under the in-unit placements cleartext may not leave
  the unit, so consumers wait for the producer's *encrypted* result (end
  of ENC) at their own DEC; the buffered variant forwards cleartext
  through the unit-local buffer and skips DEC on a hit.
* Stage shapes: every placement keeps IF ID EX MEM WB. The in-unit
  placements insert DEC before EX and ENC after EX for non-memory
  instructions (branches decrypt but produce no result). The regfile
  placement appends DEC to loads only; the L1 placement folds DEC into the
  miss fill. Store-side encryption happens in the store queue and never
  stalls retirement.
* Branches insert one fetch bubble (fixed redirect, no predictor).
  Privilege transitions drain the machine and charge engine
  engage/disengage plus one cycle per cleared item, reported as
  ``clearing_stalls``.

Instruction addresses are not part of trace events, so the I-side is
assumed warm and adds no steady-state cycles.
"""

from __future__ import annotations

import json
from collections import OrderedDict, deque
from dataclasses import dataclass, field

from .arch import FootprintConfig, Placement
from .caches import SetAssociativeCache
from .errors import PlacementOrderingError

ENGAGE_CYCLES = 10


@dataclass(frozen=True)
class LatencyConfig:
    dec_cycles: int = 20
    enc_cycles: int = 20
    engine_pipelined: bool = True
    scale: float = 1.0

    def __post_init__(self):
        if self.dec_cycles < 0 or self.enc_cycles < 0:
            raise ValueError("engine latencies must be non-negative")
        if self.scale < 0:
            raise ValueError("scale must be non-negative")

    def effective_dec(self) -> int:
        return int(round(self.dec_cycles * self.scale))

    def effective_enc(self) -> int:
        return int(round(self.enc_cycles * self.scale))

    def scaled(self, scale: float) -> "LatencyConfig":
        return LatencyConfig(self.dec_cycles, self.enc_cycles, self.engine_pipelined, scale)


@dataclass(frozen=True)
class CoreConfig:
    issue_width: int = 4
    l1i_bytes: int = 48 * 1024
    l1d_bytes: int = 32 * 1024
    l2_bytes: int = 1024 * 1024
    l1_hit_cycles: int = 1
    l2_hit_cycles: int = 10
    mem_cycles: int = 60
    cache_ways: int = 8

    def __post_init__(self):
        if not 1 <= self.issue_width <= 4:
            raise ValueError("issue width must be between 1 and 4")
        for size in (self.l1i_bytes, self.l1d_bytes, self.l2_bytes):
            if size % (self.cache_ways * 128):
                raise ValueError("cache sizes must be multiples of ways * line size")


@dataclass
class SimReport:
    placement: str
    cycles: int
    instructions_retired: int
    ipc: float
    ipc_normalized_to_baseline: float | None
    stalls: dict[str, int]
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "placement": self.placement,
                "cycles": self.cycles,
                "instructions_retired": self.instructions_retired,
                "ipc": self.ipc,
                "ipc_normalized_to_baseline": self.ipc_normalized_to_baseline,
                "stalls": self.stalls,
                "config": self.config,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        doc = json.loads(text)
        return cls(
            placement=doc["placement"],
            cycles=doc["cycles"],
            instructions_retired=doc["instructions_retired"],
            ipc=doc["ipc"],
            ipc_normalized_to_baseline=doc["ipc_normalized_to_baseline"],
            stalls=doc["stalls"],
            config=doc.get("config", {}),
        )


def pipeline_depth(placement: Placement, lat: LatencyConfig) -> int:
    """Depth of the non-memory pipeline: the empty-trace drain is depth - 1."""
    base = 5
    if placement in (Placement.FU_ENCLAVE, Placement.FU_ENCLAVE_BUFFERED):
        return base + lat.effective_dec() + lat.effective_enc()
    return base


# ---------------------------------------------------------------------------
# The scheduler
# ---------------------------------------------------------------------------


class _StageTracker:
    """Per-stage structural state: W starts per cycle, program order kept."""

    __slots__ = ("starts", "last_busy_end")

    def __init__(self, width: int):
        self.starts: deque[int] = deque(maxlen=width)
        self.last_busy_end = 0  # used only when the engine is unpipelined

    def admit(
        self, earliest: int, data_floor: int = 0, serialize: bool = False, latency: int = 0
    ) -> tuple[int, int]:
        """Schedule a start; returns (start, cycles attributable to data waits)."""
        floor = earliest
        if self.starts:
            if len(self.starts) == self.starts.maxlen:
                floor = max(floor, self.starts[0] + 1)
            floor = max(floor, self.starts[-1])
        if serialize:
            floor = max(floor, self.last_busy_end)
        start = max(floor, data_floor)
        if serialize:
            self.last_busy_end = start + latency
        self.starts.append(start)
        return start, start - floor


def simulate(
    trace,
    placement: FootprintConfig | Placement,
    lat: LatencyConfig | None = None,
    core: CoreConfig | None = None,
    baseline_cycles: int | None = None,
) -> SimReport:
    """Deterministic cycle count for one trace under one engine placement."""
    lat = lat or LatencyConfig()
    core = core or CoreConfig()
    cfg = placement if isinstance(placement, FootprintConfig) else FootprintConfig(placement)
    p = cfg.placement
    d = lat.effective_dec()
    e = lat.effective_enc()
    width = core.issue_width
    fu_placement = p in (Placement.FU_ENCLAVE, Placement.FU_ENCLAVE_BUFFERED)
    serialize_engine = not lat.engine_pipelined

    l1d = SetAssociativeCache(core.l1d_bytes, core.cache_ways)
    l2 = SetAssociativeCache(core.l2_bytes, core.cache_ways)

    trackers: dict[str, _StageTracker] = {}

    def tracker(name: str) -> _StageTracker:
        t = trackers.get(name)
        if t is None:
            t = trackers[name] = _StageTracker(width)
        return t

    # per-register readiness: (ready_cycle, category, dec_portion)
    # category is one of "dep", "enc", "load"; dec_portion is the engine tail
    # inside a load's readiness, used to split stall attribution
    clear_ready: dict[int, tuple[int, str, int]] = {}
    cipher_ready: dict[int, tuple[int, str, int]] = {}
    buffer: OrderedDict[int, int] = OrderedDict()  # reg -> cleartext ready cycle

    stalls = {
        "dec_stalls": 0,
        "enc_stalls": 0,
        "cache_miss_stalls": 0,
        "dependency_stalls": 0,
        "clearing_stalls": 0,
    }
    horizon = 0
    if_floor = 0
    instructions = 0
    touched_regs: set[int] = set()  # cleartext registers since the last transition

    def attribute(delta: int, source: tuple[int, str, int]) -> None:
        if delta <= 0:
            return
        _, category, dec_portion = source
        if category == "enc":
            stalls["enc_stalls"] += delta
        elif category == "load":
            dec_part = min(delta, dec_portion)
            stalls["dec_stalls"] += dec_part
            stalls["cache_miss_stalls"] += delta - dec_part
        else:
            stalls["dependency_stalls"] += delta

    def walk_cache(ea: int) -> str:
        line = ea - (ea % 128)
        if l1d.lookup(line) is not None:
            return "l1"
        level = "l2" if l2.lookup(line) is not None else "mem"
        l2.insert(line, True)
        l1d.insert(line, True)
        return level

    def buffer_probe(reg: int) -> int | None:
        entry = buffer.get(reg)
        if entry is not None:
            buffer.move_to_end(reg)
        return entry

    def buffer_put(reg: int, ready: int) -> None:
        if reg not in buffer and len(buffer) >= cfg.buffer_entries:
            buffer.popitem(last=False)
        buffer[reg] = ready
        buffer.move_to_end(reg)

    for ev in trace:
        kind = ev.kind
        if kind in ("priv_enter", "priv_exit"):
            if p is Placement.BASELINE:
                cost = 0  # no engine: the switch only drains the pipe
            elif p is Placement.FU_ENCLAVE:
                cost = ENGAGE_CYCLES
            elif p is Placement.FU_ENCLAVE_BUFFERED:
                cost = ENGAGE_CYCLES + len(buffer)
            elif p is Placement.CLEARTEXT_REGFILE:
                cost = ENGAGE_CYCLES + len(touched_regs)
            else:  # resident lines are cleartext under this placement
                cost = ENGAGE_CYCLES + len(l1d)
            stalls["clearing_stalls"] += cost
            if_floor = max(if_floor, horizon) + cost
            horizon = if_floor
            buffer.clear()
            touched_regs.clear()
            if p is Placement.CLEARTEXT_L1:
                l1d.clear()  # cleartext lines do not survive the transition
            continue

        instructions += 1

        # -- resolve operand constraints ------------------------------------
        ex_sources: list[tuple[int, str, int]] = []  # wait at EX
        dec_sources: list[tuple[int, str, int]] = []  # wait at the operand DEC
        needs_dec = False
        miss_srcs: list[int] = []
        if fu_placement and kind in ("non_mem", "branch"):
            for src in ev.srcs:
                if p is Placement.FU_ENCLAVE_BUFFERED:
                    hit = buffer_probe(src)
                    if hit is not None:
                        ex_sources.append((hit, "dep", 0))
                        continue
                    miss_srcs.append(src)
                needs_dec = True
                src_ready = cipher_ready.get(src, (0, "dep", 0))
                (dec_sources if d else ex_sources).append(src_ready)
        else:
            ready_map = cipher_ready if fu_placement else clear_ready
            for src in ev.srcs:
                if p is Placement.FU_ENCLAVE_BUFFERED:
                    hit = buffer_probe(src)
                    if hit is not None:
                        ex_sources.append((hit, "dep", 0))
                        continue
                ex_sources.append(ready_map.get(src, (0, "dep", 0)))
        ex_floor = max((s[0] for s in ex_sources), default=0)
        dec_floor = max((s[0] for s in dec_sources), default=0)

        # -- memory walk -----------------------------------------------------
        mem_latency = core.l1_hit_cycles if kind in ("load", "store") else 1
        load_dec_portion = 0
        level = None
        if kind in ("load", "store"):
            level = walk_cache(ev.ea)
            if kind == "load" and level != "l1":
                mem_latency += core.l2_hit_cycles
                if level == "mem":
                    mem_latency += core.mem_cycles
                if p is Placement.CLEARTEXT_L1:
                    mem_latency += d
                    load_dec_portion = d

        # -- stage schedule ---------------------------------------------------
        start, _ = tracker("IF").admit(if_floor)
        if kind == "branch":
            if_floor = max(if_floor, start + 2)  # one redirect bubble
        end = start + 1
        start, _ = tracker("ID").admit(end)
        end = start + 1

        dec_end = None
        if needs_dec and d:
            start, delta = tracker("DEC").admit(end, dec_floor, serialize_engine, d)
            if dec_sources:
                attribute(delta, max(dec_sources, key=lambda s: s[0]))
            end = dec_end = start + d

        start, delta = tracker("EX").admit(end, ex_floor)
        if ex_sources:
            attribute(delta, max(ex_sources, key=lambda s: s[0]))
        ex_end = end = start + 1

        enc_end = None
        if fu_placement and kind == "non_mem" and ev.dst is not None and e:
            start, _ = tracker("ENC").admit(end, 0, serialize_engine, e)
            end = enc_end = start + e

        start, _ = tracker("MEM").admit(end)
        mem_end = end = start + mem_latency

        load_dec_end = None
        if p is Placement.CLEARTEXT_REGFILE and kind == "load" and d:
            start, _ = tracker("LDEC").admit(end, 0, serialize_engine, d)
            end = load_dec_end = start + d

        start, _ = tracker("WB").admit(end)
        end = start + 1
        horizon = max(horizon, end)

        # -- publish results --------------------------------------------------
        dst = ev.dst
        if kind == "non_mem" and dst is not None:
            if fu_placement:
                cipher_ready[dst] = (enc_end if enc_end is not None else ex_end, "enc", 0)
                if p is Placement.FU_ENCLAVE_BUFFERED:
                    buffer_put(dst, ex_end)  # writeback bypass into the unit buffer
            else:
                clear_ready[dst] = (ex_end, "dep", 0)
                if p is Placement.CLEARTEXT_REGFILE:
                    touched_regs.add(dst)
        elif kind == "load" and dst is not None:
            category = "dep" if level == "l1" and p is not Placement.CLEARTEXT_REGFILE else "load"
            if p is Placement.CLEARTEXT_REGFILE:
                clear_ready[dst] = (
                    load_dec_end if load_dec_end is not None else mem_end, "load", d,
                )
                touched_regs.add(dst)
            elif fu_placement:
                cipher_ready[dst] = (mem_end, category, 0)
                buffer.pop(dst, None)  # the register was reallocated with ciphertext
            else:
                clear_ready[dst] = (mem_end, category, load_dec_portion)
        if p is Placement.FU_ENCLAVE_BUFFERED and miss_srcs and dec_end is not None:
            for src in miss_srcs:
                buffer_put(src, dec_end)  # decrypted operands stay cached in the unit

    drain = pipeline_depth(p, lat) - 1
    cycles = max(horizon, if_floor, drain if instructions == 0 else 0)
    ipc = instructions / cycles if cycles and instructions else 0.0
    normalized = None
    if baseline_cycles is not None and cycles:
        normalized = baseline_cycles / cycles
    return SimReport(
        placement=p.value,
        cycles=cycles,
        instructions_retired=instructions,
        ipc=ipc,
        ipc_normalized_to_baseline=normalized,
        stalls=stalls,
        config={
            "issue_width": width,
            "dec_cycles": d,
            "enc_cycles": e,
            "engine_pipelined": lat.engine_pipelined,
            "scale": lat.scale,
            "l1d_bytes": core.l1d_bytes,
            "l2_bytes": core.l2_bytes,
            "l1_hit_cycles": core.l1_hit_cycles,
            "l2_hit_cycles": core.l2_hit_cycles,
            "mem_cycles": core.mem_cycles,
            "buffer_entries": cfg.buffer_entries,
        },
    )


# ---------------------------------------------------------------------------
# Derived runs
# ---------------------------------------------------------------------------

PLACEMENT_ORDER = (
    Placement.BASELINE,
    Placement.CLEARTEXT_L1,
    Placement.CLEARTEXT_REGFILE,
    Placement.FU_ENCLAVE_BUFFERED,
    Placement.FU_ENCLAVE,
)


def measure_l1_hit_rate(trace, core: CoreConfig | None = None) -> float:
    """Realized L1 data hit rate of a trace under the configured hierarchy."""
    core = core or CoreConfig()
    l1d = SetAssociativeCache(core.l1d_bytes, core.cache_ways)
    hits = accesses = 0
    for ev in trace:
        if ev.kind not in ("load", "store"):
            continue
        accesses += 1
        line = ev.ea - (ev.ea % 128)
        if l1d.lookup(line) is not None:
            hits += 1
        else:
            l1d.insert(line, True)
    return hits / accesses if accesses else 1.0


def sweep_latency(
    trace,
    placement: FootprintConfig | Placement,
    core: CoreConfig | None = None,
    scales=(0.5, 1.0, 2.0),
    lat: LatencyConfig | None = None,
) -> list[SimReport]:
    """One report per latency scale; cycles are monotone in the scale."""
    lat = lat or LatencyConfig()
    core = core or CoreConfig()
    reports = []
    for scale in scales:
        base = simulate(trace, Placement.BASELINE, lat.scaled(scale), core)
        reports.append(simulate(trace, placement, lat.scaled(scale), core, base.cycles))
    return reports


def compare_placements(
    trace,
    lat: LatencyConfig | None = None,
    core: CoreConfig | None = None,
    strict: bool = False,
) -> list[SimReport]:
    """Run the baseline and all placements; summary ordered fastest first.

    With ``strict`` the expected cost ordering (baseline, then L1-boundary,
    register-file, buffered in-unit, bare in-unit) is enforced.
    """
    lat = lat or LatencyConfig()
    core = core or CoreConfig()
    baseline = simulate(trace, Placement.BASELINE, lat, core)
    reports = [baseline]
    baseline.ipc_normalized_to_baseline = 1.0 if baseline.cycles else None
    for p in PLACEMENT_ORDER[1:]:
        reports.append(simulate(trace, p, lat, core, baseline.cycles))
    cycles = [r.cycles for r in reports]
    if strict and cycles != sorted(cycles):
        raise PlacementOrderingError(
            "placement cost ordering violated: "
            + ", ".join(f"{r.placement}={r.cycles}" for r in reports)
        )
    return reports
