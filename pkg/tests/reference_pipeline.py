"""Brute-force cycle-stepped scheduler implementing the pipeline contract.

Independent mechanization used to cross-check the recurrence-based
simulator: a program-order pre-pass resolves order-dependent decisions
(cache walk, buffer membership, operand producers), privilege markers split
the trace into drained segments, and a per-cycle loop starts stages under
head-of-line order, width capacity, and data floors.
"""

from collections import OrderedDict

from edap.arch import FootprintConfig, Placement
from edap.caches import SetAssociativeCache
from edap.pipeline import ENGAGE_CYCLES, CoreConfig, LatencyConfig, pipeline_depth

FU_PLACEMENTS = (Placement.FU_ENCLAVE, Placement.FU_ENCLAVE_BUFFERED)


class _Plan:
    __slots__ = ("idx", "stages", "floors", "barrier_cost", "is_branch")

    def __init__(self, idx):
        self.idx = idx
        self.stages = []  # list of (name, latency)
        self.floors = {}  # stage name -> list of (producer idx, stage name)
        self.barrier_cost = None  # set on privilege markers
        self.is_branch = False


def _build_plans(trace, cfg, lat, core):
    p = cfg.placement
    d, e = lat.effective_dec(), lat.effective_enc()
    fu = p in FU_PLACEMENTS
    l1d = SetAssociativeCache(core.l1d_bytes, core.cache_ways)
    l2 = SetAssociativeCache(core.l2_bytes, core.cache_ways)
    clear_src: dict[int, tuple[int, str]] = {}
    cipher_src: dict[int, tuple[int, str]] = {}
    buffer: OrderedDict[int, tuple[int, str]] = OrderedDict()
    touched_regs: set[int] = set()
    plans = []

    def probe_buffer(reg):
        entry = buffer.get(reg)
        if entry is not None:
            buffer.move_to_end(reg)
        return entry

    def put_buffer(reg, producer):
        if reg not in buffer and len(buffer) >= cfg.buffer_entries:
            buffer.popitem(last=False)
        buffer[reg] = producer
        buffer.move_to_end(reg)

    for ev in trace:
        plan = _Plan(len(plans))
        if ev.kind in ("priv_enter", "priv_exit"):
            if p is Placement.BASELINE:
                plan.barrier_cost = 0
            elif p is Placement.FU_ENCLAVE:
                plan.barrier_cost = ENGAGE_CYCLES
            elif p is Placement.FU_ENCLAVE_BUFFERED:
                plan.barrier_cost = ENGAGE_CYCLES + len(buffer)
            elif p is Placement.CLEARTEXT_REGFILE:
                plan.barrier_cost = ENGAGE_CYCLES + len(touched_regs)
            else:
                plan.barrier_cost = ENGAGE_CYCLES + len(l1d)
            buffer.clear()
            touched_regs.clear()
            if p is Placement.CLEARTEXT_L1:
                l1d.clear()
            plans.append(plan)
            continue

        kind = ev.kind
        plan.is_branch = kind == "branch"
        ex_floors, dec_floors = [], []
        needs_dec = False
        miss_srcs = []
        if fu and kind in ("non_mem", "branch"):
            for src in ev.srcs:
                if p is Placement.FU_ENCLAVE_BUFFERED:
                    hit = probe_buffer(src)
                    if hit is not None:
                        ex_floors.append(hit)
                        continue
                    miss_srcs.append(src)
                needs_dec = True
                producer = cipher_src.get(src)
                if producer:
                    (dec_floors if d else ex_floors).append(producer)
        else:
            ready = cipher_src if fu else clear_src
            for src in ev.srcs:
                if p is Placement.FU_ENCLAVE_BUFFERED:
                    hit = probe_buffer(src)
                    if hit is not None:
                        ex_floors.append(hit)
                        continue
                producer = ready.get(src)
                if producer:
                    ex_floors.append(producer)

        mem_latency = core.l1_hit_cycles if kind in ("load", "store") else 1
        if kind in ("load", "store"):
            line = ev.ea - (ev.ea % 128)
            if l1d.lookup(line) is not None:
                level = "l1"
            else:
                level = "l2" if l2.lookup(line) is not None else "mem"
                l2.insert(line, True)
                l1d.insert(line, True)
            if kind == "load" and level != "l1":
                mem_latency += core.l2_hit_cycles
                if level == "mem":
                    mem_latency += core.mem_cycles
                if p is Placement.CLEARTEXT_L1:
                    mem_latency += d

        stages = [("IF", 1), ("ID", 1)]
        if needs_dec and d:
            stages.append(("DEC", d))
            plan.floors["DEC"] = dec_floors
        stages.append(("EX", 1))
        plan.floors["EX"] = ex_floors
        if fu and kind == "non_mem" and ev.dst is not None and e:
            stages.append(("ENC", e))
        stages.append(("MEM", mem_latency))
        if p is Placement.CLEARTEXT_REGFILE and kind == "load" and d:
            stages.append(("LDEC", d))
        stages.append(("WB", 1))
        plan.stages = stages

        dst = ev.dst
        if kind == "non_mem" and dst is not None:
            if fu:
                cipher_src[dst] = (plan.idx, "ENC" if e else "EX")
                if p is Placement.FU_ENCLAVE_BUFFERED:
                    put_buffer(dst, (plan.idx, "EX"))
            else:
                clear_src[dst] = (plan.idx, "EX")
                if p is Placement.CLEARTEXT_REGFILE:
                    touched_regs.add(dst)
        elif kind == "load" and dst is not None:
            if p is Placement.CLEARTEXT_REGFILE:
                clear_src[dst] = (plan.idx, "LDEC" if d else "MEM")
                touched_regs.add(dst)
            elif fu:
                cipher_src[dst] = (plan.idx, "MEM")
                buffer.pop(dst, None)
            else:
                clear_src[dst] = (plan.idx, "MEM")
        if p is Placement.FU_ENCLAVE_BUFFERED and miss_srcs and needs_dec and d:
            for src in miss_srcs:
                put_buffer(src, (plan.idx, "DEC"))
        plans.append(plan)
    return plans


def _step_segment(plans, ends, width, serialize, if_floor):
    """Cycle-stepped schedule of one drained segment; returns its horizon."""
    if not plans:
        return if_floor
    stage_users: dict[str, list[int]] = {}
    for pl in plans:
        for name, _ in pl.stages:
            stage_users.setdefault(name, []).append(pl.idx)
    cursor = {name: 0 for name in stage_users}
    next_stage = {pl.idx: 0 for pl in plans}
    prev_end = {pl.idx: if_floor for pl in plans}
    busy_until = {name: 0 for name in stage_users}
    branch_floor: dict[int, int] = {}
    by_idx = {pl.idx: pl for pl in plans}
    order = [pl.idx for pl in plans]
    horizon = if_floor
    retired = 0
    t = if_floor
    while retired < len(plans):
        capacity: dict[str, int] = {}
        for k, idx in enumerate(order):
            pl = by_idx[idx]
            si = next_stage[idx]
            if si >= len(pl.stages):
                continue
            name, latency = pl.stages[si]
            if stage_users[name][cursor[name]] != idx:
                continue  # not head of line for this stage
            if prev_end[idx] > t:
                continue
            if name == "IF" and branch_floor.get(idx, 0) > t:
                continue
            ready = True
            for producer in pl.floors.get(name, ()):
                end = ends.get(producer)
                if end is None or end > t:
                    ready = False
                    break
            if not ready:
                continue
            if capacity.get(name, 0) >= width:
                continue
            if serialize and name in ("DEC", "ENC", "LDEC") and busy_until[name] > t:
                continue
            ends[(idx, name)] = t + latency
            if serialize and name in ("DEC", "ENC", "LDEC"):
                busy_until[name] = t + latency
            capacity[name] = capacity.get(name, 0) + 1
            cursor[name] += 1
            prev_end[idx] = t + latency
            next_stage[idx] += 1
            if name == "IF" and pl.is_branch and k + 1 < len(order):
                nxt = order[k + 1]
                branch_floor[nxt] = max(branch_floor.get(nxt, 0), t + 2)
            if next_stage[idx] == len(pl.stages):
                retired += 1
                horizon = max(horizon, ends[(idx, "WB")])
        t += 1
        if t > 5_000_000:
            raise RuntimeError("reference scheduler did not converge")
    return horizon


def reference_cycles(trace, placement, lat=None, core=None) -> int:
    lat = lat or LatencyConfig()
    core = core or CoreConfig()
    cfg = placement if isinstance(placement, FootprintConfig) else FootprintConfig(placement)
    plans = _build_plans(trace, cfg, lat, core)
    width = core.issue_width
    serialize = not lat.engine_pipelined

    segments: list[list[_Plan]] = [[]]
    barrier_costs: list[int] = []
    for pl in plans:
        if pl.barrier_cost is not None:
            barrier_costs.append(pl.barrier_cost)
            segments.append([])
        else:
            segments[-1].append(pl)

    ends: dict[tuple[int, str], int] = {}
    if_floor = 0
    horizon = 0
    any_instructions = False
    for i, segment in enumerate(segments):
        if segment:
            any_instructions = True
            horizon = max(horizon, _step_segment(segment, ends, width, serialize, if_floor))
        if i < len(barrier_costs):
            if_floor = max(if_floor, horizon) + barrier_costs[i]
            horizon = if_floor
    drain = pipeline_depth(cfg.placement, lat) - 1
    return max(horizon, if_floor, drain if not any_instructions else 0)
