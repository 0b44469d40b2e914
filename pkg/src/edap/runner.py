"""End-to-end orchestration: session, packaging, delivery, execution, audits.

Drives the full story for one manifest: the platform grants resources, the
owner packages and streams the image, the loader places ciphertext, the
machine model executes the trace with confidentiality audits at every
privilege boundary, and the timing model scores each requested placement.
Fault hooks let a run impersonate an adversarial platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .arch import EDAP_PLACEMENTS, FootprintConfig, Placement, Privilege
from .codec import BLOCK_BYTES
from .executable import (
    MemoryImage,
    ProgramImage,
    load_block,
    package,
    verify_code_binding,
    verify_entry,
)
from .machine import (
    MachineState,
    confidentiality_audit,
    fetch_code_line,
    run_trace,
    transfer_control,
)
from .pipeline import CoreConfig, LatencyConfig, SimReport, simulate
from .protocol import (
    PlatformProvider,
    SessionContext,
    accept_session,
    begin_session,
    grant_resources,
    identity_from_private_bytes,
    load_xts_key,
    provision_processor,
    stream_receive,
    stream_send,
    wrap_xts_key,
)
from .arch import Requester
from .rng import ByteSource
from .traces import (
    MIXED_SUITE_DEFAULTS,
    generate_trace,
    read_trace,
    trace_address_span,
)

PLACEMENT_NAMES = {p.value: p for p in Placement}


@dataclass
class RunManifest:
    """Inputs for one reproducible run, usually parsed from a key=value file."""

    identity_path: Path | None = None
    identity_seed: int | None = None
    image_path: Path | None = None  # None: synthesize one covering the trace
    trace_path: Path | None = None
    trace_kind: str | None = None  # generate when no trace file is given
    trace_params: dict = field(default_factory=dict)
    placements: tuple[Placement, ...] = EDAP_PLACEMENTS
    lat: LatencyConfig = field(default_factory=LatencyConfig)
    core: CoreConfig = field(default_factory=CoreConfig)
    seed: int = 0
    out_dir: Path = Path("out")

    @classmethod
    def parse(cls, text: str, base_dir: Path = Path(".")) -> "RunManifest":
        values: dict[str, str] = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"manifest line {line_no}: expected key = value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()

        def path_of(key):
            return (base_dir / values[key]).resolve() if key in values else None

        placements: tuple[Placement, ...] = EDAP_PLACEMENTS
        if "placement" in values and values["placement"] != "all":
            name = values["placement"]
            if name not in PLACEMENT_NAMES:
                raise ValueError(f"unknown placement {name!r}")
            placements = (PLACEMENT_NAMES[name],)
        lat = LatencyConfig(
            dec_cycles=int(values.get("dec_cycles", 20)),
            enc_cycles=int(values.get("enc_cycles", 20)),
            engine_pipelined=values.get("engine_pipelined", "true").lower() != "false",
            scale=float(values.get("latency_scale", 1.0)),
        )
        core = CoreConfig(
            issue_width=int(values.get("issue_width", 4)),
            l2_hit_cycles=int(values.get("l2_hit_cycles", 10)),
            mem_cycles=int(values.get("mem_cycles", 60)),
        )
        trace_params = dict(MIXED_SUITE_DEFAULTS)
        trace_params["length"] = int(values.get("trace_length", 20_000))
        if "priv_switch_period" in values:
            trace_params["priv_switch_period"] = int(values["priv_switch_period"])
        manifest = cls(
            identity_path=path_of("identity"),
            identity_seed=int(values["identity_seed"]) if "identity_seed" in values else None,
            image_path=path_of("image"),
            trace_path=path_of("trace"),
            trace_kind=values.get("trace_kind"),
            trace_params=trace_params,
            placements=placements,
            lat=lat,
            core=core,
            seed=int(values.get("seed", 0)),
            out_dir=(base_dir / values.get("out", "out")).resolve(),
        )
        for key, path in (("image", manifest.image_path), ("trace", manifest.trace_path),
                          ("identity", manifest.identity_path)):
            if path is not None and key == "identity":
                if not path.with_suffix(".priv").exists():
                    raise FileNotFoundError(f"identity file {path}.priv does not exist")
            elif path is not None and not path.exists():
                raise FileNotFoundError(f"{key} file {path} does not exist")
        return manifest


@dataclass
class PlacementOutcome:
    placement: Placement
    report: SimReport
    audits_clean: bool
    violations: list
    audit_boundaries: int


@dataclass
class RunOutcome:
    baseline: SimReport
    placements: list[PlacementOutcome]
    platform_observed: bytes
    image: ProgramImage

    def all_audits_clean(self) -> bool:
        return all(p.audits_clean for p in self.placements)


def synthesize_image(trace, seed: int, thread_id: int) -> ProgramImage:
    """Random-content image covering every address the trace touches."""
    start, end = trace_address_span(trace)
    rng = ByteSource(seed + 0x1A6E)
    return ProgramImage(
        sections=((start, rng.read(end - start)),),
        entry_point=start,
        thread_id=thread_id,
    )


def load_trace(manifest: RunManifest):
    if manifest.trace_path is not None:
        return read_trace(manifest.trace_path)
    kind = manifest.trace_kind or "mixed"
    return generate_trace(kind, manifest.trace_params, seed=manifest.seed)


def run_pipeline(
    manifest: RunManifest,
    tamper_bit: int | None = None,
    remap_ea: tuple[int, int] | None = None,
    replay_frame: int | None = None,
    break_clearing: bool = False,
    collect_observations: bool = True,
) -> RunOutcome:
    """Execute the whole flow for every requested placement.

    Raises the protocol/codec error if a fault hook (or a hostile input)
    trips a defense; the caller maps that to an exit status.
    """
    trace = load_trace(manifest)
    thread_id = next((ev.thread_id for ev in trace), 1)
    if manifest.image_path is not None:
        image = ProgramImage.from_json(manifest.image_path.read_text())
    else:
        image = synthesize_image(trace, manifest.seed, thread_id)

    if manifest.identity_path is not None:
        priv = manifest.identity_path.with_suffix(".priv").read_bytes()

        def make_processor():
            return identity_from_private_bytes(priv)
    else:
        proc_seed = manifest.identity_seed if manifest.identity_seed is not None else manifest.seed

        def make_processor():
            return provision_processor(proc_seed)

    baseline = simulate(trace, Placement.BASELINE, manifest.lat, manifest.core)
    platform = PlatformProvider(ByteSource(manifest.seed + 1))
    outcomes = []
    session_rng = ByteSource(manifest.seed + 2)

    for placement in manifest.placements:
        proc = make_processor()
        seid, pub = grant_resources(platform, proc)
        ctx = SessionContext.create(seid, pub, rng=session_rng)

        wrapped_session = begin_session(ctx)
        platform.observe(wrapped_session.blob)
        accept_session(proc, wrapped_session, seid)

        se = package(image, ctx)
        frames = stream_send(ctx, se.blocks)
        mem = MemoryImage(owner_thread=thread_id)
        for i, frame in enumerate(frames):
            platform.observe(frame)
            tup = stream_receive(proc, frame)
            load_block(mem, tup, proc)
            if replay_frame is not None and i == replay_frame:
                platform.observe(frame)
                stream_receive(proc, frame)  # raises ReplayError

        wrapped_xts = wrap_xts_key(ctx)
        platform.observe(wrapped_xts.blob)
        load_xts_key(proc, wrapped_xts)

        if collect_observations:
            platform.observe(mem.observable_bytes())
        if tamper_bit is not None:
            _tamper_memory_bit(mem, se, tamper_bit)
        if remap_ea is not None:
            ea_from, ea_to = remap_ea
            mem.remap(ea_from, mem.translate(ea_to))

        state = MachineState(
            FootprintConfig(placement),
            proc,
            mem,
            protected_thread=thread_id,
            fault_skip_clearing=break_clearing,
        )
        transfer_control(state, Privilege.PROBLEM)
        verify_entry(se)
        verify_code_binding(se, thread_id, se.entry_point - se.entry_point % BLOCK_BYTES)
        fetch_code_line(state, se.entry_point, Requester(thread_id, Privilege.PROBLEM))

        violations: list = []
        boundaries = 0

        def on_transition(s, _v=violations):
            nonlocal boundaries
            boundaries += 1
            _v.extend(confidentiality_audit(s))

        run_trace(state, trace, on_transition=on_transition)
        report = simulate(trace, placement, manifest.lat, manifest.core, baseline.cycles)
        outcomes.append(
            PlacementOutcome(
                placement=placement,
                report=report,
                audits_clean=not violations,
                violations=violations,
                audit_boundaries=boundaries,
            )
        )
    return RunOutcome(
        baseline=baseline,
        placements=outcomes,
        platform_observed=platform.observed_bytes(),
        image=image,
    )


def _tamper_memory_bit(mem: MemoryImage, se, bit: int) -> None:
    """Flip one bit of a stored (ciphertext, digest) frame, adversary style."""
    record_bits = (BLOCK_BYTES + 8) * 8
    block = se.blocks[(bit // record_bits) % len(se.blocks)]
    offset = bit % record_bits
    cipher, digest = mem.raw_frame(block.ea)
    buf = bytearray(cipher + digest)
    buf[offset // 8] ^= 1 << (offset % 8)
    mem.store_line(block.ea, bytes(buf[:BLOCK_BYTES]), bytes(buf[BLOCK_BYTES:]))
