"""Deterministic recipes for the golden format fixtures.

Any change to the secure-executable layout, the trace grammar, the codec, or
the seeded generators shows up as a byte diff against the committed files.
"""

from edap.executable import ProgramImage, package
from edap.protocol import SessionContext, provision_processor
from edap.rng import ByteSource
from edap.traces import dumps, generate_trace

GOLDEN_SEID = 0x6010
GOLDEN_THREAD = 2


def build_golden_trace_text() -> str:
    trace = generate_trace(
        "mixed",
        {"length": 400, "priv_switch_period": 128, "l1_hit_rate": 0.9},
        seed=2026,
    )
    return dumps(trace)


def build_golden_executable_bytes() -> bytes:
    proc = provision_processor(2027)
    ctx = SessionContext.create(GOLDEN_SEID, proc.pub, rng=ByteSource(2028))
    image = ProgramImage(
        sections=(
            (0x2000, ByteSource(2029).read(128 * 6)),
            (0x4000, ByteSource(2030).read(128 * 2)),
        ),
        entry_point=0x2080,
        thread_id=GOLDEN_THREAD,
    )
    return package(image, ctx).to_bytes()
