from pathlib import Path

import pytest

from edap.executable import SecureExecutable
from edap.traces import dumps, loads
from edap.errors import TraceFormatError

from golden_recipe import (
    GOLDEN_THREAD,
    build_golden_executable_bytes,
    build_golden_trace_text,
)

DATA = Path(__file__).parent / "data"


def test_golden_executable_regenerates_bit_exactly():
    first = build_golden_executable_bytes()
    second = build_golden_executable_bytes()
    assert first == second
    assert first == (DATA / "golden_program.edap").read_bytes()


def test_golden_executable_parses_and_reserializes():
    raw = (DATA / "golden_program.edap").read_bytes()
    se = SecureExecutable.from_bytes(raw, thread_id=GOLDEN_THREAD)
    assert se.to_bytes() == raw
    assert se.seid == 0x6010
    assert len(se.blocks) == 8


def test_golden_trace_regenerates_bit_exactly():
    first = build_golden_trace_text()
    second = build_golden_trace_text()
    assert first == second
    assert first == (DATA / "golden_trace.txt").read_text()


def test_golden_trace_parses_and_redumps():
    text = (DATA / "golden_trace.txt").read_text()
    events = loads(text)
    assert dumps(events) == text
    assert len([e for e in events if not e.kind.startswith("priv")]) == 400


def test_trace_parse_errors_carry_line_numbers():
    with pytest.raises(TraceFormatError) as exc:
        loads("0 load 1 - 0x40 1 -\nnot a line\n")
    assert "line 2" in str(exc.value)
    with pytest.raises(TraceFormatError) as exc:
        loads("0 warble - - - 1 -\n")
    assert "line 1" in str(exc.value)
    with pytest.raises(TraceFormatError) as exc:
        loads("zz load 1 - 0x40 1 -\n")
    assert "line 1" in str(exc.value)
