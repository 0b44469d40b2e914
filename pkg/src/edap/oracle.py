"""Closed-form cycle counts for the simple trace families on a width-1 core.

Derived by hand-scheduling short traces under the documented pipeline
contract and generalizing; the simulator must match these exactly. Only
register-only families are covered (no memory, no branches), all base
stages at unit latency.

With depth 5 for the plain pipeline, d/e the effective engine latencies:

* baseline, cleartext-regfile, cleartext-L1 (either family): N + 4
* in-unit, independent: N + 4 + d + e (fully pipelined engine: the stream
  keeps its throughput, the pipeline just gets deeper)
* in-unit, chained: (N-1)(d+e+1) + d + e + 5 (no cleartext forwarding, so
  every link pays decrypt + execute + encrypt)
* buffered in-unit, either family: N + 4 + d + e (chained reads hit the
  unit buffer; independent reads all miss but the engine is pipelined)

An empty trace reports the drain constant, depth - 1.
"""

from __future__ import annotations

from .arch import Placement
from .pipeline import CoreConfig, LatencyConfig, pipeline_depth

SUPPORTED_KINDS = ("dep_chain", "independent")


def analytic_cycles(
    kind: str,
    params: dict,
    placement: Placement,
    lat: LatencyConfig | None = None,
    core: CoreConfig | None = None,
) -> int:
    lat = lat or LatencyConfig()
    core = core or CoreConfig()
    if kind not in SUPPORTED_KINDS:
        raise ValueError(f"no closed form for trace kind {kind!r}")
    if core.issue_width != 1:
        raise ValueError("closed forms hold for a width-1 core only")
    n = int(params.get("length", 0))
    d = lat.effective_dec()
    e = lat.effective_enc()
    if n == 0:
        return pipeline_depth(placement, lat) - 1
    if placement in (Placement.BASELINE, Placement.CLEARTEXT_REGFILE, Placement.CLEARTEXT_L1):
        return n + 4
    if placement is Placement.FU_ENCLAVE_BUFFERED:
        return n + 4 + d + e
    if placement is Placement.FU_ENCLAVE:
        if kind == "independent":
            return n + 4 + d + e
        return (n - 1) * (d + e + 1) + d + e + 5
    raise ValueError(f"unknown placement {placement!r}")
