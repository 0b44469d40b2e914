import pytest

from edap.arch import Placement
from edap.errors import PlacementOrderingError
from edap.oracle import analytic_cycles
from edap.pipeline import (
    CoreConfig,
    LatencyConfig,
    SimReport,
    compare_placements,
    measure_l1_hit_rate,
    pipeline_depth,
    simulate,
    sweep_latency,
)
from edap.traces import TraceEvent, generate_trace

from reference_pipeline import reference_cycles

ALL_PLACEMENTS = [
    Placement.BASELINE,
    Placement.FU_ENCLAVE,
    Placement.FU_ENCLAVE_BUFFERED,
    Placement.CLEARTEXT_REGFILE,
    Placement.CLEARTEXT_L1,
]
W1 = CoreConfig(issue_width=1)


# ---------------------------------------------------------------------------
# oracle equivalence (spot checks; the full grid runs in acceptance)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["dep_chain", "independent"])
@pytest.mark.parametrize("placement", ALL_PLACEMENTS)
@pytest.mark.parametrize("n", [*range(1, 11), 100, 1000])
def test_simulate_matches_analytic(kind, placement, n):
    trace = generate_trace(kind, {"length": n})
    lat = LatencyConfig()
    got = simulate(trace, placement, lat, W1).cycles
    want = analytic_cycles(kind, {"length": n}, placement, lat, W1)
    assert got == want, f"{kind}/{placement.value}/N={n}: {got} != {want}"


@pytest.mark.parametrize("scale", [0.5, 1.0, 2.0])
def test_simulate_matches_analytic_under_scaling(scale):
    lat = LatencyConfig().scaled(scale)
    for kind in ("dep_chain", "independent"):
        trace = generate_trace(kind, {"length": 10})
        for placement in ALL_PLACEMENTS:
            got = simulate(trace, placement, lat, W1).cycles
            want = analytic_cycles(kind, {"length": 10}, placement, lat, W1)
            assert got == want


def test_zero_latency_equals_baseline_formula():
    lat = LatencyConfig(dec_cycles=0, enc_cycles=0)
    for kind in ("dep_chain", "independent"):
        trace = generate_trace(kind, {"length": 50})
        for placement in ALL_PLACEMENTS:
            assert simulate(trace, placement, lat, W1).cycles == 50 + 4


def test_scale_zero_equals_baseline_cycles():
    trace = generate_trace("dep_chain", {"length": 40})
    lat = LatencyConfig().scaled(0.0)
    base = simulate(trace, Placement.BASELINE, lat, W1).cycles
    for placement in ALL_PLACEMENTS[1:]:
        assert simulate(trace, placement, lat, W1).cycles == base


def test_empty_trace_reports_drain_constant():
    lat = LatencyConfig()
    for placement in ALL_PLACEMENTS:
        report = simulate([], placement, lat, W1)
        assert report.cycles == pipeline_depth(placement, lat) - 1
        assert report.ipc == 0.0


# ---------------------------------------------------------------------------
# cross-check against the cycle-stepped reference
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("placement", ALL_PLACEMENTS)
@pytest.mark.parametrize("width", [1, 2, 4])
def test_reference_agrees_on_mixed_traces(placement, width):
    core = CoreConfig(issue_width=width)
    trace = generate_trace(
        "mixed",
        {"length": 160, "priv_switch_period": 60, "l1_hit_rate": 0.8},
        seed=width,
    )
    lat = LatencyConfig(dec_cycles=7, enc_cycles=5)
    assert simulate(trace, placement, lat, core).cycles == reference_cycles(
        trace, placement, lat, core
    )


@pytest.mark.parametrize("placement", ALL_PLACEMENTS)
def test_reference_agrees_on_families(placement):
    lat = LatencyConfig(dec_cycles=4, enc_cycles=3)
    for kind in ("dep_chain", "independent"):
        trace = generate_trace(kind, {"length": 24})
        assert simulate(trace, placement, lat, W1).cycles == reference_cycles(
            trace, placement, lat, W1
        )


@pytest.mark.parametrize("placement", ALL_PLACEMENTS)
def test_reference_agrees_on_mem_bound(placement):
    core = CoreConfig(issue_width=2)
    lat = LatencyConfig(dec_cycles=6, enc_cycles=6)
    trace = generate_trace("mem_bound", {"length": 120, "l1_hit_rate": 0.7}, seed=9)
    assert simulate(trace, placement, lat, core).cycles == reference_cycles(
        trace, placement, lat, core
    )


def test_reference_agrees_with_unpipelined_engine():
    lat = LatencyConfig(dec_cycles=5, enc_cycles=5, engine_pipelined=False)
    core = CoreConfig(issue_width=4)
    trace = generate_trace("independent", {"length": 40})
    for placement in (Placement.FU_ENCLAVE, Placement.FU_ENCLAVE_BUFFERED):
        assert simulate(trace, placement, lat, core).cycles == reference_cycles(
            trace, placement, lat, core
        )


def test_unpipelined_engine_is_slower_on_independent_stream():
    core = CoreConfig(issue_width=4)
    trace = generate_trace("independent", {"length": 200})
    piped = simulate(trace, Placement.FU_ENCLAVE, LatencyConfig(), core).cycles
    serialized = simulate(
        trace, Placement.FU_ENCLAVE, LatencyConfig(engine_pipelined=False), core
    ).cycles
    assert serialized > piped * 5  # throughput collapses to one per dec period


# ---------------------------------------------------------------------------
# generator contracts
# ---------------------------------------------------------------------------


def test_dep_chain_reads_previous_dst():
    trace = generate_trace("dep_chain", {"length": 64})
    for prev, ev in zip(trace, trace[1:]):
        assert ev.srcs == (prev.dst,)


def test_independent_never_shares_registers_in_window():
    trace = generate_trace("independent", {"length": 128})
    window = 8
    for i, ev in enumerate(trace):
        regs = {ev.dst, *ev.srcs}
        for other in trace[max(0, i - window) : i]:
            assert other.dst not in regs


def test_mem_bound_hit_rate_within_tolerance():
    for target in (0.85, 0.9, 0.95):
        trace = generate_trace("mem_bound", {"length": 100_000, "l1_hit_rate": target}, seed=3)
        measured = measure_l1_hit_rate(trace)
        assert abs(measured - target) <= 0.01, f"target {target}, measured {measured:.4f}"


def test_mixed_hit_rate_and_composition():
    params = {"length": 100_000, "l1_hit_rate": 0.9, "priv_switch_period": 10_000}
    trace = generate_trace("mixed", params, seed=5)
    measured = measure_l1_hit_rate(trace)
    assert abs(measured - 0.9) <= 0.01
    kinds = {}
    for ev in trace:
        kinds[ev.kind] = kinds.get(ev.kind, 0) + 1
    assert kinds["priv_enter"] == kinds["priv_exit"] >= 9
    instructions = sum(v for k, v in kinds.items() if not k.startswith("priv"))
    assert instructions == 100_000
    assert 0.18 <= kinds["load"] / instructions <= 0.32


def test_generator_determinism_and_param_validation():
    a = generate_trace("mixed", {"length": 2000}, seed=11)
    b = generate_trace("mixed", {"length": 2000}, seed=11)
    assert a == b
    with pytest.raises(ValueError):
        generate_trace("mixed", {"length": 100, "load_fraction": 0.9, "store_fraction": 0.3})
    with pytest.raises(ValueError):
        generate_trace("bogus", {"length": 10})
    with pytest.raises(ValueError):
        generate_trace("mem_bound", {"length": 10, "l1_hit_rate": 1.5})


# ---------------------------------------------------------------------------
# placement properties
# ---------------------------------------------------------------------------


def test_zero_memory_trace_cleartext_placements_equal_baseline():
    trace = generate_trace("mixed", {"length": 5000, "load_fraction": 0.0,
                                     "store_fraction": 0.0, "priv_switch_period": 0}, seed=1)
    core = CoreConfig()
    base = simulate(trace, Placement.BASELINE, LatencyConfig(), core).cycles
    assert simulate(trace, Placement.CLEARTEXT_L1, LatencyConfig(), core).cycles == base
    assert simulate(trace, Placement.CLEARTEXT_REGFILE, LatencyConfig(), core).cycles == base


def test_full_l1_hit_trace_cleartext_l1_equals_baseline():
    # stores write-allocate cleartext into L1 without touching the engine,
    # so loads confined to store-primed lines hit on every access
    import random

    rng = random.Random(2)
    lines = [0x40000 + 128 * i for i in range(64)]
    trace = [
        TraceEvent(i, "store", (48,), None, ea, 1) for i, ea in enumerate(lines)
    ]
    seq = len(trace)
    for i in range(5000):
        if rng.random() < 0.4:
            ea = rng.choice(lines) + 8 * rng.randrange(16)
            trace.append(TraceEvent(seq, "load", (48,), 64 + (i % 64), ea, 1))
        else:
            trace.append(TraceEvent(seq, "non_mem", (49,), i % 32, None, 1))
        seq += 1
    core = CoreConfig()
    base = simulate(trace, Placement.BASELINE, LatencyConfig(), core).cycles
    assert simulate(trace, Placement.CLEARTEXT_L1, LatencyConfig(), core).cycles == base


def test_store_encryption_off_the_critical_path():
    trace = generate_trace("mixed", {"length": 20_000}, seed=4)
    core = CoreConfig()
    cycles = [
        simulate(trace, Placement.CLEARTEXT_L1, LatencyConfig(enc_cycles=enc), core).cycles
        for enc in (0, 20, 500)
    ]
    assert cycles[0] == cycles[1] == cycles[2]


def test_latency_additivity_on_pointer_chase():
    trace = generate_trace("mem_bound", {"length": 300, "chase": True}, seed=6)
    core = CoreConfig(issue_width=1)
    with_dec = simulate(trace, Placement.CLEARTEXT_L1, LatencyConfig(dec_cycles=20), core).cycles
    without = simulate(trace, Placement.CLEARTEXT_L1, LatencyConfig(dec_cycles=0), core).cycles
    assert with_dec - without == 20 * 300  # every chased load misses


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_placement_ordering_on_mixed_traces(seed):
    trace = generate_trace("mixed", {"length": 20_000, "priv_switch_period": 4000}, seed=seed)
    reports = compare_placements(trace, strict=True)
    assert [r.placement for r in reports] == [
        "baseline", "cleartext_l1", "cleartext_regfile", "fu_enclave_buffered", "fu_enclave",
    ]
    norms = [r.ipc_normalized_to_baseline for r in reports]
    assert norms[0] == 1.0
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_compare_placements_strict_raises_on_inversion(monkeypatch):
    import edap.pipeline as pipeline_mod

    trace = generate_trace("dep_chain", {"length": 100})
    real_simulate = pipeline_mod.simulate

    def skewed(trace_, placement, *args, **kwargs):
        report = real_simulate(trace_, placement, *args, **kwargs)
        if report.placement == "fu_enclave":
            report.cycles = 1  # impossibly fast: breaks the expected ordering
        return report

    monkeypatch.setattr(pipeline_mod, "simulate", skewed)
    with pytest.raises(PlacementOrderingError):
        pipeline_mod.compare_placements(trace, strict=True)


# ---------------------------------------------------------------------------
# latency sweeps
# ---------------------------------------------------------------------------


def test_sweep_monotone_and_linear_on_dep_chain():
    trace = generate_trace("dep_chain", {"length": 1000})
    reports = sweep_latency(trace, Placement.FU_ENCLAVE, W1, scales=(0.5, 1.0, 2.0))
    cycles = [r.cycles for r in reports]
    assert cycles == sorted(cycles)
    slowdown = [1.0 / r.ipc_normalized_to_baseline - 1.0 for r in reports]
    assert 0.4 <= slowdown[0] / slowdown[1] <= 0.6
    assert 1.8 <= slowdown[2] / slowdown[1] <= 2.2


def test_sweep_scale_zero_is_baseline():
    trace = generate_trace("dep_chain", {"length": 500})
    (report,) = sweep_latency(trace, Placement.FU_ENCLAVE, W1, scales=(0.0,))
    assert report.ipc_normalized_to_baseline == 1.0


def test_sweep_monotone_on_mixed():
    trace = generate_trace("mixed", {"length": 5000}, seed=8)
    for placement in ALL_PLACEMENTS[1:]:
        reports = sweep_latency(trace, placement, CoreConfig(), scales=(0.5, 1.0, 2.0))
        cycles = [r.cycles for r in reports]
        assert cycles == sorted(cycles)


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------


def test_simulate_deterministic_and_report_round_trips():
    trace = generate_trace("mixed", {"length": 3000}, seed=7)
    a = simulate(trace, Placement.CLEARTEXT_L1)
    b = simulate(trace, Placement.CLEARTEXT_L1)
    assert a.to_json() == b.to_json()
    back = SimReport.from_json(a.to_json())
    assert back.cycles == a.cycles and back.stalls == a.stalls


def test_stall_breakdown_reflects_placement():
    chain = generate_trace("dep_chain", {"length": 500})
    fu = simulate(chain, Placement.FU_ENCLAVE, LatencyConfig(), W1)
    assert fu.stalls["enc_stalls"] > 0
    priv = generate_trace("mixed", {"length": 2000, "priv_switch_period": 500}, seed=9)
    l1 = simulate(priv, Placement.CLEARTEXT_L1)
    assert l1.stalls["clearing_stalls"] > 0
    base = simulate(priv, Placement.BASELINE)
    assert base.stalls["enc_stalls"] == base.stalls["dec_stalls"] == 0


def test_trace_analytic_rejects_unsupported():
    with pytest.raises(ValueError):
        analytic_cycles("mixed", {"length": 10}, Placement.BASELINE)
    with pytest.raises(ValueError):
        analytic_cycles("dep_chain", {"length": 10}, Placement.BASELINE, core=CoreConfig())
