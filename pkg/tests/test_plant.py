from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from adaptmit.plant import (
    ACTIONS,
    WORKLOADS,
    DriftParams,
    EndOfRun,
    Level,
    PlantConfig,
    RepetitionPlant,
    WorkloadDescriptor,
    action_by_label,
    analytic_detection_rate,
    analytic_logical_error,
    drift_base_rate,
    effective_rate,
    lambda_factor,
    majority_decode,
    make_actions,
    sample_memory_cycle,
    stream_rng,
    surrogate_workload_error,
)

NONE, MODERATE, SEVERE = (action_by_label(ACTIONS, lv) for lv in Level)


def binom_tail(d, p):
    # independent oracle: survival function of Binomial(d, p) above floor(d/2)
    return float(binom.sf(d // 2, d, p))


# -- drift ---------------------------------------------------------------------


@pytest.mark.parametrize("t, expected", [(0, 0.01), (50, 0.015), (150, 0.005)])
def test_drift_examples(t, expected):
    params = DriftParams(p_phys0=0.01, alpha=0.5, T_run=200, clip_lo=1e-4, clip_hi=0.5)
    assert drift_base_rate(t, params) == pytest.approx(expected, abs=1e-15)


def test_drift_stochastic_needs_rng_and_adds_noise():
    params = DriftParams(mode="stochastic", noise_sigma=0.1)
    with pytest.raises(ValueError):
        drift_base_rate(3, params)
    a = drift_base_rate(3, params, stream_rng(1, 1, 3))
    b = drift_base_rate(3, params, stream_rng(1, 1, 3))
    c = drift_base_rate(3, DriftParams(), None)
    assert a == b and a != c


def test_drift_rejects_out_of_range_cycle():
    with pytest.raises(ValueError):
        drift_base_rate(200, DriftParams(T_run=200))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(p_phys0=0.0),
        dict(p_phys0=0.6),
        dict(clip_lo=0.2, clip_hi=0.1),
        dict(clip_hi=0.6),
        dict(alpha=-1.0),
        dict(noise_sigma=-0.1),
        dict(mode="chaotic"),
        dict(schedule="peak", peak_start=0.6, peak_center=0.5),
    ],
)
def test_drift_params_invariants(kwargs):
    with pytest.raises(ValueError):
        DriftParams(**kwargs)


@given(
    t=st.integers(0, 199),
    p0=st.floats(1e-4, 0.05),
    alpha=st.floats(0, 3),
    sigma=st.floats(0, 2),
    seed=st.integers(0, 2**31),
    schedule=st.sampled_from(["sinusoid", "peak"]),
    hi=st.sampled_from([0.05, 0.5]),
)
def test_drift_stays_in_clip_range(t, p0, alpha, sigma, seed, schedule, hi):
    params = DriftParams(p_phys0=p0, alpha=alpha, noise_sigma=sigma, mode="stochastic", schedule=schedule, clip_hi=hi)
    p = drift_base_rate(t, params, stream_rng(seed, 1, t))
    assert params.clip_lo <= p <= params.clip_hi


def test_peak_schedule_raises_midrun_rate():
    flat = DriftParams(alpha=0.0)
    peak = DriftParams(alpha=0.0, schedule="peak", peak_height=2.0)
    assert drift_base_rate(100, peak) == pytest.approx(0.03)  # peak_center = 0.5 -> multiplier 1 + 2
    assert drift_base_rate(0, peak) == drift_base_rate(0, flat)
    assert drift_base_rate(80, peak) > drift_base_rate(80, flat)


# -- actions and effective rate --------------------------------------------------


@pytest.mark.parametrize(
    "p_base, scale, expected", [(0.015, 0.3, 0.0045), (0.5, 1.0, 0.5), (2e-5, 0.3, 1e-5)]
)
def test_effective_rate_examples(p_base, scale, expected):
    assert effective_rate(p_base, scale) == pytest.approx(expected, rel=1e-12)


def test_action_library_defaults_and_validation():
    assert [(a.label, a.scale, a.cost) for a in ACTIONS] == [
        (Level.NONE, 1.0, 0.0),
        (Level.MODERATE, 0.7, 0.3),
        (Level.SEVERE, 0.3, 1.0),
    ]
    with pytest.raises(ValueError):
        make_actions({Level.MODERATE: 0.2, Level.SEVERE: 0.3})
    with pytest.raises(ValueError):
        make_actions(costs={Level.MODERATE: 1.0, Level.SEVERE: 0.5})


# -- decoding and sampling ---------------------------------------------------------


@pytest.mark.parametrize("bits, expected", [("00000", (0, 0)), ("11010", (1, 1)), ("00100", (0, 1))])
def test_majority_decode_examples(bits, expected):
    assert majority_decode(bits) == expected


def test_majority_decode_rejects_even_length():
    with pytest.raises(ValueError):
        majority_decode("0110")


def test_noiseless_cycle():
    c = sample_memory_cycle(1, 0.0, 100, 1, stream_rng(0, 3, 0))
    assert c.decode_errors == 0 and c.detection_events == 0
    assert c.histogram == {"1": 100}


@given(d=st.sampled_from([1, 3, 5]), p=st.floats(0, 0.5), shots=st.integers(1, 300), seed=st.integers(0, 2**31))
def test_cycle_counts_invariants(d, p, shots, seed):
    c = sample_memory_cycle(d, p, shots, seed % 2, stream_rng(seed, 3, 0))
    assert 0 <= c.decode_errors <= shots and 0 <= c.detection_events <= shots
    assert sum(c.histogram.values()) == shots
    assert all(len(k) == d for k in c.histogram)


def test_mc_error_and_detection_rates():
    shots = 10**6
    c5 = sample_memory_cycle(5, 0.1, shots, 0, stream_rng(11, 3, 0))
    assert abs(c5.decode_errors / shots - 0.00856) <= 3 * math.sqrt(0.00856 / shots)
    c3 = sample_memory_cycle(3, 0.1, shots, 1, stream_rng(12, 3, 0))
    assert abs(c3.detection_events / shots - 0.27) <= 4 * math.sqrt(0.27 * 0.73 / shots)


def test_mc_within_four_se_in_most_trials():
    shots, trials, hits = 10**5, 40, 0
    eps = analytic_logical_error(3, 0.05)
    for k in range(trials):
        c = sample_memory_cycle(3, 0.05, shots, k % 2, stream_rng(k, 3, 99))
        hits += abs(c.decode_errors / shots - eps) <= 4 * math.sqrt(eps * (1 - eps) / shots)
    assert hits / trials >= 0.99 - 1e-12


# -- analytic oracles ------------------------------------------------------------


@pytest.mark.parametrize("d, p, expected", [(1, 0.1, 0.1), (3, 0.1, 0.028), (5, 0.1, 0.00856)])
def test_logical_error_examples(d, p, expected):
    assert analytic_logical_error(d, p) == pytest.approx(expected, rel=1e-12)
    assert analytic_logical_error(d, p) == pytest.approx(binom_tail(d, p), rel=1e-12)


@pytest.mark.parametrize("d, p, expected", [(1, 0.3, 0.0), (3, 0.1, 0.27), (5, 0.1, 0.40950)])
def test_detection_rate_examples(d, p, expected):
    assert analytic_detection_rate(d, p) == pytest.approx(expected, abs=1e-12)


@given(d=st.sampled_from([3, 5, 7]), p=st.floats(1e-6, 0.4999))
def test_code_suppresses_below_threshold(d, p):
    assert analytic_logical_error(d, p) < p
    assert analytic_logical_error(d, 0.5) == pytest.approx(0.5)


@given(d=st.sampled_from([1, 3, 5]), p=st.floats(0, 0.5), dp=st.floats(1e-6, 0.1))
def test_logical_error_monotone(d, p, dp):
    q = min(p + dp, 0.5)
    assert analytic_logical_error(d, q) >= analytic_logical_error(d, p)


@given(p=st.floats(1e-4, 0.4999))
def test_lambda_above_one(p):
    assert lambda_factor(analytic_logical_error(3, p), analytic_logical_error(5, p)) > 1


def test_lambda_examples():
    assert lambda_factor(0.028, 0.00856) == pytest.approx(3.2710280, rel=1e-7)
    assert lambda_factor(0.3, 0.3) == 1.0
    with pytest.raises(ZeroDivisionError):
        lambda_factor(0.028, 0.0)


@pytest.mark.parametrize("G, p, expected", [(100, 0.0, 0.0), (100, 0.001, 0.09521), (1, 0.3, 0.3)])
def test_surrogate_examples(G, p, expected):
    w = WorkloadDescriptor("w", 2, 1, G)
    assert surrogate_workload_error(w, p) == pytest.approx(expected, abs=5e-6)


@given(g=st.integers(1, 500), dg=st.integers(0, 50), p=st.floats(0, 0.5), dp=st.floats(0, 0.1))
def test_surrogate_monotone(g, dg, p, dp):
    a = surrogate_workload_error(WorkloadDescriptor("a", 1, 1, g), p)
    b = surrogate_workload_error(WorkloadDescriptor("b", 1, 1, g + dg), min(p + dp, 0.5))
    assert 0 <= a <= b <= 1


def test_workload_invariants():
    with pytest.raises(ValueError):
        WorkloadDescriptor("bad", 1, 10, 5)
    with pytest.raises(ValueError):
        WorkloadDescriptor("bad", 1, 1, 5, t_count=6)
    with pytest.raises(ValueError):
        WorkloadDescriptor("bad", 1, 1, 5, family="Other")


def test_catalog_nominal_fidelity():
    for w in WORKLOADS.values():
        if w.name != "memory":
            assert 0.7 < 1 - surrogate_workload_error(w, 0.01) < 0.8


# -- reset / step --------------------------------------------------------------------


def test_reset_and_determinism():
    plant = RepetitionPlant(PlantConfig(kind="memory", shots=200))
    st0 = plant.reset(7, DriftParams(), 5)
    assert st0.cycle == 0 and st0.code_distance == 5
    a = [plant.step(a)[1] for a in (NONE, SEVERE, MODERATE, NONE)]
    plant.reset(7)
    b = [plant.step(a)[1] for a in (NONE, SEVERE, MODERATE, NONE)]
    assert [r.to_json_dict() for r in a] == [r.to_json_dict() for r in b]


def test_reset_rejects_bad_distance():
    with pytest.raises(ValueError):
        RepetitionPlant().reset(7, d=4)


def test_none_action_leaves_rate_untouched():
    plant = RepetitionPlant(PlantConfig(shots=50))
    plant.reset(3)
    _, rec = plant.step(NONE)
    assert rec.p_eff == rec.p_phys
    assert rec.fidelity == 1 - rec.eps_logical


def test_severe_scales_rate_on_shared_seed():
    cfg = PlantConfig(drift=DriftParams(mode="stochastic", noise_sigma=0.2), shots=50)
    p1, p2 = RepetitionPlant(cfg), RepetitionPlant(cfg)
    p1.reset(5)
    p2.reset(5)
    for _ in range(20):
        _, rn = p1.step(NONE)
        _, rs = p2.step(SEVERE)
        assert rn.p_phys == rs.p_phys
        assert rs.p_eff == pytest.approx(max(0.3 * rn.p_eff, 1e-5), rel=1e-12)


def test_end_of_run():
    plant = RepetitionPlant(PlantConfig(drift=DriftParams(T_run=3), shots=10))
    plant.reset(0)
    for _ in range(3):
        plant.step(NONE)
    with pytest.raises(EndOfRun):
        plant.step(NONE)


def test_step_accepts_label_and_emits_consistent_features():
    plant = RepetitionPlant(PlantConfig(shots=100), WORKLOADS["qft"])
    plant.reset(1)
    _, rec = plant.step("MODERATE")
    assert rec.action_level == "MODERATE" and rec.workload_name == "qft"
    f = rec.features
    assert f[3] == rec.p_eff and f[4] == rec.eps_logical and f[5] == rec.fidelity
    assert f[4] + f[5] == 1.0
    assert rec.eps_logical == surrogate_workload_error(WORKLOADS["qft"], rec.p_eff)


def test_memory_plant_reports_shot_estimate():
    plant = RepetitionPlant(PlantConfig(kind="memory", shots=20000, code_distance=3, drift=DriftParams(p_phys0=0.1, alpha=0.0)))
    plant.reset(2)
    _, rec = plant.step(NONE)
    assert rec.eps_logical == pytest.approx(0.028, abs=4 * math.sqrt(0.028 / 20000))
    assert rec.detection_rate == pytest.approx(0.27, abs=4 * math.sqrt(0.27 / 20000))


@given(seed=st.integers(0, 2**31), acts=st.lists(st.sampled_from(list(Level)), min_size=1, max_size=15))
def test_paired_trajectories_bitwise(seed, acts):
    cfg = PlantConfig(drift=DriftParams(mode="stochastic", noise_sigma=0.1, T_run=20), shots=20)
    runs = []
    for _ in range(2):
        plant = RepetitionPlant(cfg)
        plant.reset(seed)
        runs.append([plant.step(a)[1].to_json_dict() for a in acts])
    assert runs[0] == runs[1]
