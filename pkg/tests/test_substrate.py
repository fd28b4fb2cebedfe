"""Tests for the simulated analog substrate.

The single-pulse oracle used below is the closed-form membrane response of
the leaky integrator to one synaptic event at t=0 with weight w:

    i(t) = w * exp(-t / tau_syn)
    v(t) = w * (tau_syn * tau_mem / (tau_mem - tau_syn))
             * (exp(-t / tau_mem) - exp(-t / tau_syn))

With tau_mem=20ms, tau_syn=10ms the peak of v/w is ~0.005 at t~13.9ms, so
w=250 drives v past threshold 1.0 exactly once in a 30ms window (the
residual synaptic charge after the reset peaks around 0.65) while w=150
peaks at ~0.75 and never fires. Both weights clear their side of the
threshold by a >20% margin, so the assertions hold at either integration
step size.
"""

import math

import numpy as np
import pytest

from conftest import uniform_substrate
from neurodream.encoding import SpikeTrain, encode_state, rates_to_trains
from neurodream.pong import GameState, PongPhysics
from neurodream.substrate import (
    CORE_SIZE,
    MAX_FAN_IN,
    STATE_FAN_IN,
    CalibrationConfig,
    CalibrationError,
    Connectivity,
    NeuronParams,
    Substrate,
    SubstrateConfig,
    build_substrate,
    calibrate_efficacy,
    dump_substrate,
    integration_factor,
    make_probe_windows,
    measure_integration_factor,
    read_substrate_dump,
    reference_run_window,
    run_window,
)


def one_neuron(efficacy, *, dt_us=100.0, reset_each_window=False):
    cfg = SubstrateConfig(
        n_neurons=1,
        n_state_generators=8,
        mismatch_cv=0.0,
        sim_dt_us=dt_us,
        reset_each_window=reset_each_window,
        base_params=NeuronParams(core_efficacy=efficacy),
    )
    conn = Connectivity(
        pre=np.array([0], dtype=np.int64),
        post=np.array([0], dtype=np.int64),
        parallel=np.array([1], dtype=np.int64),
    )
    ones = np.ones(1)
    return Substrate(cfg, conn, ones, ones, ones)


def pulse(t_us):
    return [SpikeTrain(generator_id=0, timestamps_us=np.array([float(t_us)]))]


def analytic_v(w, t_s, tau_mem=0.020, tau_syn=0.010):
    k = tau_syn * tau_mem / (tau_mem - tau_syn)
    return w * k * (math.exp(-t_s / tau_mem) - math.exp(-t_s / tau_syn))


class TestSinglePulseOracle:
    def test_peak_of_analytic_kernel(self):
        # peak at t* = ln(tau_mem/tau_syn) * tau_syn*tau_mem/(tau_mem-tau_syn)
        t_star = math.log(2.0) * 0.020
        peak = analytic_v(1.0, t_star)
        assert 0.00499 < peak < 0.00501

    @pytest.mark.parametrize("dt_us", [100.0, 10.0])
    def test_w250_fires_exactly_once(self, dt_us):
        sub = one_neuron(250.0, dt_us=dt_us)
        counts = run_window(sub, pulse(0.0), 30_000)
        assert counts[0] == 1

    @pytest.mark.parametrize("dt_us", [100.0, 10.0])
    def test_w150_never_fires(self, dt_us):
        sub = one_neuron(150.0, dt_us=dt_us)
        counts = run_window(sub, pulse(0.0), 30_000)
        assert counts[0] == 0

    @pytest.mark.parametrize("w", [150.0, 250.0])
    def test_subthreshold_trace_matches_closed_form(self, w):
        # before any threshold crossing the discrete trace must track the
        # closed form to first order in dt
        sub = one_neuron(w, dt_us=10.0)
        run_window(sub, pulse(0.0), 5_000)
        expected = analytic_v(w, 0.005)
        assert expected < 0.9  # still subthreshold for both weights
        assert abs(float(sub.v[0]) - expected) < 0.005 * expected


class TestRefractory:
    def test_dead_time_is_exact_at_both_granularities(self):
        # hammer one neuron with a huge event every dt so it would fire
        # continuously if not for the refractory clock; the step on which
        # the clock reaches zero integrates again, so the firing period is
        # exactly the refractory time at any dt
        for dt_us in (100.0, 10.0):
            sub = one_neuron(1e6, dt_us=dt_us)
            times = np.arange(0.0, 10_000.0, dt_us)
            counts = run_window(sub, [SpikeTrain(generator_id=0, timestamps_us=times)], 10_000)
            assert counts[0] == 10_000 // 1000

    def test_spike_count_equal_across_dt_for_strong_drive(self):
        counts = {}
        for dt_us in (100.0, 10.0):
            sub = one_neuron(1e6, dt_us=dt_us)
            times = np.arange(0.0, 50_000.0, 500.0)
            counts[dt_us] = run_window(
                sub, [SpikeTrain(generator_id=0, timestamps_us=times)], 50_000
            )[0]
        # events every 500us, dead time 1000us: the rate is set by the
        # refractory clock, not by dt
        assert counts[100.0] == counts[10.0] == 50


class TestStatePersistence:
    def test_state_carries_across_windows(self):
        # Pulse 1 ms before the window ends.  The synaptic current must
        # outlive the window boundary: an event-free second window should
        # keep charging the membrane along the closed-form trajectory
        # (peak sits ~14 ms after the pulse, deep inside window two).
        sub = one_neuron(150.0)
        run_window(sub, pulse(9_000.0), 10_000)
        v_after_first = float(sub.v[0])
        i_after_first = float(sub.i_syn[0])
        assert v_after_first > 0.0
        run_window(sub, [], 10_000)
        assert float(sub.v[0]) > v_after_first
        assert 0.0 < float(sub.i_syn[0]) < i_after_first
        expected = analytic_v(150.0, 0.011)  # 11 ms after the pulse
        assert float(sub.v[0]) == pytest.approx(expected, rel=0.05)

    def test_reset_each_window_clears_state(self):
        sub = one_neuron(150.0, reset_each_window=True)
        run_window(sub, pulse(9_000.0), 10_000)
        run_window(sub, [], 10_000)
        assert float(sub.v[0]) == 0.0
        assert float(sub.i_syn[0]) == 0.0

    def test_two_windows_equal_one_long_window_when_persistent(self):
        sub_a = one_neuron(250.0)
        c1 = run_window(sub_a, pulse(0.0), 10_000)
        c2 = run_window(sub_a, [], 20_000)
        sub_b = one_neuron(250.0)
        c_long = run_window(sub_b, pulse(0.0), 30_000)
        assert c1[0] + c2[0] == c_long[0] == 1


class TestBuildTopology:
    def test_state_fan_in_exactly_eight(self, enc_cfg):
        cfg = SubstrateConfig(n_neurons=510)
        sub = build_substrate(cfg, 7)
        per_post = np.bincount(sub.connectivity.post, minlength=510)
        assert np.all(per_post == STATE_FAN_IN)
        for j in range(510):
            pres = sub.connectivity.pre[sub.connectivity.post == j]
            assert len(set(pres.tolist())) == STATE_FAN_IN  # no duplicates
            assert np.all(pres < enc_cfg.n_state_generators)

    def test_model_variant_adds_all_action_generators(self):
        cfg = SubstrateConfig(variant="model", n_neurons=510)
        sub = build_substrate(cfg, 7)
        per_post = np.bincount(sub.connectivity.post, minlength=510)
        assert np.all(per_post == STATE_FAN_IN + 3)
        action_ids = {40, 41, 42}
        for j in range(0, 510, 97):
            pres = set(sub.connectivity.pre[sub.connectivity.post == j].tolist())
            assert action_ids <= pres

    def test_parallel_counts_span_range(self):
        sub = build_substrate(SubstrateConfig(n_neurons=256), 3)
        par = sub.connectivity.parallel
        assert par.min() >= 1 and par.max() <= 4
        # all four multiplicities should occur in a sample this large
        assert set(np.unique(par).tolist()) == {1, 2, 3, 4}

    def test_fan_in_cap_enforced(self):
        m = MAX_FAN_IN + 1
        cfg = SubstrateConfig(n_neurons=1, n_state_generators=m, mismatch_cv=0.0)
        conn = Connectivity(
            pre=np.arange(m, dtype=np.int64),
            post=np.zeros(m, dtype=np.int64),
            parallel=np.ones(m, dtype=np.int64),
        )
        with pytest.raises(ValueError):
            Substrate(cfg, conn, np.ones(1), np.ones(1), np.ones(1))

    def test_core_assignment_and_per_core_efficacy(self):
        sub = build_substrate(SubstrateConfig(n_neurons=510, mismatch_cv=0.0), 0)
        assert sub.n_cores == 2
        assert np.all(sub.core_index[:CORE_SIZE] == 0)
        assert np.all(sub.core_index[CORE_SIZE:] == 1)
        sub.set_core_efficacy(np.array([2.0, 3.0]))
        w = sub.edge_weights()
        post_core = sub.core_index[sub._edge_post]
        assert np.allclose(w, sub._edge_parallel * np.where(post_core == 0, 2.0, 3.0))

    def test_rejects_wrong_core_efficacy_shape(self):
        sub = build_substrate(SubstrateConfig(n_neurons=510), 0)
        with pytest.raises(ValueError):
            sub.set_core_efficacy(np.array([1.0, 2.0, 3.0]))

    def test_build_deterministic_given_seed(self):
        cfg = SubstrateConfig(variant="model", n_neurons=510)
        a = build_substrate(cfg, 11)
        b = build_substrate(cfg, 11)
        assert np.array_equal(a.connectivity.pre, b.connectivity.pre)
        assert np.array_equal(a.connectivity.parallel, b.connectivity.parallel)
        assert np.array_equal(a.tau_mem_factors, b.tau_mem_factors)


class TestMismatch:
    def test_cv_zero_gives_identical_neurons(self):
        sub = build_substrate(SubstrateConfig(n_neurons=128, mismatch_cv=0.0), 0)
        assert np.all(sub.tau_mem_factors == 1.0)
        assert np.all(sub.v_thresh_factors == 1.0)

    def test_lognormal_factors_match_target_moments(self):
        samples = []
        for seed in range(40):
            sub = build_substrate(SubstrateConfig(n_neurons=510), seed)
            samples += [sub.tau_mem_factors, sub.tau_syn_factors, sub.v_thresh_factors]
        stacked = np.concatenate(samples)
        assert np.all(stacked > 0.0)
        assert abs(stacked.mean() - 1.0) < 0.01
        assert abs(stacked.std() / stacked.mean() - 0.2) < 0.01

    def test_threshold_spread_creates_count_spread(self, enc_cfg):
        # identical wiring and drive; only v_thresh varies across neurons
        n = 16
        cfg = SubstrateConfig(
            n_neurons=n,
            n_state_generators=8,
            mismatch_cv=0.0,
            base_params=NeuronParams(core_efficacy=40.0),
        )
        pre = np.tile(np.arange(8, dtype=np.int64), n)
        post = np.repeat(np.arange(n, dtype=np.int64), 8)
        par = np.ones(n * 8, dtype=np.int64)
        thresh = np.linspace(0.7, 1.3, n)
        sub = Substrate(cfg, Connectivity(pre, post, par), np.ones(n), np.ones(n), thresh)
        rng = np.random.default_rng(0)
        rates = np.full(8, 3.0)
        total = np.zeros(n)
        for _ in range(10):
            total += run_window(sub, rates_to_trains(rates, enc_cfg, rng), enc_cfg.window_us)
        # lower threshold must never fire less than a higher one under
        # identical drive, and the extremes must actually differ
        assert total[0] > total[-1]
        assert np.all(np.diff(total) <= 0)


class TestCoarseFineAgreement:
    def test_random_drive_within_one_spike(self, enc_cfg):
        # randomized 100-window suite with persistent state on both tracks;
        # coarse (100us) and fine reference (10us) must agree to within one
        # spike per neuron per window
        cfg = SubstrateConfig(n_neurons=64)
        sub = build_substrate(cfg, 21)
        calibrate_efficacy(sub, enc_cfg, PongPhysics(), np.random.default_rng(6))
        rng = np.random.default_rng(99)
        state_rng = np.random.default_rng(17)
        worst = 0
        for _ in range(100):
            st = GameState(*state_rng.uniform(0.0, 1.0, size=4))
            trains = rates_to_trains(encode_state(st, enc_cfg), enc_cfg, rng)
            coarse = run_window(sub, trains, enc_cfg.window_us)
            fine = reference_run_window(sub, trains, enc_cfg.window_us, fine_dt_us=10.0)
            worst = max(worst, int(np.abs(coarse - fine).max()))
        assert worst <= 1

    def test_reference_requires_finer_dt(self):
        sub = one_neuron(1.0)
        with pytest.raises(ValueError):
            reference_run_window(sub, [], 10_000, fine_dt_us=100.0)


class TestIntegrationFactor:
    def test_arithmetic(self):
        assert integration_factor(np.array([400, 64]), 800) == pytest.approx(0.58)
        assert integration_factor(np.zeros(4), 800) == 0.0

    def test_zero_input_rejected(self):
        with pytest.raises(ValueError):
            integration_factor(np.array([10]), 0)

    def test_monotone_in_core_efficacy(self, enc_cfg):
        sub = build_substrate(SubstrateConfig(n_neurons=128), 2)
        windows, in_events = make_probe_windows(
            enc_cfg, PongPhysics(), "agent", np.random.default_rng(4), frames_per_game=60
        )
        factors = []
        for eff in (0.25, 1.0, 4.0, 16.0):
            sub.set_core_efficacy(eff)
            factors.append(
                measure_integration_factor(sub, windows, enc_cfg.window_us, in_events)
            )
        assert all(b > a for a, b in zip(factors, factors[1:]))


class TestCalibration:
    def test_calibrates_into_band(self, enc_cfg):
        sub = build_substrate(SubstrateConfig(n_neurons=128), 31)
        result = calibrate_efficacy(sub, enc_cfg, PongPhysics(), np.random.default_rng(8))
        assert 0.45 <= result.factor <= 0.58
        assert sub.core_efficacy[0] == pytest.approx(result.core_efficacy)
        # substrate state is reset after a successful calibration
        assert np.all(sub.v == 0.0)
        assert result.probes <= CalibrationConfig().max_steps
        assert result.history[-1] == (result.core_efficacy, result.factor)

    def test_deterministic_given_seed(self, enc_cfg):
        results = []
        for _ in range(2):
            sub = build_substrate(SubstrateConfig(n_neurons=128), 31)
            results.append(
                calibrate_efficacy(sub, enc_cfg, PongPhysics(), np.random.default_rng(8))
            )
        assert results[0] == results[1]

    def test_unreachable_budget_raises_with_history(self, enc_cfg):
        sub = build_substrate(SubstrateConfig(n_neurons=128), 31)
        calib = CalibrationConfig(max_steps=2, initial_efficacy=1e-6)
        with pytest.raises(CalibrationError) as exc:
            calibrate_efficacy(sub, enc_cfg, PongPhysics(), np.random.default_rng(8), calib)
        assert len(exc.value.history) == 2
        assert "probe" in exc.value.trace()


class TestDumpRoundTrip:
    def test_round_trip(self, tmp_path):
        cfg = SubstrateConfig(variant="model", n_neurons=64)
        sub = build_substrate(cfg, 12)
        path = tmp_path / "sub.bin"
        dump_substrate(sub, path)
        records = read_substrate_dump(path)
        n, n_edges = sub.n_neurons, sub.connectivity.n_edges
        assert len(records) == 3 * n + 2 * n_edges
        by_field = {}
        for neuron, fid, value in records:
            by_field.setdefault(fid, []).append((neuron, value))
        for fid, expected in ((0, sub.tau_mem_factors), (1, sub.tau_syn_factors), (2, sub.v_thresh_factors)):
            got = by_field[fid]
            assert [j for j, _ in got] == list(range(n))
            assert np.array_equal([v for _, v in got], expected)
        # edge records: id-3 pre generator then id-4 parallel, in edge order
        assert [v for _, v in by_field[3]] == sub.connectivity.pre.tolist()
        assert [v for _, v in by_field[4]] == sub.connectivity.parallel.tolist()
        assert [j for j, _ in by_field[3]] == sub.connectivity.post.tolist()

    def test_truncated_dump_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 7)
        with pytest.raises(ValueError):
            read_substrate_dump(path)


class TestWindowValidation:
    def test_window_must_divide_by_dt(self):
        sub = one_neuron(1.0)
        with pytest.raises(ValueError):
            run_window(sub, [], 10_050)

    def test_event_outside_window_rejected(self):
        sub = one_neuron(1.0)
        with pytest.raises(ValueError):
            run_window(sub, [SpikeTrain(generator_id=0, timestamps_us=np.array([10_000.0]))], 10_000)

    def test_unknown_generator_rejected(self):
        sub = one_neuron(1.0)  # declares 8 input generators
        with pytest.raises(ValueError, match="generator"):
            run_window(sub, [SpikeTrain(generator_id=8, timestamps_us=np.array([0.0]))], 10_000)
        with pytest.raises(ValueError, match="generator"):
            run_window(sub, [SpikeTrain(generator_id=-1, timestamps_us=np.array([0.0]))], 10_000)

    def test_unwired_generator_is_silent(self):
        # valid id with no outgoing edges: events vanish without effect
        sub = one_neuron(250.0)
        counts = run_window(sub, [SpikeTrain(generator_id=5, timestamps_us=np.array([0.0]))], 10_000)
        assert counts[0] == 0
        assert float(sub.v[0]) == 0.0

    def test_uniform_wiring_identical_neurons_identical_counts(self, enc_cfg):
        # no mismatch, identical wiring, shared drive: every neuron must
        # produce exactly the same count in every window
        sub = uniform_substrate(32, 25.0)
        rng = np.random.default_rng(5)
        for _ in range(20):
            rates = np.full(8, 4.0)
            counts = run_window(sub, rates_to_trains(rates, enc_cfg, rng), enc_cfg.window_us)
            assert np.all(counts == counts[0])
