import math
from dataclasses import replace

import numpy as np
import pytest

from ghzqkd import keyrate
from ghzqkd.photonics import FiberChannel, SourceConfig
from ghzqkd.protocol import Origin, Protocol, Receiver
from ghzqkd.simulator import (
    EVENT_FIELDS,
    Histogram,
    SimConfig,
    SimResult,
    block_rng,
    build_histogram,
    fit_peaks,
    rate_params,
    run,
    slot_dark_prob,
    table1_counts,
    theory,
)
from ghzqkd.updetector import DEFAULT_DETECTOR, gate_acceptance

QUIET = replace(DEFAULT_DETECTOR, intrinsic_dark_rate=0.0, noise_lin=0.0, noise_quad=0.0, afterpulse_prob=0.0)


def z_score(observed, expected, n):
    return (observed - expected) / math.sqrt(expected * (1 - expected) / n)


def small(**kw):
    base = dict(n_pulses=200_000, seed=3, block_size=1 << 15, source=SourceConfig(mu=0.5))
    base.update(kw)
    return SimConfig(**base)


class TestConfig:
    def test_rejects_zero_pulses(self):
        with pytest.raises(ValueError):
            SimConfig(n_pulses=0)

    @pytest.mark.parametrize("kw", [{"visibility": 1.2}, {"seed": -1}, {"interferometer_delay": 0},
                                    {"fixed_state": (2, 0)}, {"block_size": 0}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)

    def test_warns_when_bins_overlap(self):
        with pytest.warns(RuntimeWarning):
            SimConfig(interferometer_delay=50.0)

    def test_defaults(self):
        cfg = SimConfig()
        assert cfg.interferometer_delay == 300.0
        assert cfg.period == pytest.approx(787.40, abs=0.01)


class TestRun:
    def test_no_light_no_noise(self):
        cfg = SimConfig(source=SourceConfig(mu=0.0), detector=QUIET, n_pulses=100_000)
        res = run(cfg)
        assert res.detected == 0
        assert res.n_sifted == 0
        assert math.isnan(res.qber)

    def test_deterministic_across_workers(self):
        cfg = small(protocol=Protocol.SARG, receiver=Receiver.FOUR)
        ref = run(cfg, workers=1)
        for workers in (2, 8):
            other = run(cfg, workers=workers)
            for f in EVENT_FIELDS:
                assert np.array_equal(ref.events[f], other.events[f]), f
            assert np.array_equal(ref.alice_key, other.alice_key)
            assert np.array_equal(ref.bob_key, other.bob_key)
            assert np.array_equal(ref.table, other.table)

    def test_seed_changes_output(self):
        a = run(small(seed=1))
        b = run(small(seed=2))
        assert not np.array_equal(a.events["slot"], b.events["slot"])

    def test_block_streams_independent_of_schedule(self):
        assert block_rng(5, 3).random() == block_rng(5, 3).random()
        assert block_rng(5, 3).random() != block_rng(5, 4).random()

    def test_counts_consistent(self):
        res = run(small())
        assert res.n_sifted <= res.detected <= res.n_pulses
        assert res.histogram.counts.sum() == res.detected
        assert np.all(np.diff(res.events["slot"]) > 0)  # one click per slot, in order

    def test_origins_conserved(self):
        cfg = small(detector=replace(DEFAULT_DETECTOR, afterpulse_prob=0.05, intrinsic_dark_rate=5e5))
        res = run(cfg)
        counts = res.origin_counts()
        assert sum(counts.values()) == res.detected
        assert all(v > 0 for v in counts.values())

    def test_no_afterpulses_when_disabled(self):
        res = run(small(detector=replace(DEFAULT_DETECTOR, afterpulse_prob=0.0)))
        assert res.origin_counts()["afterpulse"] == 0

    def test_afterpulses_follow_a_click_on_same_detector(self):
        cfg = small(detector=replace(DEFAULT_DETECTOR, afterpulse_prob=0.2))
        ev = run(cfg).events
        ap = np.flatnonzero(ev["origin"] == Origin.AFTERPULSE)
        prev_slot = ev["slot"][ap] - 1
        # the parent click may have been squashed, but its slot had some click in most cases
        assert np.isin(prev_slot, ev["slot"]).mean() > 0.5

    def test_four_detector_basis_uniform(self):
        res = run(small(receiver=Receiver.FOUR, n_pulses=500_000))
        frac = np.mean(res.events["basis"] == 1)
        assert abs(z_score(frac, 0.5, res.detected)) < 5
        assert set(np.unique(res.events["detector"])) == {0, 1, 2, 3}

    def test_gated_timestamps_within_gate(self):
        res = run(small())
        half = DEFAULT_DETECTOR.gate_width / 2
        assert np.all(np.abs(res.events["offset"]) <= half)

    def test_free_running_keeps_offsets_in_period(self):
        cfg = small(gated=False)
        res = run(cfg)
        assert np.all(np.abs(res.events["offset"]) <= cfg.period / 2 + 1e-9)


class TestConvergence:
    @pytest.mark.parametrize("protocol", [Protocol.BB84, Protocol.SARG])
    @pytest.mark.parametrize("receiver", [Receiver.TWO, Receiver.FOUR])
    def test_qber_and_sift_match_theory(self, protocol, receiver):
        # noisy detector so the dark term is visible at 4e6 slots
        det = replace(DEFAULT_DETECTOR, intrinsic_dark_rate=1e5)
        cfg = SimConfig(protocol=protocol, receiver=receiver, detector=det, n_pulses=4_000_000, seed=21,
                        source=SourceConfig(mu=0.5))
        res = run(cfg)
        q_th, s_th = theory(cfg)
        assert abs(z_score(res.qber, q_th, res.n_sifted)) < 3
        assert abs(z_score(res.sift_fraction, s_th, res.detected)) < 3

    def test_dark_error_doubles_with_four_detectors(self):
        det = replace(DEFAULT_DETECTOR, intrinsic_dark_rate=2e5, afterpulse_prob=0.0)
        qdet = {}
        for receiver in (Receiver.TWO, Receiver.FOUR):
            cfg = SimConfig(receiver=receiver, detector=det, visibility=1.0, n_pulses=6_000_000, seed=8,
                            source=SourceConfig(mu=0.5))
            res = run(cfg)
            q = res.qber
            # with V = 1 the error rate is k d / (P + 2 k d), so Q_det = q / (1 - 2q)
            qdet[receiver] = (q / (1 - 2 * q), res.n_errors)
        ratio = qdet[Receiver.FOUR][0] / qdet[Receiver.TWO][0]
        # relative Poisson error of the ratio from the two error counts
        rel = math.sqrt(1 / qdet[Receiver.FOUR][1] + 1 / qdet[Receiver.TWO][1])
        assert abs(ratio - 2) < 3 * 2 * rel

    def test_gate_narrowing_costs_under_one_percent(self):
        # 300 ps gate, total timing FWHM 120 ps
        pulse = math.sqrt(120.0 ** 2 - 40.0 ** 2)
        det = replace(QUIET, gate_width=300.0)
        assert 1 - gate_acceptance(det, pulse) < 0.01
        src = SourceConfig(mu=1.0, pulse_width=pulse)
        chan = FiberChannel(length=0)
        gated = run(SimConfig(source=src, channel=chan, detector=det, n_pulses=1_000_000, seed=2))
        free = run(SimConfig(source=src, channel=chan, detector=det, n_pulses=1_000_000, seed=2, gated=False))
        assert 1 - gated.detected / free.detected < 0.01

    def test_gate_trades_noise_linearly(self):
        det = replace(DEFAULT_DETECTOR, gate_width=200.0)
        wide = replace(det, gate_width=400.0)
        a = slot_dark_prob(SimConfig(detector=det))
        b = slot_dark_prob(SimConfig(detector=wide))
        assert b == pytest.approx(2 * a, rel=1e-12)


class TestTable1:
    def test_perfect_link_has_no_false_counts(self):
        cfg = SimConfig(detector=QUIET, visibility=1.0, fixed_state=(0, 0), n_pulses=300_000,
                        source=SourceConfig(mu=0.5))
        tf = table1_counts(run(cfg), 1.0)
        assert tf[0, 0] > 0
        assert tf[:, 1].sum() == 0

    def test_bit_swap_swaps_roles(self):
        table = np.array([[50, 3], [4, 70]])
        swapped = table[::-1, ::-1]
        cfg = SimConfig(n_pulses=1000)
        a = table1_counts(SimResult(cfg, {}, np.array([]), np.array([]), table), 1.0)
        b = table1_counts(SimResult(cfg, {}, np.array([]), np.array([]), swapped), 1.0)
        assert np.array_equal(a[::-1], b)

    def test_rescaled_to_duration(self):
        cfg = SimConfig(n_pulses=1_270_000)
        res = SimResult(cfg, {}, np.array([]), np.array([]), np.array([[10, 1], [2, 20]]))
        assert np.array_equal(table1_counts(res, 2e-3), [[20, 2], [40, 4]])

    def test_true_false_ratio(self):
        cfg = SimConfig(fixed_state=(0, 1), n_pulses=5_000_000, seed=9, source=SourceConfig(mu=0.5),
                        detector=replace(DEFAULT_DETECTOR, intrinsic_dark_rate=5e4))
        res = run(cfg)
        tf = table1_counts(res, res.duration)
        n = tf.sum()
        false_frac = tf[:, 1].sum() / n
        assert abs(z_score(false_frac, theory(cfg)[0], n)) < 3


class TestRateBridge:
    def test_uncontrolled_polarization_halves_efficiency(self):
        det = replace(DEFAULT_DETECTOR, afterpulse_prob=0.0)
        a = rate_params(SimConfig(detector=det))
        b = rate_params(SimConfig(detector=det, polarization_controlled=False))
        assert b.eta == pytest.approx(a.eta / 2, rel=1e-12)
        # satellite tails leaking into the gate add state-independent clicks
        assert b.p_dark > a.p_dark

    def test_optical_error_from_visibility(self):
        assert rate_params(SimConfig(visibility=0.97)).q_opt == pytest.approx(0.015)

    def test_summary_uses_theory(self):
        cfg = small()
        q, s = theory(cfg)
        assert q == keyrate.qber_theory(rate_params(cfg), exact=True)
        assert s == 0.5


class TestHistogram:
    def test_total_and_fold(self):
        period = 800.0
        ts = np.array([0.0, 10.0, 800.0 + 10.0, 1600.0 - 390.0])
        h = build_histogram(ts, bin_width=5.0, period=period)
        assert h.counts.sum() == 4
        assert h.edges[0] == -400.0
        assert h.counts[np.searchsorted(h.edges, 10.0, side="right") - 1] == 2

    def test_bin_width_validation(self):
        with pytest.raises(ValueError):
            build_histogram(np.zeros(3), bin_width=0)

    def test_default_window_is_period(self):
        h = build_histogram(np.zeros(1), period=787.4)
        assert h.edges[-1] - h.edges[0] >= 787.4
        assert h.bin_width == 5.0

    def test_fit_recovers_synthetic_peaks(self):
        rng = np.random.default_rng(0)
        period, sigma = 787.4, 40.0
        parts = [rng.normal(pos, sigma, n) for pos, n in ((-300, 20_000), (0, 40_000), (300, 20_000))]
        parts.append(rng.uniform(-period / 2, period / 2, 15_750))
        h = build_histogram(np.concatenate(parts), 5.0, None, period)
        fit = fit_peaks(h, (-300.0, 0.0, 300.0), period)
        assert fit.sigma == pytest.approx(sigma, rel=0.03)
        assert fit.areas[0.0] == pytest.approx(40_000, rel=0.03)
        assert fit.areas[-300.0] / fit.areas[0.0] == pytest.approx(0.5, rel=0.05)
        assert fit.background == pytest.approx(15_750 / h.counts.size, rel=0.1)

    def test_histogram_type(self):
        h = Histogram(np.array([0.0, 1.0, 2.0]), np.array([1, 2]))
        assert np.array_equal(h.centers, [0.5, 1.5])
