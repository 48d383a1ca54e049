"""Seeded slot-level Monte Carlo of the GHz phase-encoding link.

Each clock slot goes through source -> fiber -> Bob's interferometer(s) ->
up-conversion detectors. Signal photons are thinned by the channel and
detector efficiency, routed to a detector from the interference
probabilities and time-stamped with Gaussian pulse spread and SPAD jitter.
Dark counts, afterpulses and gating are then applied and every slot keeps at
most one click.

Slots are split into fixed-size blocks. Block ``b`` draws from its own Philox
stream keyed by ``(seed, b)``, so the merged result does not depend on how
blocks are distributed over worker processes. An afterpulse that would fall
past the last slot of its block is dropped.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, partial
from typing import Optional

import numpy as np

from . import keyrate
from .keyrate import RateParams
from .photonics import (
    FWHM_PER_SIGMA,
    FiberChannel,
    SourceConfig,
    effective_pulse_width,
    sample_photon_count,
    transmission,
)
from .protocol import (
    Origin,
    Protocol,
    Receiver,
    p_d1_many,
    sift_bb84_many,
    sift_sarg_many,
)
from .updetector import (
    DEFAULT_DETECTOR,
    UpconversionDetector,
    dark_prob_per_gate,
    gate_acceptance,
    noise_rate,
    overall_efficiency,
    sample_detection_time,
)

DEFAULT_BLOCK = 1 << 20
DEFAULT_BIN_PS = 5.0


@dataclass(frozen=True)
class SimConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    channel: FiberChannel = field(default_factory=FiberChannel)
    detector: UpconversionDetector = DEFAULT_DETECTOR
    protocol: Protocol = Protocol.BB84
    receiver: Receiver = Receiver.TWO
    visibility: float = 0.99
    interferometer_delay: float = 300.0
    polarization_controlled: bool = True
    n_pulses: int = 1_000_000
    seed: int = 0
    # False: free-running detectors, every click in the clock period is kept
    gated: bool = True
    # (basis, bit) for fixed-phase runs; None draws a random state per slot
    fixed_state: Optional[tuple[int, int]] = None
    block_size: int = DEFAULT_BLOCK

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "receiver", Receiver(self.receiver))
        if not 0 <= self.visibility <= 1:
            raise ValueError(f"visibility must lie in [0, 1], got {self.visibility}")
        if int(self.n_pulses) != self.n_pulses or self.n_pulses <= 0:
            raise ValueError(f"n_pulses must be a positive integer, got {self.n_pulses}")
        object.__setattr__(self, "n_pulses", int(self.n_pulses))
        if self.block_size <= 0:
            raise ValueError("block_size must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.interferometer_delay <= 0:
            raise ValueError("interferometer_delay must be positive")
        if self.fixed_state is not None:
            b, v = self.fixed_state
            if b not in (0, 1) or v not in (0, 1):
                raise ValueError(f"fixed_state must be (basis, bit) with entries in {{0, 1}}, got {self.fixed_state}")
        width = effective_pulse_width(self.source, self.channel)
        if self.interferometer_delay <= width:
            warnings.warn(
                f"time-bin separation {self.interferometer_delay} ps does not exceed the "
                f"pulse width {width:.1f} ps at the receiver",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def period(self) -> float:
        return self.source.period

    @property
    def n_blocks(self) -> int:
        return -(-self.n_pulses // self.block_size)

    @property
    def window(self) -> float:
        """Acceptance window per slot in ps."""
        return self.detector.gate_width if self.gated else self.period


def slot_dark_prob(config: SimConfig) -> float:
    """Noise-click probability per detector per slot."""
    if config.gated:
        return dark_prob_per_gate(config.detector)
    return noise_rate(config.detector) * config.period * 1e-12


def optical_sigma(config: SimConfig) -> float:
    return effective_pulse_width(config.source, config.channel) / FWHM_PER_SIGMA


def signal_efficiency(config: SimConfig) -> float:
    """Per-photon probability of surviving channel and detector (before gating)."""
    return transmission(config.channel) * overall_efficiency(config.detector)


def rate_params(config: SimConfig) -> RateParams:
    """Analytic link parameters equivalent to a simulation config.

    The efficiency includes the fraction of interfering signal that falls in
    the gate. Afterpulses and satellite-peak leakage enter as additional
    uncorrelated noise per detector, since they do not depend on the state
    prepared in the slot they land in.
    """
    det = config.detector
    width = effective_pulse_width(config.source, config.channel)
    t = transmission(config.channel)
    eta_det = overall_efficiency(det)
    d = config.interferometer_delay
    if config.gated:
        acc_c = gate_acceptance(det, width)
        acc_s = gate_acceptance(det, width, -d) + gate_acceptance(det, width, d)
    else:
        acc_c, acc_s = 1.0, 2.0
    if config.polarization_controlled:
        eta = eta_det * acc_c
        leak = 0.0
    else:
        eta = eta_det * 0.5 * acc_c
        leak = config.source.mu * t * eta_det * 0.25 * acc_s
    n = config.receiver.n_detectors
    p_dark = slot_dark_prob(config) + leak / n
    ap = det.afterpulse_prob
    if ap > 0 and config.fixed_state is None:
        clicks_per_det = config.source.mu * t * eta / n + p_dark
        p_dark += ap * clicks_per_det / (1 - ap)
    elif ap > 0:
        # every slot carries the same state, so an afterpulse repeats its parent's
        # verdict: signal and noise are both scaled up, their mix is unchanged
        eta /= 1 - ap
        p_dark /= 1 - ap
    return RateParams(
        protocol=config.protocol,
        mu=config.source.mu,
        t=t,
        eta=eta,
        p_dark=p_dark,
        q_opt=(1 - config.visibility) / 2,
        receiver=config.receiver,
        rep_rate=config.source.rep_rate,
    )


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _simulate_block(config: SimConfig, block: int) -> dict:
    rng = block_rng(config.seed, block)
    start = block * config.block_size
    n = min(config.block_size, config.n_pulses - start)
    two = config.receiver is Receiver.TWO
    n_det = config.receiver.n_detectors
    half = config.window / 2

    # preparations and Bob's phase-modulator setting
    if config.fixed_state is None:
        a_basis = rng.integers(0, 2, n, dtype=np.int8)
        a_bit = rng.integers(0, 2, n, dtype=np.int8)
        bob_pm = rng.integers(0, 2, n, dtype=np.int8)
    else:
        a_basis = np.full(n, config.fixed_state[0], dtype=np.int8)
        a_bit = np.full(n, config.fixed_state[1], dtype=np.int8)
        bob_pm = a_basis.copy()
    partner = rng.integers(0, 2, n, dtype=np.int8)

    # signal photons
    n_ph = sample_photon_count(config.source.mu, rng, n)
    k = np.zeros(n, dtype=np.int64)
    nz = np.flatnonzero(n_ph)
    k[nz] = rng.binomial(n_ph[nz], signal_efficiency(config))
    hit = np.flatnonzero(k)
    ph_slot = np.repeat(hit, k[hit])
    m = ph_slot.size
    if config.polarization_controlled:
        path = np.zeros(m, dtype=np.int8)
    else:
        u = rng.random(m)
        path = np.where(u < 0.25, -1, np.where(u < 0.75, 0, 1)).astype(np.int8)
    ph_basis = bob_pm[ph_slot] if two else rng.integers(0, 2, m, dtype=np.int8)
    pd1 = p_d1_many(a_basis[ph_slot], a_bit[ph_slot], ph_basis, config.visibility)
    pd1 = np.where(path == 0, pd1, 0.5)
    ph_bit = (rng.random(m) >= pd1).astype(np.int8)
    arrival = path * config.interferometer_delay + rng.normal(0.0, optical_sigma(config), m)
    ph_time = sample_detection_time(config.detector, arrival, rng)
    ph_det = ph_bit if two else (2 * ph_basis + ph_bit).astype(np.int8)
    if config.gated:
        inside = np.abs(ph_time) <= half
    else:
        # free running: a click belongs to whichever clock period it falls in
        shift = np.floor((ph_time + half) / config.period).astype(np.int64)
        ph_slot = ph_slot + shift
        ph_time = ph_time - shift * config.period
        inside = (ph_slot >= 0) & (ph_slot < n)

    # noise clicks, uniform over the acceptance window
    dark = rng.random((n, n_det)) < slot_dark_prob(config)
    d_slot, d_det = np.nonzero(dark)
    d_time = rng.uniform(-half, half, d_slot.size)

    slot = np.concatenate([ph_slot[inside], d_slot])
    det = np.concatenate([ph_det[inside], d_det.astype(np.int8)])
    ts = np.concatenate([ph_time[inside], d_time])
    origin = np.concatenate([
        np.full(int(inside.sum()), Origin.SIGNAL, dtype=np.int8),
        np.full(d_slot.size, Origin.DARK, dtype=np.int8),
    ])

    # afterpulses: one slot later on the same detector, cascading
    ap = config.detector.afterpulse_prob
    parts = [(slot, det, ts, origin)]
    cur_slot, cur_det, cur_ts = slot, det, ts
    while ap > 0 and cur_slot.size:
        fire = (rng.random(cur_slot.size) < ap) & (cur_slot + 1 < n)
        cur_slot, cur_det, cur_ts = cur_slot[fire] + 1, cur_det[fire], cur_ts[fire]
        parts.append((cur_slot, cur_det, cur_ts, np.full(cur_slot.size, Origin.AFTERPULSE, dtype=np.int8)))
    slot, det, ts, origin = (np.concatenate(x) for x in zip(*parts))

    # squash simultaneous clicks: uniform random survivor per slot
    key = rng.random(slot.size)
    order = np.lexsort((key, slot))
    slot, det, ts, origin = slot[order], det[order], ts[order], origin[order]
    first = np.ones(slot.size, dtype=bool)
    first[1:] = slot[1:] != slot[:-1]
    slot, det, ts, origin = slot[first], det[first], ts[first], origin[first]

    basis = bob_pm[slot] if two else (det // 2).astype(np.int8)
    bit = det if two else (det % 2).astype(np.int8)
    if config.protocol is Protocol.BB84:
        keep, alice_key, bob_key = sift_bb84_many(a_basis[slot], a_bit[slot], basis, bit)
    else:
        keep, alice_key, bob_key = sift_sarg_many(a_basis[slot], a_bit[slot], partner[slot], basis, bit)
    matched = basis == a_basis[slot]
    table = np.zeros((2, 2), dtype=np.int64)
    np.add.at(table, (a_bit[slot][matched], bit[matched]), 1)

    gslot = slot.astype(np.int64) + start
    return {
        "slot": gslot,
        "detector": det,
        "basis": basis,
        "bit": bit,
        "origin": origin,
        "offset": ts,
        "timestamp": gslot * config.period + ts,
        "sifted": keep,
        "alice_key": alice_key.astype(np.int8),
        "bob_key": bob_key.astype(np.int8),
        "table": table,
    }


EVENT_FIELDS = ("slot", "detector", "basis", "bit", "origin", "offset", "timestamp", "sifted")


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])


def build_histogram(timestamps, bin_width: float = DEFAULT_BIN_PS, window: Optional[float] = None,
                    period: float = 1e12 / 1.27e9) -> Histogram:
    """Histogram of arrival times folded modulo the clock period into [-P/2, P/2).

    `window` (default one period) is centred on the expected arrival time.
    """
    if not bin_width > 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    window = period if window is None else window
    folded = np.mod(np.asarray(timestamps, dtype=float) + period / 2, period) - period / 2
    n_bins = int(math.ceil(window / bin_width - 1e-9))
    edges = -window / 2 + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(folded, bins=edges)
    # np.histogram closes the last bin; the fold can land exactly on +P/2 only through rounding
    return Histogram(edges, counts)


@dataclass(frozen=True)
class PeakFit:
    background: float       # counts per bin
    areas: dict             # peak position (ps) -> counts
    sigma: float            # ps, shared by all peaks

    @property
    def fwhm(self) -> float:
        return self.sigma * FWHM_PER_SIGMA


def fit_peaks(hist: Histogram, positions, period: float, sigma0: float = 40.0) -> PeakFit:
    """Least-squares fit of Gaussian peaks of common width plus flat background.

    Peaks sit at fixed `positions` (ps); their images one period away are
    included so tails wrapping around the folded window are accounted for.
    """
    from scipy.optimize import curve_fit

    x = hist.centers
    y = hist.counts.astype(float)
    bw = hist.bin_width
    positions = list(positions)

    def model(x, c, sigma, *areas):
        out = np.full_like(x, c)
        norm = bw / (sigma * math.sqrt(2 * math.pi))
        for pos, a in zip(positions, areas):
            for img in (-period, 0.0, period):
                out += a * norm * np.exp(-0.5 * ((x - pos - img) / sigma) ** 2)
        return out

    p0 = [max(float(np.median(y)), 0.0), sigma0] + [max(y.sum(), 1.0) / len(positions)] * len(positions)
    lower = [0.0, 1e-3] + [0.0] * len(positions)
    upper = [np.inf, period] + [np.inf] * len(positions)
    weights = np.sqrt(y + 1.0)
    # second pass weights by the fitted (Poisson) variance; the first pass
    # under-weights upward fluctuations in sparse bins
    for _ in range(2):
        popt, _ = curve_fit(model, x, y, p0=p0, sigma=weights, bounds=(lower, upper), maxfev=20000)
        weights = np.sqrt(np.maximum(model(x, *popt), 0.5))
        p0 = popt
    return PeakFit(float(popt[0]), dict(zip(positions, map(float, popt[2:]))), float(popt[1]))


@dataclass
class SimResult:
    config: SimConfig
    events: dict
    alice_key: np.ndarray
    bob_key: np.ndarray
    table: np.ndarray  # counts[prepared bit, detector] for matched-basis detections

    @property
    def n_pulses(self) -> int:
        return self.config.n_pulses

    @property
    def duration(self) -> float:
        """Simulated time in seconds."""
        return self.n_pulses / self.config.source.rep_rate

    @property
    def detected(self) -> int:
        return int(self.events["slot"].size)

    @property
    def n_sifted(self) -> int:
        return int(self.alice_key.size)

    @property
    def n_errors(self) -> int:
        return int(np.count_nonzero(self.alice_key != self.bob_key))

    @property
    def sift_fraction(self) -> float:
        return self.n_sifted / self.detected if self.detected else float("nan")

    @property
    def raw_rate(self) -> float:
        return self.detected / self.duration

    @property
    def qber(self) -> float:
        """Sifted-key error rate; true/false count estimate for fixed-phase runs."""
        if self.config.fixed_state is not None:
            tf = table1_counts(self, self.duration)
            if tf.sum() == 0:
                return float("nan")
            return keyrate.qber_empirical(tf[:, 0], tf[:, 1], self.config.protocol)
        return self.n_errors / self.n_sifted if self.n_sifted else float("nan")

    def origin_counts(self) -> dict:
        o = self.events["origin"]
        return {x.name.lower(): int(np.count_nonzero(o == x)) for x in Origin}

    @cached_property
    def histogram(self) -> Histogram:
        return build_histogram(self.events["timestamp"], DEFAULT_BIN_PS, None, self.config.period)


def _merge(config: SimConfig, parts: list) -> SimResult:
    events = {f: np.concatenate([p[f] for p in parts]) for f in EVENT_FIELDS}
    return SimResult(
        config=config,
        events=events,
        alice_key=np.concatenate([p["alice_key"] for p in parts]),
        bob_key=np.concatenate([p["bob_key"] for p in parts]),
        table=sum(p["table"] for p in parts),
    )


def run(config: SimConfig, workers: int = 1) -> SimResult:
    """Simulate `config.n_pulses` slots; identical output for any worker count."""
    blocks = range(config.n_blocks)
    if workers <= 1 or config.n_blocks == 1:
        parts = [_simulate_block(config, b) for b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(partial(_simulate_block, config), blocks))
    return _merge(config, parts)


def table1_counts(result: SimResult, duration: float) -> np.ndarray:
    """True/false counts per prepared bit, rescaled to `duration` seconds.

    Row ``b`` is ``[true, false]`` for prepared bit ``b``: detector D(b+1) is
    the true one, the other detector the false one.
    """
    scale = duration / result.duration
    tab = result.table
    return np.array([[tab[0, 0], tab[0, 1]], [tab[1, 1], tab[1, 0]]], dtype=float) * scale


def theory(config: SimConfig) -> tuple[float, float]:
    """Analytic (QBER, sift fraction) the simulation should converge to."""
    params = rate_params(config)
    return keyrate.qber_theory(params, exact=True), keyrate.p_sift(params, exact=True)


def summary(result: SimResult) -> dict:
    cfg = result.config
    params = rate_params(cfg)
    q_emp = result.qber
    sf = result.sift_fraction
    s = float("nan")
    if not math.isnan(q_emp) and not math.isnan(sf):
        s = keyrate.secure_rate(result.raw_rate, min(q_emp, 0.5), keyrate.i_eve(params), sf)
    return {
        "protocol": cfg.protocol.value,
        "km": cfg.channel.length,
        "R": result.raw_rate,
        "QBER_emp": q_emp,
        "QBER_th": keyrate.qber_theory(params, exact=True),
        "sift_fraction": sf,
        "S": s,
    }
