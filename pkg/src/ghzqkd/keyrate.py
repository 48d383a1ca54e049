"""Analytic error rates, sifting fractions, Eve's information and secure key rate
for weak-pulse BB84 and SARG under individual / photon-number-splitting attacks.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .protocol import Protocol, Receiver

DEFAULT_I1 = 0.4


class ApproximationWarning(UserWarning):
    """The weak-signal expansion of the error formulas is outside its validity range."""


@dataclass(frozen=True)
class RateParams:
    protocol: Protocol = Protocol.BB84
    mu: float = 0.286
    t: float = 0.286
    eta: float = 0.008
    p_dark: float = 7e-6
    q_opt: float = 0.005
    receiver: Receiver = Receiver.TWO
    rep_rate: float = 1.27e9
    i1: float = DEFAULT_I1
    q_disp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "receiver", Receiver(self.receiver))
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if not 0 < self.t <= 1:
            raise ValueError(f"t must lie in (0, 1], got {self.t}")
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0 <= self.p_dark < 1:
            raise ValueError(f"p_dark must lie in [0, 1), got {self.p_dark}")
        if not 0 <= self.q_opt <= 0.5:
            raise ValueError(f"q_opt must lie in [0, 0.5], got {self.q_opt}")
        if not 0 <= self.i1 <= 1:
            raise ValueError(f"i1 must lie in [0, 1], got {self.i1}")
        if self.q_disp < 0:
            raise ValueError(f"q_disp must be non-negative, got {self.q_disp}")
        if self.rep_rate <= 0:
            raise ValueError(f"rep_rate must be positive, got {self.rep_rate}")

    def with_mu(self, mu: float) -> "RateParams":
        return replace(self, mu=mu)


@dataclass(frozen=True)
class LinkReport:
    raw_rate: float
    qber: float
    i_eve: float
    p_sift: float
    secure_rate: float
    qber_theory: float = float("nan")
    mu_opt: float = float("nan")


def p_phot(params: RateParams) -> float:
    """Probability per pulse that a signal photon is detected."""
    return params.mu * params.eta * params.t


def q_det(params: RateParams) -> float:
    """Dark-count error term, doubled for the four-detector receiver."""
    pp = p_phot(params)
    if pp == 0:
        return math.inf if params.p_dark > 0 else 0.0
    return params.receiver.dark_factor * params.p_dark / pp


def _check_regime(params: RateParams):
    pp = p_phot(params)
    if pp >= 0.1 or params.p_dark >= 0.1 * pp:
        warnings.warn(
            f"weak-signal approximation strained: P_phot={pp:.3g}, P_dark={params.p_dark:.3g}",
            ApproximationWarning,
            stacklevel=3,
        )


def qber_theory(params: RateParams, exact: bool = False) -> float:
    """Theoretical QBER.

    By default the first-order form Q_opt + Q_det (BB84) or 2(Q_opt + Q_det)
    (SARG). With ``exact=True`` the full ratio of erroneous to sifted counts is
    returned instead, which stays accurate when Q_det is not small. ``q_disp``
    is added to the optical error in both forms.
    """
    e = params.q_opt + params.q_disp
    if exact:
        pp = p_phot(params)
        kd = params.receiver.dark_factor * params.p_dark
        if pp == 0 and kd == 0:
            return 0.0
        if params.protocol is Protocol.BB84:
            return (e * pp + kd) / (pp + 2 * kd)
        return 2 * (e * pp + kd) / ((1 + 2 * e) * pp + 4 * kd)
    _check_regime(params)
    q = e + q_det(params)
    return q if params.protocol is Protocol.BB84 else 2 * q


def qber_empirical(true_counts, false_counts, protocol: Protocol) -> float:
    """Wrong counts over all counts from a fixed-phase measurement, x2 for SARG."""
    t = float(sum(true_counts))
    f = float(sum(false_counts))
    if min(*true_counts, *false_counts) < 0:
        raise ValueError("counts must be non-negative")
    if t + f <= 0:
        raise ValueError("no counts")
    q = f / (t + f)
    return q if Protocol(protocol) is Protocol.BB84 else 2 * q


def shannon_entropy(q):
    """Binary entropy in bits; scalar or array."""
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ValueError("entropy argument must lie in [0, 1]")
    inner = (q > 0) & (q < 1)
    qs = np.where(inner, q, 0.5)
    h = np.where(inner, -qs * np.log2(qs) - (1 - qs) * np.log2(1 - qs), 0.0)
    return float(h) if h.ndim == 0 else h


def i_eve(params: RateParams) -> float:
    if params.protocol is Protocol.BB84:
        val = params.mu / (2 * params.t)
    else:
        val = params.i1 + (1 - params.i1) * params.mu ** 2 / (12 * params.t)
    return min(max(val, 0.0), 1.0)


def p_sift(params: RateParams, exact: bool = False) -> float:
    """Fraction of detections surviving sifting.

    1/2 for BB84; for SARG 1/4 (1 + Q_opt + 2 Q_det), or the full count ratio
    with ``exact=True``.
    """
    if params.protocol is Protocol.BB84:
        return 0.5
    e = params.q_opt + params.q_disp
    if exact:
        pp = p_phot(params)
        kd = params.receiver.dark_factor * params.p_dark
        if pp == 0 and kd == 0:
            return 0.25
        return 0.25 * ((1 + 2 * e) * pp + 4 * kd) / (pp + 2 * kd)
    return 0.25 * (1 + e + 2 * q_det(params))


def optimal_mu(protocol: Protocol, t: float) -> float:
    if not 0 < t <= 1:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    return t if Protocol(protocol) is Protocol.BB84 else 2 * math.sqrt(t)


def secure_rate(raw_rate: float, qber: float, i_eve: float, p_sift: float) -> float:
    return max(0.0, raw_rate * (1 - shannon_entropy(qber) - i_eve) * p_sift)


def modeled_raw_rate(params: RateParams) -> float:
    """Detection rate (Hz) before sifting: signal plus dark clicks on every detector."""
    return params.rep_rate * (p_phot(params) + params.receiver.n_detectors * params.p_dark)


def modeled_secure_rate(params: RateParams, exact: bool = False) -> float:
    q = min(qber_theory(params, exact=exact), 0.5)
    return secure_rate(modeled_raw_rate(params), q, i_eve(params), p_sift(params, exact=exact))


def analyze(params: RateParams, measured_rate: Optional[float] = None,
            measured_qber: Optional[float] = None) -> LinkReport:
    """Assemble a report for one link.

    Without a measured rate the raw rate comes from `modeled_raw_rate`. The
    secure rate uses `measured_qber` when given, otherwise the theoretical QBER.
    """
    q_th = qber_theory(params)
    q = q_th if measured_qber is None else measured_qber
    q = min(q, 0.5)
    r = modeled_raw_rate(params) if measured_rate is None else measured_rate
    ie = i_eve(params)
    ps = p_sift(params)
    return LinkReport(
        raw_rate=r,
        qber=q,
        i_eve=ie,
        p_sift=ps,
        secure_rate=min(secure_rate(r, q, ie, ps), r),
        qber_theory=q_th,
        mu_opt=optimal_mu(params.protocol, params.t),
    )


def brute_force_optimal_mu(params: RateParams, step: float = 1e-3, mu_max: float = 4.0) -> float:
    """Grid maximiser of the modeled secure rate over mu."""
    grid = np.arange(step, mu_max + step / 2, step)
    rates = [modeled_secure_rate(params.with_mu(m)) for m in grid]
    return float(grid[int(np.argmax(rates))])
