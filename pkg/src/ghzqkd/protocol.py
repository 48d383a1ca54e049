"""BB84 and SARG over time-bin phase encoding.

A state is a (basis, bit) pair. Alice's interferometer imprints the phase
(Z,0) -> 0, (Z,1) -> pi, (X,0) -> pi/2, (X,1) -> 3pi/2 and Bob's
interferometer for basis Z (X) applies 0 (pi/2). Detector D1 (index 0)
reports bit 0 of Bob's basis, D2 (index 1) bit 1.

In SARG the key bit carried by a state is its basis (Z -> 0, X -> 1), so that
an inference of the wrong member of the announced pair is always a bit error.

Scalar functions operate on single slots; the ``*_many`` variants are the
numpy forms the simulator uses.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class Basis(enum.IntEnum):
    Z = 0
    X = 1


class Protocol(str, enum.Enum):
    BB84 = "BB84"
    SARG = "SARG"


class Receiver(str, enum.Enum):
    TWO = "two"    # one interferometer + phase modulator, 2 detectors
    FOUR = "four"  # beam splitter + two interferometers, 4 detectors

    @property
    def n_detectors(self) -> int:
        return 2 if self is Receiver.TWO else 4

    @property
    def dark_factor(self) -> int:
        """Multiplier on the dark-count error contribution relative to two detectors."""
        return 1 if self is Receiver.TWO else 2


class Origin(enum.IntEnum):
    SIGNAL = 0
    DARK = 1
    AFTERPULSE = 2


def phase_of(basis, bit):
    """Alice's relative phase for (basis, bit); works on scalars and arrays."""
    return np.pi * np.asarray(bit) + 0.5 * np.pi * np.asarray(basis)


def bob_phase(basis):
    return 0.5 * np.pi * np.asarray(basis)


def orthogonal(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] == b[0] and a[1] != b[1]


@dataclass(frozen=True)
class Preparation:
    slot_index: int
    basis: Basis
    bit: int
    phase: float
    announced_partner: Optional[tuple[Basis, int]] = None

    @property
    def state(self) -> tuple[Basis, int]:
        return (self.basis, self.bit)

    @property
    def announced_pair(self) -> frozenset:
        if self.announced_partner is None:
            raise ValueError("preparation carries no SARG announcement")
        return frozenset({self.state, self.announced_partner})


@dataclass(frozen=True)
class MeasurementSetting:
    slot_index: int
    basis: Basis
    receiver: Receiver = Receiver.TWO


@dataclass(frozen=True)
class DetectionOutcome:
    slot_index: int
    detector_id: int  # 0 = D1, 1 = D2 of the basis the click was measured in
    origin: Origin = Origin.SIGNAL
    timestamp: float = 0.0
    basis: Optional[Basis] = None  # set by four-detector receivers

    def measured_basis(self, setting: MeasurementSetting) -> Basis:
        return setting.basis if self.basis is None else self.basis


def make_preparation(slot_index: int, basis: int, bit: int, partner_bit: Optional[int] = None) -> Preparation:
    basis = Basis(basis)
    partner = None if partner_bit is None else (Basis(1 - basis), int(partner_bit))
    return Preparation(slot_index, basis, int(bit), float(phase_of(basis, bit)), partner)


def prepare(rng: np.random.Generator, protocol: Protocol, slot_index: int = 0) -> Preparation:
    basis, bit = rng.integers(0, 2, size=2)
    partner = int(rng.integers(0, 2)) if Protocol(protocol) is Protocol.SARG else None
    return make_preparation(slot_index, int(basis), int(bit), partner)


def click_probabilities(prep: Preparation, setting: MeasurementSetting, visibility: float) -> tuple[float, float]:
    """Probabilities (p_D1, p_D2) for a photon of `prep` measured in `setting.basis`."""
    if not 0 <= visibility <= 1:
        raise ValueError(f"visibility must lie in [0, 1], got {visibility}")
    p1 = 0.5 * (1 + visibility * math.cos(prep.phase - float(bob_phase(setting.basis))))
    # cos(+-pi/2) leaves ~1e-17 residue
    p1 = round(p1, 15)
    return p1, 1.0 - p1


def sift_bb84(prep: Preparation, setting: MeasurementSetting, outcome: DetectionOutcome) -> Optional[tuple[int, int]]:
    if outcome.measured_basis(setting) != prep.basis:
        return None
    return prep.bit, outcome.detector_id


def sarg_inference(pair: frozenset, outcome_state: tuple[int, int]) -> Optional[tuple[int, int]]:
    """State Bob infers from an announced pair and his outcome, or None if inconclusive.

    A conclusive result excludes exactly one member of the pair (the one his
    outcome is orthogonal to) and leaves the other.
    """
    excluded = [s for s in pair if orthogonal(s, outcome_state)]
    if len(excluded) != 1:
        return None
    (remaining,) = pair - {excluded[0]}
    return remaining


def sift_sarg(prep: Preparation, setting: MeasurementSetting, outcome: DetectionOutcome) -> Optional[tuple[int, int]]:
    outcome_state = (outcome.measured_basis(setting), outcome.detector_id)
    inferred = sarg_inference(prep.announced_pair, outcome_state)
    if inferred is None:
        return None
    return int(prep.basis), int(inferred[0])


def sift(protocol: Protocol, prep, setting, outcome):
    if Protocol(protocol) is Protocol.BB84:
        return sift_bb84(prep, setting, outcome)
    return sift_sarg(prep, setting, outcome)


def resolve_slot(clicks: Sequence[DetectionOutcome], rng: np.random.Generator) -> Optional[DetectionOutcome]:
    """Keep one click per slot; simultaneous clicks are squashed to a uniform random choice."""
    if not clicks:
        return None
    if len(clicks) == 1:
        return clicks[0]
    return clicks[int(rng.integers(len(clicks)))]


# --- vectorised forms -------------------------------------------------------

def p_d1_many(alice_basis, alice_bit, bob_basis, visibility: float) -> np.ndarray:
    delta = phase_of(alice_basis, alice_bit) - bob_phase(bob_basis)
    return np.round(0.5 * (1 + visibility * np.cos(delta)), 15)


def sift_bb84_many(alice_basis, alice_bit, bob_basis, bob_bit):
    """Return (keep mask, alice bits, bob bits) for BB84 basis reconciliation."""
    keep = np.asarray(alice_basis) == np.asarray(bob_basis)
    return keep, np.asarray(alice_bit)[keep], np.asarray(bob_bit)[keep]


def sift_sarg_many(alice_basis, alice_bit, partner_bit, bob_basis, bob_bit):
    """Return (keep mask, alice key bits, bob key bits) for SARG.

    The pair is {(a, alice_bit), (1 - a, partner_bit)}; the decision is
    symmetric in the two members.
    """
    a = np.asarray(alice_basis)
    b = np.asarray(bob_basis)
    o = np.asarray(bob_bit)
    perp_sent = (b == a) & (o != np.asarray(alice_bit))
    perp_partner = (b == 1 - a) & (o != np.asarray(partner_bit))
    keep = perp_sent ^ perp_partner
    inferred_basis = np.where(perp_sent, 1 - a, a)
    return keep, a[keep], inferred_basis[keep]
