"""Analytic and Monte Carlo models of GHz-clocked weak-pulse phase-encoding QKD
(BB84 and SARG) with up-conversion single-photon detectors."""

from .keyrate import LinkReport, RateParams
from .photonics import FiberChannel, SourceConfig
from .protocol import Basis, Origin, Protocol, Receiver
from .simulator import SimConfig, SimResult
from .updetector import UpconversionDetector

__version__ = "0.1.0"

__all__ = [
    "Basis", "FiberChannel", "LinkReport", "Origin", "Protocol", "RateParams", "Receiver",
    "SimConfig", "SimResult", "SourceConfig", "UpconversionDetector",
]
