"""Scenario files: line-oriented ``section.key = value unit`` text.

    # comment
    include = bb84-25.cfg        # pull in the scenarios of another file
    channel.dispersion = 17 ps/nm/km   # lines before any [header] are shared

    [bb84-25]
    scenario.protocol = BB84
    channel.length = 25 km
    source.mu = 0.286            # or "opt" for the protocol's optimal value

Keys with a physical dimension must carry a unit. Dimensionless keys accept
a bare number or a percentage.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from . import keyrate, simulator
from .keyrate import RateParams
from .photonics import FiberChannel, SourceConfig, transmission
from .protocol import Protocol, Receiver
from .simulator import SimConfig
from .updetector import PRESETS as DETECTOR_PRESETS, operating_point


class ConfigError(ValueError):
    """Invalid scenario file: unknown key, bad unit, or value out of range."""


_UNITS = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "time": {"fs": 1e-3, "ps": 1.0, "ns": 1e3, "us": 1e6},
    "wavelength": {"pm": 1e-3, "nm": 1.0, "um": 1e3},
    "spectral": {"pm": 1.0, "nm": 1e3},
    "distance": {"m": 1e-3, "km": 1.0},
    "attenuation": {"dB/km": 1.0},
    "dispersion": {"ps/nm/km": 1.0, "ps/(nm km)": 1.0, "ps/(nm*km)": 1.0},
    "loss": {"dB": 1.0},
    "power": {"mW": 1e-3, "W": 1.0},
    "wg_length": {"mm": 0.1, "cm": 1.0},
    "norm_eff": {"/W/cm2": 1.0, "1/W/cm2": 1.0, "%/W/cm2": 0.01},
    "noise_lin": {"Hz/W": 1.0, "kHz/W": 1e3},
    "noise_quad": {"Hz/W2": 1.0, "Hz/W^2": 1.0, "kHz/W2": 1e3, "kHz/W^2": 1e3},
    "bitrate": {"bit/s": 1.0, "kbit/s": 1e3, "Mbit/s": 1e6},
    "dimensionless": {"": 1.0, "%": 0.01},
}

_INF = math.inf


@dataclass(frozen=True)
class _Key:
    kind: str  # a _UNITS dimension, or "str", "choice", "int", "bool"
    lo: float = -_INF
    hi: float = _INF
    choices: tuple = ()
    lo_open: bool = False


KEYS = {
    "scenario.name": _Key("str"),
    "scenario.protocol": _Key("choice", choices=("BB84", "SARG")),
    "scenario.receiver": _Key("choice", choices=("two", "four")),
    "source.rep_rate": _Key("frequency", 0, lo_open=True),
    "source.mu": _Key("dimensionless", 0),
    "source.wavelength": _Key("wavelength", 0, lo_open=True),
    "source.spectral_width": _Key("spectral", 0, lo_open=True),
    "source.pulse_width": _Key("time", 0, lo_open=True),
    "source.tbp_constant": _Key("dimensionless", 0, lo_open=True),
    "channel.length": _Key("distance", 0),
    "channel.attenuation": _Key("attenuation", 0),
    "channel.dispersion": _Key("dispersion"),
    "channel.excess_loss": _Key("loss", 0),
    "detector.preset": _Key("choice", choices=tuple(DETECTOR_PRESETS)),
    "detector.eta_norm": _Key("norm_eff", 0),
    "detector.waveguide_length": _Key("wg_length", 0, lo_open=True),
    "detector.pump_power": _Key("power", 0),
    "detector.target_efficiency": _Key("dimensionless", 0, 1),
    "detector.fixed_loss": _Key("dimensionless", 0, 1, lo_open=True),
    "detector.spad_efficiency": _Key("dimensionless", 0, 1, lo_open=True),
    "detector.jitter_fwhm": _Key("time", 0, lo_open=True),
    "detector.intrinsic_dark_rate": _Key("frequency", 0),
    "detector.noise_lin": _Key("noise_lin", 0),
    "detector.noise_quad": _Key("noise_quad", 0),
    "detector.afterpulse_prob": _Key("dimensionless", 0, 1),
    "detector.gate_width": _Key("time", 0, lo_open=True),
    "link.visibility": _Key("dimensionless", 0, 1),
    "link.q_disp": _Key("dimensionless", 0, 0.5),
    "link.i1": _Key("dimensionless", 0, 1),
    "link.eta": _Key("dimensionless", 0, 1),
    "link.p_dark": _Key("dimensionless", 0, 0.1),
    "link.measured_rate": _Key("bitrate", 0),
    "link.measured_qber": _Key("dimensionless", 0, 0.5),
    "sim.pulses": _Key("int", 1),
    "sim.seed": _Key("int", 0, 2 ** 64 - 1),
    "sim.block_size": _Key("int", 1),
    "sim.interferometer_delay": _Key("time", 0, lo_open=True),
    "sim.polarization": _Key("choice", choices=("controlled", "uncontrolled")),
    "sim.gated": _Key("bool"),
    "sim.fixed_state": _Key("choice", choices=("Z0", "Z1", "X0", "X1")),
    "output.csv": _Key("str"),
    "output.events": _Key("str"),
}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def parse_value(key: str, raw: str):
    """Convert the text of `key` to its internal unit, validating the range."""
    if key not in KEYS:
        raise ConfigError(f"unknown key '{key}'")
    spec = KEYS[key]
    raw = raw.strip()
    if spec.kind == "str":
        if not raw:
            raise ConfigError(f"{key}: empty value")
        return raw
    if spec.kind == "choice":
        for c in spec.choices:
            if raw.lower() == c.lower():
                return c
        raise ConfigError(f"{key}: '{raw}' is not one of {', '.join(spec.choices)}")
    if spec.kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{key}: '{raw}' is not a boolean")
    if key == "source.mu" and raw.lower() == "opt":
        return "opt"
    m = _NUMBER.match(raw)
    if not m:
        raise ConfigError(f"{key}: cannot parse number from '{raw}'")
    number, unit = float(m.group(1)), m.group(2)
    if spec.kind == "int":
        if unit or number != int(number):
            raise ConfigError(f"{key}: expected an integer, got '{raw}'")
        value = int(number)
    else:
        units = _UNITS[spec.kind]
        if unit not in units:
            if not unit:
                raise ConfigError(f"{key}: missing unit (one of {', '.join(u for u in units if u)})")
            allowed = ", ".join(repr(u) if u else "none" for u in units)
            raise ConfigError(f"{key}: unit '{unit}' not allowed (expected {allowed})")
        value = number * units[unit]
    low_bad = value <= spec.lo if spec.lo_open else value < spec.lo
    if low_bad or value > spec.hi:
        lb = "(" if spec.lo_open else "["
        raise ConfigError(f"{key}: {raw} outside {lb}{spec.lo:g}, {spec.hi:g}]")
    return value


def parse_text(text: str, origin: str = "<string>", base_dir: Optional[Path] = None) -> list[tuple[str, dict]]:
    """Parse file text into a list of (scenario name, {key: value})."""
    shared: dict = {}
    blocks: list[tuple[str, dict]] = []
    included: list[tuple[str, dict]] = []
    current = shared
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{origin}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{where}: empty scenario header")
            current = {}
            blocks.append((name, current))
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "include":
            if current is not shared:
                raise ConfigError(f"{where}: include is only allowed before the first scenario header")
            path = Path(raw)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            included.extend(load_file(path))
            continue
        try:
            current[key] = parse_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if blocks:
        scenarios = [(name, {**shared, **vals}) for name, vals in blocks]
    elif shared:
        scenarios = [(shared.get("scenario.name", Path(origin).stem), shared)]
    else:
        scenarios = []
    return included + scenarios


def load_file(path) -> list[tuple[str, dict]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc.strerror}") from None
    return parse_text(text, str(path), path.parent)


def preset_path(name: str) -> Path:
    """Path of a bundled scenario file (with or without the .cfg suffix)."""
    fname = name if name.endswith(".cfg") else name + ".cfg"
    return Path(str(resources.files("ghzqkd") / "presets" / fname))


def resolve_config(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    bundled = preset_path(arg)
    if bundled.exists():
        return bundled
    raise ConfigError(f"config '{arg}' not found (neither a file nor a bundled preset)")


@dataclass(frozen=True)
class Scenario:
    name: str
    sim: SimConfig
    rate: RateParams
    measured_rate: Optional[float] = None
    measured_qber: Optional[float] = None
    outputs: dict = field(default_factory=dict)


def _section(values: dict, prefix: str) -> dict:
    return {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(prefix + ".")}


def build_scenario(name: str, values: dict) -> Scenario:
    try:
        return _build(name, values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"scenario '{name}': {exc}") from None


def _build(name: str, values: dict) -> Scenario:
    protocol = Protocol(values.get("scenario.protocol", "BB84"))
    receiver = Receiver(values.get("scenario.receiver", "two"))

    chan = FiberChannel(**_section(values, "channel"))
    t = transmission(chan)

    src_vals = _section(values, "source")
    if src_vals.get("mu") == "opt":
        src_vals["mu"] = keyrate.optimal_mu(protocol, t)
    source = SourceConfig(**src_vals)

    det_vals = _section(values, "detector")
    det = DETECTOR_PRESETS[det_vals.pop("preset", "default")]
    target = det_vals.pop("target_efficiency", None)
    det = replace(det, **det_vals)
    if target is not None:
        if "pump_power" in det_vals:
            raise ConfigError(f"scenario '{name}': set either detector.pump_power or detector.target_efficiency")
        det = det.with_pump(operating_point(det, target))

    sim_vals = _section(values, "sim")
    fixed = sim_vals.pop("fixed_state", None)
    sim = SimConfig(
        source=source,
        channel=chan,
        detector=det,
        protocol=protocol,
        receiver=receiver,
        visibility=values.get("link.visibility", 0.99),
        interferometer_delay=sim_vals.get("interferometer_delay", 300.0),
        polarization_controlled=sim_vals.get("polarization", "controlled") == "controlled",
        n_pulses=sim_vals.get("pulses", 1_000_000),
        seed=sim_vals.get("seed", 0),
        gated=sim_vals.get("gated", True),
        fixed_state=None if fixed is None else ("ZX".index(fixed[0]), int(fixed[1])),
        block_size=sim_vals.get("block_size", simulator.DEFAULT_BLOCK),
    )

    rate = simulator.rate_params(sim)
    overrides = {k: values[f"link.{k}"] for k in ("eta", "p_dark", "q_disp", "i1") if f"link.{k}" in values}
    rate = replace(rate, **overrides)

    return Scenario(
        name=name,
        sim=sim,
        rate=rate,
        measured_rate=values.get("link.measured_rate"),
        measured_qber=values.get("link.measured_qber"),
        outputs=_section(values, "output"),
    )


def load_scenarios(arg: str) -> list[Scenario]:
    return [build_scenario(name, vals) for name, vals in load_file(resolve_config(arg))]
