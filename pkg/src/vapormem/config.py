"""
Plain-text experiment configuration.

One setting per line, ``section.key = value``; ``#`` starts a comment.
Frequencies are ordinary frequencies in MHz and are converted to rad/ns
when the physical objects are built.  Tuples are comma separated, booleans
are ``true``/``false``, and ``none`` (or an empty value) selects the
automatic choice where one exists.

Example::

    scheme.delta_signal_mhz = -700
    control.peak_mhz = 400
    protocol.storage_time_ns = 160
"""

import dataclasses
import math
from dataclasses import dataclass

from .errors import ConfigurationError
from .model import (AMU_RB87, BEAM_ANGLE_RAD, BUFFER_PRESSURE_TORR, D1_CONTROL_COUPLING,
                    D1_GAMMA_RAD_MHZ, D1_HYPERFINE_MHZ, D1_SIGNAL_COUPLING, D1_WAVELENGTH_NM,
                    N2_BROADENING_MHZ_PER_TORR, EnsembleConfig, LevelScheme, PulseSpec, Shape,
                    collisional_halfwidth, derive_doppler_sigma, fwhm_from_bandwidth, mhz,
                    twophoton_doppler_fraction)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a simulated storage experiment, in file units."""
    # scheme
    delta_signal_mhz: float = -700.0
    delta_twophoton_mhz: float = -130.0
    hyperfine_splitting_mhz: float = D1_HYPERFINE_MHZ
    gamma_rad_mhz: float = D1_GAMMA_RAD_MHZ
    buffer_pressure_torr: float = BUFFER_PRESSURE_TORR
    broadening_mhz_per_torr: float = N2_BROADENING_MHZ_PER_TORR
    gamma_spin_mhz: float = 0.0
    coupling_signal: tuple = D1_SIGNAL_COUPLING
    coupling_control: tuple = D1_CONTROL_COUPLING
    # ensemble
    optical_depth: float = 25.0
    od_includes_doppler: bool = True
    cell_length_mm: float = 75.0
    temperature_c: float = 50.0
    atomic_mass_amu: float = AMU_RB87
    wavelength_nm: float = D1_WAVELENGTH_NM
    beam_angle_mrad: float = BEAM_ANGLE_RAD * 1e3
    n_velocity_classes: int = 16
    n_rings: int = 8
    signal_waist_um: float = 240.0
    control_waist_um: float = 260.0
    n_z: int = 48
    dt_ns: float = 0.01
    memory_lifetime_ns: float = 680.0
    # signal photon
    signal_shape: str = Shape.DOUBLE_EXPONENTIAL.value
    signal_bandwidth_mhz: float = 370.0
    signal_fwhm_ns: float = None
    # control pulses
    control_shape: str = Shape.GAUSSIAN.value
    control_peak_mhz: float = 400.0
    control_fwhm_ns: float = 3.77
    control_offset_ns: float = 0.0
    readout_peak_mhz: float = None
    readout_fwhm_ns: float = None
    # protocol
    storage_time_ns: float = 160.0
    align: bool = False

    def scheme(self):
        return LevelScheme(
            delta_signal=mhz(self.delta_signal_mhz),
            delta_twophoton=mhz(self.delta_twophoton_mhz),
            hyperfine_splitting=mhz(self.hyperfine_splitting_mhz),
            gamma_rad=mhz(self.gamma_rad_mhz),
            gamma_coll=collisional_halfwidth(self.buffer_pressure_torr,
                                             self.broadening_mhz_per_torr),
            gamma_spin=mhz(self.gamma_spin_mhz),
            coupling_signal=self.coupling_signal,
            coupling_control=self.coupling_control,
        )

    def ensemble(self):
        return EnsembleConfig(
            optical_depth=self.optical_depth,
            cell_length=self.cell_length_mm,
            doppler_sigma=derive_doppler_sigma(self.temperature_c, self.atomic_mass_amu,
                                               self.wavelength_nm),
            twophoton_doppler_fraction=twophoton_doppler_fraction(self.beam_angle_mrad * 1e-3),
            n_velocity_classes=self.n_velocity_classes,
            n_rings=self.n_rings,
            signal_waist=self.signal_waist_um,
            control_waist=self.control_waist_um,
            n_z=self.n_z,
            dt=self.dt_ns,
            memory_lifetime=self.memory_lifetime_ns,
            od_includes_doppler=self.od_includes_doppler,
        )

    def signal(self):
        fwhm = self.signal_fwhm_ns
        if fwhm is None:
            if not self.signal_bandwidth_mhz > 0:
                raise ConfigurationError("signal.bandwidth_mhz must be positive")
            fwhm = fwhm_from_bandwidth(self.signal_bandwidth_mhz)
        return PulseSpec(self.signal_shape, 1.0, fwhm, 0.0)

    def control_in(self):
        return PulseSpec(self.control_shape, mhz(self.control_peak_mhz), self.control_fwhm_ns,
                         self.control_offset_ns)

    def control_out(self):
        peak = self.control_peak_mhz if self.readout_peak_mhz is None else self.readout_peak_mhz
        fwhm = self.control_fwhm_ns if self.readout_fwhm_ns is None else self.readout_fwhm_ns
        return PulseSpec(self.control_shape, mhz(peak), fwhm, 0.0)

    def physical(self):
        """(scheme, ensemble, signal, control_in, control_out, storage_time)."""
        if self.storage_time_ns < 0:
            raise ConfigurationError("protocol.storage_time_ns must be >= 0")
        return (self.scheme(), self.ensemble(), self.signal(), self.control_in(),
                self.control_out(), self.storage_time_ns)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# file key -> field name
KEYS = {
    "scheme.delta_signal_mhz": "delta_signal_mhz",
    "scheme.delta_twophoton_mhz": "delta_twophoton_mhz",
    "scheme.hyperfine_splitting_mhz": "hyperfine_splitting_mhz",
    "scheme.gamma_rad_mhz": "gamma_rad_mhz",
    "scheme.buffer_pressure_torr": "buffer_pressure_torr",
    "scheme.broadening_mhz_per_torr": "broadening_mhz_per_torr",
    "scheme.gamma_spin_mhz": "gamma_spin_mhz",
    "scheme.coupling_signal": "coupling_signal",
    "scheme.coupling_control": "coupling_control",
    "ensemble.optical_depth": "optical_depth",
    "ensemble.od_includes_doppler": "od_includes_doppler",
    "ensemble.cell_length_mm": "cell_length_mm",
    "ensemble.temperature_c": "temperature_c",
    "ensemble.atomic_mass_amu": "atomic_mass_amu",
    "ensemble.wavelength_nm": "wavelength_nm",
    "ensemble.beam_angle_mrad": "beam_angle_mrad",
    "ensemble.n_velocity_classes": "n_velocity_classes",
    "ensemble.n_rings": "n_rings",
    "ensemble.signal_waist_um": "signal_waist_um",
    "ensemble.control_waist_um": "control_waist_um",
    "ensemble.n_z": "n_z",
    "ensemble.dt_ns": "dt_ns",
    "ensemble.memory_lifetime_ns": "memory_lifetime_ns",
    "signal.shape": "signal_shape",
    "signal.bandwidth_mhz": "signal_bandwidth_mhz",
    "signal.fwhm_ns": "signal_fwhm_ns",
    "control.shape": "control_shape",
    "control.peak_mhz": "control_peak_mhz",
    "control.fwhm_ns": "control_fwhm_ns",
    "control.offset_ns": "control_offset_ns",
    "readout.peak_mhz": "readout_peak_mhz",
    "readout.fwhm_ns": "readout_fwhm_ns",
    "protocol.storage_time_ns": "storage_time_ns",
    "protocol.align": "align",
}

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig()
_OPTIONAL = {"signal_fwhm_ns", "readout_peak_mhz", "readout_fwhm_ns"}
_SHAPES = {s.value for s in Shape}


def parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name, text):
    text = text.strip()
    default = getattr(_DEFAULTS, name)
    if name in _OPTIONAL:
        if text.lower() in ("", "none", "auto"):
            return None
        value = float(text)
    elif isinstance(default, bool):
        value = parse_bool(text)
    elif isinstance(default, int):
        value = int(text)
    elif isinstance(default, float):
        value = float(text)
    elif isinstance(default, tuple):
        value = tuple(float(x) for x in text.split(","))
        if len(value) != 2:
            raise ValueError("expected two comma-separated numbers")
    else:
        value = text
        if name.endswith("_shape") and value not in _SHAPES:
            raise ValueError(f"unknown shape {value!r}; expected one of {sorted(_SHAPES)}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError("value must be finite")
    return value


def parse_assignments(lines, source="<config>"):
    """Parse ``section.key = value`` lines into an ordered dict of raw strings.

    Later assignments win.  Malformed lines raise ConfigurationError listing
    every offending line.
    """
    out, bad = {}, []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            bad.append(f"{source}:{lineno}: expected 'section.key = value'")
            continue
        out[key] = value.strip()
    if bad:
        raise ConfigurationError("; ".join(bad))
    return out


def from_mapping(mapping, base=None):
    """Apply raw string (or already typed) values onto ``base``."""
    base = base or ExperimentConfig()
    changes, errors = {}, []
    for key, value in mapping.items():
        name = KEYS.get(key)
        if name is None:
            errors.append(f"unknown key {key!r}")
            continue
        try:
            changes[name] = _convert(name, value) if isinstance(value, str) else value
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        raise ConfigurationError("invalid configuration: " + "; ".join(errors))
    cfg = dataclasses.replace(base, **changes)
    validate(cfg)
    return cfg


def validate(cfg):
    """Build the physical objects once so that bad values fail early."""
    try:
        cfg.physical()
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    return cfg


def parse_overrides(items):
    """``["section.key=value", ...]`` -> mapping (last wins)."""
    out, bad = {}, []
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            bad.append(item)
            continue
        out[key.strip()] = value.strip()
    if bad:
        raise ConfigurationError("malformed --set values: " + ", ".join(map(repr, bad)))
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    mapping = {}
    if path is not None:
        with open(path) as fh:
            mapping.update(parse_assignments(fh, source=str(path)))
    mapping.update(parse_overrides(overrides) if isinstance(overrides, (list, tuple))
                   else (overrides or {}))
    return from_mapping(mapping)


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_mapping(cfg):
    """Resolved configuration as ``{key: text}``."""
    return {key: _format(getattr(cfg, name)) for key, name in KEYS.items()}


def dump_config(cfg):
    """Text form that :func:`load_config` reads back to an equal object."""
    lines, section = [], None
    for key, text in to_mapping(cfg).items():
        sec = key.split(".", 1)[0]
        if sec != section:
            if section is not None:
                lines.append("")
            section = sec
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
