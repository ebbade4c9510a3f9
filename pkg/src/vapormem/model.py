"""
Physical parameters of the four-level Lambda memory.

Units used throughout the package: time in ns, angular frequencies in rad/ns,
cell length in mm, beam waists in um.  Ordinary frequencies in MHz convert
with :func:`mhz` (``2*pi*f*1e-3``).
"""

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants
from scipy.special import erfcx, gamma as gamma_fn

from .errors import ConfigurationError, DomainError

AMU_RB87 = 86.909180527
D1_WAVELENGTH_NM = 794.979
D1_HYPERFINE_MHZ = 814.5
D1_GAMMA_RAD_MHZ = 5.75
GROUND_HYPERFINE_MHZ = 6834.682611

# Relative dipole amplitudes for |F=2,m=2> -> |F'=1,1>, |F'=2,1> (sigma-) and
# |F=1,m=0> -> |F'=1,1>, |F'=2,1> (sigma+), from the 87Rb D1 Wigner 6j/CG
# tables.  Signal pair normalised to unit norm, control pair to b1 = 1.
D1_SIGNAL_COUPLING = (math.sqrt(3) / 2, -0.5)
D1_CONTROL_COUPLING = (1.0, math.sqrt(3))

N2_BROADENING_MHZ_PER_TORR = 10.0
BUFFER_PRESSURE_TORR = 5.0
BEAM_ANGLE_RAD = 2.95e-3


def mhz(f):
    """Ordinary frequency in MHz -> angular frequency in rad/ns."""
    return 2 * np.pi * f * 1e-3


def to_mhz(w):
    """Angular frequency in rad/ns -> ordinary frequency in MHz."""
    return w / (2 * math.pi) * 1e3


def derive_doppler_sigma(temperature_C, atomic_mass_amu, wavelength_nm):
    """1-sigma Doppler shift k*sqrt(kB*T/m) of a single-photon transition, in rad/ns."""
    if atomic_mass_amu <= 0 or wavelength_nm <= 0:
        raise DomainError("atomic mass and wavelength must be positive")
    kelvin = temperature_C + 273.15
    if kelvin <= 0:
        raise DomainError("temperature must be above absolute zero")
    mass = atomic_mass_amu * constants.atomic_mass
    sigma_v = math.sqrt(constants.k * kelvin / mass)
    k = 2 * math.pi / (wavelength_nm * 1e-9)
    return k * sigma_v * 1e-9


def twophoton_doppler_fraction(angle_rad=BEAM_ANGLE_RAD,
                               ground_splitting_mhz=GROUND_HYPERFINE_MHZ,
                               wavelength_nm=D1_WAVELENGTH_NM):
    """Residual two-photon Doppler shift relative to the one-photon shift.

    Signal and control overlap under ``angle_rad``; the longitudinal mismatch
    and the transverse projection are added in quadrature.
    """
    nu = constants.c / (wavelength_nm * 1e-9) * 1e-6  # MHz
    ratio = 1 + ground_splitting_mhz / nu
    longitudinal = 1 - ratio * math.cos(angle_rad)
    transverse = ratio * math.sin(angle_rad)
    return math.hypot(longitudinal, transverse)


def collisional_halfwidth(pressure_torr=BUFFER_PRESSURE_TORR,
                          coefficient_mhz_per_torr=N2_BROADENING_MHZ_PER_TORR):
    """Pressure-broadened half-width in rad/ns."""
    return mhz(pressure_torr * coefficient_mhz_per_torr)


def doppler_absorption_factor(gamma, doppler_sigma):
    """Resonant absorption of a Gaussian-broadened line relative to the
    unbroadened one: the Voigt peak sqrt(pi) x erfcx(x), x = gamma/(sigma sqrt 2)."""
    if gamma <= 0 or doppler_sigma < 0:
        raise DomainError("gamma must be positive and doppler_sigma non-negative")
    if doppler_sigma == 0:
        return 1.0
    x = gamma / (doppler_sigma * math.sqrt(2))
    return float(math.sqrt(math.pi) * x * erfcx(x))


def homogeneous_optical_depth(optical_depth, gamma, doppler_sigma):
    """Optical depth of the velocity-resolved medium whose Doppler-broadened
    resonant absorption equals ``optical_depth``."""
    return optical_depth / doppler_absorption_factor(gamma, doppler_sigma)


@dataclass(frozen=True)
class LevelScheme:
    """Detunings, rates and relative couplings of the four-level system.

    All frequencies in rad/ns.  ``delta_twophoton`` follows
    Delta_tp = Delta_c - Delta_s.
    """
    delta_signal: float
    delta_twophoton: float = 0.0
    hyperfine_splitting: float = mhz(D1_HYPERFINE_MHZ)
    gamma_rad: float = mhz(D1_GAMMA_RAD_MHZ)
    gamma_coll: float = 0.0
    gamma_spin: float = 0.0
    coupling_signal: tuple = D1_SIGNAL_COUPLING
    coupling_control: tuple = D1_CONTROL_COUPLING

    def __post_init__(self):
        object.__setattr__(self, "coupling_signal", tuple(float(c) for c in self.coupling_signal))
        object.__setattr__(self, "coupling_control", tuple(float(b) for b in self.coupling_control))
        if len(self.coupling_signal) != 2 or len(self.coupling_control) != 2:
            raise ConfigurationError("couplings must be pairs")
        if not self.gamma_rad > 0:
            raise ConfigurationError("gamma_rad must be positive")
        if self.gamma_coll < 0 or self.gamma_spin < 0:
            raise ConfigurationError("gamma_coll and gamma_spin must be non-negative")
        if not self.hyperfine_splitting > 0:
            raise ConfigurationError("hyperfine_splitting must be positive")
        c1, c2 = self.coupling_signal
        b1, b2 = self.coupling_control
        if abs(c1 * c1 + c2 * c2 - 1) > 1e-9:
            raise ConfigurationError("signal couplings must satisfy c1^2 + c2^2 = 1")
        if (c1 * b1) * (c2 * b2) > 0:
            raise ConfigurationError("storage pathways c1*b1 and c2*b2 must have opposite signs")

    @property
    def gamma(self):
        """Total optical coherence decay rate (half-width)."""
        return self.gamma_rad + self.gamma_coll

    @property
    def excited_detunings(self):
        return self.delta_signal, self.delta_signal - self.hyperfine_splitting


@dataclass(frozen=True)
class EnsembleConfig:
    """Vapour, beam and discretisation parameters.

    ``optical_depth`` is the resonant intensity optical depth of the signal
    transition.  With ``od_includes_doppler`` (default) it is the value a
    measurement on the hot vapour returns, i.e. including Doppler broadening;
    the per-class coupling is scaled up accordingly.  Otherwise it is the
    optical depth of atoms at rest.
    """
    optical_depth: float = 25.0
    cell_length: float = 75.0
    doppler_sigma: float = 0.0
    twophoton_doppler_fraction: float = 0.0
    n_velocity_classes: int = 16
    n_rings: int = 8
    signal_waist: float = 240.0
    control_waist: float = 260.0
    n_z: int = 48
    dt: float = 0.01
    memory_lifetime: float = 680.0
    od_includes_doppler: bool = True

    def effective_optical_depth(self, gamma):
        """Optical depth of atoms at rest entering the coupling constant."""
        if not self.od_includes_doppler:
            return self.optical_depth
        return homogeneous_optical_depth(self.optical_depth, gamma, self.doppler_sigma)

    def __post_init__(self):
        if self.optical_depth < 0:
            raise ConfigurationError("optical_depth must be >= 0")
        if self.n_velocity_classes < 1 or self.n_rings < 1:
            raise ConfigurationError("n_velocity_classes and n_rings must be >= 1")
        if self.n_z < 8:
            raise ConfigurationError("n_z must be >= 8")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not 0 <= self.twophoton_doppler_fraction <= 1:
            raise ConfigurationError("twophoton_doppler_fraction must lie in [0, 1]")
        if self.cell_length <= 0 or self.signal_waist <= 0 or self.control_waist <= 0:
            raise ConfigurationError("lengths and waists must be positive")
        if self.doppler_sigma < 0 or self.memory_lifetime <= 0:
            raise ConfigurationError("doppler_sigma must be >= 0 and memory_lifetime > 0")


class Shape(str, enum.Enum):
    GAUSSIAN = "gaussian"
    DOUBLE_EXPONENTIAL = "double_exponential"
    FLAT_TOP = "flat_top"


_LN2 = math.log(2)
_FLAT_TOP_ORDER = 8


@dataclass(frozen=True)
class PulseSpec:
    """Temporal envelope; ``fwhm`` always refers to the intensity profile.

    gaussian           A = exp(-2 ln2 (t-c)^2 / w^2)
    double_exponential A = exp(-ln2 |t-c| / w)
    flat_top           A = exp(-ln2/2 (2(t-c)/w)^8)   (super-Gaussian)
    """
    shape: Shape = Shape.GAUSSIAN
    peak_amplitude: float = 1.0
    fwhm: float = 1.0
    center: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        if not self.fwhm > 0:
            raise ConfigurationError("fwhm must be positive")
        if self.peak_amplitude < 0:
            raise ConfigurationError("peak_amplitude must be >= 0")

    def profile(self, t):
        """Unit-peak amplitude profile."""
        x = (np.asarray(t, dtype=float) - self.center) / self.fwhm
        if self.shape is Shape.GAUSSIAN:
            return np.exp(-2 * _LN2 * x * x)
        if self.shape is Shape.DOUBLE_EXPONENTIAL:
            return np.exp(-_LN2 * np.abs(x))
        return np.exp(-0.5 * _LN2 * (2 * x) ** _FLAT_TOP_ORDER)

    def envelope(self, t):
        return self.peak_amplitude * self.profile(t)

    def unit_energy(self):
        """Integral of the squared unit-peak profile over all time."""
        w = self.fwhm
        if self.shape is Shape.GAUSSIAN:
            return w * math.sqrt(math.pi / (4 * _LN2))
        if self.shape is Shape.DOUBLE_EXPONENTIAL:
            return w / _LN2
        n = _FLAT_TOP_ORDER
        return w * gamma_fn(1 + 1 / n) / _LN2 ** (1 / n)

    def photon_amplitude(self, t):
        """Profile scaled so the squared modulus integrates to one."""
        return self.profile(t) / math.sqrt(self.unit_energy())

    def half_extent(self, tail=1e-6):
        """Half-width around the centre holding all but ``tail`` of the energy,
        never less than four FWHM."""
        w = self.fwhm
        if self.shape is Shape.DOUBLE_EXPONENTIAL:
            t = w * math.log(1 / tail) / (2 * _LN2)
        elif self.shape is Shape.GAUSSIAN:
            t = 2.5 * w
        else:
            t = 1.5 * w
        return max(4 * w, t)

    def shifted(self, center):
        return replace(self, center=center)

    def scaled(self, peak_amplitude):
        return replace(self, peak_amplitude=peak_amplitude)


def pulse_envelope(spec, t):
    """Field amplitude of ``spec`` at time(s) ``t``."""
    return spec.envelope(t)


def fwhm_from_bandwidth(bandwidth_mhz):
    """Intensity FWHM (ns) of a double-exponential photon with Lorentzian
    linewidth ``bandwidth_mhz``: amplitude exp(-pi*dnu*|t|)."""
    return _LN2 / (math.pi * bandwidth_mhz * 1e-3)


def default_experiment_config():
    """Operating point of the experiment: (scheme, ensemble, signal, control)."""
    scheme = LevelScheme(
        delta_signal=mhz(-700.0),
        delta_twophoton=mhz(-130.0),
        hyperfine_splitting=mhz(D1_HYPERFINE_MHZ),
        gamma_rad=mhz(D1_GAMMA_RAD_MHZ),
        gamma_coll=collisional_halfwidth(),
        gamma_spin=0.0,
    )
    ensemble = EnsembleConfig(
        optical_depth=25.0,
        cell_length=75.0,
        doppler_sigma=derive_doppler_sigma(50.0, AMU_RB87, D1_WAVELENGTH_NM),
        twophoton_doppler_fraction=twophoton_doppler_fraction(),
        n_velocity_classes=16,
        n_rings=8,
        signal_waist=240.0,
        control_waist=260.0,
        n_z=48,
        dt=0.01,
        memory_lifetime=680.0,
    )
    signal = PulseSpec(Shape.DOUBLE_EXPONENTIAL, 1.0, fwhm_from_bandwidth(370.0), 0.0)
    control = PulseSpec(Shape.GAUSSIAN, mhz(400.0), 3.77, 0.0)
    return scheme, ensemble, signal, control
