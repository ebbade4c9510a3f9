"""Simulation and counting analysis for a broadband warm-vapour Lambda memory."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DomainError, FitError, NegativeSignalError,
                     NumericalInstabilityError, UndefinedEstimateError)
from .model import (EnsembleConfig, LevelScheme, PulseSpec, Shape, default_experiment_config,
                    derive_doppler_sigma, fwhm_from_bandwidth, mhz, pulse_envelope, to_mhz)
from .solver import FieldState, MemoryRunResult, chebyshev_diff_matrix, run_protocol, step
from .ensemble import (AlignmentKernel, RingDecomposition, VelocityGrid, build_rings,
                       build_velocity_grid, ensemble_run, rethermalize)
from .config import ExperimentConfig, dump_config, load_config
from .sweep import SweepSpec, optimize_alignment, run_sweep
