"""Phase-dependent quantum noise of the vacuum polarization after a pumped atomic vapor."""

__version__ = "0.1.0"

from .angular import (
    CouplingTensor,
    Level,
    LevelScheme,
    PolarizationGeometry,
    SchemeError,
    build_scheme,
    dipole_weight,
    geometry_for,
    load_scheme_file,
    polarization_decompose,
    wigner3j,
    wigner6j,
)
from .dynamics import DriftSystem, DriveConfig, SteadyStateError, build_generator, solve_drive, steady_state
from .ensemble import VelocityEnsemble, doppler_average, doppler_width, ensemble_response, velocity_grid
from .noisespec import (
    DiffusionMatrix,
    MediumResponse,
    NoiseError,
    QuadratureSpectrum,
    SidebandCorrelation,
    assemble,
    diffusion_matrix,
    medium_response,
    quadrature_noise,
    quadrature_spectrum,
    sideband_correlations,
)
