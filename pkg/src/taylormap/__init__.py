"""Taylor maps, polynomial neural networks and their benchmarks."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CrossingError,
    MapBuildError,
    NumericalError,
    RankDeficientError,
    ToleranceError,
    TrainingError,
)
from .mapbuilder import AdaptiveMapFamily, BuildConfig, TaylorMap, build_map, build_map_family, decade_spans  # noqa: E402
from .odemodel import (  # noqa: E402
    BurgersGrid,
    DeflectorParams,
    PolynomialODE,
    RayleighPlessetParams,
    burgers_semidiscrete,
    deflector,
    make_system,
    rayleigh_plesset,
    system_from_label,
    van_der_pol,
)
from .pnn import PNN, StopBelow, Trajectory, adaptive_propagate, burgers_propagate, compose, propagate  # noqa: E402
from .polyalg import MonomialBasis, MultiIndex, PolyMap, compose_truncate, monomial_basis, reduced_power  # noqa: E402
from .training import (  # noqa: E402
    BinaryMask,
    DataSet,
    FitReport,
    QuboProblem,
    fine_tune_residual,
    fit_gradient,
    fit_least_squares,
    qubo_mask_step,
    stack_architecture,
)
