"""Flow-map computation and continuation of partially hyperbolic invariant
tori of autonomous Hamiltonian systems, with the spatial circular RTBP as
the built-in model."""

from .errors import (ChecksumError, ConfigError, ConvergenceError,
                     DegenerateDivisorError, IntegrationError, NumericalError,
                     PersistenceError, ResonanceError, SchemaError,
                     SingularityError, ToriflowError, TwistConditionError)
from .fourier import CurveMap, PeriodicFunction
from .model import HamiltonianModel, SymplecticStructure
from .rtbp import (MU_EARTH_MOON, LinearSpectrum, RtbpModel, RtbpParams,
                   find_l1, l1_state, linear_spectrum_at)
from .cohomology import (RotationNumber, solve_multiple_non_small_divisor,
                         solve_multiple_small_divisor, solve_non_small_divisor,
                         solve_small_divisor)
from .flow import (FlowResult, GridFlow, IntegratorConfig, flow_columns,
                   flow_grid, flow_point, flow_second_action,
                   flow_with_jacobian)

__version__ = "0.1.0"
