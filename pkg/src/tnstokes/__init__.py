"""Crank-Nicolson Taylor-Hood solver for stochastic power-law Stokes flow with transport noise,
plus Monte-Carlo estimation of occupation measures."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DataError, DomainError, NonConvergenceError,  # noqa: F401
                     RangeError, SingularityError, SolverError, StepError, TNStokesError)
from .mesh import TriMesh, build_uniform, locate_point  # noqa: F401
from .fem import FieldExpr, GradientDiscretisation  # noqa: F401
from .rheology import RheologyParams, stress, stress_derivative, v_tensor  # noqa: F401
from .assembly import AssembledForms, assemble_static  # noqa: F401
from .solver import NewtonConfig, SaddleSolver, newton_solve, solve_saddle  # noqa: F401
from .noise import NoisePath  # noqa: F401
from .dynamics import DiscreteState, Stepper, StepperConfig, run_trajectory  # noqa: F401
from .presets import preset_fields  # noqa: F401
from .constants import estimate_constants_p2  # noqa: F401
