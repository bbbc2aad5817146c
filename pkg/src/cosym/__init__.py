"""Evolution fields of thermodynamic systems on partially cosymplectic manifolds."""

from .errors import (
    ConfigError,
    CosymError,
    DegenerateStructure,
    DomainError,
    ExprSyntaxError,
    LayoutMismatch,
    NewtonDivergence,
    NonFiniteState,
    SingularLegendre,
    StepFailure,
    TemperatureDegenerate,
    UnknownVariable,
)
from .expr import Expression, eval_value, eval_with_grad, parse, to_source
from .geometry import ChartSpec, SystemClass, build_two_form, flat_operator, flat_solve, reeb_family
from .systems import (
    SystemInstance,
    entropy_identity_residual,
    evolution_field,
    explicit_rhs_oracle,
    make_system,
    system_from_expressions,
)
from .legendre import (
    LagrangianSystem,
    LegendreMap,
    hamiltonian_system,
    lagrangian_system_from_expressions,
    transport_gap,
)
from .dynamics import IntegratorConfig, InvariantReport, Trajectory, check_invariants, integrate
from .config import Scenario, load_scenario

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
