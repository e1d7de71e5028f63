"""Value functions of M/G/1 FCFS queues under general waiting costs."""

from .errors import (
    AdmissibilityError,
    CellOverflow,
    ConfigError,
    DivergentSeries,
    DomainError,
    Mg1wError,
    PoleEvaluation,
    SingularExpansion,
    StabilityViolation,
    UnsupportedModel,
)
from .numerics import Interval
from .piecewise import PiecewiseCostSpec, w_piecewise
from .service_models import Deterministic, Erlang, Exponential, QueueSpec
from .wfunction_core import (
    ExpPolyCost,
    ExpPolyTerm,
    PiecewiseExpPoly,
    WResult,
    admission_cost,
    mean_cost_per_job,
    relative_value,
    w_for_exp_poly_cost,
    w_table1,
)

__version__ = "0.1.0"
