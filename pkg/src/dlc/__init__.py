"""Learning curves of deep Bayesian linear regression models and their Monte Carlo checks."""

from .model import (
    Architecture,
    DomainError,
    ModelKind,
    Phase,
    PhaseKind,
    Scenario,
    TheoryResult,
    classify_phase,
    sigma_tilde2,
)
from .theory import (
    MultipleRoots,
    NoPhysicalRoot,
    RootCondition,
    build_root_condition,
    epsilon,
    epsilon_lr,
    epsilon_nn,
    epsilon_rf,
    solve_z,
)

__version__ = "0.1.0"
