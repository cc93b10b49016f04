"""Asymptotically distribution-free goodness-of-fit tests for diffusions
with small noise.

Typical use::

    from smallnoise_gof import builtin_ou, Grid, NoiseStream, simulate, first_test
    model = builtin_ou()
    traj = simulate(model, [1.0], 0.01, Grid(2000), NoiseStream(seed=1))
    report, curves = first_test(model, traj)
"""
from .gof_first import FirstTestCurves, PowerDiagnostics, TestReport, first_test, theta_star
from .gof_second import SecondTestCurves, TruncationPolicy, pinv_plus, second_test
from .limits import Family, QuantileTable, quantile
from .mle import EstimationResult, estimate, fisher_information
from .model import (
    AlternativeDrift,
    ModelSpec,
    ParameterSpace,
    builtin_example1,
    builtin_example2,
    builtin_invisible,
    builtin_ou,
    builtin_ou_level,
    family_alternative,
    invisible_alternative,
    load_linear_model,
    model_from_tag,
)
from .ode import DeterministicPath, Grid, solve_alternative_ode, solve_limit_ode
from .sde import NoiseStream, Trajectory, simulate, simulate_alternative

__version__ = "0.1.0"
