"""Desk-scale numerical laboratory for the non-cutoff Boltzmann collision operator.

Evaluates the singular collision operator through its hyperplane
(Carleman) kernel, runs spatially homogeneous relaxation with
conservation and entropy diagnostics, drives the spreading iteration that
produces Gaussian lower-bound certificates, and brute-force verifies the
quantitative kernel estimates.
"""

from .errors import (
    BoltzlabError,
    DegenerateConfigurationError,
    InputError,
    NumericalFailureError,
    ResolutionError,
    SingularConfigurationError,
    StiffnessError,
)
from .geometry import CollisionConfig, carleman_weights, deviation_angle, post_collision
from .grid import (
    DistributionField,
    VelocityGrid,
    build_initial_condition,
    field_from_csv,
    field_to_csv,
    indicator_field,
    maxwellian_field,
    two_bumps_field,
    zero_field,
)
from .kernel import (
    CancellationConstant,
    KernelParams,
    angular_b,
    cancellation_constant,
    carleman_kernel,
    lambda_weight,
)
from .lowerbound import (
    BarrierParams,
    BumpSpec,
    GaussianBound,
    SpreadingState,
    barrier,
    bump,
    certify,
    empirical_spreading,
    fit_gaussian,
    iterate,
    spread_step,
)
from .operator import (
    q_full,
    q_nonsingular,
    q_sigma_direct,
    q_sigma_oracle,
    q_singular,
    weighted_l1_distance,
)
from .quadrature import (
    ConeVolumes,
    PVQuadratureSpec,
    ball_second_moment,
    cone_volume_mc,
    pv_integral,
    tail_mass,
)
from .solver import (
    HydroBounds,
    SolveTrace,
    check_hydro_bounds,
    hydro_diagnostics,
    measure_plateau,
    solve,
    step,
)

__version__ = "0.1.0"
