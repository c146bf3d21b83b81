"""Bohmian exit statistics for one- and two-particle scattering."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .states import (
    AnalyticState,
    GaussianPacketSpec,
    GridState,
    MomentumAmplitude,
    make_entangled_pair,
    make_gaussian,
    momentum_amplitude,
    sample_initial_configuration,
)
from .propagate import (
    Potential1D,
    TwoTimeWave,
    evolve_scattering,
    extract_outgoing,
    free_evolve,
    local_plane_wave,
    multitime_evolve,
    split_step_evolve,
)
from .bohm import (
    Trajectory,
    TrajectoryBundle,
    independence_residual,
    integrate_ensemble,
    integrate_trajectory,
    multitime_velocity,
    two_time_flow,
    velocity,
)
from .sphere import Patch, SpherePartition
from .flux import cone_momentum_integral, cone_table, flux_integral, straight_path_exit_integral
from .exits import count_crossings, detect_exit, joint_exit_experiment, line_exit_experiment
from .amplitudes import Potential3D, born_T, born_amplitude, cross_section, scattering_amplitude
from .report import ComparisonReport
