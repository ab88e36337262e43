"""Spectral-Galerkin simulation and verification toolkit for semilinear SPDEs
whose linear part splits into 1x1 or 2x2 eigenblocks."""

from .control import (ControlProblem, ControlSignal, build_control, energy_scaling,
                      integrate_controlled, minimum_energy, phi_profile)
from .engine import (GalerkinState, PathEnsemble, couple_and_measure, convolution_moments,
                     exponential_euler_step, galerkin_convergence, sample_convolution,
                     simulate_ensemble)
from .errors import *  # noqa: F401,F403
from .models import (DriftSpec, SpectralModel, check_hoelder, check_theorem_conditions,
                     gamma_integrability, q_t, series_condition, trace_integrability)
from .spectral_core import (BlockOperator, EigenBlock, ExponentFit, build_damped_block,
                            build_heat_block, fit_exponent)
from .verify import (check_transformed_representation, counterexample_residual,
                     solve_kolmogorov_picard)

__version__ = "0.1.0"
