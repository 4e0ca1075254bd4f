"""Annealing schedules from the Krylov-variational adiabatic gauge potential."""

from .agp import AgpSolution, LanczosBasis, exact_agp_oracle, lanczos_expand, metric_at, solve_alpha
from .dynamics import RunResult, StateVector, apply_hamiltonian, evolve, ground_reference, relative_error
from .models import AnnealingModel, annni, generic, load_model, parse_model, tfim
from .pauli import OperatorSum, PauliString, commutator, dense_matrix, hs_inner, multiply
from .scheduler import MetricTable, Schedule, geodesic_schedule, linear_schedule, tabulate_metric

__version__ = "0.1.0"
