"""Energy-aware task and mode allocation for multi-mode robots."""

from .allocator import (AllocationParams, AllocationSolution, AllocationSolver, MiqpProblem,
                        assemble_miqp, enumerate_exhaustive, solve_allocation)
from .convergence import (CertificateMatrices, PhiLayout, assemble_certificate_matrices,
                          certificate_search, psd_margin, quadratic_constraint_forms)
from .encoding import (EncodingGraph, ModeIndex, RobotSpec, apply_region_restriction,
                       build_mode_index, mapping_matrices, specialization_and_penalty)
from .scenario import Scenario, ScenarioError, load_bundled, load_scenario
from .simulation import Simulator, Trace, run_simulation, simulation_step
from .traceio import export_traces, read_traces

__version__ = "0.1.0"
