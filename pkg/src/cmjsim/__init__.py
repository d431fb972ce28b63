"""Multitype branching processes counted with random characteristics.

Exact limit constants from finite model data, generation-exact Monte Carlo,
and a pre-registered statistical battery for the fluctuation dichotomy.
"""

from .characteristics import (
    Characteristic,
    NoiseLaw,
    Phi1Characteristic,
    StarCharacteristic,
    expected_process,
    make_indicator_characteristic,
    make_phi1,
    star_transform,
)
from .constants import (
    TheoreticalConstants,
    compute_B,
    compute_constants,
    compute_sigma2,
    compute_sigma_l,
    compute_sigma_star2,
    compute_x1_x2,
    find_l_star,
)
from .model import (
    AssumptionReport,
    BranchingModel,
    OffspringLaw,
    build_model,
    enumerate_column_outcomes,
    validate_assumptions,
)
from .presets import PRESETS, preset, preset_names, write_scenario_files
from .scenario import Scenario, ScenarioError, load_scenario, loads_scenario, save_scenario
from .simulator import (
    BatchResult,
    GenerationState,
    ReplicateResult,
    run_batch,
    run_replicate,
    step_generation,
)
from .spectral import SpectralData, matrix_power_restricted, projected_power, spectral_decompose
from .stats import VerificationReport, ks_test, lln_check, verify_dichotomy

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport",
    "BatchResult",
    "BranchingModel",
    "Characteristic",
    "GenerationState",
    "NoiseLaw",
    "OffspringLaw",
    "PRESETS",
    "Phi1Characteristic",
    "ReplicateResult",
    "Scenario",
    "ScenarioError",
    "SpectralData",
    "StarCharacteristic",
    "TheoreticalConstants",
    "VerificationReport",
    "build_model",
    "compute_B",
    "compute_constants",
    "compute_sigma2",
    "compute_sigma_l",
    "compute_sigma_star2",
    "compute_x1_x2",
    "enumerate_column_outcomes",
    "expected_process",
    "find_l_star",
    "ks_test",
    "lln_check",
    "load_scenario",
    "loads_scenario",
    "make_indicator_characteristic",
    "make_phi1",
    "matrix_power_restricted",
    "preset",
    "preset_names",
    "projected_power",
    "run_batch",
    "run_replicate",
    "save_scenario",
    "spectral_decompose",
    "star_transform",
    "step_generation",
    "validate_assumptions",
    "verify_dichotomy",
    "write_scenario_files",
    "__version__",
]
