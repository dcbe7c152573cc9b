"""Cable-net formwork equilibria and GP-based identification of unstressed edge lengths."""

__version__ = "0.1.0"

from .errors import (
    CholeskyError,
    DatasetError,
    DegenerateGeometryError,
    FitError,
    FormnetError,
    PriorReversionWarning,
    ProvenanceError,
    SlackEdgeWarning,
    SolverError,
)
from .net import (
    EdgeParams,
    FrameSpec,
    Geometry,
    SagSpec,
    Topology,
    edge_length,
    edge_lengths,
    force_residual,
    load_net,
    save_net,
    synth_net,
    total_energy,
)
from .equilibrium import EquilibriumState, solve_equilibrium, verify_equilibrium
from .conic import ConicProblem, build_conic_problem
from .gp import GpModel, Hyperparameters, FitConfig, fit_hyperparameters, fit_model, kernel, nlml, posterior
from .dataset import Scenario, SamplePair, generate, make_scenario, split
from .identify import EvalReport, Identifier, evaluate_cv, evaluate_form_errors, identify, train
