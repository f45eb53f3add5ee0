"""GNN-embedded pore network model for permeability prediction.

An edge-level graph neural network predicts per-throat hydraulic
conductances, a pore-network solver turns them into bulk permeability, and
a discrete adjoint couples the two so the model trains from a single scalar
permeability target per sample.
"""

from .errors import ParseError, PermnetError, SolverError, ValidationError
from .network import (EDGE_FEATURE_NAMES, NODE_FEATURE_NAMES, NormStats,
                      PhysicalConstants, PoreNetwork, compute_norm_stats,
                      generate_synthetic, load_network, load_norm_stats,
                      normalize, save_network, save_norm_stats,
                      synthetic_truth, validate_network)
from .solver import (AssembledSystem, FlowSolution, analytic_conductance,
                     assemble, solve)
from .adjoint import (AdjointResult, adjoint_solve, fd_gradient,
                      gradient_wrt_conductance, permeability_gradient)
from .gnn import (BaselineParameters, GnnDims, GnnParameters,
                  baseline_forward, gnn_backward, gnn_forward, init_params,
                  init_baseline_params)
from .training import (TrainConfig, TrainState, load_checkpoint, loss,
                       save_checkpoint, train, train_step)
from .evaluate import (MetricReport, SensitivityReport, evaluate,
                       feature_sensitivity, metrics)

__version__ = "0.1.0"
