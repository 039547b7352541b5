"""Context-aware metric-DP perturbation mechanisms for discrete
vehicle-location domains: LP synthesis, blanket-based reduction, sampling,
and privacy/utility audits."""

from .geo import (
    AugmentedSecret,
    ContextWeights,
    GeoPoint,
    Key,
    LocationDomain,
    context_distance,
    haversine_km,
    key_metric,
    neighbor_pairs,
    plain_key,
)
from .roadnet import RoadGraph, ShortestPathTree, load_graph, shortest_path_tree, snap_to_node
from .priors import PriorModel, TrajectoryLog, estimate_priors, next_location_dist, task_prior
from .utility import CostTensor, cost_context_blanket, cost_context_free, cost_markov1
from .lp import (
    LinearProgram,
    LpSolution,
    build_cmdp_full_lp,
    build_cmdp_reduced_lp,
    build_mdp_lp,
    build_refined_lp,
    solve,
)
from .mechanisms import (
    PerturbationMatrix,
    blanket_key_for,
    exp_mechanism,
    expected_loss,
    sample_output,
)
from .blanket import CiSample, ci_test, identify_blanket, partition_dataset, predict_blanket, train_predictor
from .audit import audit_mechanism, check_pl_bound, posterior_leakage, verify_mdp

__version__ = "0.1.0"
