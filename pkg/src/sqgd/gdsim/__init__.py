from .function import SimFunction, SimNode, SimParams, build_sim_function, eval_sim, node_coords, regime_report, sim_dim
from .hiding import HiddenFunction, HidingEmbedding, apply_hiding, leakage_trial
from .overview import OverviewFunction, overview_trajectory
from .simulation import GDSimulator, SQOracleFromFOA, SimTranscript, check_sim_accuracy, kappa, kappa_node, node_table, rho, run_simulation, sq_oracle_from_foa
from .tree import BooleanAnalystTree

__all__ = [
    "BooleanAnalystTree",
    "GDSimulator",
    "HiddenFunction",
    "HidingEmbedding",
    "OverviewFunction",
    "SQOracleFromFOA",
    "SimFunction",
    "SimNode",
    "SimParams",
    "SimTranscript",
    "apply_hiding",
    "build_sim_function",
    "check_sim_accuracy",
    "eval_sim",
    "kappa",
    "kappa_node",
    "leakage_trial",
    "node_coords",
    "node_table",
    "overview_trajectory",
    "regime_report",
    "rho",
    "run_simulation",
    "sim_dim",
    "sq_oracle_from_foa",
]
