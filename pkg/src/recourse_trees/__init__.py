"""Classification trees and forests that keep low-cost recourse available."""
from .cost import CostModel, InfeasibleActionError, ReachTable, action_cost, build_reach_table, reach_interval
from .data import DataError, Dataset, FeatureMeta, build_quantiles, build_thresholds, load_dataset, sort_permutations
from .forest import Forest, ForestConfig, predict_forest, train_forest
from .recourse import Action, ActionExtractor, extract_action, project_to_region, recourse_ratio
from .relabel import InfeasibleBudgetError, RelabelReport, empirical_recourse_risk, pac_delta, relabel
from .splitter import GrowConfig, SplitDecision, TreeBuilder, grow_tree
from .tree import ClassificationTree, SchemaError

__all__ = [
    "Action", "ActionExtractor", "ClassificationTree", "CostModel", "DataError", "Dataset", "FeatureMeta",
    "Forest", "ForestConfig", "GrowConfig", "InfeasibleActionError", "InfeasibleBudgetError", "ReachTable",
    "RelabelReport", "SchemaError", "SplitDecision", "TreeBuilder", "action_cost", "build_quantiles",
    "build_reach_table", "build_thresholds", "empirical_recourse_risk", "extract_action", "grow_tree",
    "load_dataset", "pac_delta", "predict_forest", "project_to_region", "reach_interval", "recourse_ratio",
    "relabel", "sort_permutations", "train_forest",
]
