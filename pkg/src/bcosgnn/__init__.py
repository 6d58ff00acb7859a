"""B-cos graph neural networks: models whose predictions decompose exactly
into per-node, per-feature contributions, with benchmark generators,
training, baseline explainers, and explanation-quality evaluation."""

__version__ = "0.1.0"

from .bcos import BcosLayer, BcosMlp, bcos_backward, bcos_dynamic_weights, bcos_forward
from .explain import ContributionMap, Explanation, NodeScores, contribution_map, integrated_gradients, node_scores, top_k
from .graph import AttributedGraph, Dataset, load_dataset, save_dataset, stratified_split
from .linalg import ContractViolation, Rng
from .metrics import EvalReport, classification_metrics, jaccard_at_k, node_auroc, time_explainer
from .model import GinConfig, GnnModel, gin_backward, gin_forward, init_model, load_model, save_model
from .train import TrainConfig, adam_step, fit, run_experiment

__all__ = [
    "AttributedGraph", "BcosLayer", "BcosMlp", "ContractViolation", "ContributionMap",
    "Dataset", "EvalReport", "Explanation", "GinConfig", "GnnModel", "NodeScores",
    "Rng", "TrainConfig", "adam_step", "bcos_backward", "bcos_dynamic_weights",
    "bcos_forward", "classification_metrics", "contribution_map", "fit", "gin_backward",
    "gin_forward", "init_model", "integrated_gradients", "jaccard_at_k", "load_dataset",
    "load_model", "node_auroc", "node_scores", "run_experiment", "save_dataset",
    "save_model", "stratified_split", "time_explainer", "top_k",
]
