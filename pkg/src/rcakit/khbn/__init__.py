"""Knowledge-guided Bayesian network: structure, CPTs and exact inference."""

from .bn import BayesNet, Factor, StructureError, enumerate_joint, random_network, topological_order, variable_elimination
from .model import (
    Diagnosis,
    KhbnModel,
    KhbnStructure,
    allocate,
    fit_cpts,
    infer,
    infer_module_fallback,
    merge_causal,
    train,
)
from .pc import PCResult, g2_test, pc_learn

__all__ = [
    "BayesNet",
    "Diagnosis",
    "Factor",
    "KhbnModel",
    "KhbnStructure",
    "PCResult",
    "StructureError",
    "allocate",
    "enumerate_joint",
    "fit_cpts",
    "g2_test",
    "infer",
    "infer_module_fallback",
    "merge_causal",
    "pc_learn",
    "random_network",
    "topological_order",
    "train",
    "variable_elimination",
]
