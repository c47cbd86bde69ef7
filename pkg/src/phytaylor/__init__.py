"""Physics-edited Taylor networks: monomial augmentation, knowledge-preserving
NN editing, a noise suppressor and closed-form safe command correction."""
from .editing import LayerPlan, PhnLayer, PhyTaylorModel, build_model, parameter_counts
from .errors import PhyTaylorError
from .knowledge import KnowledgeSpec, example1_spec
from .monomial import MonomialBasis, basis_len, build_basis, evaluate
from .network import backward, compliance_deviation, forward, input_jacobian, predict
from .selfcorrect import (
    CommandBox,
    CorrectionProblem,
    SafetyQuadratic,
    correct_commands,
    revise,
    verify_nonneg,
)
from .suppressor import SuppressorConfig
from .train import Dataset, TrainConfig, rollout_error, train_model

__version__ = "0.1.0"

__all__ = [
    "CommandBox",
    "CorrectionProblem",
    "Dataset",
    "KnowledgeSpec",
    "LayerPlan",
    "MonomialBasis",
    "PhnLayer",
    "PhyTaylorError",
    "PhyTaylorModel",
    "SafetyQuadratic",
    "SuppressorConfig",
    "TrainConfig",
    "backward",
    "basis_len",
    "build_basis",
    "build_model",
    "compliance_deviation",
    "correct_commands",
    "evaluate",
    "example1_spec",
    "forward",
    "input_jacobian",
    "parameter_counts",
    "predict",
    "revise",
    "rollout_error",
    "train_model",
    "verify_nonneg",
]
