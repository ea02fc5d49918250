"""Derivative-free optimizers (CBO, consensus hopping, NES, evolution strategies)
and a closed-box adversarial attack harness built on them."""

from .broker import AttackObjective, FunctionObjective, QueryBroker, QueryLedger, RunRecord
from .classifiers import Classifier, LinearSoftmax, TinyMlp, load_tiny_mlp, toy_linear_classifier
from .constraints import Budget, LossSpec, attack_loss, is_success, margin_loss, project, targeted_ce_loss
from .ensemble import CboConfig, cbo_step, compute_consensus, run_cbo, schedule_alpha
from .exceptions import (
    BudgetExceededError,
    ConsensusAttackError,
    EmptyEnsembleError,
    InvalidConfigError,
    InvalidInputError,
    ProtocolError,
    ShapeError,
    TransportError,
)
from .gradients import ChNesConfig, EstimatorKind, run_ch_nes
from .noise import DctNoise, EsConfig, SquareNoise, run_one_plus_lambda
from .spaces import make_space

__version__ = "0.1.0"

__all__ = [
    "AttackObjective",
    "FunctionObjective",
    "QueryBroker",
    "QueryLedger",
    "RunRecord",
    "Classifier",
    "LinearSoftmax",
    "TinyMlp",
    "load_tiny_mlp",
    "toy_linear_classifier",
    "Budget",
    "LossSpec",
    "attack_loss",
    "is_success",
    "margin_loss",
    "project",
    "targeted_ce_loss",
    "CboConfig",
    "cbo_step",
    "compute_consensus",
    "run_cbo",
    "schedule_alpha",
    "BudgetExceededError",
    "ConsensusAttackError",
    "EmptyEnsembleError",
    "InvalidConfigError",
    "InvalidInputError",
    "ProtocolError",
    "ShapeError",
    "TransportError",
    "ChNesConfig",
    "EstimatorKind",
    "run_ch_nes",
    "DctNoise",
    "EsConfig",
    "SquareNoise",
    "run_one_plus_lambda",
    "make_space",
]
