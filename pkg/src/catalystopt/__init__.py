"""Catalyst: generic acceleration of first-order methods for composite convex problems."""
from .catalyst import CatalystConfig, alpha_next, beta, default_kappa, epsilon_k, run
from .data import normalize_rows, parse_libsvm, synth_logistic, SyntheticSpec, write_libsvm
from .problem import (
    CompositeObjective,
    LabeledDataset,
    LogisticSum,
    QuadraticSum,
    Regularizer,
    logistic_objective,
    prox,
    shift,
)
from .solvers import Budget, CertificateBelow, GradMapBelow, TargetValue, solve
from .trace import RunTrace

__version__ = "0.1.0"
