"""Probabilistic safety bounds for feed-forward networks under Gaussian inputs."""

from .bounds import Status, Verdict, classify, crown_bounds, ibp_bounds, linear_bounds
from .engine import EngineConfig, VerificationResult, mc_oracle, verify
from .errors import ConfigError, InternalConsistencyError, NumericUnderflowError, ParseError, ProbHullError
from .gauss import BoxRegion, GaussianInput, box_probability, initial_box
from .model import Layer, Network, SafetySpec, load_network, parse_json_network, parse_nnet
from .subdivide import TreeConfig

__all__ = [
    "BoxRegion",
    "ConfigError",
    "EngineConfig",
    "GaussianInput",
    "InternalConsistencyError",
    "Layer",
    "Network",
    "NumericUnderflowError",
    "ParseError",
    "ProbHullError",
    "SafetySpec",
    "Status",
    "TreeConfig",
    "Verdict",
    "VerificationResult",
    "box_probability",
    "classify",
    "crown_bounds",
    "ibp_bounds",
    "initial_box",
    "linear_bounds",
    "load_network",
    "mc_oracle",
    "parse_json_network",
    "parse_nnet",
    "verify",
]
