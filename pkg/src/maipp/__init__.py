"""Multi-agent informative path planning lab.

Dual Gaussian-process beliefs (interest + risk) over a unit-square
workspace, PRM-based sequential decision making, trajectory-intent fusion,
a shared-budget episode engine, baseline planners, and a reproducible
experiment harness.
"""

from .fields import FieldSpec, GaussianComponent, GenerationConfig, GroundTruth, generate_field_spec
from .gp import GpBelief, KernelParams, high_interest_set, kernel_eval, risk_ucb
from .intent import IntentDistribution, fit_intent, fuse_intents
from .roadmap import Roadmap, build_prm, feasibility_mask, shortest_path
from .episode import Episode, EpisodeConfig, StepEvents, communication_partition, reward_for_step
from .planners import PlannerConfig, make_planner

__all__ = [
    "FieldSpec", "GaussianComponent", "GenerationConfig", "GroundTruth", "generate_field_spec",
    "GpBelief", "KernelParams", "high_interest_set", "kernel_eval", "risk_ucb",
    "IntentDistribution", "fit_intent", "fuse_intents",
    "Roadmap", "build_prm", "feasibility_mask", "shortest_path",
    "Episode", "EpisodeConfig", "StepEvents", "communication_partition", "reward_for_step",
    "PlannerConfig", "make_planner",
]

__version__ = "0.1.0"
