"""Adaptation heads on top of a frozen encoder."""

from .bc import BcConfig, BcHead, BcResult, bc_adapt, demo_features, rollout
from .demos import Demo, collect_demos, load_demo, load_demos, save_demo, save_demos
from .envs import PointMassEnv, TwoGoalEnv, make_env
from .features import LANGUAGE_MODES, Features, MapPool, extract, frozen_language_vector, mean_pool
from .grasp import GraspConfig, GraspResult, PupHead, grasp_adapt, precision_metrics
from .intent import intent_curve
from .refer import ReferConfig, ReferHead, ReferResult, iou, refer_adapt

__all__ = [
    "BcConfig", "BcHead", "BcResult", "bc_adapt", "demo_features", "rollout",
    "Demo", "collect_demos", "load_demo", "load_demos", "save_demo", "save_demos",
    "PointMassEnv", "TwoGoalEnv", "make_env",
    "LANGUAGE_MODES", "Features", "MapPool", "extract", "frozen_language_vector", "mean_pool",
    "GraspConfig", "GraspResult", "PupHead", "grasp_adapt", "precision_metrics",
    "intent_curve",
    "ReferConfig", "ReferHead", "ReferResult", "iou", "refer_adapt",
]
