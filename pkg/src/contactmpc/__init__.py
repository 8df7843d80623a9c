"""Desk-scale non-prehensile manipulation stack.

Closed-form quasi-dynamic contact simulation, contact-implicit MPC driven by
contact intentions (surface keypoint + terminal-cost weight pair), an episodic
task environment, baseline intention policies, a benchmark harness and a wire
bridge for out-of-process policies.
"""

from .assets import ObjectModel, load_asset, sample_keypoints
from .dynamics import (
    Contact,
    DynamicsParams,
    EnvGeometry,
    FacetSystem,
    SystemState,
    build_facets,
    comfree_step,
    detect_contacts,
)
from .geometry import Pose, rotation_distance, transform_keypoint_to_world

__all__ = [
    "Contact",
    "DynamicsParams",
    "EnvGeometry",
    "FacetSystem",
    "ObjectModel",
    "Pose",
    "SystemState",
    "build_facets",
    "comfree_step",
    "detect_contacts",
    "load_asset",
    "rotation_distance",
    "sample_keypoints",
    "transform_keypoint_to_world",
]

__version__ = "0.1.0"
