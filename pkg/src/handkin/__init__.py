"""Differentiable hand kinematics, depth preprocessing and a small training harness.

The kinematic core is re-exported here. Pipeline, renderer and training code
live in their submodules (``handkin.depth``, ``handkin.renderer``,
``handkin.training``) and are imported on demand.
"""
from .autodiff import Jacobian, fkine_jacobian, fkine_jacobian_batch, finite_diff_jacobian
from .errors import DegenerateInputError, GradientPropagationError, InvalidArgumentError
from .geometry import TransformState, back_transform, camera_rotation, make_state
from .hand_model import HandParameters, JointSet, fkine, fkine_batch, transform_parameters
from .losses import constraint_loss, constraint_loss_grad, joint_loss, joint_loss_grad
from .metrics import ViolationStats, e_joint, ik_angles, violation_stats
from .topology import N_ANGLES, N_JOINTS, N_PARAMS, KinematicTopology, default_topology, load_topology

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "GradientPropagationError",
    "HandParameters",
    "InvalidArgumentError",
    "Jacobian",
    "JointSet",
    "KinematicTopology",
    "N_ANGLES",
    "N_JOINTS",
    "N_PARAMS",
    "TransformState",
    "ViolationStats",
    "back_transform",
    "camera_rotation",
    "constraint_loss",
    "constraint_loss_grad",
    "default_topology",
    "e_joint",
    "finite_diff_jacobian",
    "fkine",
    "fkine_batch",
    "fkine_jacobian",
    "fkine_jacobian_batch",
    "ik_angles",
    "joint_loss",
    "joint_loss_grad",
    "load_topology",
    "make_state",
    "transform_parameters",
    "violation_stats",
]
