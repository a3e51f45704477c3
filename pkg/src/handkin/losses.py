"""Training losses: squared joint error and the joint-angle limit penalty."""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .topology import N_ANGLES, N_JOINTS


def as_joint_batch(x) -> np.ndarray:
    """Coerce a JointSet, a (21, 3) array or a sequence of them to (B, 21, 3)."""
    if hasattr(x, "positions"):
        return np.asarray(x.positions, dtype=float)[None]
    if isinstance(x, (list, tuple)) and x and hasattr(x[0], "positions"):
        return np.stack([np.asarray(j.positions, dtype=float) for j in x])
    arr = np.asarray(x, dtype=float)
    if arr.shape == (N_JOINTS, 3):
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (N_JOINTS, 3):
        raise InvalidArgumentError(f"expected (B, {N_JOINTS}, 3) joints, got {arr.shape}")
    return arr


def _pair(estimates, targets):
    est, gt = as_joint_batch(estimates), as_joint_batch(targets)
    if est.shape != gt.shape:
        raise InvalidArgumentError(f"batch mismatch: {est.shape} vs {gt.shape}")
    return est, gt


def joint_loss(estimates, targets) -> float:
    """Half the summed squared Euclidean joint error over batch and joints (mm^2)."""
    est, gt = _pair(estimates, targets)
    diff = (est - gt).reshape(-1)
    return float(0.5 * np.dot(diff, diff))


def joint_loss_grad(estimates, targets) -> np.ndarray:
    est, gt = _pair(estimates, targets)
    return est - gt


def _check_limits(limits):
    low, up = (np.asarray(a, dtype=float) for a in limits)
    if low.shape != (N_ANGLES,) or up.shape != (N_ANGLES,):
        raise InvalidArgumentError(f"limits must be two {N_ANGLES}-vectors")
    if not np.all(low < up):
        raise InvalidArgumentError("limits must satisfy low < up")
    return low, up


def _angle_batch(angles):
    a = np.asarray(angles, dtype=float)
    if a.ndim == 1:
        a = a[None]
    if a.ndim != 2 or a.shape[1] != N_ANGLES:
        raise InvalidArgumentError(f"expected (B, {N_ANGLES}) angles, got {a.shape}")
    return a


def constraint_loss(angles, limits) -> float:
    """Quadratic penalty on angles below ``low`` or above ``up``, summed over the batch."""
    low, up = _check_limits(limits)
    a = _angle_batch(angles)
    below = np.minimum(a - low, 0.0)
    above = np.maximum(a - up, 0.0)
    return float(np.sum(below * below) + np.sum(above * above))


def constraint_loss_grad(angles, limits) -> np.ndarray:
    """Gradient of :func:`constraint_loss`; zero on the feasible side of each kink."""
    low, up = _check_limits(limits)
    a = _angle_batch(angles)
    return 2.0 * np.minimum(a - low, 0.0) + 2.0 * np.maximum(a - up, 0.0)


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def rotation_loss(estimate, target):
    """Per-sample 0.5 * wrapped angular difference squared, and its derivative."""
    delta = wrap_angle(np.asarray(estimate, dtype=float) - np.asarray(target, dtype=float))
    return 0.5 * delta * delta, delta
