"""Point-space geometry of the appearance-normalization pipeline.

Conventions: column vectors, active rotations, camera frame with x right,
y down, z forward (mm). After the camera rotation the hand COM lies on the
optical axis; subtracting its depth gives the COM-relative frame in which
images, joints and transform parameters live.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .losses import as_joint_batch, wrap_angle
from .topology import FINGERS, VECTOR_FINGERS, KinematicTopology, default_topology, joint_index


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class TransformState:
    t: np.ndarray  # (3,) mm, middle MCP relative to the COM
    alpha_z: float  # rad
    s: float
    com: np.ndarray  # (3,) mm, camera frame
    r_cam: np.ndarray  # (3, 3)
    com_depth: float  # mm

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        object.__setattr__(self, "r_cam", np.asarray(self.r_cam, dtype=float).reshape(3, 3))
        object.__setattr__(self, "alpha_z", float(wrap_angle(self.alpha_z)))
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "com_depth", float(self.com_depth))

    @classmethod
    def identity(cls) -> "TransformState":
        return cls(np.zeros(3), 0.0, 1.0, np.zeros(3), np.eye(3), 0.0)

    def replace(self, **changes) -> "TransformState":
        fields = dict(t=self.t, alpha_z=self.alpha_z, s=self.s, com=self.com, r_cam=self.r_cam, com_depth=self.com_depth)
        fields.update(changes)
        return TransformState(**fields)

    def to_dict(self) -> dict:
        return {
            "t_mm": self.t.tolist(),
            "alpha_z_rad": self.alpha_z,
            "s": self.s,
            "com_mm": self.com.tolist(),
            "r_cam": self.r_cam.tolist(),
            "com_depth_mm": self.com_depth,
        }

    @classmethod
    def from_dict(cls, d) -> "TransformState":
        return cls(d["t_mm"], d["alpha_z_rad"], d["s"], d["com_mm"], d["r_cam"], d["com_depth_mm"])


def camera_rotation(com) -> np.ndarray:
    """Rotation taking ``com`` onto the positive optical axis.

    Angles follow the two-step construction: ``alpha_y = atan2(com_x, com_z)``,
    then ``alpha_x = atan2(y, z)`` of the y-rotated COM. With active column-vector
    rotations the matrix that realises the alignment is ``Rx(alpha_x) @ Ry(-alpha_y)``.
    """
    com = np.asarray(com, dtype=float).reshape(3)
    if not np.all(np.isfinite(com)):
        raise InvalidArgumentError("COM must be finite")
    if not com[2] > 0:
        raise InvalidArgumentError("COM must lie in front of the camera (z > 0)")
    alpha_y = np.arctan2(com[0], com[2])
    r_y = rot_y(-alpha_y)
    tilted = r_y @ com
    alpha_x = np.arctan2(tilted[1], tilted[2])
    return rot_x(alpha_x) @ r_y


def make_state(com, t=(0.0, 0.0, 0.0), alpha_z=0.0, s=1.0) -> TransformState:
    """State for a COM: camera rotation plus rotated COM depth."""
    r_cam = camera_rotation(com)
    depth = float((r_cam @ np.asarray(com, dtype=float))[2])
    return TransformState(np.asarray(t, dtype=float), alpha_z, s, com, r_cam, depth)


def to_normalized_frame(points, state: TransformState) -> np.ndarray:
    """Camera-frame points -> rotated, COM-relative frame."""
    p = np.asarray(getattr(points, "positions", points), dtype=float)
    out = p @ state.r_cam.T
    out[..., 2] -= state.com_depth
    return out


def postprocess_to_camera(joints, state: TransformState) -> np.ndarray:
    """Add the stored COM depth, then undo the camera rotation."""
    p = np.array(getattr(joints, "positions", joints), dtype=float)
    p[..., 2] += state.com_depth
    return p @ state.r_cam


def _bone_sum(j) -> float:
    total = 0.0
    base = j[joint_index("M", "MCP")]
    for f in FINGERS:
        chain = j[[joint_index(f, k) for k in ("MCP", "PIP", "DIP", "TIP")]]
        total += np.linalg.norm(np.diff(chain, axis=0), axis=1).sum()
    for f in VECTOR_FINGERS:
        total += np.linalg.norm(j[joint_index(f, "MCP")] - base)
    total += np.linalg.norm(j[0] - base)
    return float(total)


def gt_transform_params(joints_gt, topo: KinematicTopology | None = None, reference_sum=None):
    """Ground-truth (t, alpha_z, s) from joints in the COM-relative frame.

    ``t`` is the middle MCP, ``alpha_z`` the in-plane angle of the middle MCP->TIP
    direction from +x, and ``s`` the sum of the 20 joint-derived hand lengths
    over ``reference_sum`` (default: the topology's reference sum).
    """
    topo = topo or default_topology()
    j = as_joint_batch(joints_gt)
    if j.shape[0] != 1:
        raise InvalidArgumentError("expected a single joint set")
    j = j[0]
    mcp = j[joint_index("M", "MCP")]
    tip = j[joint_index("M", "TIP")]
    dx, dy = tip[0] - mcp[0], tip[1] - mcp[1]
    if np.hypot(dx, dy) <= 1e-9:
        raise DegenerateInputError("middle finger has no extent in the image plane")
    ref = topo.reference_length_sum if reference_sum is None else float(reference_sum)
    if not ref > 0:
        raise InvalidArgumentError("reference_sum must be positive")
    return mcp.copy(), float(np.arctan2(dy, dx)), _bone_sum(j) / ref


STAGES = ("recenter", "rotate", "rescale")


def apply_normalization(points, state: TransformState, stage: str) -> np.ndarray:
    """One normalization stage on (..., 3) points."""
    p = np.asarray(getattr(points, "positions", points), dtype=float)
    if stage == "recenter":
        return p - state.t
    if stage == "rotate":
        return p @ rot_z(-state.alpha_z).T
    if stage == "rescale":
        if not state.s > 0:
            raise InvalidArgumentError("scale must be positive")
        return p / state.s
    raise InvalidArgumentError(f"unknown stage {stage!r}; expected one of {STAGES}")


def normalize_points(points, state: TransformState) -> np.ndarray:
    p = points
    for stage in STAGES:
        p = apply_normalization(p, state, stage)
    return p


def back_transform(joints_norm, state: TransformState) -> np.ndarray:
    """``j = Rz(alpha_z) @ (s * j_norm) + t`` per joint."""
    if not state.s > 0:
        raise InvalidArgumentError("scale must be positive")
    p = np.asarray(getattr(joints_norm, "positions", joints_norm), dtype=float)
    return (state.s * p) @ rot_z(state.alpha_z).T + state.t
