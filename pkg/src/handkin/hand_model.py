"""61-parameter hand representation and the forward-kinematics layer.

Every finger joint is obtained as ``T_BASE @ T_VEC[i] @ prod(T_DH[n]) @ (0, 0, 0, 1)``
where the product runs over the DH rows between the finger's MCP and the joint.
All heavy lifting happens in :func:`_chain`, which works on a batch of flattened
parameter vectors and optionally propagates exact derivatives alongside.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .topology import (
    BASE_ORIENTATION,
    BASE_TRANSLATION,
    BONE_LENGTHS,
    FINGER_VECTORS,
    FINGERS,
    JOINT_ANGLES,
    JOINT_LABELS,
    N_JOINTS,
    N_PARAMS,
    VECTOR_FINGERS,
    WRIST_VECTOR,
    KinematicTopology,
    default_topology,
    joint_index,
)


def _frozen(a, shape):
    arr = np.array(a, dtype=float).reshape(shape)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class HandParameters:
    """Immutable hand parameter set.

    Flattening order (see :meth:`to_vector`): base translation (3), base
    orientation as intrinsic Z-Y-X Euler angles (3), finger vectors T, I, R, P
    (12), wrist vector (3), bone lengths finger-major T..P x (MCP-PIP, PIP-DIP,
    DIP-TIP) (15), joint angles finger-major in DH row order (25).
    """

    base_translation: np.ndarray
    base_orientation: np.ndarray
    finger_vectors: np.ndarray
    wrist_vector: np.ndarray
    bone_lengths: np.ndarray
    joint_angles: np.ndarray

    def __post_init__(self):
        for name, shape in (
            ("base_translation", (3,)),
            ("base_orientation", (3,)),
            ("finger_vectors", (4, 3)),
            ("wrist_vector", (3,)),
            ("bone_lengths", (15,)),
            ("joint_angles", (25,)),
        ):
            value = getattr(self, name)
            try:
                arr = _frozen(value, shape)
            except ValueError:
                raise InvalidArgumentError(f"{name} must have shape {shape}") from None
            object.__setattr__(self, name, arr)
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise InvalidArgumentError("hand parameters must be finite")
        if not np.all(self.bone_lengths > 0):
            raise InvalidArgumentError("bone lengths must be strictly positive")

    @classmethod
    def from_vector(cls, vec) -> "HandParameters":
        v = np.asarray(vec, dtype=float)
        if v.shape != (N_PARAMS,):
            raise InvalidArgumentError(f"expected a {N_PARAMS}-vector, got shape {v.shape}")
        return cls(
            base_translation=v[BASE_TRANSLATION],
            base_orientation=v[BASE_ORIENTATION],
            finger_vectors=v[FINGER_VECTORS].reshape(4, 3),
            wrist_vector=v[WRIST_VECTOR],
            bone_lengths=v[BONE_LENGTHS],
            joint_angles=v[JOINT_ANGLES],
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.base_translation,
                self.base_orientation,
                self.finger_vectors.ravel(),
                self.wrist_vector,
                self.bone_lengths,
                self.joint_angles,
            ]
        )

    def replace(self, **changes) -> "HandParameters":
        fields = {
            k: getattr(self, k)
            for k in (
                "base_translation",
                "base_orientation",
                "finger_vectors",
                "wrist_vector",
                "bone_lengths",
                "joint_angles",
            )
        }
        fields.update(changes)
        return HandParameters(**fields)


@dataclass(frozen=True)
class JointSet:
    """21 labelled joint positions in mm (row order given by ``JOINT_LABELS``)."""

    positions: np.ndarray

    def __post_init__(self):
        arr = np.array(self.positions, dtype=float)
        if arr.shape != (N_JOINTS, 3):
            raise InvalidArgumentError(f"joint set must be {N_JOINTS}x3, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("joint coordinates must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "positions", arr)

    labels = JOINT_LABELS

    def __getitem__(self, key):
        finger, joint = key
        return self.positions[joint_index(finger, joint)]

    def __array__(self, dtype=None, copy=None):
        return np.array(self.positions, dtype=dtype)

    def to_dict(self) -> list:
        return [
            {"finger": f, "joint": k, "position_mm": [float(c) for c in p]}
            for (f, k), p in zip(JOINT_LABELS, self.positions)
        ]

    @classmethod
    def from_dict(cls, entries) -> "JointSet":
        pos = np.full((N_JOINTS, 3), np.nan)
        seen = set()
        for e in entries:
            key = (e["finger"], e["joint"])
            if key not in JOINT_LABELS or key in seen:
                raise InvalidArgumentError(f"bad or duplicate joint label {key}")
            seen.add(key)
            pos[JOINT_LABELS.index(key)] = e["position_mm"]
        if len(seen) != N_JOINTS:
            raise InvalidArgumentError("joint set must contain all 21 joints")
        return cls(pos)


def _require_finite(*values):
    for v in values:
        if not np.all(np.isfinite(np.asarray(v, dtype=float))):
            raise InvalidArgumentError("inputs must be finite")


def dh_matrix(theta, r, alpha, d) -> np.ndarray:
    """Standard DH transform ``Rz(theta) Tz(d) Tx(r) Rx(alpha)``."""
    _require_finite(theta, r, alpha, d)
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, r * ct],
            [st, ct * ca, -ct * sa, r * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def euler_zyx(angles) -> np.ndarray:
    """Rotation ``Rz(a) @ Ry(b) @ Rx(c)`` for angles ``(a, b, c)``; batched over leading dims."""
    R, _ = _euler_zyx_batch(np.asarray(angles, dtype=float).reshape(-1, 3), False)
    return R.reshape(np.shape(angles)[:-1] + (3, 3))


def euler_from_matrix(R) -> np.ndarray:
    """Inverse of :func:`euler_zyx` (pitch restricted to [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=float)
    b = np.arcsin(np.clip(-R[..., 2, 0], -1.0, 1.0))
    a = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    c = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    return np.stack([a, b, c], axis=-1)


def base_matrix(b) -> np.ndarray:
    """Homogeneous base transform from (tx, ty, tz, rz, ry, rx)."""
    b = np.asarray(b, dtype=float)
    if b.shape != (6,):
        raise InvalidArgumentError("base pose must be a 6-vector")
    _require_finite(b)
    T = np.eye(4)
    T[:3, :3] = euler_zyx(b[3:6])
    T[:3, 3] = b[0:3]
    return T


def _euler_zyx_batch(e, with_derivative):
    a, b, c = e[:, 0], e[:, 1], e[:, 2]
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    B = e.shape[0]
    Rz = np.zeros((B, 3, 3))
    Rz[:, 0, 0], Rz[:, 0, 1], Rz[:, 1, 0], Rz[:, 1, 1], Rz[:, 2, 2] = ca, -sa, sa, ca, 1.0
    Ry = np.zeros((B, 3, 3))
    Ry[:, 0, 0], Ry[:, 0, 2], Ry[:, 2, 0], Ry[:, 2, 2], Ry[:, 1, 1] = cb, sb, -sb, cb, 1.0
    Rx = np.zeros((B, 3, 3))
    Rx[:, 1, 1], Rx[:, 1, 2], Rx[:, 2, 1], Rx[:, 2, 2], Rx[:, 0, 0] = cc, -sc, sc, cc, 1.0
    RyRx = Ry @ Rx
    R = Rz @ RyRx
    if not with_derivative:
        return R, None
    dRz = np.zeros((B, 3, 3))
    dRz[:, 0, 0], dRz[:, 0, 1], dRz[:, 1, 0], dRz[:, 1, 1] = -sa, -ca, ca, -sa
    dRy = np.zeros((B, 3, 3))
    dRy[:, 0, 0], dRy[:, 0, 2], dRy[:, 2, 0], dRy[:, 2, 2] = -sb, cb, -cb, -sb
    dRx = np.zeros((B, 3, 3))
    dRx[:, 1, 1], dRx[:, 1, 2], dRx[:, 2, 1], dRx[:, 2, 2] = -sc, -cc, cc, -sc
    dR = np.stack([dRz @ RyRx, Rz @ (dRy @ Rx), Rz @ (Ry @ dRx)], axis=1)
    return R, dR


def _dh_batch(theta, r, alpha, d):
    """Batch of DH matrices; theta and r are (B,), alpha and d scalars."""
    B = theta.shape[0]
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    T = np.zeros((B, 4, 4))
    T[:, 0, 0] = ct
    T[:, 0, 1] = -st * ca
    T[:, 0, 2] = st * sa
    T[:, 0, 3] = r * ct
    T[:, 1, 0] = st
    T[:, 1, 1] = ct * ca
    T[:, 1, 2] = -ct * sa
    T[:, 1, 3] = r * st
    T[:, 2, 1] = sa
    T[:, 2, 2] = ca
    T[:, 2, 3] = d
    T[:, 3, 3] = 1.0
    return T


def _chain(lam, topo: KinematicTopology, with_jacobian=False):
    """Forward kinematics on a (B, 61) batch.

    Returns joints (B, 21, 3) and, if requested, the Jacobian (B, 21, 3, 61).
    The value path is identical whether or not derivatives are requested.
    """
    B = lam.shape[0]
    t = lam[:, BASE_TRANSLATION]
    R, dR = _euler_zyx_batch(lam[:, BASE_ORIENTATION], with_jacobian)
    base = np.zeros((B, 4, 4))
    base[:, :3, :3] = R
    base[:, :3, 3] = t
    base[:, 3, 3] = 1.0

    joints = np.empty((B, N_JOINTS, 3))
    jac = np.zeros((B, N_JOINTS, 3, N_PARAMS)) if with_jacobian else None
    vectors = lam[:, FINGER_VECTORS].reshape(B, 4, 3)
    bones = lam[:, BONE_LENGTHS].reshape(B, 5, 3)
    angles = lam[:, JOINT_ANGLES]

    def base_derivs(row, p, vec_cols):
        # translation, Euler angles and (finger or wrist) vector columns
        jac[:, row, :, 0:3] = np.eye(3)
        local = np.einsum("bji,bj->bi", R, p - t)
        jac[:, row, :, 3:6] = np.einsum("bkij,bj->bik", dR, local)
        if vec_cols is not None:
            jac[:, row, :, vec_cols] = R

    w = lam[:, WRIST_VECTOR]
    joints[:, 0] = np.einsum("bij,bj->bi", R, w) + t
    if with_jacobian:
        base_derivs(0, joints[:, 0], WRIST_VECTOR)

    for fi, f in enumerate(FINGERS):
        ch = topo.chains[fi]
        if f in VECTOR_FINGERS:
            vi = VECTOR_FINGERS.index(f)
            tvec = np.zeros((B, 4, 4))
            tvec[:] = np.eye(4)
            tvec[:, :3, 3] = vectors[:, vi]
            frame = base @ tvec
            vec_cols = slice(FINGER_VECTORS.start + 3 * vi, FINGER_VECTORS.start + 3 * vi + 3)
        else:
            frame = base
            vec_cols = None
        frames = [frame]
        r_rows = np.zeros((B, ch.n_rows))
        for bone, row in enumerate(ch.bone_row):
            r_rows[:, row] = bones[:, fi, bone]
        for n in range(ch.n_rows):
            T = _dh_batch(angles[:, ch.angle_offset + n], r_rows[:, n], ch.alpha[n], ch.d[n])
            frames.append(frames[-1] @ T)

        for k in ("MCP", "PIP", "DIP", "TIP"):
            row = joint_index(f, k)
            n_dh = ch.n_dh[k]
            p = frames[n_dh][:, :3, 3]
            joints[:, row] = p
            if not with_jacobian:
                continue
            base_derivs(row, p, vec_cols)
            for n in range(n_dh):
                z = frames[n][:, :3, 2]
                o = frames[n][:, :3, 3]
                jac[:, row, :, JOINT_ANGLES.start + ch.angle_offset + n] = np.cross(z, p - o)
            for bone, brow in enumerate(ch.bone_row):
                if brow < n_dh:
                    col = BONE_LENGTHS.start + 3 * fi + bone
                    jac[:, row, :, col] = frames[brow + 1][:, :3, 0]
    return joints, jac


def finger_points(frame0, angles, bones, ch, with_jacobian=False):
    """PIP, DIP and TIP of one finger given its MCP frame.

    frame0: (N, 4, 4) MCP frame, angles: (N, n_rows), bones: (N, 3).
    Returns points (N, 3, 3) and optionally d(points)/d(angles) (N, 9, n_rows).
    """
    N = angles.shape[0]
    r_rows = np.zeros((N, ch.n_rows))
    for bone, row in enumerate(ch.bone_row):
        r_rows[:, row] = bones[:, bone]
    frames = [frame0]
    for n in range(ch.n_rows):
        frames.append(frames[-1] @ _dh_batch(angles[:, n], r_rows[:, n], ch.alpha[n], ch.d[n]))
    pts = np.stack([frames[ch.n_dh[k]][:, :3, 3] for k in ("PIP", "DIP", "TIP")], axis=1)
    if not with_jacobian:
        return pts, None
    jac = np.zeros((N, 3, 3, ch.n_rows))
    for j, k in enumerate(("PIP", "DIP", "TIP")):
        for n in range(ch.n_dh[k]):
            jac[:, j, :, n] = np.cross(frames[n][:, :3, 2], pts[:, j] - frames[n][:, :3, 3])
    return pts, jac.reshape(N, 9, ch.n_rows)


def finger_frames(lam, topo: KinematicTopology):
    """MCP frames (B, 5, 4, 4) of all fingers: T_BASE @ T_VEC."""
    B = lam.shape[0]
    R, _ = _euler_zyx_batch(lam[:, BASE_ORIENTATION], False)
    out = np.zeros((B, 5, 4, 4))
    out[:, :, :3, :3] = R[:, None]
    out[:, :, 3, 3] = 1.0
    vectors = lam[:, FINGER_VECTORS].reshape(B, 4, 3)
    for fi, f in enumerate(FINGERS):
        v = vectors[:, VECTOR_FINGERS.index(f)] if f in VECTOR_FINGERS else np.zeros((B, 3))
        out[:, fi, :3, 3] = np.einsum("bij,bj->bi", R, v) + lam[:, BASE_TRANSLATION]
    return out


def _as_batch(params):
    if isinstance(params, HandParameters):
        return params.to_vector()[None, :]
    arr = np.asarray(params, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != N_PARAMS:
        raise InvalidArgumentError(f"expected (B, {N_PARAMS}) parameters, got {arr.shape}")
    return arr


def fkine(params: HandParameters, topo: KinematicTopology | None = None) -> JointSet:
    """Joint locations for a single hand parameter set."""
    if not isinstance(params, HandParameters):
        params = HandParameters.from_vector(params)
    topo = topo or default_topology()
    joints, _ = _chain(params.to_vector()[None, :], topo)
    return JointSet(joints[0])


def fkine_batch(lam, topo: KinematicTopology | None = None) -> np.ndarray:
    """Vectorised FK: (B, 61) -> (B, 21, 3). Only finiteness is checked."""
    lam = _as_batch(lam)
    if not np.all(np.isfinite(lam)):
        raise InvalidArgumentError("hand parameters must be finite")
    joints, _ = _chain(lam, topo or default_topology())
    return joints


def hand_scale(params, reference_sum: float) -> float:
    """Sum of the 15 bone lengths and 5 base-vector magnitudes over ``reference_sum``."""
    if not reference_sum > 0:
        raise InvalidArgumentError("reference_sum must be positive")
    if not isinstance(params, HandParameters):
        params = HandParameters.from_vector(params)
    total = (
        params.bone_lengths.sum()
        + np.linalg.norm(params.finger_vectors, axis=1).sum()
        + np.linalg.norm(params.wrist_vector)
    )
    return float(total / reference_sum)


def transform_parameters(lam, rotation, translation) -> np.ndarray:
    """Apply a rigid motion ``x -> rotation @ x + translation`` to the base pose of Λ.

    Shape and angles are untouched, so ``fkine`` of the result equals the rigid
    motion applied to ``fkine`` of the input. Works on (61,) or (B, 61).
    """
    lam = np.array(lam, dtype=float)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    Rb = euler_zyx(lam[:, BASE_ORIENTATION])
    lam[:, BASE_ORIENTATION] = euler_from_matrix(np.asarray(rotation) @ Rb)
    lam[:, BASE_TRANSLATION] = lam[:, BASE_TRANSLATION] @ np.asarray(rotation).T + translation
    return lam[0] if single else lam
