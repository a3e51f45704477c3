"""Kinematic topology of the hand: fingers, DH rows, DoF counts and angle limits.

The topology is loaded from a JSON document (see ``data/default_topology.json``).
Units are carried in the key names: ``*_mm`` for lengths, ``*_rad`` for angles.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

FINGERS = ("T", "I", "M", "R", "P")
JOINT_TYPES = ("WRIST", "MCP", "PIP", "DIP", "TIP")
FINGER_JOINTS = ("MCP", "PIP", "DIP", "TIP")
# Fingers that own a base vector; the middle finger MCP *is* the hand base.
VECTOR_FINGERS = ("T", "I", "R", "P")

N_PARAMS = 61
N_JOINTS = 21
N_ANGLES = 25
N_BONES = 15

# Layout of the flattened 61-vector.
BASE_TRANSLATION = slice(0, 3)
BASE_ORIENTATION = slice(3, 6)
FINGER_VECTORS = slice(6, 18)
WRIST_VECTOR = slice(18, 21)
BONE_LENGTHS = slice(21, 36)
JOINT_ANGLES = slice(36, 61)


def joint_index(finger: str, joint: str) -> int:
    """Row of (finger, joint) in a 21x3 joint array; the wrist is row 0."""
    if joint == "WRIST":
        return 0
    return 1 + 4 * FINGERS.index(finger) + FINGER_JOINTS.index(joint)


JOINT_LABELS = (("W", "WRIST"),) + tuple((f, k) for f in FINGERS for k in FINGER_JOINTS)


@dataclass(frozen=True)
class FingerChain:
    """DH description of one finger, rows ordered MCP -> TIP."""

    name: str
    alpha: np.ndarray  # (n_rows,) rad
    d: np.ndarray  # (n_rows,) mm
    dof_names: tuple
    bone_row: tuple  # row index carrying bone length 0, 1, 2
    n_dh: dict  # joint type -> number of DH rows applied to reach it
    angle_offset: int  # first column of this finger's angles inside the 25-vector

    @property
    def n_rows(self) -> int:
        return len(self.alpha)


@dataclass(frozen=True)
class KinematicTopology:
    chains: tuple
    dof_per_joint: dict
    theta_low: np.ndarray  # (25,) rad
    theta_up: np.ndarray  # (25,) rad
    reference_bone_lengths: np.ndarray  # (15,) mm
    reference_finger_vectors: np.ndarray  # (4, 3) mm, order T I R P
    reference_wrist_vector: np.ndarray  # (3,) mm
    reference_length_sum: float
    source: dict = field(default=None, repr=False, compare=False)

    def chain(self, finger: str) -> FingerChain:
        return self.chains[FINGERS.index(finger)]

    @property
    def limits(self):
        return self.theta_low, self.theta_up

    def reference_parameters(self) -> np.ndarray:
        """61-vector with identity base, reference shape and all angles zero."""
        lam = np.zeros(N_PARAMS)
        lam[FINGER_VECTORS] = self.reference_finger_vectors.ravel()
        lam[WRIST_VECTOR] = self.reference_wrist_vector
        lam[BONE_LENGTHS] = self.reference_bone_lengths
        return lam

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.source))


def _validate_dof(dof_per_joint):
    total = 0
    for f in FINGERS:
        counts = dof_per_joint[f]
        if counts.get("TIP", 0) != 0:
            raise InvalidArgumentError(f"finger {f}: TIP carries no DoF")
        for k in ("MCP", "PIP", "DIP"):
            if counts[k] < 1:
                raise InvalidArgumentError(f"finger {f}: joint {k} needs at least one DoF to carry a bone")
        total += counts["MCP"] + counts["PIP"] + counts["DIP"]
    if total != N_ANGLES:
        raise InvalidArgumentError(f"total DoF must be {N_ANGLES}, got {total}")


def topology_from_dict(doc: dict) -> KinematicTopology:
    try:
        fingers = tuple(doc.get("fingers", FINGERS))
        if fingers != FINGERS:
            raise InvalidArgumentError(f"fingers must be {FINGERS}, got {fingers}")
        dof = {f: dict(doc["dof_per_joint"][f]) for f in FINGERS}
        _validate_dof(dof)

        chains = []
        low, up = [], []
        offset = 0
        for f in FINGERS:
            rows = doc["dh_rows"][f]
            counts = dof[f]
            n_rows = counts["MCP"] + counts["PIP"] + counts["DIP"]
            if len(rows) != n_rows:
                raise InvalidArgumentError(f"finger {f}: expected {n_rows} DH rows, got {len(rows)}")
            n_pip = counts["MCP"]
            n_dip = n_pip + counts["PIP"]
            n_tip = n_dip + counts["DIP"]
            chains.append(
                FingerChain(
                    name=f,
                    alpha=np.array([float(r["alpha_rad"]) for r in rows]),
                    d=np.array([float(r.get("d_mm", 0.0)) for r in rows]),
                    dof_names=tuple(r.get("dof", f"dof{n}") for n, r in enumerate(rows)),
                    # the last DoF of each joint carries that joint's outgoing bone
                    bone_row=(n_pip - 1, n_dip - 1, n_tip - 1),
                    n_dh={"MCP": 0, "PIP": n_pip, "DIP": n_dip, "TIP": n_tip},
                    angle_offset=offset,
                )
            )
            offset += n_rows
            lim = doc["angle_limits_rad"][f]
            if len(lim) != n_rows:
                raise InvalidArgumentError(f"finger {f}: expected {n_rows} angle limits")
            for lo, hi in lim:
                low.append(float(lo))
                up.append(float(hi))

        theta_low = np.array(low)
        theta_up = np.array(up)
        if not np.all(theta_low < theta_up):
            raise InvalidArgumentError("angle limits must satisfy low < up elementwise")

        ref = doc["reference_shape"]
        bones = np.array([ref["bone_lengths_mm"][f] for f in FINGERS], dtype=float).reshape(N_BONES)
        vecs = np.array([ref["finger_vectors_mm"][f] for f in VECTOR_FINGERS], dtype=float)
        wrist = np.array(ref["wrist_vector_mm"], dtype=float)
        if vecs.shape != (4, 3) or wrist.shape != (3,):
            raise InvalidArgumentError("reference vectors must be 3D")
        if not np.all(bones > 0):
            raise InvalidArgumentError("reference bone lengths must be positive")
        ref_sum = doc.get("reference_length_sum_mm")
        if ref_sum is None:
            ref_sum = float(bones.sum() + np.linalg.norm(vecs, axis=1).sum() + np.linalg.norm(wrist))
        ref_sum = float(ref_sum)
        if not ref_sum > 0:
            raise InvalidArgumentError("reference_length_sum_mm must be positive")
    except KeyError as exc:
        raise InvalidArgumentError(f"topology config missing key {exc}") from None

    return KinematicTopology(
        chains=tuple(chains),
        dof_per_joint=dof,
        theta_low=theta_low,
        theta_up=theta_up,
        reference_bone_lengths=bones,
        reference_finger_vectors=vecs,
        reference_wrist_vector=wrist,
        reference_length_sum=ref_sum,
        source=doc,
    )


def load_topology(path=None) -> KinematicTopology:
    """Load a topology JSON; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("handkin").joinpath("data/default_topology.json").read_text()
    else:
        text = Path(path).read_text()
    return topology_from_dict(json.loads(text))


_DEFAULT = None


def default_topology() -> KinematicTopology:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_topology()
    return _DEFAULT
