"""Evaluation metrics, joint-limit violation statistics and inverse kinematics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .hand_model import _chain, euler_from_matrix, finger_frames, finger_points
from .losses import _angle_batch, _check_limits, _pair, as_joint_batch, wrap_angle
from .topology import (
    BASE_ORIENTATION,
    BASE_TRANSLATION,
    BONE_LENGTHS,
    FINGER_VECTORS,
    FINGERS,
    JOINT_ANGLES,
    N_PARAMS,
    VECTOR_FINGERS,
    WRIST_VECTOR,
    KinematicTopology,
    default_topology,
    joint_index,
)


def e_joint(estimates, targets) -> float:
    """Mean per-joint Euclidean error over all images and joints (mm)."""
    est, gt = _pair(estimates, targets)
    if est.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    return float(np.mean(np.linalg.norm(est - gt, axis=-1)))


@dataclass(frozen=True)
class ViolationStats:
    violated_fraction: float
    avg_violation_given_violation: float  # deg
    avg_violation_total: float  # deg

    def to_dict(self) -> dict:
        return asdict(self)


def angle_overshoot(angles, limits) -> np.ndarray:
    """Distance (rad) of each angle outside its [low, up] interval; 0 inside."""
    low, up = _check_limits(limits)
    a = _angle_batch(angles)
    return np.maximum(low - a, 0.0) + np.maximum(a - up, 0.0)


def violation_stats(angles, limits) -> ViolationStats:
    """Frequency and severity of limit violations.

    The denominator of the fraction is every angle of every sample (25 x B).
    Severities are reported in degrees.
    """
    a = _angle_batch(angles)
    if a.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    over = np.degrees(angle_overshoot(a, limits))
    violated = over > 0
    n_viol = int(violated.sum())
    if n_viol == 0:
        return ViolationStats(0.0, 0.0, 0.0)
    return ViolationStats(
        violated_fraction=n_viol / over.size,
        avg_violation_given_violation=float(over[violated].mean()),
        avg_violation_total=float(over.mean()),
    )


def metrics_report(estimates, targets, angles, limits) -> dict:
    """Flat JSON-ready metrics summary."""
    stats = violation_stats(angles, limits)
    return {
        "e_joint_mm": e_joint(estimates, targets),
        "violated_fraction": stats.violated_fraction,
        "avg_violation_deg": stats.avg_violation_given_violation,
        "avg_violation_total_deg": stats.avg_violation_total,
    }


def write_metrics_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------- IK


@dataclass(frozen=True)
class IKResult:
    angles: np.ndarray  # (25,) rad, wrapped to (-pi, pi]
    residual: float  # mm, norm of the stacked 63-vector of joint misfits
    base_orientation: np.ndarray  # (3,) rad
    finger_residuals: np.ndarray  # (5,) mm
    converged: bool

    def parameters(self, joints, shape) -> np.ndarray:
        """Full 61-vector reproducing the fit."""
        lam = _shape_vector(shape)
        lam[BASE_TRANSLATION] = as_joint_batch(joints)[0, joint_index("M", "MCP")]
        lam[BASE_ORIENTATION] = self.base_orientation
        lam[JOINT_ANGLES] = self.angles
        return lam


def _shape_vector(shape) -> np.ndarray:
    bones, vectors, wrist = shape
    bones = np.asarray(bones, dtype=float).reshape(15)
    vectors = np.asarray(vectors, dtype=float).reshape(4, 3)
    wrist = np.asarray(wrist, dtype=float).reshape(3)
    if not np.all(bones > 0):
        raise InvalidArgumentError("bone lengths must be strictly positive")
    lam = np.zeros(N_PARAMS)
    lam[FINGER_VECTORS] = vectors.ravel()
    lam[WRIST_VECTOR] = wrist
    lam[BONE_LENGTHS] = bones
    return lam


def fit_base_rotation(model_vectors, observed_vectors) -> np.ndarray:
    """Least-squares rotation R with R @ model ~= observed (Kabsch)."""
    H = np.asarray(model_vectors).T @ np.asarray(observed_vectors)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    return Vt.T @ D @ U.T


def _lm_finger(frame0, bones, observed, ch, init, max_iter, tol):
    """Vectorised Levenberg-damped Gauss-Newton over N independent finger chains.

    Damping starts at 1e-6, is multiplied by 10 on a rejected step and divided
    by 10 on an accepted one. Returns angles (N, n), residual norms (N,) and a
    converged mask.
    """
    N, n = init.shape
    x = init.copy()
    pts, J = finger_points(frame0, x, bones, ch, True)
    r = (pts - observed).reshape(N, 9)
    cost = np.einsum("ni,ni->n", r, r)
    mu = np.full(N, 1e-6)
    done = np.sqrt(cost) < tol
    eye = np.eye(n)
    for _ in range(max_iter):
        active = ~done
        if not active.any():
            break
        a = np.flatnonzero(active)
        Ja, ra = J[a], r[a]
        A = np.einsum("nip,niq->npq", Ja, Ja) + mu[a, None, None] * eye
        g = np.einsum("nip,ni->np", Ja, ra)
        step = -np.linalg.solve(A, g[..., None])[..., 0]
        x_new = x[a] + step
        pts_new, J_new = finger_points(frame0[a], x_new, bones[a], ch, True)
        r_new = (pts_new - observed[a]).reshape(len(a), 9)
        cost_new = np.einsum("ni,ni->n", r_new, r_new)
        ok = cost_new < cost[a]
        acc = a[ok]
        x[acc], J[acc], r[acc], cost[acc] = x_new[ok], J_new[ok], r_new[ok], cost_new[ok]
        mu[acc] = np.maximum(mu[acc] / 10.0, 1e-15)
        rej = a[~ok]
        mu[rej] *= 10.0
        tiny = np.linalg.norm(step[ok], axis=1) < 1e-14 * (1.0 + np.linalg.norm(x_new[ok], axis=1))
        done[acc[tiny]] = True
        done[np.sqrt(cost) < tol] = True
        done[mu >= 1e12] = True
    res = np.sqrt(cost)
    return x, res, res < tol


def ik_angles_batch(joints, shapes, topo: KinematicTopology | None = None, max_iter=400, tol=1e-10):
    """Batched :func:`ik_angles`.

    ``shapes`` is ``(bone_lengths (B, 15), finger_vectors (B, 4, 3), wrist (B, 3))``
    or a single shape tuple broadcast to the whole batch. Returns a list of
    :class:`IKResult`.
    """
    topo = topo or default_topology()
    obs = as_joint_batch(joints)
    B = obs.shape[0]
    bones, vectors, wrist = (np.asarray(a, dtype=float) for a in shapes)
    bones = np.broadcast_to(bones.reshape(-1, 15), (B, 15))
    vectors = np.broadcast_to(vectors.reshape(-1, 4, 3), (B, 4, 3))
    wrist = np.broadcast_to(wrist.reshape(-1, 3), (B, 3))
    if not np.all(bones > 0):
        raise InvalidArgumentError("bone lengths must be strictly positive")

    for f in FINGERS:
        idx = [joint_index(f, k) for k in ("MCP", "PIP", "DIP", "TIP")]
        seg = np.linalg.norm(np.diff(obs[:, idx], axis=1), axis=-1)
        if np.any(seg <= 1e-9):
            raise DegenerateInputError(f"finger {f}: zero-length observed bone")

    lam = np.zeros((B, N_PARAMS))
    lam[:, FINGER_VECTORS] = vectors.reshape(B, 12)
    lam[:, WRIST_VECTOR] = wrist
    lam[:, BONE_LENGTHS] = bones
    base = obs[:, joint_index("M", "MCP")]
    lam[:, BASE_TRANSLATION] = base
    seen = np.stack([obs[:, joint_index(f, "MCP")] for f in VECTOR_FINGERS] + [obs[:, 0]], axis=1)
    seen = seen - base[:, None]
    model = np.concatenate([vectors, wrist[:, None]], axis=1)
    for b in range(B):
        lam[b, BASE_ORIENTATION] = euler_from_matrix(fit_base_rotation(model[b], seen[b]))

    frames = finger_frames(lam, topo)
    low, up = topo.limits
    angles = np.zeros((B, 25))
    finger_res = np.zeros((B, 5))
    conv_all = np.ones(B, dtype=bool)
    for fi, f in enumerate(FINGERS):
        ch = topo.chains[fi]
        sl = slice(ch.angle_offset, ch.angle_offset + ch.n_rows)
        rows = [joint_index(f, k) for k in ("PIP", "DIP", "TIP")]
        observed = obs[:, rows]
        fb = bones.reshape(B, 5, 3)[:, fi]
        x, res, conv = _lm_finger(frames[:, fi], fb, observed, ch, np.zeros((B, ch.n_rows)), max_iter, tol)
        x = wrap_angle(x)
        over = np.sum(np.maximum(low[sl] - x, 0) + np.maximum(x - up[sl], 0), axis=1)
        retry = np.flatnonzero(~conv | (over > 0))
        if retry.size:
            init = np.broadcast_to(0.5 * (low[sl] + up[sl]), (retry.size, ch.n_rows)).copy()
            x2, res2, conv2 = _lm_finger(frames[retry, fi], fb[retry], observed[retry], ch, init, max_iter, tol)
            x2 = wrap_angle(x2)
            over2 = np.sum(np.maximum(low[sl] - x2, 0) + np.maximum(x2 - up[sl], 0), axis=1)
            # prefer a converged fit, then the smaller limit violation, then the smaller residual
            key1 = np.stack([~conv[retry], over[retry], res[retry]], axis=1)
            key2 = np.stack([~conv2, over2, res2], axis=1)
            better = np.array([tuple(k2) < tuple(k1) for k1, k2 in zip(key1, key2)], dtype=bool)
            pick = retry[better]
            x[pick], res[pick], conv[pick] = x2[better], res2[better], conv2[better]
        angles[:, sl] = x
        finger_res[:, fi] = res
        conv_all &= conv

    lam[:, JOINT_ANGLES] = angles
    fitted, _ = _chain(lam, topo)
    residual = np.linalg.norm((fitted - obs).reshape(B, -1), axis=1)
    return [
        IKResult(
            angles=angles[b],
            residual=float(residual[b]),
            base_orientation=lam[b, BASE_ORIENTATION].copy(),
            finger_residuals=finger_res[b],
            converged=bool(conv_all[b]),
        )
        for b in range(B)
    ]


def ik_angles(joints, shape, topo: KinematicTopology | None = None, max_iter=400, tol=1e-10) -> IKResult:
    """Recover the 25 joint angles from observed joint locations.

    ``shape`` is ``(bone_lengths (15,), finger_vectors (4, 3), wrist_vector (3,))``.
    The base translation is the observed middle MCP; the base rotation is the
    rigid fit of the base vectors to the observed MCP/wrist offsets. Each
    finger is then solved independently by damped Gauss-Newton, started from
    zero angles and, if that does not converge or lands outside the limits,
    restarted from the middle of the limit box; the better fit wins.
    A fit that fails to converge is returned with its residual, not raised.
    """
    obs = as_joint_batch(joints)
    if obs.shape[0] != 1:
        raise InvalidArgumentError("ik_angles takes a single joint set")
    return ik_angles_batch(obs, shape, topo, max_iter, tol)[0]
