"""Exact derivatives of the kinematic layer and of the composed training loss.

Strategy: forward-mode differentiation. :class:`Dual` carries one directional
derivative through scalar code; the kinematic chain itself propagates all 61
tangent directions at once by differentiating each factor of the transform
product (see ``hand_model._chain``). No operation tape exists, so every call is
self-contained and thread-safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GradientPropagationError, InvalidArgumentError
from .hand_model import HandParameters, _as_batch, _chain
from .losses import as_joint_batch, constraint_loss_grad
from .topology import JOINT_ANGLES, JOINT_LABELS, N_JOINTS, N_PARAMS, KinematicTopology, default_topology


@dataclass(frozen=True)
class Dual:
    """A value with one directional derivative: ``value + deriv * eps``."""

    value: float
    deriv: float = 0.0

    @staticmethod
    def lift(x) -> "Dual":
        return x if isinstance(x, Dual) else Dual(float(x), 0.0)

    def __add__(self, other):
        o = Dual.lift(other)
        return Dual(self.value + o.value, self.deriv + o.deriv)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual.lift(other)
        return Dual(self.value - o.value, self.deriv - o.deriv)

    def __rsub__(self, other):
        return Dual.lift(other) - self

    def __neg__(self):
        return Dual(-self.value, -self.deriv)

    def __mul__(self, other):
        o = Dual.lift(other)
        return Dual(self.value * o.value, self.deriv * o.value + self.value * o.deriv)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual.lift(other)
        if o.value == 0.0:
            raise ZeroDivisionError("division by a dual number with zero value")
        q = self.value / o.value
        return Dual(q, (self.deriv - q * o.deriv) / o.value)

    def __rtruediv__(self, other):
        return Dual.lift(other) / self

    def __pow__(self, n: int):
        if not isinstance(n, int):
            raise TypeError("only integer powers are supported")
        out = Dual(1.0, 0.0)
        for _ in range(abs(n)):
            out = out * self
        return out if n >= 0 else 1.0 / out

    def __lt__(self, other):
        return self.value < Dual.lift(other).value

    def __le__(self, other):
        return self.value <= Dual.lift(other).value

    def __gt__(self, other):
        return self.value > Dual.lift(other).value

    def __ge__(self, other):
        return self.value >= Dual.lift(other).value


def sin(x):
    if isinstance(x, Dual):
        return Dual(math.sin(x.value), math.cos(x.value) * x.deriv)
    return math.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(math.cos(x.value), -math.sin(x.value) * x.deriv)
    return math.cos(x)


def sqrt(x):
    if isinstance(x, Dual):
        root = math.sqrt(x.value)
        if root == 0.0:
            raise ZeroDivisionError("sqrt is not differentiable at 0")
        return Dual(root, x.deriv / (2.0 * root))
    return math.sqrt(x)


def atan2(y, x):
    if isinstance(y, Dual) or isinstance(x, Dual):
        y, x = Dual.lift(y), Dual.lift(x)
        r2 = x.value * x.value + y.value * y.value
        return Dual(math.atan2(y.value, x.value), (x.value * y.deriv - y.value * x.deriv) / r2)
    return math.atan2(y, x)


def minimum(a, b):
    """min with ties resolved to the first argument (value and derivative)."""
    return a if Dual.lift(a).value <= Dual.lift(b).value else b


def maximum(a, b):
    """max with ties resolved to the first argument (value and derivative)."""
    return a if Dual.lift(a).value >= Dual.lift(b).value else b


def derivative(f, x: float) -> float:
    return Dual.lift(f(Dual(float(x), 1.0))).deriv


def jvp(f, x, direction):
    """Value and directional derivative of a vector function written on Duals."""
    args = [Dual(float(v), float(d)) for v, d in zip(x, direction)]
    out = f(args)
    out = [Dual.lift(o) for o in out]
    return np.array([o.value for o in out]), np.array([o.deriv for o in out])


@dataclass(frozen=True)
class Jacobian:
    """63x61 Jacobian of the joint coordinates w.r.t. the flattened parameters."""

    matrix: np.ndarray
    joints: np.ndarray  # value pass, (21, 3)

    rows = tuple(f"{f}.{k}.{c}" for f, k in JOINT_LABELS for c in "xyz")

    def block(self, joint_rows, param_cols) -> np.ndarray:
        m = self.matrix.reshape(N_JOINTS, 3, N_PARAMS)
        return m[joint_rows][..., param_cols]


def fkine_jacobian(params, topo: KinematicTopology | None = None) -> Jacobian:
    """Exact d(joint, coord)/d(parameter) at ``params``; row = 3 * joint + coord."""
    if not isinstance(params, HandParameters):
        params = HandParameters.from_vector(params)
    joints, jac = _chain(params.to_vector()[None, :], topo or default_topology(), with_jacobian=True)
    m = jac[0].reshape(3 * N_JOINTS, N_PARAMS)
    m.flags.writeable = False
    return Jacobian(matrix=m, joints=joints[0])


def fkine_jacobian_batch(lam, topo: KinematicTopology | None = None):
    """Batched joints (B, 21, 3) and Jacobians (B, 63, 61)."""
    lam = _as_batch(lam)
    joints, jac = _chain(lam, topo or default_topology(), with_jacobian=True)
    return joints, jac.reshape(lam.shape[0], 3 * N_JOINTS, N_PARAMS)


def finite_diff_jacobian(f, x, h=None) -> np.ndarray:
    """Central differences, one column per input coordinate.

    ``h`` may be a scalar or a per-coordinate array; by default
    ``1e-6 * max(1, |x_p|)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if h is None:
        steps = 1e-6 * np.maximum(1.0, np.abs(x))
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    if not np.all(steps > 0):
        raise InvalidArgumentError("finite-difference step must be positive")
    cols = []
    for p in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[p] += steps[p]
        xm[p] -= steps[p]
        fp = np.asarray(f(xp), dtype=float).ravel()
        fm = np.asarray(f(xm), dtype=float).ravel()
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise GradientPropagationError(p)
        cols.append((fp - fm) / (2.0 * steps[p]))
    return np.stack(cols, axis=1)


def composed_loss(lam, target, limits, lambda_constr, topo=None) -> float:
    """L_joint + lambda * L_constr for a single parameter vector."""
    topo = topo or default_topology()
    joints, _ = _chain(_as_batch(lam), topo)
    diff = (joints - as_joint_batch(target)).ravel()
    ang = np.asarray(lam, dtype=float).ravel()[JOINT_ANGLES]
    low, up = (np.asarray(a, dtype=float) for a in limits)
    below = np.minimum(ang - low, 0.0)
    above = np.maximum(ang - up, 0.0)
    return float(0.5 * diff @ diff + lambda_constr * (below @ below + above @ above))


def loss_gradient_batch(lam, targets, limits, lambda_constr, topo=None):
    """Loss value and d(L_joint + lambda * L_constr)/dΛ for a (B, 61) batch.

    Returns ``(loss, grad (B, 61), joints (B, 21, 3))``.
    """
    if lambda_constr < 0:
        raise InvalidArgumentError("lambda_constr must be non-negative")
    lam = _as_batch(lam)
    if not np.all(np.isfinite(lam)):
        raise InvalidArgumentError("hand parameters must be finite")
    gt = as_joint_batch(targets)
    if gt.shape[0] != lam.shape[0]:
        raise InvalidArgumentError("parameter and target batch sizes differ")
    joints, jac = _chain(lam, topo or default_topology(), with_jacobian=True)
    resid = joints - gt
    grad = np.einsum("bjc,bjcp->bp", resid, jac)
    loss = 0.5 * float(np.sum(resid * resid))
    if lambda_constr > 0:
        ang = lam[:, JOINT_ANGLES]
        low, up = (np.asarray(a, dtype=float) for a in limits)
        below = np.minimum(ang - low, 0.0)
        above = np.maximum(ang - up, 0.0)
        loss += lambda_constr * float(np.sum(below * below) + np.sum(above * above))
        grad[:, JOINT_ANGLES] += lambda_constr * constraint_loss_grad(ang, limits)
    return loss, grad, joints


def loss_gradient(params, target, limits, lambda_constr: float, topo=None) -> np.ndarray:
    """Gradient of L_joint + lambda * L_constr w.r.t. the flattened parameters."""
    if not isinstance(params, HandParameters):
        params = HandParameters.from_vector(params)
    _, grad, _ = loss_gradient_batch(params.to_vector(), target, limits, lambda_constr, topo)
    return grad[0]
