"""Norm-ball projections, the tanh reparameterization and attack losses.

Every loss here is returned in *minimization* form: the optimizers always
minimize, and an attack has succeeded as soon as the (shifted) loss of a
queried input is negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._validation import check_finite_array, check_int, check_positive
from .exceptions import InvalidConfigError, InvalidInputError, ShapeError

__all__ = [
    "Budget",
    "LossSpec",
    "project_linf",
    "project_l2",
    "project",
    "tanh_reparam",
    "margin_loss",
    "targeted_ce_loss",
    "attack_loss",
    "shifted_loss",
    "is_success",
    "argmax_label",
]


@dataclass(frozen=True)
class Budget:
    """An epsilon ball ``{z : ||z - center||_p <= epsilon}`` with p in {inf, 2}.

    ``center`` is optional; when omitted the ball is taken around the origin,
    which is the usual case for perturbation latents.
    """

    norm: str = "linf"
    epsilon: float = 0.05
    center: np.ndarray | None = None

    def __post_init__(self):
        if self.norm not in ("linf", "l2"):
            raise InvalidConfigError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        check_positive(self.epsilon, "epsilon")

    def project(self, z, center=None):
        c = self.center if center is None else center
        if c is None:
            c = np.zeros_like(np.asarray(z, dtype=float))
        return project(z, c, self.epsilon, self.norm)

    def distance(self, z, center=None):
        c = self.center if center is None else center
        diff = np.asarray(z, dtype=float) - (0.0 if c is None else np.asarray(c, dtype=float))
        if self.norm == "linf":
            return float(np.max(np.abs(diff))) if diff.size else 0.0
        return float(np.linalg.norm(diff.ravel()))


def _shapes_agree(z, center):
    z = np.asarray(z, dtype=float)
    center = np.asarray(center, dtype=float)
    if center.shape != z.shape:
        try:
            center = np.broadcast_to(center, z.shape)
        except ValueError as exc:
            raise ShapeError(f"shape mismatch: {z.shape} vs {center.shape}") from exc
    return z, center


def project_linf(z, center, eps):
    """Componentwise clamp of ``z`` into ``[center - eps, center + eps]``.

    The result satisfies ``abs(out - center) <= eps`` when evaluated in floating
    point, not just in exact arithmetic: ``fl(center + eps) - center`` can round
    above ``eps``, so such entries are nudged one ulp back toward the center.
    """
    z, center = _shapes_agree(z, center)
    out = np.clip(z, center - eps, center + eps)
    for _ in range(4):
        bad = np.abs(out - center) > eps
        if not bad.any():
            break
        out = np.where(bad, np.nextafter(out, center), out)
    return out


def project_l2(z, center, eps):
    """Radial projection of ``z`` onto the closed l2 ball around ``center``."""
    z, center = _shapes_agree(z, center)
    diff = z - center
    norm = np.linalg.norm(diff.ravel())
    if norm <= eps:
        return z.copy()
    factor = eps / norm
    # rounding in center + diff * factor can overshoot by a few ulps; shrink
    # the factor by a growing margin until the evaluated distance is feasible
    for k in range(60):
        out = center + diff * factor
        if np.linalg.norm((out - center).ravel()) <= eps:
            return out
        factor *= 1.0 - 2.0 ** (k - 52)
    return center.copy()


def project(z, center, eps, norm="linf"):
    if norm == "linf":
        return project_linf(z, center, eps)
    if norm == "l2":
        return project_l2(z, center, eps)
    raise InvalidConfigError(f"unknown norm {norm!r}")


def tanh_reparam(w, center, eps):
    """Map an unconstrained ``w`` into the open l-infinity ball via ``center + eps * tanh(w)``."""
    w = np.asarray(w, dtype=float)
    return np.asarray(center, dtype=float) + eps * np.tanh(w)


def _check_logits(y, label):
    y = check_finite_array(y, "logits", ndim=1)
    if y.size < 2:
        raise InvalidInputError("at least two classes are required")
    try:
        check_int(label, "label", 0, y.size - 1)
    except InvalidConfigError as exc:
        raise InvalidInputError(str(exc)) from exc
    return y


def margin_loss(y, label, convention="minimize"):
    """Margin between the true-class logit and the best other logit.

    With the default ``convention="minimize"`` this returns
    ``y[label] - max_{k != label} y[k]``, which is negative exactly when some
    wrong class outscores the true one. ``convention="display"`` returns the
    negation (``-y[label] + max_{k != label} y[k]``), the form one would
    maximize.
    """
    y = _check_logits(y, label)
    others = np.delete(y, label)
    value = float(y[label] - others.max())
    if convention == "minimize":
        return value
    if convention == "display":
        return -value
    raise InvalidConfigError(f"unknown loss convention {convention!r}")


def targeted_ce_loss(y, target, convention="minimize"):
    """Negative log-softmax probability of ``target``: ``logsumexp(y) - y[target]``.

    Always non-negative; ``convention="display"`` returns the log-softmax itself.
    """
    y = _check_logits(y, target)
    value = float(logsumexp(y) - y[target])
    value = max(value, 0.0)
    if convention == "minimize":
        return value
    if convention == "display":
        return -value
    raise InvalidConfigError(f"unknown loss convention {convention!r}")


def argmax_label(y):
    """Index of the largest logit; ties resolve to the lowest index."""
    return int(np.argmax(np.asarray(y)))


@dataclass(frozen=True)
class LossSpec:
    """Which loss to minimize and against which label.

    ``targeted=False`` uses the margin loss against the true ``label``;
    ``targeted=True`` uses the cross-entropy loss toward ``label`` as target.
    ``shift`` is the constant subtracted from the targeted loss on success.
    """

    label: int = 0
    targeted: bool = False
    shift: float = 10.0

    def __post_init__(self):
        check_int(self.label, "label", minimum=0)
        check_positive(self.shift, "shift", allow_zero=True)


def attack_loss(y, spec: LossSpec):
    """Minimization-form loss selected by ``spec``."""
    if spec.targeted:
        return targeted_ce_loss(y, spec.label)
    return margin_loss(y, spec.label)


def shifted_loss(f_value, y, spec: LossSpec):
    """Loss value used for termination.

    Untargeted: ``f_value`` unchanged (its sign already encodes success).
    Targeted: ``f_value - shift`` when the top logit is the target, else unchanged.
    """
    if spec.targeted and argmax_label(y) == spec.label:
        return float(f_value) - spec.shift
    return float(f_value)


def is_success(y, spec: LossSpec):
    """True when logits ``y`` count as adversarial, i.e. the shifted loss is negative."""
    return shifted_loss(attack_loss(y, spec), y, spec) < 0.0
