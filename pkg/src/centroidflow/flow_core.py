"""Probability path, velocity targets, reshaped targets, and masked losses.

The path is the straight-line interpolation x_t = (1-t) x0 + t x1 with
constant ground-truth velocity x1 - x0. Targets may be reshaped by
subtracting the potential gradient (statically or annealed in t); reshaped
targets are constants of the optimization, never differentiated through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .centroid_codec import CentroidPalette
from .errors import ValidationError
from .potential_field import PotentialParams, grad_potential_batch

MODES = ("vanilla", "static", "annealing")
PREDICTIONS = ("v_pred", "x_pred")


@dataclass
class FlowSample:
    """One batch of training tuples in centroid space.

    ``xt`` is always (1-t) x0 + t x1 for the stored t. Leading dimensions of
    x0/x1/xt agree; ``label`` and ``valid`` cover the same leading shape.
    """

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    label: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class ReshapeConfig:
    """Target construction switches: reshaping mode, parameterization, guards."""

    mode: str = "static"
    prediction: str = "v_pred"
    potential: PotentialParams = field(default_factory=PotentialParams)
    t_clip: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.prediction not in PREDICTIONS:
            raise ValidationError(
                f"unknown prediction {self.prediction!r}, expected one of {PREDICTIONS}"
            )
        if not 0.0 < self.t_clip < 0.5:
            raise ValidationError(f"t_clip must be in (0, 0.5), got {self.t_clip}")


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")


def _time_factor(t, like: np.ndarray) -> np.ndarray:
    """Broadcast t against the trailing vector dimension of ``like``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValidationError("t must lie in [0, 1]")
    if t.ndim == 0:
        return t
    if t.shape == like.shape[:-1]:
        return t[..., None]
    if t.shape == like.shape:
        return t
    raise ValidationError(f"t shape {t.shape} does not broadcast over {like.shape}")


def interpolate(x0, x1, t) -> np.ndarray:
    """Point on the straight path: (1-t) x0 + t x1."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    _check_shapes(x0, x1)
    tf = _time_factor(t, x0)
    return (1.0 - tf) * x0 + tf * x1


def gt_velocity(x0, x1) -> np.ndarray:
    """Constant ground-truth velocity of the straight path: x1 - x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    _check_shapes(x0, x1)
    return x1 - x0


def estimate_x1(xt, v, t, t_clip: float = 1e-3) -> np.ndarray:
    """Predicted target implied by a velocity: xt + (1-t) v.

    No clipping here: the formula is well-defined at t = 1 (the factor is
    simply zero); the guard belongs to the inverse, ``v_from_xpred``.
    """
    xt = np.asarray(xt, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_shapes(xt, v)
    tf = _time_factor(t, xt)
    return xt + (1.0 - tf) * v


def v_from_xpred(x_hat, xt, t, t_clip: float = 1e-3) -> np.ndarray:
    """Velocity implied by a target prediction: (x_hat - xt) / max(1-t, t_clip)."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    _check_shapes(x_hat, xt)
    tf = _time_factor(t, xt)
    return (x_hat - xt) / np.maximum(1.0 - tf, t_clip)


def reshape_target(
    v_gt,
    x_hat,
    label,
    palette: CentroidPalette,
    cfg: ReshapeConfig,
    t,
) -> np.ndarray:
    """Training target velocity for the configured mode.

    vanilla: v_gt unchanged. static: v_gt - grad potential(x_hat). annealing:
    v_gt - t * grad potential(x_hat). The result is returned read-only: it is
    a detached constant, and no gradient may ever flow through its
    construction (in particular not through x_hat).
    """
    v_gt = np.asarray(v_gt, dtype=np.float64)
    if cfg.mode == "vanilla":
        out = v_gt.copy()
        out.flags.writeable = False
        return out
    x_hat = np.asarray(x_hat, dtype=np.float64)
    _check_shapes(v_gt, x_hat)
    label = np.asarray(label)
    if label.shape != v_gt.shape[:-1]:
        raise ValidationError(
            f"label shape {label.shape} does not match elements {v_gt.shape[:-1]}"
        )
    flat_x = x_hat.reshape(-1, palette.dim)
    flat_lab = label.reshape(-1)
    grad = grad_potential_batch(flat_x, flat_lab, palette, cfg.potential)
    grad = grad.reshape(v_gt.shape)
    if cfg.mode == "static":
        out = v_gt - grad
    else:  # annealing: (1-t) v_gt + t (v_gt - grad) = v_gt - t grad
        tf = _time_factor(t, v_gt)
        out = v_gt - tf * grad
    out.flags.writeable = False
    return out


def masked_loss(v_pred, v_target, valid) -> tuple[float, np.ndarray]:
    """Mean squared velocity error over valid elements only.

    Returns (loss, residual). The loss is mean_k ||v_pred_k - v_target_k||^2
    with the count of valid elements as denominator; an all-invalid batch
    yields loss 0. The residual field (v_pred - v_target), zeroed on invalid
    elements, feeds analytic backprop: dLoss/dv_pred = 2 residual / count.
    """
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_target = np.asarray(v_target, dtype=np.float64)
    _check_shapes(v_pred, v_target)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != v_pred.shape[:-1]:
        raise ValidationError(
            f"valid mask shape {valid.shape} does not match elements {v_pred.shape[:-1]}"
        )
    residual = v_pred - v_target
    residual[~valid] = 0.0
    count = int(valid.sum())
    if count == 0:
        return 0.0, residual
    # fixed reduction order (C-contiguous sum) keeps reruns bit-identical
    loss = float((residual ** 2).sum() / count)
    return loss, residual
