"""Discriminative potential over the centroid set.

Squared distances to every centroid are warped by a transform operator,
softmaxed into a soft class assignment p, and the potential is the cross
entropy between p and the one-hot label. Its analytic gradient supplies
attraction to the target centroid and repulsion from competitors; it is the
correction term subtracted from flow matching targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .centroid_codec import CentroidPalette
from .errors import ValidationError

TRANSFORMS = ("neg_log", "neg_sqrt", "neg_identity")

# floor inside the sqrt derivative so neg_sqrt stays finite at d = 0
_SQRT_FLOOR = 1e-12


@dataclass(frozen=True)
class PotentialParams:
    """Temperature, stabilizer and distance-transform choice.

    ``clip_norm`` optionally rescales the gradient to that maximum norm; the
    unclipped gradient can reach ~1/sqrt(epsilon) right next to a competitor.
    """

    tau: float = 1.0
    epsilon: float = 1e-6
    transform: str = "neg_log"
    clip_norm: float | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.transform not in TRANSFORMS:
            raise ValidationError(
                f"unknown transform {self.transform!r}, expected one of {TRANSFORMS}"
            )
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValidationError(f"clip_norm must be > 0, got {self.clip_norm}")


@dataclass(frozen=True)
class AssignResult:
    """Soft assignment over classes plus the quantities it was built from."""

    probs: np.ndarray      # length N, sums to 1
    distances: np.ndarray  # length N, squared Euclidean
    logits: np.ndarray     # length N, transform(d_k) / tau


def transform(dist, params: PotentialParams):
    """Apply the distance-warping operator to squared distance(s)."""
    d = np.asarray(dist, dtype=np.float64)
    if np.any(d < 0):
        raise ValidationError("squared distance must be >= 0")
    if params.transform == "neg_log":
        return -np.log(d + params.epsilon)
    if params.transform == "neg_sqrt":
        return -np.sqrt(d)
    return -d


def _transform_deriv(d: np.ndarray, params: PotentialParams) -> np.ndarray:
    """dT/dd for the active operator, evaluated elementwise."""
    if params.transform == "neg_log":
        return -1.0 / (d + params.epsilon)
    if params.transform == "neg_sqrt":
        return -0.5 / np.sqrt(np.maximum(d, _SQRT_FLOOR))
    return -np.ones_like(d)


def _soft_assign_batch(
    x: np.ndarray, palette: CentroidPalette, params: PotentialParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized core: x is (M, dim); returns (probs, d, logits), each (M, N)."""
    diff = x[:, None, :] - palette.centroids[None, :, :]
    d = (diff ** 2).sum(axis=-1)
    logits = transform(d, params) / params.tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    return probs, d, logits


def soft_assign(x_hat, palette: CentroidPalette, params: PotentialParams) -> AssignResult:
    """Temperature-scaled softmax over transformed squared distances.

    Computed with max-logit subtraction, so every prob is in (0, 1] and the
    vector sums to 1 even for extreme distance spreads.
    """
    x = np.asarray(x_hat, dtype=np.float64)
    if x.shape != (palette.dim,):
        raise ValidationError(f"point must have shape ({palette.dim},), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValidationError("point contains non-finite values")
    probs, d, logits = _soft_assign_batch(x[None, :], palette, params)
    return AssignResult(probs=probs[0], distances=d[0], logits=logits[0])


def potential(x_hat, label: int, palette: CentroidPalette, params: PotentialParams) -> float:
    """Cross entropy -log p_label between the soft assignment and the one-hot label."""
    if not 0 <= label < palette.count:
        raise ValidationError(f"label {label} out of range for {palette.count} classes")
    res = soft_assign(x_hat, palette, params)
    # log p via logits, avoiding underflow of tiny probabilities
    shifted = res.logits - res.logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def grad_potential_batch(
    x: np.ndarray, labels: np.ndarray, palette: CentroidPalette, params: PotentialParams
) -> np.ndarray:
    """Analytic d(potential)/dx for a batch: x is (M, dim), labels is (M,)."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.isfinite(x).all():
        raise ValidationError("point contains non-finite values")
    if labels.min() < 0 or labels.max() >= palette.count:
        raise ValidationError(
            f"label out of range for {palette.count} classes: {int(labels.min())}..{int(labels.max())}"
        )
    probs, d, _ = _soft_assign_batch(x, palette, params)
    y = np.zeros_like(probs)
    y[np.arange(x.shape[0]), labels] = 1.0
    # chain rule through T(d_k) and d_k = ||x - mu_k||^2:
    #   grad = -(2/tau) sum_k (y_k - p_k) T'(d_k) (x - mu_k)
    coeff = -(2.0 / params.tau) * (y - probs) * _transform_deriv(d, params)
    grad = coeff.sum(axis=1, keepdims=True) * x - coeff @ palette.centroids
    if params.clip_norm is not None:
        norm = np.sqrt((grad ** 2).sum(axis=1, keepdims=True))
        scale = np.where(norm > params.clip_norm, params.clip_norm / norm, 1.0)
        grad = grad * scale
    return grad


def grad_potential(
    x_hat, label: int, palette: CentroidPalette, params: PotentialParams
) -> np.ndarray:
    """Gradient of the potential at one point; always finite thanks to epsilon.

    For neg_log this is (2/tau) sum_k (y_k - p_k)(x - mu_k)/(d_k + epsilon);
    the other operators substitute their own T'.
    """
    if not 0 <= label < palette.count:
        raise ValidationError(f"label {label} out of range for {palette.count} classes")
    x = np.asarray(x_hat, dtype=np.float64)
    if x.shape != (palette.dim,):
        raise ValidationError(f"point must have shape ({palette.dim},), got {x.shape}")
    return grad_potential_batch(x[None, :], np.array([label]), palette, params)[0]


def correction_norm_profile(
    palette: CentroidPalette,
    label: int,
    direction,
    radii,
    params: PotentialParams,
) -> np.ndarray:
    """Gradient-norm profile along a ray from centroid ``label``.

    For each radius r the evaluation point is mu_label + r * direction. Rows
    (in input order) are (r, vanilla_norm, reshaped_norm) where vanilla_norm
    is the flow matching pull ||2 (x - mu_label)|| = 2r and reshaped_norm is
    ||grad potential||.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != (palette.dim,):
        raise ValidationError(
            f"direction must have shape ({palette.dim},), got {direction.shape}"
        )
    if abs(np.sqrt((direction ** 2).sum()) - 1.0) > 1e-9:
        raise ValidationError("direction must be a unit vector")
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(radii <= 0):
        raise ValidationError("radii must be positive")
    pts = palette.centroids[label][None, :] + radii[:, None] * direction[None, :]
    grads = grad_potential_batch(
        pts, np.full(len(radii), label, dtype=np.int64), palette, params
    )
    reshaped = np.sqrt((grads ** 2).sum(axis=1))
    return np.column_stack([radii, 2.0 * radii, reshaped])


def two_centroid_fixture(separation: float = 0.1) -> CentroidPalette:
    """Standard two-centroid test palette: 1-D, centroids at +-separation/2.

    The small default separation models the dense packing of high-cardinality
    palettes, which is where reshaping matters; widely separated centroids do
    not exercise the near-competitor regime.
    """
    half = separation / 2.0
    return CentroidPalette.from_centroids([[-half], [half]])
