"""Euler integration of velocity fields plus oracle-field diagnostics.

The oracle fields realize the idealized dynamics around centroids: the
vanilla field flows straight at the target, the reshaped one subtracts the
potential gradient and so deflects around competitors. Traversal and
gradient-profile reports quantify both behaviors.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .centroid_codec import CentroidPalette, decode_nearest
from .errors import NumericalError, ValidationError
from .potential_field import PotentialParams, correction_norm_profile, grad_potential_batch

ORACLE_MODES = ("vanilla", "reshaped")


@dataclass
class Trajectory:
    """Recorded Euler integration over the unit time interval."""

    times: np.ndarray
    states: np.ndarray
    step_count: int
    min_dist_per_centroid: np.ndarray | None = None

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def to_json(self, mode: str = "custom") -> str:
        return json.dumps(
            {
                "times": self.times.tolist(),
                "states": self.states.tolist(),
                "meta": {"steps": self.step_count, "mode": mode},
            }
        )


@dataclass(frozen=True)
class OracleField:
    """Idealized conditional velocity field aimed at one target centroid."""

    palette: CentroidPalette
    target_label: int
    mode: str = "vanilla"
    potential: PotentialParams = PotentialParams()
    t_clip: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.target_label < self.palette.count:
            raise ValidationError(
                f"target label {self.target_label} out of range for "
                f"{self.palette.count} classes"
            )
        if self.mode not in ORACLE_MODES:
            raise ValidationError(
                f"unknown oracle mode {self.mode!r}, expected one of {ORACLE_MODES}"
            )

    def __call__(self, x, t):
        return oracle_velocity(self, x, t)


def oracle_velocity(field: OracleField, x, t: float) -> np.ndarray:
    """Evaluate the oracle field at one state.

    vanilla: (mu_target - x) / (1 - t), the unique field whose flow follows
    the straight path; frozen at the t_clip divisor near t = 1. reshaped:
    the vanilla value minus the potential gradient evaluated at x itself.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = field.palette.centroids[field.target_label]
    v = (mu - x) / max(1.0 - t, field.t_clip)
    if field.mode == "reshaped":
        grad = grad_potential_batch(
            x[None, :],
            np.array([field.target_label]),
            field.palette,
            field.potential,
        )[0]
        v = v - grad
    return v


def euler_integrate(field, x0, steps: int, palette: CentroidPalette | None = None) -> Trajectory:
    """Fixed-step Euler integration of dx/dt = field(x, t) over [0, 1].

    Records every intermediate state. When a palette is supplied, the
    minimum distance attained to each centroid over the whole path is
    recorded too. A non-finite field value aborts with the failing (t, x).
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    x = np.asarray(x0, dtype=np.float64).copy()
    dt = 1.0 / steps
    times = np.linspace(0.0, 1.0, steps + 1)
    states = np.empty((steps + 1, x.shape[0]), dtype=np.float64)
    states[0] = x
    for i in range(steps):
        t = i * dt
        v = np.asarray(field(x, t), dtype=np.float64)
        if not np.isfinite(v).all():
            raise NumericalError(
                f"velocity field returned non-finite value at t={t!r}, x={x.tolist()!r}"
            )
        x = x + dt * v
        states[i + 1] = x
    min_dist = None
    if palette is not None:
        diff = states[:, None, :] - palette.centroids[None, :, :]
        min_dist = np.sqrt((diff ** 2).sum(axis=-1)).min(axis=0)
    return Trajectory(
        times=times, states=states, step_count=steps, min_dist_per_centroid=min_dist
    )


@dataclass
class TraversalRow:
    """One (start point, oracle mode) traversal outcome."""

    start_index: int
    mode: str
    endpoint_label: int
    min_dist_per_centroid: np.ndarray

    def competitor_distances(self, target_label: int) -> dict[int, float]:
        return {
            k: float(self.min_dist_per_centroid[k])
            for k in range(len(self.min_dist_per_centroid))
            if k != target_label
        }


def traversal_report(
    palette: CentroidPalette,
    target_label: int,
    start_points,
    steps: int,
    potential: PotentialParams,
) -> list[TraversalRow]:
    """Integrate both oracle modes from each start and report proximity.

    For every start point, both the vanilla and the reshaped oracle are run;
    each row carries the minimum distance attained to every centroid and the
    decoded label of the endpoint.
    """
    starts = np.asarray(start_points, dtype=np.float64)
    if starts.ndim != 2 or starts.shape[1] != palette.dim:
        raise ValidationError(
            f"start points must be (M, {palette.dim}), got shape {starts.shape}"
        )
    if not np.isfinite(starts).all():
        raise ValidationError("start points contain non-finite values")
    rows = []
    for mode in ORACLE_MODES:
        field = OracleField(
            palette=palette, target_label=target_label, mode=mode, potential=potential
        )
        for i, x0 in enumerate(starts):
            traj = euler_integrate(field, x0, steps, palette=palette)
            labels, _ = decode_nearest(traj.endpoint.reshape(1, 1, -1), palette)
            rows.append(
                TraversalRow(
                    start_index=i,
                    mode=mode,
                    endpoint_label=int(labels.labels[0, 0]),
                    min_dist_per_centroid=traj.min_dist_per_centroid,
                )
            )
    return rows


def write_traversal_csv(rows: list[TraversalRow], target_label: int, path) -> None:
    """CSV with one row per (start, mode); competitor distances as columns."""
    if not rows:
        raise ValidationError("no traversal rows to write")
    competitors = [k for k in range(len(rows[0].min_dist_per_centroid)) if k != target_label]
    header = ["start_index", "mode", "endpoint_label"] + [
        f"min_dist_{k}" for k in competitors
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [row.start_index, row.mode, row.endpoint_label]
                + [repr(float(row.min_dist_per_centroid[k])) for k in competitors]
            )


def default_profile_radii(palette: CentroidPalette, label: int, num: int = 50) -> np.ndarray:
    """Log-spaced radii from 1e-3 out to half the nearest-competitor distance."""
    competitor = palette.nearest_competitor(label)
    gap = float(
        np.sqrt(((palette.centroids[label] - palette.centroids[competitor]) ** 2).sum())
    )
    return np.geomspace(1e-3, gap / 2.0, num)


def gradient_profile_csv(
    palette: CentroidPalette,
    label: int,
    params: PotentialParams,
    out,
    num_radii: int = 50,
) -> np.ndarray:
    """Write the centroid-to-competitor gradient-norm profile as CSV.

    The ray points from centroid ``label`` at its nearest competitor; rows
    are the correction_norm_profile table. Returns the table as well.
    """
    competitor = palette.nearest_competitor(label)
    direction = palette.centroids[competitor] - palette.centroids[label]
    direction = direction / np.sqrt((direction ** 2).sum())
    radii = default_profile_radii(palette, label, num_radii)
    table = correction_norm_profile(palette, label, direction, radii, params)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "vanilla_norm", "reshaped_norm"])
        for r, vanilla, reshaped in table:
            writer.writerow([repr(float(r)), repr(float(vanilla)), repr(float(reshaped))])
    return table


def traversal_fixture() -> tuple[CentroidPalette, int, np.ndarray]:
    """Standard 2-D deflection fixture.

    The competitor centroid sits 0.05 off the straight chord from the default
    start to the target, so vanilla trajectories skim it while reshaped ones
    are pushed away. Returns (palette, target label, start points).
    """
    palette = CentroidPalette.from_centroids([[0.8, 0.0], [0.0, 0.05]])
    starts = np.array(
        [
            [-0.8, 0.0],
            [-0.8, 0.02],
            [-0.8, -0.02],
            [-0.9, 0.01],
            [-0.7, -0.01],
        ]
    )
    return palette, 0, starts
