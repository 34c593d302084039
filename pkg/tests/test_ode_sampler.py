import csv
import json

import numpy as np
import pytest

from centroidflow.centroid_codec import CentroidPalette, build_palette
from centroidflow.errors import NumericalError, ValidationError
from centroidflow.ode_sampler import (
    OracleField,
    default_profile_radii,
    euler_integrate,
    gradient_profile_csv,
    oracle_velocity,
    traversal_fixture,
    traversal_report,
    write_traversal_csv,
)
from centroidflow.potential_field import PotentialParams, grad_potential


class TestEulerIntegrate:
    def test_one_step_exact_on_constant_field(self):
        # dyadic coordinates make x0 + (x1 - x0) bit-exact
        x0 = np.array([0.25, -0.75])
        x1 = np.array([-0.5, 0.875])
        traj = euler_integrate(lambda x, t: x1 - x0, x0, steps=1)
        np.testing.assert_array_equal(traj.endpoint, x1)

    def test_one_step_machine_precision_on_arbitrary_constant_field(self):
        rng = np.random.default_rng(17)
        x0 = rng.normal(size=3)
        x1 = rng.normal(size=3)
        traj = euler_integrate(lambda x, t: x1 - x0, x0, steps=1)
        np.testing.assert_allclose(traj.endpoint, x1, atol=1e-15)

    def test_trajectory_length(self):
        for steps in (1, 7, 100):
            traj = euler_integrate(lambda x, t: np.zeros(2), np.zeros(2), steps)
            assert len(traj.states) == steps + 1
            assert traj.step_count == steps
            assert traj.times[0] == 0.0 and traj.times[-1] == 1.0
            assert np.all(np.diff(traj.times) > 0)

    def test_convergence_on_rotation_field(self):
        # v = rotate90(x) has a smooth curved flow; Euler error must shrink
        def rot(x, t):
            return np.array([-x[1], x[0]])

        x0 = np.array([1.0, 0.0])
        reference = euler_integrate(rot, x0, 10000).endpoint
        errs = [
            np.linalg.norm(euler_integrate(rot, x0, s).endpoint - reference)
            for s in (1, 10, 100)
        ]
        assert errs[0] > errs[1] > errs[2]

    def test_deterministic(self):
        pal, target, starts = traversal_fixture()
        field = OracleField(palette=pal, target_label=target, mode="reshaped")
        a = euler_integrate(field, starts[0], 50, palette=pal)
        b = euler_integrate(field, starts[0], 50, palette=pal)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.min_dist_per_centroid, b.min_dist_per_centroid)

    def test_non_finite_field_aborts_with_location(self):
        def bad(x, t):
            return np.array([np.nan, 0.0]) if t >= 0.5 else np.zeros(2)

        with pytest.raises(NumericalError, match="t=0.5"):
            euler_integrate(bad, np.zeros(2), steps=2)

    def test_steps_validation(self):
        with pytest.raises(ValidationError):
            euler_integrate(lambda x, t: x, np.zeros(2), steps=0)

    def test_json_dump_schema(self):
        traj = euler_integrate(lambda x, t: np.ones(2), np.zeros(2), 4)
        doc = json.loads(traj.to_json(mode="vanilla"))
        assert set(doc) == {"times", "states", "meta"}
        assert doc["meta"] == {"steps": 4, "mode": "vanilla"}
        assert len(doc["times"]) == 5 and len(doc["states"]) == 5


class TestOracleVelocity:
    def test_vanilla_zero_at_target(self):
        pal = build_palette(4, 2)
        field = OracleField(palette=pal, target_label=1, mode="vanilla")
        np.testing.assert_array_equal(
            oracle_velocity(field, pal.centroids[1], 0.3), np.zeros(2)
        )

    def test_reshaped_pure_repulsion_at_target(self):
        pal = build_palette(4, 2)
        params = PotentialParams()
        field = OracleField(palette=pal, target_label=1, mode="reshaped", potential=params)
        v = oracle_velocity(field, pal.centroids[1], 0.3)
        expected = -grad_potential(pal.centroids[1], 1, pal, params)
        np.testing.assert_allclose(v, expected, rtol=1e-12)

    def test_vanilla_scales_with_remaining_time(self):
        pal = build_palette(4, 2)
        field = OracleField(palette=pal, target_label=0, mode="vanilla")
        x = np.array([0.0, 0.0])
        v_early = oracle_velocity(field, x, 0.0)
        v_late = oracle_velocity(field, x, 0.5)
        np.testing.assert_allclose(v_late, 2.0 * v_early, rtol=1e-12)

    def test_frozen_near_t_one(self):
        pal = build_palette(4, 2)
        field = OracleField(palette=pal, target_label=0, mode="vanilla", t_clip=1e-3)
        x = np.array([0.0, 0.0])
        np.testing.assert_allclose(
            oracle_velocity(field, x, 1.0),
            oracle_velocity(field, x, 1.0 - 1e-3),
            rtol=1e-12,
        )
        assert np.isfinite(oracle_velocity(field, x, 1.0)).all()

    def test_bisector_repulsion_component(self):
        # on the perpendicular bisector of two centroids the vanilla field
        # has no away-from-competitor component, the reshaped one does
        pal = CentroidPalette.from_centroids([[-0.5, 0.0], [0.5, 0.0]])
        x = np.array([0.0, 0.0])
        away = np.array([-1.0, 0.0])  # from competitor 1 toward target 0
        vanilla = OracleField(palette=pal, target_label=0, mode="vanilla")
        reshaped = OracleField(palette=pal, target_label=0, mode="reshaped")
        v_van = oracle_velocity(vanilla, x, 0.0)
        v_res = oracle_velocity(reshaped, x, 0.0)
        extra = (v_res - v_van) @ away
        assert extra > 0.0

    def test_mode_validation(self):
        pal = build_palette(4, 2)
        with pytest.raises(ValidationError):
            OracleField(palette=pal, target_label=0, mode="euler")
        with pytest.raises(ValidationError):
            OracleField(palette=pal, target_label=9, mode="vanilla")


class TestTraversalReport:
    def test_start_at_target(self):
        pal, target, _ = traversal_fixture()
        rows = traversal_report(
            pal, target, pal.centroids[[target]], steps=64, potential=PotentialParams()
        )
        gap = pal.min_pairwise_distance()
        for row in rows:
            assert row.endpoint_label == target
            assert row.min_dist_per_centroid[1] == pytest.approx(gap, abs=1e-3)

    def test_deflection_fixture(self):
        pal, target, starts = traversal_fixture()
        rows = traversal_report(pal, target, starts, steps=100, potential=PotentialParams())
        by_start = {}
        for row in rows:
            by_start.setdefault(row.start_index, {})[row.mode] = row
        assert len(by_start) == len(starts)
        for modes in by_start.values():
            vanilla = modes["vanilla"].min_dist_per_centroid[1]
            reshaped = modes["reshaped"].min_dist_per_centroid[1]
            assert reshaped > vanilla
            assert modes["reshaped"].endpoint_label == target

    def test_csv_output(self, tmp_path):
        pal, target, starts = traversal_fixture()
        rows = traversal_report(pal, target, starts[:2], steps=32, potential=PotentialParams())
        path = tmp_path / "traversal.csv"
        write_traversal_csv(rows, target, path)
        with open(path, newline="") as fh:
            records = list(csv.DictReader(fh))
        assert len(records) == 4  # 2 starts x 2 modes
        assert set(records[0]) == {"start_index", "mode", "endpoint_label", "min_dist_1"}


class TestGradientProfile:
    def test_row_count_and_header(self, tmp_path):
        pal = build_palette(8, 3)
        path = tmp_path / "profile.csv"
        table = gradient_profile_csv(pal, 3, PotentialParams(), path, num_radii=17)
        assert table.shape == (17, 3)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        assert header == ["r", "vanilla_norm", "reshaped_norm"]
        assert len(rows) == 17

    def test_vanilla_column_monotone(self, tmp_path):
        pal = build_palette(8, 3)
        table = gradient_profile_csv(pal, 0, PotentialParams(), tmp_path / "p.csv")
        assert np.all(np.diff(table[:, 1]) > 0)

    def test_default_radii_span(self):
        pal, target, _ = traversal_fixture()
        radii = default_profile_radii(pal, target, num=10)
        assert radii[0] == pytest.approx(1e-3)
        assert radii[-1] == pytest.approx(pal.min_pairwise_distance() / 2.0)

    def test_reshaped_dominates_smallest_radius_on_standard_fixture(self, tmp_path):
        from centroidflow.potential_field import two_centroid_fixture

        table = gradient_profile_csv(
            two_centroid_fixture(), 0, PotentialParams(), tmp_path / "p.csv"
        )
        assert table[0, 2] / table[0, 1] >= 10.0
