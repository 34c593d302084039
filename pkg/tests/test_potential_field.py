import numpy as np
import pytest

from centroidflow.centroid_codec import CentroidPalette, build_palette
from centroidflow.errors import ValidationError
from centroidflow.potential_field import (
    PotentialParams,
    correction_norm_profile,
    grad_potential,
    potential,
    soft_assign,
    transform,
    two_centroid_fixture,
)

# 1-D palettes used throughout: the textbook pair at +-1 for hand arithmetic,
# and the dense standard fixture (separation 0.1) for near-competitor behavior
WIDE = CentroidPalette.from_centroids([[-1.0], [1.0]])


def fd_gradient(x, label, palette, params, step=1e-4):
    """Central finite differences of the potential, dimension by dimension."""
    g = np.zeros_like(x)
    for i in range(len(x)):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (potential(hi, label, palette, params) - potential(lo, label, palette, params)) / (2 * step)
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return np.linalg.norm(a - b) / denom


class TestTransform:
    def test_neg_log_at_zero(self):
        p = PotentialParams(transform="neg_log", epsilon=1e-6)
        assert transform(0.0, p) == pytest.approx(13.815511, abs=1e-6)

    def test_neg_sqrt(self):
        assert transform(4.0, PotentialParams(transform="neg_sqrt")) == -2.0

    def test_neg_identity_at_zero(self):
        assert transform(0.0, PotentialParams(transform="neg_identity")) == 0.0

    def test_negative_distance_rejected(self):
        with pytest.raises(ValidationError):
            transform(-0.1, PotentialParams())

    def test_param_validation(self):
        with pytest.raises(ValidationError):
            PotentialParams(tau=0.0)
        with pytest.raises(ValidationError):
            PotentialParams(epsilon=0.0)
        with pytest.raises(ValidationError):
            PotentialParams(transform="log")


class TestSoftAssign:
    def test_equidistant_symmetry(self):
        res = soft_assign([0.0], WIDE, PotentialParams())
        np.testing.assert_allclose(res.probs, [0.5, 0.5], atol=1e-15)

    def test_single_class(self):
        pal = CentroidPalette.from_centroids([[0.3, -0.2]])
        res = soft_assign([0.9, 0.1], pal, PotentialParams())
        np.testing.assert_array_equal(res.probs, [1.0])

    def test_neg_log_inverts_to_distance_ratio(self):
        # at tau=1 the exp(-log) softmax reduces to p_0 = (d1+eps)/(d0+d1+2eps)
        params = PotentialParams(tau=1.0, epsilon=1e-6, transform="neg_log")
        res = soft_assign([-0.5], WIDE, params)
        d0, d1 = 0.25, 2.25
        eps = params.epsilon
        expected = (d1 + eps) / ((d0 + eps) + (d1 + eps))
        assert expected == pytest.approx(0.9, abs=1e-6)
        assert res.probs[0] == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(res.distances, [d0, d1], rtol=1e-15)

    def test_probs_normalized_all_operators(self):
        rng = np.random.default_rng(11)
        pal = build_palette(4096, 3)
        for op in ("neg_log", "neg_sqrt", "neg_identity"):
            params = PotentialParams(transform=op)
            for _ in range(20):
                res = soft_assign(rng.uniform(-1.5, 1.5, 3), pal, params)
                assert abs(res.probs.sum() - 1.0) <= 1e-12
                assert np.all(res.probs > 0.0) and np.all(res.probs <= 1.0)

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(5)
        pal = build_palette(12, 3)
        params = PotentialParams()
        x = rng.uniform(-1, 1, 3)
        perm = rng.permutation(12)
        permuted = CentroidPalette.from_centroids(pal.centroids[perm])
        base = soft_assign(x, pal, params)
        shuffled = soft_assign(x, permuted, params)
        np.testing.assert_allclose(shuffled.probs, base.probs[perm], rtol=1e-12)
        label = 4
        new_label = int(np.where(perm == label)[0][0])
        assert potential(x, label, pal, params) == pytest.approx(
            potential(x, new_label, permuted, params), rel=1e-12
        )
        assert np.linalg.norm(grad_potential(x, label, pal, params)) == pytest.approx(
            np.linalg.norm(grad_potential(x, new_label, permuted, params)), rel=1e-12
        )

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            soft_assign([np.inf], WIDE, PotentialParams())


class TestPotential:
    def test_half_prob(self):
        assert potential([0.0], 0, WIDE, PotentialParams()) == pytest.approx(
            0.693147, abs=1e-6
        )

    def test_single_class_zero(self):
        pal = CentroidPalette.from_centroids([[0.0, 0.0]])
        assert potential([0.4, 0.4], 0, pal, PotentialParams()) == pytest.approx(0.0, abs=1e-15)

    def test_midpoint_derived_value(self):
        # p_0 = 0.9 at x = -0.5, so the potential is -ln 0.9
        assert potential([-0.5], 0, WIDE, PotentialParams()) == pytest.approx(
            0.105361, abs=1e-6
        )

    def test_label_out_of_range(self):
        with pytest.raises(ValidationError):
            potential([0.0], 2, WIDE, PotentialParams())


class TestGradPotential:
    def test_midpoint_hand_value(self):
        g = grad_potential([0.0], 0, WIDE, PotentialParams())
        assert g[0] == pytest.approx(1.999998, abs=1e-6)

    def test_at_centroid_only_repulsion(self):
        # the attraction term carries the factor (x - mu_label) = 0
        pal = build_palette(5, 3)
        params = PotentialParams()
        label = 2
        g = grad_potential(pal.centroids[label], label, pal, params)
        res = soft_assign(pal.centroids[label], pal, params)
        expected = np.zeros(3)
        for j in range(5):
            if j == label:
                continue
            diff = pal.centroids[label] - pal.centroids[j]
            expected += (
                (2.0 / params.tau)
                * (0.0 - res.probs[j])
                * diff
                / (res.distances[j] + params.epsilon)
            )
        np.testing.assert_allclose(g, expected, rtol=1e-9, atol=1e-14)

    @pytest.mark.parametrize("op", ["neg_log", "neg_sqrt", "neg_identity"])
    def test_matches_finite_differences(self, op):
        pal = build_palette(150, 3)
        params = PotentialParams(transform=op)
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 200:
            x = rng.uniform(-1.2, 1.2, 3)
            d = np.sqrt(((x - pal.centroids) ** 2).sum(axis=1))
            if d.min() < 1e-3:
                continue
            label = int(rng.integers(0, 150))
            g = grad_potential(x, label, pal, params)
            assert np.isfinite(g).all()
            assert rel_err(g, fd_gradient(x, label, pal, params)) <= 1e-5
            checked += 1

    def test_descent_direction(self):
        pal = build_palette(20, 3)
        params = PotentialParams()
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.uniform(-1, 1, 3)
            label = int(rng.integers(0, 20))
            if np.sqrt(((x - pal.centroids[label]) ** 2).sum()) < 1e-6:
                continue
            g = grad_potential(x, label, pal, params)
            eta = 1e-5
            assert potential(x - eta * g, label, pal, params) < potential(x, label, pal, params)

    def test_finite_at_exact_centroid_hit(self):
        pal = build_palette(150, 3)
        for op in ("neg_log", "neg_sqrt", "neg_identity"):
            g = grad_potential(pal.centroids[31], 31, pal, PotentialParams(transform=op))
            assert np.isfinite(g).all()

    def test_norm_clip(self):
        fixture = two_centroid_fixture()
        x = np.array([fixture.centroids[1, 0] - 1e-4])  # right next to the competitor
        unclipped = grad_potential(x, 0, fixture, PotentialParams())
        assert np.linalg.norm(unclipped) > 10.0
        clipped = grad_potential(x, 0, fixture, PotentialParams(clip_norm=10.0))
        assert np.linalg.norm(clipped) == pytest.approx(10.0, rel=1e-12)
        np.testing.assert_allclose(
            clipped / np.linalg.norm(clipped), unclipped / np.linalg.norm(unclipped), rtol=1e-12
        )


class TestCorrectionNormProfile:
    def test_vanilla_column_is_2r(self):
        fixture = two_centroid_fixture()
        radii = np.array([1e-3, 0.01, 0.04])
        rows = correction_norm_profile(fixture, 0, [1.0], radii, PotentialParams())
        np.testing.assert_array_equal(rows[:, 0], radii)
        np.testing.assert_array_equal(rows[:, 1], 2.0 * radii)

    def test_reshaped_dominates_near_centroid(self):
        fixture = two_centroid_fixture()
        rows = correction_norm_profile(
            fixture, 0, [1.0], [0.01, 0.3], PotentialParams(tau=1.0, epsilon=1e-6)
        )
        ratio_small = rows[0, 2] / rows[0, 1]
        ratio_large = rows[1, 2] / rows[1, 1]
        assert ratio_small >= 10.0
        assert ratio_small > ratio_large

    def test_rows_in_input_order(self):
        fixture = two_centroid_fixture()
        radii = [0.02, 0.005, 0.04]
        rows = correction_norm_profile(fixture, 0, [1.0], radii, PotentialParams())
        np.testing.assert_array_equal(rows[:, 0], radii)

    def test_direction_must_be_unit(self):
        with pytest.raises(ValidationError):
            correction_norm_profile(WIDE, 0, [2.0], [0.1], PotentialParams())

    def test_radii_must_be_positive(self):
        with pytest.raises(ValidationError):
            correction_norm_profile(WIDE, 0, [1.0], [0.0, 0.1], PotentialParams())
