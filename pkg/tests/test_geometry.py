import json

import numpy as np
import pytest

from planartrack import errors
from planartrack.geometry import (
    DistortionEstimator,
    DistortionModel,
    Homography,
    HomographyEstimator,
    Polyline,
    estimate_distortion,
    estimate_homography,
    read_correspondences,
    read_polylines,
    reprojection_rms,
    straightness_residual,
    write_calibration,
    read_calibration,
)

from oracles import line_residual_bruteforce


UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def random_well_conditioned_h(rng) -> Homography:
    # mild perspective on top of a random similarity; keeps conditioning sane
    angle = rng.uniform(-0.5, 0.5)
    scale = rng.uniform(0.5, 2.0)
    c, s = np.cos(angle), np.sin(angle)
    m = np.array([
        [scale * c, -scale * s, rng.uniform(-50, 50)],
        [scale * s, scale * c, rng.uniform(-50, 50)],
        [rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1.0],
    ])
    return Homography(m)


class TestEstimateHomography:
    def test_unit_square_to_double(self):
        h = estimate_homography(UNIT_SQUARE, [(0, 0), (2, 0), (2, 2), (0, 2)])
        mapped = h.apply(UNIT_SQUARE)
        np.testing.assert_allclose(
            mapped, [(0, 0), (2, 0), (2, 2), (0, 2)], atol=1e-9)
        np.testing.assert_allclose(h.matrix, np.diag([2.0, 2.0, 1.0]), atol=1e-9)

    def test_identity_pairs(self):
        pts = [(3.0, 1.0), (10.0, 2.0), (4.0, 8.0), (-2.0, 5.0)]
        h = estimate_homography(pts, pts)
        np.testing.assert_allclose(h.matrix, np.eye(3), atol=1e-9)

    def test_nine_point_grid_exact_recovery(self):
        rng = np.random.default_rng(7)
        grid = np.array([(x, y) for x in (0, 100, 200) for y in (0, 100, 200)],
                        dtype=float)
        for _ in range(20):
            h_true = random_well_conditioned_h(rng)
            targets = h_true.apply(grid)
            h_est = estimate_homography(grid, targets)
            assert reprojection_rms(h_est, grid, targets) < 1e-6

    def test_too_few_pairs(self):
        with pytest.raises(errors.TooFewPairs):
            estimate_homography(UNIT_SQUARE[:3], UNIT_SQUARE[:3])

    def test_collinear_sources_degenerate(self):
        src = [(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]
        dst = [(0, 0), (1, 0), (2, 0), (3, 1), (4, 2)]
        with pytest.raises(errors.DegenerateConfiguration):
            estimate_homography(src, dst)

    def test_scaling_invariance(self):
        # Hartley normalization: 10x input scaling barely moves the estimate
        rng = np.random.default_rng(3)
        grid = np.array([(x, y) for x in (0, 50, 100) for y in (0, 50, 100)],
                        dtype=float)
        h_true = random_well_conditioned_h(rng)
        targets = h_true.apply(grid) + rng.normal(0, 0.3, (9, 2))
        h1 = estimate_homography(grid, targets)
        h2 = estimate_homography(grid * 10.0, targets * 10.0)
        mapped1 = h1.apply(grid) * 10.0
        mapped2 = h2.apply(grid * 10.0)
        rms = np.sqrt(np.mean(np.sum((mapped1 - mapped2) ** 2, axis=1)))
        assert rms < 1e-6 * 10.0


class TestApplyInvert:
    def test_identity_apply(self):
        h = Homography.identity()
        assert h.apply_point(3.5, 7.25) == (3.5, 7.25)

    def test_diagonal_scaling(self):
        h = Homography(np.diag([2.0, 2.0, 1.0]))
        assert h.apply_point(3, 4) == (6.0, 8.0)

    def test_inverse_of_diagonal(self):
        h = Homography(np.diag([2.0, 2.0, 1.0]))
        np.testing.assert_allclose(h.inverse().matrix, np.diag([0.5, 0.5, 1.0]),
                                   atol=1e-12)

    def test_identity_inverse(self):
        np.testing.assert_allclose(Homography.identity().inverse().matrix,
                                   np.eye(3), atol=1e-12)

    def test_round_trip_many(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            h = random_well_conditioned_h(rng)
            p = rng.uniform(-100, 100, (1, 2))
            back = h.inverse().apply(h.apply(p))
            np.testing.assert_allclose(back, p, atol=1e-9)

    def test_product_with_inverse_is_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            h = random_well_conditioned_h(rng)
            prod = (h @ h.inverse()).matrix
            assert np.max(np.abs(prod - np.eye(3))) < 1e-9

    def test_singular_matrix_rejected(self):
        with pytest.raises(errors.SingularMatrix):
            Homography(np.array([[1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float))

    def test_point_at_infinity(self):
        h = Homography(np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0.0001]]))
        with pytest.raises(errors.PointAtInfinity):
            h.apply([(-0.0001, 5.0)])


class TestReprojectionRms:
    def test_exact_is_zero(self):
        h = Homography(np.diag([2.0, 2.0, 1.0]))
        src = np.array(UNIT_SQUARE)
        assert reprojection_rms(h, src, h.apply(src)) == 0.0

    def test_three_four_five(self):
        h = Homography.identity()
        assert reprojection_rms(h, [(0.0, 0.0)], [(3.0, 4.0)]) == pytest.approx(5.0)

    def test_noise_monte_carlo(self):
        # sigma 0.5 px target noise on a 3x3 grid stays well under the
        # field-calibration level across seeds
        grid = np.array([(x, y) for x in (0, 100, 200) for y in (0, 100, 200)],
                        dtype=float)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            h_true = random_well_conditioned_h(rng)
            noisy = h_true.apply(grid) + rng.normal(0.0, 0.5, (9, 2))
            h_est = estimate_homography(grid, noisy)
            rms = reprojection_rms(h_est, grid, noisy)
            assert 0.1 < rms < 1.2


class TestDistortionModel:
    def test_zero_coefficients_identity(self):
        model = DistortionModel(0.0, 0.0, (50.0, 50.0), 100.0)
        pts = np.array([(10.0, 20.0), (80.0, 90.0)])
        np.testing.assert_allclose(model.distort(pts), pts)
        np.testing.assert_allclose(model.undistort(pts), pts)

    def test_center_fixed_point(self):
        model = DistortionModel(-0.2, 0.05, (100.0, 100.0), 100.0)
        np.testing.assert_allclose(model.distort([(100.0, 100.0)]),
                                   [(100.0, 100.0)])
        np.testing.assert_allclose(model.undistort([(100.0, 100.0)]),
                                   [(100.0, 100.0)])

    def test_round_trip(self):
        model = DistortionModel(-0.1, 0.0, (100.0, 100.0), 100.0)
        pt = np.array([(160.0, 130.0)])
        back = model.undistort(model.distort(pt))
        np.testing.assert_allclose(back, pt, atol=1e-6)
        fwd = model.distort(model.undistort(pt))
        np.testing.assert_allclose(fwd, pt, atol=1e-6)

    def test_radial_symmetry(self):
        model = DistortionModel(-0.12, 0.02, (0.0, 0.0), 10.0)
        radius = 7.0
        displacements = []
        for angle in np.linspace(0, 2 * np.pi, 13):
            p = np.array([[radius * np.cos(angle), radius * np.sin(angle)]])
            d = model.distort(p) - p
            displacements.append(np.linalg.norm(d))
        assert np.ptp(displacements) < 1e-9

    def test_monotonicity_check(self):
        assert DistortionModel(-0.15, 0.0, (0, 0), 1.0).is_monotone(1.4)
        assert not DistortionModel(-0.4, 0.0, (0, 0), 1.0).is_monotone(1.4)

    def test_nonconvergence_on_wild_model(self):
        model = DistortionModel(-2.5, 0.0, (0.0, 0.0), 1.0)
        with pytest.raises(errors.NonConvergence):
            model.undistort([(0.9, 0.0)])


class TestStraightness:
    def test_collinear_zero(self):
        assert straightness_residual([(0, 0), (1, 1), (2, 2)]) == pytest.approx(0.0, abs=1e-12)

    def test_triangle_two_thirds(self):
        pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]
        assert straightness_residual(pts) == pytest.approx(2.0 / 3.0, abs=1e-9)
        assert line_residual_bruteforce(pts) == pytest.approx(2.0 / 3.0, abs=1e-6)

    def test_matches_bruteforce_on_random_points(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            pts = rng.uniform(-5, 5, (8, 2))
            assert straightness_residual(pts) == pytest.approx(
                line_residual_bruteforce(pts), rel=1e-4)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 10, (12, 2))
        base = straightness_residual(pts)
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        assert straightness_residual(pts @ rot.T) == pytest.approx(base, abs=1e-9)

    def test_nonnegative_and_zero_iff_collinear(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pts = rng.uniform(-10, 10, (6, 2))
            assert straightness_residual(pts) >= 0.0
        t = np.linspace(0, 5, 9)
        line = np.column_stack([t, 2.0 * t - 1.0])
        assert straightness_residual(line) < 1e-12


def synth_lines(model: DistortionModel, include_center_line=False):
    """Straight pen structures pushed through a known distortion."""
    lines = []
    xs = np.linspace(10.0, 190.0, 25)
    for y in (30.0, 70.0, 140.0, 170.0):
        pts = np.column_stack([xs, np.full_like(xs, y)])
        lines.append(Polyline(points=model.distort(pts), label=f"h{y:g}"))
    ys = np.linspace(10.0, 190.0, 25)
    for x in (40.0, 160.0):
        pts = np.column_stack([np.full_like(ys, x), ys])
        lines.append(Polyline(points=model.distort(pts), label=f"v{x:g}"))
    if include_center_line:
        pts = np.column_stack([xs, np.full_like(xs, 100.0)])
        lines.append(Polyline(points=model.distort(pts), label="center"))
    return lines


class TestEstimateDistortion:
    CENTER = (100.0, 100.0)
    SCALE = 100.0

    def test_straight_input_recovers_zero(self):
        model = DistortionModel.identity(self.CENTER, self.SCALE)
        lines = synth_lines(model)
        est, residual = estimate_distortion(lines, self.CENTER, self.SCALE)
        assert abs(est.k1) < 1e-3
        assert abs(est.k2) < 1e-3
        assert residual < 1e-6

    def test_known_k1_recovery(self):
        true = DistortionModel(-0.15, 0.0, self.CENTER, self.SCALE)
        lines = synth_lines(true)
        est, residual = estimate_distortion(lines, self.CENTER, self.SCALE)
        assert est.k1 == pytest.approx(-0.15, rel=0.10)
        zero_residual = sum(straightness_residual(l.points) for l in lines)
        assert residual < 1e-4 * zero_residual

    def test_recovery_beats_zero_model(self):
        true = DistortionModel(-0.08, 0.01, self.CENTER, self.SCALE)
        lines = synth_lines(true)
        est, residual = estimate_distortion(lines, self.CENTER, self.SCALE)
        zero_residual = sum(straightness_residual(l.points) for l in lines)
        assert residual < zero_residual

    def test_insufficient_lines(self):
        model = DistortionModel.identity(self.CENTER, self.SCALE)
        with pytest.raises(errors.InsufficientLines):
            estimate_distortion(synth_lines(model)[:1], self.CENTER, self.SCALE)

    def test_all_radial_lines_degenerate(self):
        xs = np.linspace(10.0, 190.0, 15)
        through = Polyline(points=np.column_stack([xs, np.full_like(xs, 100.0)]))
        ys = np.linspace(10.0, 190.0, 15)
        vertical = Polyline(points=np.column_stack([np.full_like(ys, 100.0), ys]))
        with pytest.raises(errors.DegenerateGeometry):
            estimate_distortion([through, vertical], self.CENTER, self.SCALE)


class TestEstimators:
    def test_homography_estimator_fit_transform(self):
        est = HomographyEstimator().fit(UNIT_SQUARE, [(0, 0), (2, 0), (2, 2), (0, 2)])
        np.testing.assert_allclose(est.transform([(0.5, 0.5)]), [(1.0, 1.0)], atol=1e-9)
        np.testing.assert_allclose(est.inverse_transform([(1.0, 1.0)]), [(0.5, 0.5)],
                                   atol=1e-9)
        assert est.rms_ < 1e-9
        assert est.get_params() == {}

    def test_distortion_estimator(self):
        true = DistortionModel(-0.15, 0.0, (100.0, 100.0), 100.0)
        est = DistortionEstimator(center=(100.0, 100.0), scale=100.0)
        est.fit(synth_lines(true))
        assert est.model_.k1 == pytest.approx(-0.15, rel=0.10)
        pts = np.array([(160.0, 130.0)])
        round_trip = est.transform(est.inverse_transform(pts))
        np.testing.assert_allclose(round_trip, pts, atol=1e-5)

    def test_get_params_round_trip(self):
        est = DistortionEstimator(center=(10.0, 20.0), scale=50.0)
        params = est.get_params()
        clone = DistortionEstimator(**params)
        assert clone.scale == 50.0


class TestGeometryFiles:
    def test_correspondence_csv(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("# floor grid\n0,0,10,10\n1,0,20,10\n1,1,20,20\n0,1,10,20\n")
        src, dst = read_correspondences(path)
        assert src.shape == (4, 2)
        np.testing.assert_allclose(dst[2], (20.0, 20.0))

    def test_correspondence_bad_line(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("0,0,10\n")
        with pytest.raises(errors.ParseError, match="line 1"):
            read_correspondences(path)

    def test_polyline_json(self, tmp_path):
        path = tmp_path / "lines.json"
        path.write_text(json.dumps([
            {"label": "wall", "points": [[0, 0], [1, 0.1], [2, 0]]},
        ]))
        lines = read_polylines(path)
        assert lines[0].label == "wall"
        assert lines[0].points.shape == (3, 2)

    def test_calibration_round_trip(self, tmp_path):
        path = tmp_path / "cal.json"
        h = Homography(np.diag([2.0, 2.0, 1.0]))
        model = DistortionModel(-0.1, 0.02, (10.0, 20.0), 55.0)
        write_calibration(path, "C16", h, model, 1.5)
        loaded = read_calibration(path)
        assert loaded["camera_id"] == "C16"
        np.testing.assert_allclose(loaded["H"].matrix, h.matrix)
        assert loaded["distortion"].k1 == pytest.approx(-0.1)
        assert loaded["rms"] == pytest.approx(1.5)
