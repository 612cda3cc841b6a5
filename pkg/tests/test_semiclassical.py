"""
测试半经典相空间分析模块
"""

import math

import numpy as np
import pytest

from cat_qubit_sim.exceptions import NoMetastableDirectionError, UnsupportedPerturbationError
from cat_qubit_sim.semiclassical import (
    FieldParams,
    PhasePoint,
    curl,
    detuned_cut_potential,
    fixed_points,
    gradient_potential,
    grid_export,
    jacobian,
    lambda_direction,
    metastable_amplitude,
    pseudo_potential,
    velocity,
)


class TestVelocityField:
    """测试速度场"""

    def test_metastable_points_are_stationary(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0)
        for x in (2.0, -2.0, 0.0):
            assert velocity(PhasePoint(x, 0.0), fp) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_jacobian_matches_finite_difference(self):
        fp = FieldParams(kappa2=0.7, alpha=1.3, kappa_a=0.2, delta=0.4)
        p = PhasePoint(0.4, -0.9)
        h = 1e-6
        numeric = np.zeros((2, 2))
        for j, (dx, dy) in enumerate(((h, 0.0), (0.0, h))):
            plus = velocity(PhasePoint(p.x + dx, p.y + dy), fp)
            minus = velocity(PhasePoint(p.x - dx, p.y - dy), fp)
            numeric[:, j] = (np.array(plus) - np.array(minus)) / (2 * h)
        np.testing.assert_allclose(jacobian(p, fp), numeric, atol=1e-6)

    def test_jacobian_at_minima(self):
        fp = FieldParams(kappa2=0.6, alpha=1.7)
        for x in (1.7, -1.7):
            np.testing.assert_allclose(jacobian(PhasePoint(x, 0.0), fp), -fp.kappa_c * np.eye(2), atol=1e-9)

    def test_curl_vanishes_without_detuning(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0, kappa_a=0.3)
        assert curl(PhasePoint(0.5, 1.2), fp) == pytest.approx(0.0, abs=1e-6)

    def test_curl_from_detuning(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0, delta=0.25)
        for point in (PhasePoint(0.0, 0.0), PhasePoint(1.5, -0.7)):
            assert curl(point, fp) == pytest.approx(-0.5, abs=1e-6)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            FieldParams(kappa2=0.0, alpha=1.0)
        with pytest.raises(ValueError):
            FieldParams(kappa2=1.0, alpha=1.0, kappa_a=-0.1)
        with pytest.raises(ValueError):
            PhasePoint(float('nan'), 0.0)


class TestPseudoPotential:
    """测试赝势"""

    def test_gradient_matches_velocity(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0, kappa_a=0.5)
        for p in (PhasePoint(0.3, 0.4), PhasePoint(-1.7, 2.2), PhasePoint(2.5, -0.1)):
            gx, gy = gradient_potential(p, fp)
            vx, vy = velocity(p, fp)
            assert (-gx, -gy) == pytest.approx((vx, vy), abs=1e-12)

    def test_gradient_matches_finite_difference(self):
        fp = FieldParams(kappa2=0.8, alpha=1.5, kappa_a=0.1)
        p = PhasePoint(0.9, -0.6)
        h = 1e-6
        gx = (pseudo_potential(PhasePoint(p.x + h, p.y), fp)
              - pseudo_potential(PhasePoint(p.x - h, p.y), fp)) / (2 * h)
        gy = (pseudo_potential(PhasePoint(p.x, p.y + h), fp)
              - pseudo_potential(PhasePoint(p.x, p.y - h), fp)) / (2 * h)
        assert (gx, gy) == pytest.approx(gradient_potential(p, fp), abs=1e-6)

    def test_minima_at_metastable_points(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0, kappa_a=1.0)
        r = metastable_amplitude(fp)
        centre = pseudo_potential(PhasePoint(r, 0.0), fp)
        for dx, dy in ((0.05, 0.0), (-0.05, 0.0), (0.0, 0.05), (0.0, -0.05)):
            assert pseudo_potential(PhasePoint(r + dx, dy), fp) > centre
        assert pseudo_potential(PhasePoint(-r, 0.0), fp) == pytest.approx(centre)
        assert pseudo_potential(PhasePoint(0.0, 0.0), fp) > centre

    def test_detuning_has_no_potential(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0, delta=0.1)
        with pytest.raises(UnsupportedPerturbationError):
            pseudo_potential(PhasePoint(0.0, 0.0), fp)
        with pytest.raises(UnsupportedPerturbationError):
            gradient_potential(PhasePoint(0.0, 0.0), fp)


class TestMetastableAmplitude:
    """测试亚稳振幅与阈值"""

    def test_unperturbed(self):
        assert metastable_amplitude(FieldParams(kappa2=1.0, alpha=1.7)) == pytest.approx(1.7)

    def test_single_photon_loss(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0, kappa_a=2.0)
        assert metastable_amplitude(fp) == pytest.approx(math.sqrt(3.0))

    def test_loss_below_threshold(self):
        fp = FieldParams(kappa2=1.0, alpha=1.0, kappa_a=2.5)
        assert metastable_amplitude(fp) == 0.0
        assert fixed_points(fp) == [PhasePoint(0.0, 0.0)]

    def test_detuning(self):
        fp = FieldParams(kappa2=1.0, alpha=math.sqrt(5.0), delta=3.0)
        assert metastable_amplitude(fp) == pytest.approx(2.0)
        assert metastable_amplitude(FieldParams(kappa2=1.0, alpha=1.0, delta=1.5)) == 0.0

    def test_combined_perturbation_rejected(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0, kappa_a=0.1, delta=0.1)
        with pytest.raises(UnsupportedPerturbationError):
            metastable_amplitude(fp)

    def test_fixed_points_are_stationary(self):
        for fp in (FieldParams(kappa2=1.0, alpha=2.0, kappa_a=1.0),
                   FieldParams(kappa2=1.0, alpha=math.sqrt(5.0), delta=3.0),
                   FieldParams(kappa2=0.5, alpha=1.8, delta=-0.4)):
            points = fixed_points(fp)
            assert len(points) == 3
            for p in points:
                assert velocity(p, fp) == pytest.approx((0.0, 0.0), abs=1e-10)

    def test_detuned_points_rotate_clockwise(self):
        points = fixed_points(FieldParams(kappa2=1.0, alpha=math.sqrt(5.0), delta=3.0))
        assert points[1].y < 0 < points[1].x
        assert points[2].beta == pytest.approx(-points[1].beta)


class TestDetunedDirection:
    """测试失谐下的亚稳方向"""

    def test_no_detuning(self):
        assert lambda_direction(1.0, 0.0) == 0.0

    def test_closed_form(self):
        ratio = 4.0 / 2.0
        assert lambda_direction(4.0, 1.0) == pytest.approx(-ratio + math.sqrt(ratio ** 2 - 1))

    def test_small_detuning_limit(self):
        assert lambda_direction(2.0, 1e-9) == pytest.approx(-0.5e-9, rel=1e-6)

    def test_at_threshold(self):
        assert lambda_direction(2.0, 1.0) == pytest.approx(-1.0)

    def test_beyond_threshold(self):
        with pytest.raises(NoMetastableDirectionError):
            lambda_direction(2.0, 1.5)
        with pytest.raises(ValueError):
            lambda_direction(2.0, -0.1)

    def test_cut_potential_minimum(self):
        fp = FieldParams(kappa2=1.0, alpha=2.0, delta=2.0)
        depth = math.sqrt((0.5 * fp.kappa_c) ** 2 - fp.delta ** 2)
        best = math.sqrt(depth / fp.kappa2)
        centre = detuned_cut_potential(best, fp)
        assert detuned_cut_potential(best + 0.01, fp) > centre
        assert detuned_cut_potential(best - 0.01, fp) > centre
        assert detuned_cut_potential(0.0, fp) == 0.0

    def test_cut_potential_restrictions(self):
        with pytest.raises(UnsupportedPerturbationError):
            detuned_cut_potential(1.0, FieldParams(kappa2=1.0, alpha=2.0, kappa_a=0.1, delta=0.5))
        with pytest.raises(NoMetastableDirectionError):
            detuned_cut_potential(1.0, FieldParams(kappa2=1.0, alpha=1.0, delta=5.0))


class TestGridExport:
    """测试网格导出"""

    def test_shapes_and_ordering(self):
        grid = grid_export(FieldParams(kappa2=1.0, alpha=2.0), 3.0, 5)
        assert grid.vx.shape == (5, 5)
        frame = grid.to_frame()
        assert list(frame.columns) == ["x", "y", "vx", "vy", "speed", "V"]
        assert len(frame) == 25
        assert frame["x"].iloc[0] == frame["x"].iloc[1] == -3.0
        assert frame["y"].iloc[:5].tolist() == pytest.approx([-3.0, -1.5, 0.0, 1.5, 3.0])

    def test_grid_matches_pointwise(self):
        fp = FieldParams(kappa2=0.9, alpha=1.2, kappa_a=0.2)
        grid = grid_export(fp, (-1.0, 2.0, -0.5, 0.5), 4)
        i, j = 2, 3
        p = PhasePoint(grid.x[i], grid.y[j])
        assert (grid.vx[i, j], grid.vy[i, j]) == pytest.approx(velocity(p, fp))
        assert grid.potential[i, j] == pytest.approx(pseudo_potential(p, fp))
        assert grid.speed[i, j] == pytest.approx(math.hypot(*velocity(p, fp)))

    def test_detuned_grid_has_no_potential(self):
        grid = grid_export(FieldParams(kappa2=1.0, alpha=2.0, delta=0.5), (-2.0, 2.0), 3)
        assert grid.potential is None
        assert "V" not in grid.to_frame().columns

    def test_invalid_arguments(self):
        fp = FieldParams(kappa2=1.0, alpha=1.0)
        with pytest.raises(ValueError):
            grid_export(fp, 2.0, 1)
        with pytest.raises(ValueError):
            grid_export(fp, (1.0, 2.0, 3.0), 3)

    def test_to_csv(self, tmp_path):
        path = grid_export(FieldParams(kappa2=1.0, alpha=1.0), 1.0, 3).to_csv(tmp_path / "out" / "field.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "x,y,vx,vy,speed,V"
        assert len(lines) == 10
