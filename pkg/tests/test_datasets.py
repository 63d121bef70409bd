"""Synthetic distribution builders, sampling statistics, CSV round trips."""

import numpy as np
import pytest

from stf_lab import datasets


class TestBuilders:
    def test_two_gaussians_structure(self):
        d = datasets.make_two_gaussians(64, 0.1, 1e-4)
        np.testing.assert_allclose(d.weights, [0.5, 0.5])
        np.testing.assert_allclose(d.means[0], 0.1 * np.ones(64))
        np.testing.assert_allclose(d.means[1], -0.1 * np.ones(64))
        assert d.sigma_hat == 1e-4

    def test_two_deltas(self):
        d = datasets.make_two_gaussians(1, 1.0, 0.0)
        assert d.sigma_hat == 0.0
        np.testing.assert_allclose(sorted(d.means[:, 0]), [-1.0, 1.0])

    def test_ring_quarter_rotations(self):
        d = datasets.make_ring(4, 1.0, 0.0)
        want = {(1, 0), (0, 1), (-1, 0), (0, -1)}
        got = {tuple(np.round(m, 12)) for m in d.means}
        assert got == want

    def test_ring_chord_length(self):
        d = datasets.make_ring(8, 2.0, 0.05)
        gap = np.linalg.norm(d.means[0] - d.means[1])
        assert gap == pytest.approx(2 * 2 * np.sin(np.pi / 8), rel=1e-12)

    def test_single_component_ring(self):
        d = datasets.make_ring(1, 3.0, 0.1)
        np.testing.assert_allclose(d.means, [[3.0, 0.0]], atol=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            datasets.make_two_gaussians(0, 0.1, 0.0)
        with pytest.raises(ValueError):
            datasets.make_ring(0, 1.0, 0.0)
        with pytest.raises(ValueError):
            datasets.GaussianMixture(np.array([0.5, 0.6]), np.zeros((2, 1)), 0.0)
        with pytest.raises(ValueError):
            datasets.EmpiricalSet(np.empty((0, 2)))


class TestSampling:
    def test_single_point_empirical(self):
        e = datasets.EmpiricalSet(np.array([[1.0, 2.0]]))
        out = datasets.sample_data(e, 17, np.random.default_rng(0))
        assert np.all(out == [1.0, 2.0])

    def test_degenerate_mixture(self):
        d = datasets.GaussianMixture(np.array([1.0]), np.array([[3.0, -1.0]]), 0.0)
        out = datasets.sample_data(d, 9, np.random.default_rng(0))
        assert np.all(out == [3.0, -1.0])

    def test_empty_batch(self):
        d = datasets.make_ring(4, 1.0, 0.0)
        assert datasets.sample_data(d, 0, np.random.default_rng(0)).shape == (0, 2)

    def test_symmetric_sign_fraction(self):
        d = datasets.make_two_gaussians(64, 0.1, 1e-4)
        x = datasets.sample_data(d, 100_000, np.random.default_rng(1))
        frac = float(np.mean(x.sum(axis=1) > 0))
        assert abs(frac - 0.5) < 0.005

    def test_mixture_moments(self):
        # componentwise mean within 4 standard errors of the mixture mean
        d = datasets.GaussianMixture(np.array([0.3, 0.7]),
                                     np.array([[1.0, 0.0], [-1.0, 2.0]]), 0.5)
        n = 1_000_000
        x = datasets.sample_data(d, n, np.random.default_rng(2))
        want = 0.3 * d.means[0] + 0.7 * d.means[1]
        se = x.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(x.mean(axis=0) - want) < 4 * se)

    def test_empirical_frequencies_uniform(self):
        pts = np.arange(8, dtype=float).reshape(8, 1)
        e = datasets.EmpiricalSet(pts)
        n = 80_000
        out = datasets.sample_data(e, n, np.random.default_rng(3))
        counts = np.array([(out[:, 0] == v).sum() for v in pts[:, 0]])
        p = 1 / 8
        bound = 5 * np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < bound)


class TestPointFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        pts = np.random.default_rng(4).standard_normal((37, 5))
        path = tmp_path / "pts.csv"
        datasets.save_points(path, pts)
        back = datasets.load_points(path)
        assert np.array_equal(back.points, pts)

    def test_dimension_from_rows(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("0,0\n1,1\n")
        e = datasets.load_points(path)
        assert e.points.shape == (2, 2)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty dataset"):
            datasets.load_points(path)

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3,oops\n")
        with pytest.raises(ValueError, match="malformed"):
            datasets.load_points(path)

    def test_inconsistent_dimension(self, tmp_path):
        path = tmp_path / "i.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(ValueError, match="columns"):
            datasets.load_points(path)
