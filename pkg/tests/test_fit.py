"""
Fit Tests
"""

import unittest
import sys
from pathlib import Path

import numpy as np

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.basis import BasisSpec, design_matrix
from core.dataset import Dataset, sort_index
from core.errors import (
    ConfigurationError, SampleSizeError, SingularFitError, UnsupportedConfigurationError,
)
from core.fit import (
    binscatter_dots, evaluate, evaluate_many, fit_binscatter, fit_residualized,
)
from core.partition import bin_centers, bin_index, build_partition


def _sample(n=500, d=0, seed=0, mu=np.sin):
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    W = rng.standard_normal((n, d)) if d else None
    y = mu(3 * x) + rng.normal(0, 0.3, n)
    if d:
        y = y + W @ np.linspace(0.5, -0.5, d)
    return Dataset.from_arrays(y, x, W)


def _spec(data, J, p, s, v=0):
    part = build_partition(data, sort_index(data), J)
    return BasisSpec(p=p, s=s, v=v, partition=part)


class TestCanonicalBinscatter(unittest.TestCase):
    """Test p = s = 0 without covariates"""

    def test_bin_means(self):
        """Test fitted values are the bin sample means"""
        data = _sample(n=1000)
        spec = _spec(data, 20, 0, 0)
        fit = fit_binscatter(data, spec)

        j = bin_index(spec.partition, data.x)
        means = np.bincount(j, weights=data.y) / np.bincount(j)
        np.testing.assert_allclose(fit.fitted, means[j], atol=1e-10)
        np.testing.assert_allclose(evaluate_many(fit, bin_centers(spec.partition)), means, atol=1e-10)

        dots = binscatter_dots(fit)
        self.assertEqual(len(dots), 20)
        np.testing.assert_allclose([value for _, value in dots], means, atol=1e-10)
        self.assertEqual(fit.dots_shift, 0.0)


class TestFitBinscatter(unittest.TestCase):
    """Test the semi-linear least-squares solver"""

    def test_matches_dense_least_squares(self):
        """Test against a brute-force solve on [B W]"""
        rng = np.random.default_rng(11)
        for trial in range(40):
            n = int(rng.integers(120, 201))
            p = int(rng.integers(0, 4))
            s = int(rng.integers(0, p + 1))
            d = int(rng.integers(0, 4))
            J = int(rng.integers(2, 6))
            data = _sample(n=n, d=d, seed=trial)
            spec = _spec(data, J, p, s)
            fit = fit_binscatter(data, spec)

            X = design_matrix(spec, data.x).toarray()
            if d:
                X = np.column_stack((X, data.w))
            coef, *_ = np.linalg.lstsq(X, data.y, rcond=None)
            dense = X @ coef
            np.testing.assert_allclose(fit.fitted, dense, rtol=1e-8, atol=1e-10,
                                       err_msg=f"n={n} p={p} s={s} d={d} J={J}")
            np.testing.assert_allclose(fit.residuals, data.y - dense, rtol=1e-8, atol=1e-8)

    def test_residual_orthogonality(self):
        """Test B'e = 0 and W'e = 0"""
        data = _sample(d=2, seed=4)
        spec = _spec(data, 8, 2, 1)
        fit = fit_binscatter(data, spec)
        B = design_matrix(spec, data.x)
        np.testing.assert_allclose(B.T @ fit.residuals / data.n, 0.0, atol=1e-10)
        np.testing.assert_allclose(data.w.T @ fit.residuals / data.n, 0.0, atol=1e-10)

    def test_polynomial_reproduction(self):
        """Test noise-free cubic data is reproduced exactly"""
        rng = np.random.default_rng(2)
        x = rng.random(300)
        cubic = np.polynomial.Polynomial([0.5, -1.0, 2.0, 1.5])
        data = Dataset.from_arrays(cubic(x), x)
        grid = np.linspace(x.min(), x.max(), 400)
        for J in (2, 5, 9):
            spec = _spec(data, J, 3, 3)
            fit = fit_binscatter(data, spec)
            self.assertLess(np.abs(evaluate_many(fit, grid) - cubic(grid)).max(), 1e-8)
            self.assertLess(np.abs(evaluate_many(fit, grid, v=1) - cubic.deriv()(grid)).max(), 1e-6)

    def test_basis_scale_invariance(self):
        """Test rescaling the basis leaves fitted values unchanged"""
        data = _sample(d=1, seed=5)
        spec = _spec(data, 6, 3, 3)
        base = fit_binscatter(data, spec)
        scaled = fit_binscatter(data, spec, basis_scale=7.3)
        np.testing.assert_allclose(scaled.fitted, base.fitted, rtol=1e-10, atol=1e-12)
        grid = np.linspace(data.x.min(), data.x.max(), 50)
        np.testing.assert_allclose(evaluate_many(scaled, grid), evaluate_many(base, grid),
                                   rtol=1e-10, atol=1e-12)

    def test_affine_covariate_invariance(self):
        """Test wA + c leaves the fit unchanged"""
        data = _sample(d=2, seed=6)
        spec = _spec(data, 7, 2, 2)
        base = fit_binscatter(data, spec)

        A = np.array([[2.0, 0.5], [-1.0, 3.0]])
        rotated = Dataset.from_arrays(data.y, data.x, data.w @ A)
        fit = fit_binscatter(rotated, spec)
        grid = np.linspace(data.x.min(), data.x.max(), 50)
        np.testing.assert_allclose(evaluate_many(fit, grid), evaluate_many(base, grid), atol=1e-8)
        np.testing.assert_allclose(fit.gamma, np.linalg.solve(A, base.gamma), atol=1e-8)

        shifted = Dataset.from_arrays(data.y, data.x, data.w @ A + np.array([1.0, -2.0]))
        fit = fit_binscatter(shifted, spec)
        np.testing.assert_allclose(fit.fitted, base.fitted, atol=1e-8)

    def test_dots_shift(self):
        """Test dots add the average covariate contribution"""
        data = _sample(d=2, seed=7)
        spec = _spec(data, 10, 0, 0)
        fit = fit_binscatter(data, spec)
        shift = float(data.w.mean(axis=0) @ fit.gamma)
        self.assertAlmostEqual(fit.dots_shift, shift)
        centers = bin_centers(spec.partition)
        np.testing.assert_allclose(fit.dot_values, evaluate_many(fit, centers) + shift, atol=1e-12)
        self.assertTrue(fit.metadata()['dots_include_covariate_mean'])

    def test_scalar_evaluation(self):
        """Test evaluate agrees with evaluate_many"""
        data = _sample(seed=8)
        spec = _spec(data, 6, 3, 2)
        fit = fit_binscatter(data, spec)
        for x0 in (data.x.min(), 0.37, data.x.max()):
            for v in range(4):
                self.assertAlmostEqual(evaluate(fit, x0, v), float(evaluate_many(fit, [x0], v)[0]),
                                       places=8)
        with self.assertRaises(UnsupportedConfigurationError):
            evaluate_many(fit, [0.5], v=4)

    def test_result_is_immutable(self):
        """Test coefficient arrays are read-only"""
        data = _sample(seed=9)
        fit = fit_binscatter(data, _spec(data, 4, 1, 1))
        with self.assertRaises(ValueError):
            fit.beta[0] = 0.0


class TestFitFailures(unittest.TestCase):
    """Test refused fits"""

    def test_sample_too_small(self):
        """Test n <= K + d"""
        data = _sample(n=10, seed=1)
        with self.assertRaises(SampleSizeError):
            fit_binscatter(data, _spec(data, 3, 3, 0))

    def test_singular_basis(self):
        """Test a bin without enough distinct x values"""
        x = np.concatenate(([0.0] * 30, [1.0] * 30, np.linspace(2, 3, 40)))
        data = Dataset.from_arrays(np.random.default_rng(0).standard_normal(100), x)
        spec = _spec(data, 2, 3, 0)
        with self.assertRaises(SingularFitError) as ctx:
            fit_binscatter(data, spec)
        self.assertEqual(ctx.exception.block, "basis")
        self.assertEqual(ctx.exception.index, 1)
        self.assertEqual(ctx.exception.exit_code, 4)

    def test_collinear_covariate(self):
        """Test a covariate absorbed by the bin intercepts"""
        rng = np.random.default_rng(0)
        x = rng.random(200)
        W = np.column_stack((rng.standard_normal(200), np.full(200, 2.0)))
        data = Dataset.from_arrays(rng.standard_normal(200), x, W, w_names=("age", "const"))
        with self.assertRaises(SingularFitError) as ctx:
            fit_binscatter(data, _spec(data, 5, 0, 0))
        self.assertEqual(ctx.exception.block, "covariates")
        self.assertEqual(ctx.exception.index, "const")


class TestResidualized(unittest.TestCase):
    """Test the residualized comparator"""

    def test_residualized_fit(self):
        """Test re-centered residual binscatter"""
        data = _sample(d=1, seed=12)
        spec = _spec(data, 10, 0, 0)
        fit = fit_residualized(data, spec)
        self.assertEqual(fit.method, "residualized")
        self.assertAlmostEqual(fit.recentering['x_mean'], float(data.x.mean()))
        self.assertEqual(fit.partition.J, 10)
        # residualized y averages to the sample mean of y
        self.assertAlmostEqual(float(np.mean(fit.fitted)), float(data.y.mean()), places=10)

    def test_requires_covariates_and_canonical_orders(self):
        """Test refused configurations"""
        data = _sample(seed=13)
        with self.assertRaises(ConfigurationError):
            fit_residualized(data, _spec(data, 5, 0, 0))
        data = _sample(d=1, seed=13)
        with self.assertRaises(UnsupportedConfigurationError):
            fit_residualized(data, _spec(data, 5, 1, 0))


if __name__ == '__main__':
    unittest.main()
