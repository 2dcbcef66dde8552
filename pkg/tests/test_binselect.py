"""
Bin Selection Tests
"""

import os
import unittest
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.binselect import (
    ImseConstants, PolyTables, _clamp, dpi_select, imse_optimal_J, max_bins, psi_trace_constant,
    rot_select, select_bins,
)
from core.dataset import Dataset, sort_index
from core.errors import SelectionError
from core.simharness import DgpSpec, canonical_bias_oracle, generate, run_experiment

SLOW = os.getenv("BINSMOOTH_SLOW_TESTS") == "1"


class TestPolyTables(unittest.TestCase):
    """Test Legendre and Bernoulli constants"""

    def test_legendre_sq_integral(self):
        """Test exact rational values"""
        self.assertEqual(PolyTables.legendre_sq_integral(0), Fraction(1))
        self.assertEqual(PolyTables.legendre_sq_integral(1), Fraction(1, 12))
        self.assertEqual(PolyTables.legendre_sq_integral(2), Fraction(1, 180))

    def test_matches_bernoulli_integral(self):
        """Test the table against the integral of the squared Bernoulli polynomial"""
        for m in (1, 2):
            value, _ = integrate.quad(lambda z: PolyTables.bernoulli_poly(m, z) ** 2, 0, 1)
            self.assertAlmostEqual(value, float(PolyTables.legendre_sq_integral(m)), places=12)

    def test_bernoulli(self):
        """Test Bernoulli numbers and polynomials"""
        self.assertAlmostEqual(PolyTables.bernoulli_number(2), 1 / 6)
        z = np.linspace(0, 1, 7)
        np.testing.assert_allclose(PolyTables.bernoulli_poly(1, z), z - 0.5, atol=1e-15)
        np.testing.assert_allclose(PolyTables.bernoulli_poly(2, z), z ** 2 - z + 1 / 6, atol=1e-15)
        self.assertIsInstance(PolyTables.bernoulli_poly(3, 0.25), float)

    def test_bernoulli_identities(self):
        """Test E_m' = m E_(m-1), zero mean on [0, 1] and E_m(z+1) - E_m(z) = m z^(m-1)"""
        z = np.linspace(0, 1, 41)
        for m in range(1, 9):
            values = PolyTables.bernoulli_poly(m, z)
            poly = Polynomial.fit(z, values, m)
            np.testing.assert_allclose(poly.deriv()(z), m * PolyTables.bernoulli_poly(m - 1, z),
                                       atol=1e-9, err_msg=f"m={m}")
            mean, _ = integrate.quad(lambda t: PolyTables.bernoulli_poly(m, t), 0, 1)
            self.assertAlmostEqual(mean, 0.0, places=12)
            shifted = PolyTables.bernoulli_poly(m, z + 1) - values
            np.testing.assert_allclose(shifted, m * z ** (m - 1), rtol=1e-10, atol=1e-10)

    def test_psi_trace_constant(self):
        """Test traces for the monomial basis"""
        self.assertAlmostEqual(psi_trace_constant(0, 0), 1.0)
        self.assertAlmostEqual(psi_trace_constant(3, 0), 4.0, places=8)
        self.assertAlmostEqual(psi_trace_constant(1, 1), 12.0, places=8)


class TestOptimalJ(unittest.TestCase):
    """Test the closed-form J and its limits"""

    def test_formula(self):
        """Test J = ceil((2(p-v+1)B / ((1+2v)V))^(1/(2p+3)) n^(1/(2p+3)))"""
        consts = ImseConstants(variance_const=1.0, bias_const=1.0, p=0, s=0, v=0, method="rot")
        self.assertAlmostEqual(consts.ratio, 2.0)
        self.assertEqual(imse_optimal_J(consts, 1000), 13)

    def test_invalid_constants(self):
        """Test non-finite or non-positive variance constants"""
        with self.assertRaises(SelectionError):
            imse_optimal_J(ImseConstants(0.0, 1.0, 0, 0, 0, "rot"), 100)
        with self.assertRaises(SelectionError):
            imse_optimal_J(ImseConstants(1.0, float("nan"), 0, 0, 0, "rot"), 100)

    def test_max_bins(self):
        """Test J_max keeps K_s + d below n"""
        rng = np.random.default_rng(0)
        data = Dataset.from_arrays(rng.standard_normal(50), rng.random(50), rng.random((50, 2)))
        sort = sort_index(data)
        self.assertEqual(max_bins(data, sort, 0, 0), 47)
        # K = 3J - (J - 1) = 2J + 1 < n - d
        self.assertEqual(max_bins(data, sort, 2, 1), 23)


class TestRuleOfThumb(unittest.TestCase):
    """Test the rule-of-thumb selector"""

    def test_selects_within_range(self):
        """Test J on the simulated quartic design"""
        data = generate(DgpSpec(n=1000, seed=3))
        J, consts = rot_select(data, 0, 0, 0)
        self.assertGreaterEqual(J, 2)
        self.assertLessEqual(J, max_bins(data, sort_index(data), 0, 0))
        self.assertEqual(consts.method, "rot")
        self.assertGreater(consts.variance_const, 0)
        self.assertGreater(consts.bias_const, 0)
        self.assertFalse(consts.degenerate_bias)

    def test_invariant_to_response_shift(self):
        """Test adding a constant to y leaves both constants unchanged"""
        data = generate(DgpSpec(n=1000, seed=9))
        shifted = Dataset.from_arrays(data.y + 10.0, data.x, data.w)
        for p in (0, 1, 2):
            _, base = rot_select(data, p, p, 0)
            J, moved = rot_select(shifted, p, p, 0)
            self.assertAlmostEqual(moved.variance_const / base.variance_const, 1.0, places=7)
            self.assertAlmostEqual(moved.bias_const / base.bias_const, 1.0, places=7)
            self.assertEqual(J, rot_select(data, p, p, 0)[0])

    def test_constant_response(self):
        """Test a constant y is refused"""
        data = Dataset.from_arrays(np.ones(100), np.random.default_rng(0).random(100))
        with self.assertRaises(SelectionError):
            rot_select(data, 0, 0, 0)

    def test_clamped_to_range(self):
        """Test J is clamped to [2, J_max] with a warning"""
        consts = ImseConstants(1.0, 1.0, 0, 0, 0, "rot")
        with self.assertLogs('core.binselect', level='WARNING'):
            self.assertEqual(_clamp(500, 199, consts), 199)
        with self.assertLogs('core.binselect', level='WARNING'):
            self.assertEqual(_clamp(1, 199, consts), 2)
        self.assertEqual(_clamp(12, 199, consts), 12)
        with self.assertRaises(SelectionError):
            _clamp(12, 1, consts)

    def test_degenerate_bias_falls_back(self):
        """Test a vanishing bias constant selects two bins"""
        consts = ImseConstants(1.0, 0.0, 0, 0, 0, "rot", degenerate_bias=True)
        with self.assertLogs('core.binselect', level='WARNING'):
            self.assertEqual(_clamp(0, 50, consts), 2)

    def test_dispatch(self):
        """Test the selector dispatcher"""
        data = generate(DgpSpec(n=500, seed=4))
        self.assertEqual(select_bins(data, 0, 0, 0)[0], rot_select(data, 0, 0, 0)[0])
        with self.assertRaises(SelectionError):
            select_bins(data, 0, 0, 0, method="cv")

    def test_selector_rate(self):
        """Test J grows like n^(1/3) for p = 0"""
        reps = 50 if SLOW else 10
        outcome = run_experiment("selector_rate", reps, threads=2)
        low, high = (1.6, 2.4) if SLOW else (1.4, 2.6)
        self.assertGreaterEqual(outcome['rates']['mean_ratio'], low)
        self.assertLessEqual(outcome['rates']['mean_ratio'], high)


class TestDirectPlugIn(unittest.TestCase):
    """Test the direct plug-in selector"""

    def test_imse_constants_against_oracle(self):
        """Test V and B on uniform x against the known variance and bias integral"""
        dgp = DgpSpec(x_dist="uniform", n=10000, seed=5)
        data = generate(dgp)
        J, consts = dpi_select(data, 0, 0, 0, J_pre=40)
        self.assertEqual(consts.J_pre, 40)
        self.assertEqual(consts.s_pilot, 1)
        self.assertAlmostEqual(consts.variance_const, 0.25, delta=0.025)
        oracle = canonical_bias_oracle(dgp)
        self.assertAlmostEqual(consts.bias_const / oracle, 1.0, delta=0.3)
        self.assertGreaterEqual(J, 2)

    def test_spline_orders(self):
        """Test DPI runs for a cubic spline and a derivative"""
        data = generate(DgpSpec(n=2000, seed=6))
        J, consts = dpi_select(data, 3, 3, 1, J_pre=8)
        self.assertGreaterEqual(J, 2)
        self.assertEqual(consts.s_pilot, 4)
        self.assertGreater(consts.variance_const, 0)

    def test_noise_free_selects_max_bins(self):
        """Test a zero variance constant selects J_max with a warning"""
        x = np.random.default_rng(10).random(200)
        data = Dataset.from_arrays(1.0 + 2.0 * x, x)
        with self.assertLogs('core.binselect', level='WARNING'):
            J, consts = dpi_select(data, 1, 1, 0, J_pre=6)
        self.assertTrue(consts.degenerate_variance)
        self.assertFalse(consts.degenerate_bias)
        self.assertEqual(J, max_bins(data, sort_index(data), 1, 1))

    def test_preliminary_partition_too_fine(self):
        """Test a pilot fit that cannot be computed"""
        data = generate(DgpSpec(n=60, seed=7))
        with self.assertRaises(SelectionError):
            dpi_select(data, 2, 2, 0, J_pre=58)


if __name__ == '__main__':
    unittest.main()
