"""
Configuration Tests
"""

import unittest
import sys
import tempfile
from pathlib import Path
from unittest.mock import patch

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.errors import ConfigurationError
from utils.config import Config, RunConfig
from utils.validators import Validators


class TestRunConfig(unittest.TestCase):
    """Test configuration merging"""

    def setUp(self):
        """Set up test environment"""
        self.temp_dir = tempfile.TemporaryDirectory()
        self.base = Path(self.temp_dir.name)
        self.data = self.base / "data.csv"
        self.data.write_text("y,x\n1,2\n")

    def tearDown(self):
        """Clean up test environment"""
        self.temp_dir.cleanup()

    def _toml(self, text):
        path = self.base / "run.toml"
        path.write_text(text)
        return path

    def test_defaults(self):
        """Test the recommended orders"""
        config = RunConfig()
        self.assertEqual((config.p, config.s, config.v, config.q), (3, 3, 0, 1))
        self.assertEqual((config.dots_p, config.dots_s), (0, 0))
        self.assertEqual(config.alpha, Config.DEFAULT_ALPHA)

    def test_cli_overrides_toml(self):
        """Test command-line values take precedence over the file"""
        path = self._toml('p = 2\ns = 1\nalpha = 0.1\ngrid-size = 300\n')
        config = RunConfig.from_sources({'p': None, 'alpha': 0.01}, path)
        self.assertEqual((config.p, config.s), (2, 1))
        self.assertEqual(config.alpha, 0.01)
        self.assertEqual(config.grid_size, 300)
        self.assertEqual(config.explicit, ('alpha', 'grid_size', 'p', 's'))

    def test_unknown_keys(self):
        """Test unknown keys are refused"""
        with self.assertRaises(ConfigurationError):
            RunConfig.from_sources({}, self._toml('bins = 10\n'))
        with self.assertRaises(ConfigurationError):
            RunConfig.from_sources({'extra': {}})

    def test_invalid_toml(self):
        """Test a malformed or missing file"""
        with self.assertRaises(ConfigurationError):
            RunConfig.from_sources({}, self._toml('p = = 2\n'))
        with self.assertRaises(ConfigurationError):
            RunConfig.from_sources({}, self.base / "missing.toml")

    def test_smoothness_follows_p(self):
        """Test an explicit p without s sets s = p"""
        self.assertEqual(RunConfig.from_sources({'p': 1}).s, 1)
        self.assertEqual(RunConfig.from_sources({'p': 2, 's': 0}).s, 0)

    def test_lists(self):
        """Test covariate and coefficient lists"""
        config = RunConfig.from_sources({'w': "age, income", 'coefficients': "1,2.5"})
        self.assertEqual(config.w, ("age", "income"))
        self.assertEqual(config.coefficients, (1.0, 2.5))
        self.assertEqual(config.as_dict()['w'], ["age", "income"])
        with self.assertRaises(ConfigurationError):
            RunConfig.from_sources({'coefficients': "1,abc"})

    def test_validate_collects_errors(self):
        """Test every problem is reported"""
        config = RunConfig.from_sources({'p': 1, 'v': 2, 'alpha': 1.5, 'data': str(self.data),
                                         'y': "y", 'x': "x"})
        with self.assertRaises(ConfigurationError) as ctx:
            config.validate()
        self.assertIn("v exceeds p", str(ctx.exception))
        self.assertIn("alpha", str(ctx.exception))
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_validate_requirements(self):
        """Test subcommand-specific requirements"""
        with self.assertRaises(ConfigurationError):
            RunConfig(subcommand="fit").validate()
        with self.assertRaises(ConfigurationError):
            RunConfig(subcommand="test-spec", data=str(self.data), y="y", x="x").validate()
        with self.assertRaises(ConfigurationError):
            RunConfig(subcommand="simulate", experiment="unknown").validate()
        with self.assertRaises(ConfigurationError):
            RunConfig(data=str(self.base / "none.csv"), y="y", x="x").validate()
        with self.assertRaises(ConfigurationError):
            RunConfig(data=str(self.data), y="y", x="x", w=("a", "a")).validate()
        valid = RunConfig(data=str(self.data), y="y", x="x", J=5).validate()
        self.assertEqual(valid.J, 5)
        self.assertIs(RunConfig(subcommand="simulate", experiment="spec_size").validate().J, None)

    def test_validate_threads(self):
        """Test a thread count below one is refused"""
        for threads in (0, -1):
            config = RunConfig(data=str(self.data), y="y", x="x", threads=threads)
            with self.assertRaises(ConfigurationError) as ctx:
                config.validate()
            self.assertIn("threads", str(ctx.exception))
        with self.assertRaises(ConfigurationError):
            RunConfig(data=str(self.data), y="y", x="x", calibration="exact").validate()

    def test_inference_defaults(self):
        """Test the default variance estimator and calibration"""
        config = RunConfig()
        self.assertEqual(config.vce, Config.DEFAULT_VCE)
        self.assertEqual(config.calibration, Config.DEFAULT_CALIBRATION)
        self.assertEqual(config.as_dict()['calibration'], config.calibration)


class TestValidators(unittest.TestCase):
    """Test field validators"""

    def test_orders(self):
        """Test order combinations"""
        self.assertTrue(Validators.validate_orders(3, 3, 0)[0])
        self.assertTrue(Validators.validate_orders(2, 0, 2)[0])
        valid, msg = Validators.validate_orders(1, 3, 2)
        self.assertFalse(valid)
        self.assertIn("s must satisfy", msg)
        self.assertIn("v exceeds p", msg)
        self.assertFalse(Validators.validate_orders(1.5, 0, 0)[0])
        self.assertFalse(Validators.validate_orders(True, 0, 0)[0])

    def test_levels_and_counts(self):
        """Test alpha, draws, bins and q"""
        self.assertTrue(Validators.validate_alpha(0.05)[0])
        self.assertFalse(Validators.validate_alpha(0)[0])
        self.assertFalse(Validators.validate_alpha("high")[0])
        self.assertFalse(Validators.validate_draws(5)[0])
        self.assertTrue(Validators.validate_bins(2)[0])
        self.assertFalse(Validators.validate_bins(1)[0])
        self.assertFalse(Validators.validate_q(0)[0])

    def test_vce(self):
        """Test variance estimator names"""
        self.assertTrue(Validators.validate_vce("hc1", False)[0])
        self.assertFalse(Validators.validate_vce("cluster", False)[0])
        self.assertTrue(Validators.validate_vce("cluster", True)[0])
        self.assertTrue(Validators.validate_vce("hc2", False)[0])
        self.assertTrue(Validators.validate_vce("hc3", False)[0])
        self.assertFalse(Validators.validate_vce("hc4", False)[0])

    def test_calibration_and_threads(self):
        """Test calibration names and thread counts"""
        self.assertTrue(Validators.validate_calibration("satterthwaite")[0])
        self.assertTrue(Validators.validate_calibration("gaussian")[0])
        self.assertFalse(Validators.validate_calibration("student")[0])
        self.assertTrue(Validators.validate_threads(1)[0])
        self.assertFalse(Validators.validate_threads(0)[0])
        self.assertFalse(Validators.validate_threads(-2)[0])
        self.assertFalse(Validators.validate_threads(1.5)[0])

    def test_model_names(self):
        """Test parametric model names"""
        for name in ("linear", "poly5", "polynomial-3", "logistic", "exponential"):
            self.assertTrue(Validators.validate_model_name(name)[0], name)
        self.assertFalse(Validators.validate_model_name("spline")[0])
        self.assertFalse(Validators.validate_model_name("user")[0])
        self.assertTrue(Validators.validate_model_name("user", (1.0,))[0])

    def test_data_path(self):
        """Test data file checks"""
        with tempfile.TemporaryDirectory() as temp_dir:
            good = Path(temp_dir) / "data.csv"
            good.write_text("y,x\n")
            bad = Path(temp_dir) / "data.json"
            bad.write_text("{}")
            self.assertTrue(Validators.validate_data_path(good)[0])
            self.assertFalse(Validators.validate_data_path(bad)[0])
            self.assertFalse(Validators.validate_data_path(temp_dir)[0])

    def test_split_list(self):
        """Test comma-separated lists"""
        self.assertEqual(Validators.split_list(" a, b,,c "), ("a", "b", "c"))
        self.assertFalse(Validators.validate_column_list("a,b,a")[0])


class TestConfig(unittest.TestCase):
    """Test environment configuration"""

    def test_validate_config(self):
        """Test the default environment is valid"""
        is_valid, errors = Config.validate_config()
        self.assertTrue(is_valid, errors)

    def test_summary(self):
        """Test the summary keys"""
        summary = Config.get_config_summary()
        self.assertEqual(summary['app_name'], Config.APP_NAME)
        self.assertEqual(summary['schema_version'], "1.0")

    def test_workers_capped(self):
        """Test requested threads never exceed BINSMOOTH_THREADS"""
        with patch.object(Config, "THREADS", 3):
            self.assertEqual(Config.workers(), 3)
            self.assertEqual(Config.workers(8), 3)
            self.assertEqual(Config.workers(2), 2)
            self.assertEqual(Config.workers(0), 3)
        with patch.object(Config, "THREADS", 1):
            self.assertEqual(Config.workers(4), 1)


if __name__ == '__main__':
    unittest.main()
