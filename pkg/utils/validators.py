"""
Validators Module
Input validation functions
"""

import re
from pathlib import Path

MODEL_PATTERN = r'^(constant|linear|quadratic|cubic|poly(nomial)?[:\-]?\d+|logistic|exponential|user)$'
VCE_MODES = ("hc0", "hc1", "hc2", "hc3", "cluster")
CALIBRATIONS = ("satterthwaite", "gaussian")
EXPERIMENTS = (
    "ci_coverage", "band_coverage", "spec_size", "spec_power", "shape_size",
    "shape_power", "selector_rate", "covadj_contrast", "imse_constants",
)


class Validators:
    """
    Validation utility class
    """

    @staticmethod
    def _as_int(value):
        if isinstance(value, bool):
            raise TypeError("boolean is not an integer")
        if isinstance(value, float) and not value.is_integer():
            raise ValueError("not an integer")
        return int(value)

    @staticmethod
    def validate_orders(p, s, v):
        """
        Validate polynomial, smoothness and derivative orders

        Args:
            p: Polynomial order
            s: Smoothness order
            v: Derivative order

        Returns:
            tuple: (is_valid, message)
        """
        try:
            p, s, v = (Validators._as_int(o) for o in (p, s, v))
        except (ValueError, TypeError):
            return False, "Orders p, s, v must be integers"

        errors = []
        if p < 0:
            errors.append(f"p must be >= 0 (got {p})")
        if s < 0 or s > p:
            errors.append(f"s must satisfy 0 <= s <= p (got s={s}, p={p})")
        if v < 0:
            errors.append(f"v must be >= 0 (got {v})")
        if v > p:
            errors.append(f"v exceeds p (v={v}, p={p})")
        if errors:
            return False, "; ".join(errors)

        return True, f"Orders valid (p={p}, s={s}, v={v})"

    @staticmethod
    def validate_q(q):
        """Validate the bias-correction order"""
        try:
            q = Validators._as_int(q)
        except (ValueError, TypeError):
            return False, "Invalid q value"

        if q < 1:
            return False, f"q must be >= 1 (got {q})"

        return True, f"q valid ({q})"

    @staticmethod
    def validate_alpha(alpha):
        """
        Validate significance level

        Args:
            alpha: Level in (0, 1)

        Returns:
            tuple: (is_valid, message)
        """
        try:
            alpha = float(alpha)
        except (ValueError, TypeError):
            return False, "Invalid alpha value"

        if not 0.0 < alpha < 1.0:
            return False, f"alpha must be between 0 and 1 (got {alpha})"

        return True, f"alpha valid ({alpha})"

    @staticmethod
    def validate_draws(draws):
        """Validate the number of Gaussian simulation draws"""
        try:
            draws = Validators._as_int(draws)
        except (ValueError, TypeError):
            return False, "Invalid draws value"

        if draws < 10:
            return False, f"draws too small ({draws}). Minimum: 10"

        return True, f"draws valid ({draws})"

    @staticmethod
    def validate_bins(J):
        """Validate a user-supplied number of bins"""
        try:
            J = Validators._as_int(J)
        except (ValueError, TypeError):
            return False, "Invalid J value"

        if J < 2:
            return False, f"J must be >= 2 (got {J})"

        return True, f"J valid ({J})"

    @staticmethod
    def validate_vce(mode, has_cluster):
        """
        Validate variance estimator choice

        Args:
            mode: One of hc0, hc1, hc2, hc3, cluster
            has_cluster: Whether a cluster column was given

        Returns:
            tuple: (is_valid, message)
        """
        if mode not in VCE_MODES:
            return False, f"vce must be one of {', '.join(VCE_MODES)} (got {mode!r})"

        if mode == "cluster" and not has_cluster:
            return False, "vce=cluster requires --cluster"

        return True, f"vce valid ({mode})"

    @staticmethod
    def validate_calibration(calibration):
        """Validate the critical-value calibration of bands and tests"""
        if calibration not in CALIBRATIONS:
            return False, f"calibration must be one of {', '.join(CALIBRATIONS)} (got {calibration!r})"

        return True, f"calibration valid ({calibration})"

    @staticmethod
    def validate_threads(threads):
        """Validate a worker thread count"""
        try:
            threads = Validators._as_int(threads)
        except (ValueError, TypeError):
            return False, "Invalid threads value"

        if threads < 1:
            return False, f"threads must be >= 1 (got {threads})"

        return True, f"threads valid ({threads})"

    @staticmethod
    def validate_method(method):
        if method not in ("rot", "dpi"):
            return False, f"method must be rot or dpi (got {method!r})"
        return True, f"method valid ({method})"

    @staticmethod
    def validate_direction(direction):
        if direction not in ("le", "ge"):
            return False, f"direction must be le or ge (got {direction!r})"
        return True, f"direction valid ({direction})"

    @staticmethod
    def validate_subcommand(name, known):
        if name not in known:
            return False, f"Unknown subcommand {name!r}"
        return True, f"Subcommand valid ({name})"

    @staticmethod
    def validate_model_name(name, coefficients=()):
        """
        Validate parametric model name

        Args:
            name: Model name (e.g., 'linear', 'poly3', 'logistic')
            coefficients: User coefficients, required for 'user'

        Returns:
            tuple: (is_valid, message)
        """
        if not name:
            return False, "Model name is empty"

        if not re.match(MODEL_PATTERN, name):
            return False, f"Model '{name}' not supported"

        if name == "user" and not coefficients:
            return False, "Model 'user' requires --coefficients"

        return True, f"Model '{name}' is supported"

    @staticmethod
    def validate_experiment(kind):
        if kind not in EXPERIMENTS:
            return False, f"experiment must be one of: {', '.join(EXPERIMENTS)}"
        return True, f"experiment valid ({kind})"

    @staticmethod
    def validate_data_path(file_path):
        """
        Validate CSV file existence and format

        Args:
            file_path: Path to CSV file

        Returns:
            tuple: (is_valid, message)
        """
        path = Path(file_path)

        if not path.exists():
            return False, "File does not exist"

        if not path.is_file():
            return False, "Path is not a file"

        if path.suffix.lower() not in ('.csv', '.txt'):
            return False, "Invalid file format. Supported: .csv, .txt"

        return True, "Data file valid"

    @staticmethod
    def split_list(value):
        """
        Split a comma-separated list of names

        Args:
            value: String like "a,b,c" or an existing list

        Returns:
            tuple: Stripped, non-empty entries
        """
        if isinstance(value, str):
            value = value.split(",")
        return tuple(str(v).strip() for v in value if str(v).strip())

    @staticmethod
    def validate_column_list(text):
        """
        Validate a comma-separated list of column names

        Returns:
            tuple: (is_valid, message)
        """
        names = Validators.split_list(text or "")
        if len(set(names)) != len(names):
            return False, f"Duplicate column names in {text!r}"
        return True, f"{len(names)} column(s)"

