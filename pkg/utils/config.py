"""
Configuration Module
Application settings, environment defaults and per-run configuration
"""

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from core.errors import ConfigurationError
from utils.validators import Validators

# Load environment variables
load_dotenv()


def _env_bool(name, default):
    return os.getenv(name, default).lower() == "true"


class Config:
    """
    Application configuration class
    """

    # Application Info
    APP_NAME = os.getenv("APP_NAME", "binsmooth")
    VERSION = "1.0.0"
    SCHEMA_VERSION = "1.0"
    DEBUG_MODE = _env_bool("DEBUG_MODE", "False")
    LOG_LEVEL = os.getenv("BINSMOOTH_LOG_LEVEL", "INFO").upper()

    # Parallelism
    THREADS = int(os.getenv("BINSMOOTH_THREADS", min(os.cpu_count() or 1, 8)))

    # Inference defaults
    DEFAULT_ALPHA = float(os.getenv("BINSMOOTH_ALPHA", 0.05))
    DEFAULT_DRAWS = int(os.getenv("BINSMOOTH_DRAWS", 1000))
    DEFAULT_SEED = int(os.getenv("BINSMOOTH_SEED", 42))
    DEFAULT_VCE = os.getenv("BINSMOOTH_VCE", "hc2")
    DEFAULT_CALIBRATION = os.getenv("BINSMOOTH_CALIBRATION", "satterthwaite")

    # Numerical tolerances
    SINGULAR_RCOND = 1e-12
    SIGMA_CLIP = 1e-12
    VARIANCE_FLOOR = 1e-10

    @classmethod
    def workers(cls, threads=None):
        """Worker threads for a request, capped at BINSMOOTH_THREADS"""
        return max(1, min(threads or cls.THREADS, cls.THREADS))

    @classmethod
    def validate_config(cls):
        """
        Validate configuration settings

        Returns:
            tuple: (is_valid, errors_list)
        """
        errors = []

        if cls.THREADS < 1:
            errors.append(f"Invalid BINSMOOTH_THREADS: {cls.THREADS}")

        valid, msg = Validators.validate_alpha(cls.DEFAULT_ALPHA)
        if not valid:
            errors.append(f"BINSMOOTH_ALPHA: {msg}")

        valid, msg = Validators.validate_draws(cls.DEFAULT_DRAWS)
        if not valid:
            errors.append(f"BINSMOOTH_DRAWS: {msg}")

        valid, msg = Validators.validate_vce(cls.DEFAULT_VCE, has_cluster=False)
        if not valid:
            errors.append(f"BINSMOOTH_VCE: {msg}")

        valid, msg = Validators.validate_calibration(cls.DEFAULT_CALIBRATION)
        if not valid:
            errors.append(f"BINSMOOTH_CALIBRATION: {msg}")

        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append(f"Invalid BINSMOOTH_LOG_LEVEL: {cls.LOG_LEVEL}")

        is_valid = len(errors) == 0
        return is_valid, errors

    @classmethod
    def get_config_summary(cls):
        """
        Get configuration summary as dictionary

        Returns:
            dict: Configuration summary
        """
        return {
            'app_name': cls.APP_NAME,
            'version': cls.VERSION,
            'schema_version': cls.SCHEMA_VERSION,
            'debug_mode': cls.DEBUG_MODE,
            'threads': cls.THREADS,
            'alpha': cls.DEFAULT_ALPHA,
            'draws': cls.DEFAULT_DRAWS,
            'seed': cls.DEFAULT_SEED,
            'vce': cls.DEFAULT_VCE,
            'calibration': cls.DEFAULT_CALIBRATION,
        }


SUBCOMMANDS = (
    "fit", "band", "test-spec", "test-shape", "select-bins", "simulate", "compare-covadj",
)


@dataclass(frozen=True)
class RunConfig:
    """
    One invocation of the command-line tool.

    Orders default to the practical recommendation: canonical dots
    (p = s = v = 0) plus a cubic spline line and band (p = s = 3).
    """

    subcommand: str = "fit"
    data: Optional[str] = None
    y: Optional[str] = None
    x: Optional[str] = None
    w: tuple = ()
    cluster: Optional[str] = None
    p: int = 3
    s: int = 3
    v: int = 0
    q: int = 1
    dots_p: int = 0
    dots_s: int = 0
    J: Optional[int] = None
    J_pre: Optional[int] = None
    method: str = "rot"
    alpha: float = Config.DEFAULT_ALPHA
    draws: int = Config.DEFAULT_DRAWS
    seed: int = Config.DEFAULT_SEED
    vce: str = Config.DEFAULT_VCE
    calibration: str = Config.DEFAULT_CALIBRATION
    model: Optional[str] = None
    coefficients: tuple = ()
    direction: str = "le"
    grid_size: Optional[int] = None
    experiment: Optional[str] = None
    reps: int = 200
    n: int = 1000
    threads: int = Config.THREADS
    out: Optional[str] = None
    csv: Optional[str] = None
    svg: Optional[str] = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_sources(cls, cli_values, toml_path=None):
        """
        Merge configuration sources

        Args:
            cli_values: dict of explicitly given CLI flags (None = not given)
            toml_path: optional TOML file with the same keys

        Returns:
            RunConfig: merged configuration
        """
        merged = {}
        if toml_path:
            merged.update(cls._read_toml(toml_path))
        merged.update({k: v for k, v in cli_values.items() if v is not None})

        known = {f.name for f in fields(cls)} - {"extra"}
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys: {', '.join(unknown)}")

        # an explicit p without s means a spline with simple knots
        if "p" in merged and "s" not in merged:
            merged["s"] = merged["p"]

        for key in ("w", "coefficients"):
            if key in merged and isinstance(merged[key], (list, str)):
                merged[key] = Validators.split_list(merged[key])
        if "coefficients" in merged:
            try:
                merged["coefficients"] = tuple(float(c) for c in merged["coefficients"])
            except ValueError as e:
                raise ConfigurationError(f"Invalid model coefficients: {e}") from e

        # keys set by the user, as opposed to defaults
        return cls(**merged, extra={'explicit': tuple(sorted(merged))})

    @property
    def explicit(self):
        return self.extra.get('explicit', ())

    @staticmethod
    def _read_toml(path):
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"Invalid TOML in {path}: {e}") from e
        return {k.replace("-", "_"): v for k, v in raw.items()}

    def validate(self):
        """
        Check every field; raise ConfigurationError listing all problems.

        Returns:
            RunConfig: self, for chaining
        """
        checks = [
            Validators.validate_subcommand(self.subcommand, SUBCOMMANDS),
            Validators.validate_orders(self.p, self.s, self.v),
            Validators.validate_orders(self.dots_p, self.dots_s, 0),
            Validators.validate_q(self.q),
            Validators.validate_alpha(self.alpha),
            Validators.validate_draws(self.draws),
            Validators.validate_vce(self.vce, self.cluster is not None),
            Validators.validate_calibration(self.calibration),
            Validators.validate_threads(self.threads),
            Validators.validate_method(self.method),
            Validators.validate_direction(self.direction),
        ]
        if self.w:
            checks.append(Validators.validate_column_list(",".join(self.w)))
        if self.J is not None:
            checks.append(Validators.validate_bins(self.J))
        if self.J_pre is not None:
            checks.append(Validators.validate_bins(self.J_pre))
        if self.model is not None:
            checks.append(Validators.validate_model_name(self.model, self.coefficients))
        if self.subcommand == "test-spec" and self.model is None:
            checks.append((False, "test-spec requires --model"))
        if self.subcommand == "simulate":
            checks.append(Validators.validate_experiment(self.experiment))
        elif self.data is None or self.y is None or self.x is None:
            checks.append((False, f"{self.subcommand} requires --data, --y and --x"))
        else:
            valid, msg = Validators.validate_data_path(self.data)
            checks.append((valid, f"{self.data}: {msg}"))

        errors = [msg for ok, msg in checks if not ok]
        if errors:
            raise ConfigurationError("; ".join(errors))
        return self

    def as_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["w"] = list(self.w)
        out["coefficients"] = list(self.coefficients)
        out.pop("extra")
        out.pop("threads")
        return out
