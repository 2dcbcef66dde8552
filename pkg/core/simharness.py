"""
Simulation Harness Module
Simulated data-generating process and Monte Carlo experiments
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, stats

from core import inference
from core.basis import BasisSpec
from core.binselect import dpi_select, rot_select, select_bins
from core.dataset import Dataset, sort_index
from core.errors import ConfigurationError, SampleSizeError
from core.fit import binscatter_dots, fit_binscatter, fit_residualized
from core.models import parse_model
from core.partition import build_partition
from utils.config import Config
from utils.validators import EXPERIMENTS

logger = logging.getLogger(__name__)

QUARTIC = (3.6, -44.4, 112.4, -98.8, 24.0)
LINEAR = (2.0, 3.0)
DECREASING = (0.0, -2.0)

# substream purposes
PURPOSE_DATA = 0
PURPOSE_DATA_LARGE = 1
PURPOSE_DRAWS = 2


@dataclass(frozen=True)
class DgpSpec:
    """
    y = mu(x) + w + eps with mu a polynomial (coefficients in increasing powers)

    x_dist is 'beta24' (Beta(2, 4)) or 'uniform' (U(0, 1)). w is U(-1, 1)
    ('independent_uniform'), 3(x - 0.5) + U(-0.5, 0.5) ('correlated') or
    absent ('none'). With ``hetero`` = c the noise sd is 0.1 + c x, a
    placeholder heteroskedasticity function. With ``n_clusters`` set, a
    N(0, cluster_sd^2) random effect is shared within each cluster.
    """

    mu_coeffs: tuple = QUARTIC
    x_dist: str = "beta24"
    noise_sd: float = 0.5
    w_mode: str = "independent_uniform"
    hetero: Optional[float] = None
    n_clusters: Optional[int] = None
    cluster_sd: float = 0.5
    n: int = 1000
    seed: int = Config.DEFAULT_SEED

    def mu(self, x, v=0):
        return Polynomial(self.mu_coeffs).deriv(v)(np.asarray(x, dtype=float))

    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.x_dist == "uniform":
            return np.where((x >= 0) & (x <= 1), 1.0, 0.0)
        return stats.beta.pdf(x, 2, 4)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self.x_dist == "uniform":
            return u
        return stats.beta.ppf(u, 2, 4)

    def noise_variance(self, x):
        if self.hetero is None:
            return np.full_like(np.asarray(x, dtype=float), self.noise_sd ** 2)
        return (0.1 + self.hetero * np.asarray(x, dtype=float)) ** 2


def substream(seed, rep, purpose):
    """Generator for the (seed, rep, purpose) substream"""
    return np.random.default_rng(np.random.SeedSequence([seed, rep, purpose]))


def derived_seed(seed, rep, purpose):
    return int(np.random.SeedSequence([seed, rep, purpose]).generate_state(1)[0])


def generate(dgp, rep=0, purpose=PURPOSE_DATA):
    """
    Draw one sample from the DGP

    x is drawn by inverse CDF from uniforms, then w, then the noise, all
    from the (seed, rep, purpose) substream.

    Args:
        dgp: DgpSpec
        rep: Replication index
        purpose: Substream purpose code

    Returns:
        Dataset: simulated sample
    """
    if dgp.n < 10:
        raise SampleSizeError(f"Simulated sample needs n >= 10 (got {dgp.n})")
    if dgp.x_dist not in ("beta24", "uniform"):
        raise ConfigurationError(f"Unknown x distribution: {dgp.x_dist}")
    if dgp.w_mode not in ("independent_uniform", "correlated", "none"):
        raise ConfigurationError(f"Unknown w mode: {dgp.w_mode}")

    rng = substream(dgp.seed, rep, purpose)
    n = dgp.n
    u = rng.random(n)
    x = dgp.quantile(u)

    uw = rng.random(n)
    if dgp.w_mode == "independent_uniform":
        w = 2.0 * uw - 1.0
    elif dgp.w_mode == "correlated":
        w = 3.0 * (x - 0.5) + (uw - 0.5)
    else:
        w = None

    eps = rng.standard_normal(n) * np.sqrt(dgp.noise_variance(x))
    cluster = None
    if dgp.n_clusters:
        cluster = np.arange(n) % dgp.n_clusters
        eps = eps + dgp.cluster_sd * rng.standard_normal(dgp.n_clusters)[cluster]

    y = dgp.mu(x) + (w if w is not None else 0.0) + eps
    return Dataset.from_arrays(y, x, w, cluster=cluster,
                               w_names=("w",) if w is not None else ())


@dataclass(frozen=True)
class ExperimentSettings:
    """Orders, inference settings and DGP overrides for one experiment"""

    n: int = 1000
    p: int = 0
    s: int = 0
    v: int = 0
    q: int = 1
    alpha: float = Config.DEFAULT_ALPHA
    draws: int = Config.DEFAULT_DRAWS
    seed: int = Config.DEFAULT_SEED
    J: Optional[int] = None
    method: str = "rot"
    vce: str = Config.DEFAULT_VCE
    calibration: str = Config.DEFAULT_CALIBRATION
    # band coverage is also reported over the x quantile range [trim, 1 - trim]
    trim: float = 0.10
    grid_size: Optional[int] = None
    model: str = "linear"
    direction: str = "le"
    mu_coeffs: tuple = QUARTIC
    x_dist: str = "beta24"
    w_mode: str = "independent_uniform"
    hetero: Optional[float] = None
    n_large: int = 8000
    points: tuple = (0.2, 1.0 / 3.0, 0.5)
    threads: int = Config.THREADS

    @classmethod
    def for_kind(cls, kind, **overrides):
        """
        Defaults for an experiment kind, then explicit overrides

        Args:
            kind: Experiment name
            **overrides: Field values (unknown names are ignored)

        Returns:
            ExperimentSettings
        """
        base = dict(EXPERIMENT_DEFAULTS.get(kind, {}))
        known = {f.name for f in fields(cls)}
        base.update({k: v for k, v in overrides.items() if k in known and v is not None})
        return cls(**base)

    def dgp(self, n=None):
        return DgpSpec(
            mu_coeffs=tuple(self.mu_coeffs), x_dist=self.x_dist, w_mode=self.w_mode,
            hetero=self.hetero, n=n or self.n, seed=self.seed,
        )

    def as_dict(self):
        out = asdict(self)
        out.pop("threads")
        out["mu_coeffs"] = list(self.mu_coeffs)
        out["points"] = list(self.points)
        return out


EXPERIMENT_DEFAULTS = {
    'ci_coverage': {},
    'band_coverage': {},
    'spec_size': {'mu_coeffs': LINEAR, 'model': "linear"},
    'spec_power': {'model': "linear"},
    'shape_size': {'mu_coeffs': DECREASING, 'p': 2, 's': 2, 'v': 1, 'direction': "le"},
    'shape_power': {'p': 2, 's': 2, 'v': 1, 'direction': "le"},
    'selector_rate': {},
    'covadj_contrast': {'w_mode': "correlated"},
    'imse_constants': {'x_dist': "uniform"},
}


def _bins(data, st):
    if st.J is not None:
        return st.J
    J, _ = select_bins(data, st.p, st.s, st.v, st.method)
    return J


def _rep_ci_coverage(st, rep):
    dgp = st.dgp()
    data = generate(dgp, rep)
    J = _bins(data, st)
    points = np.clip(np.asarray(st.points), data.x.min(), data.x.max())
    grid = inference.pointwise_ci(data, st.p, st.s, st.v, st.q, st.alpha, J, points=points, vce=st.vce)
    truth = dgp.mu(points, st.v)
    covered = (grid.lower <= truth) & (truth <= grid.upper)
    return {'J': J, 'covered': [bool(c) for c in covered]}


def _rep_band_coverage(st, rep):
    dgp = st.dgp()
    data = generate(dgp, rep)
    J = _bins(data, st)
    band = inference.confidence_band(
        data, st.p, st.s, st.v, st.q, st.alpha, J, st.draws,
        derived_seed(st.seed, rep, PURPOSE_DRAWS), vce=st.vce, grid_size=st.grid_size, threads=1,
        calibration=st.calibration,
    )
    points = band.grid.points
    truth = dgp.mu(points, st.v)
    inside = (band.lower <= truth) & (truth <= band.upper)
    lo, hi = dgp.quantile([st.trim, 1.0 - st.trim])
    interior = (points >= lo) & (points <= hi)
    return {'J': J, 'covered': bool(np.all(inside)),
            'covered_interior': bool(np.all(inside[interior])), 'cv': band.cv}


def _rep_spec(st, rep):
    data = generate(st.dgp(), rep)
    J = _bins(data, st)
    result = inference.test_specification(
        data, st.p, st.s, st.v, st.q, st.alpha, J, parse_model(st.model), st.draws,
        derived_seed(st.seed, rep, PURPOSE_DRAWS), vce=st.vce, grid_size=st.grid_size, threads=1,
        calibration=st.calibration,
    )
    return {'J': J, 'reject': bool(result.reject), 'statistic': result.statistic,
            'p_value': result.p_value}


def _rep_shape(st, rep):
    data = generate(st.dgp(), rep)
    J = _bins(data, st)
    result = inference.test_shape(
        data, st.p, st.s, st.v, st.q, st.alpha, J, st.direction, st.draws,
        derived_seed(st.seed, rep, PURPOSE_DRAWS), vce=st.vce, grid_size=st.grid_size, threads=1,
        calibration=st.calibration,
    )
    return {'J': J, 'reject': bool(result.reject), 'statistic': result.statistic,
            'p_value': result.p_value}


def _rep_selector_rate(st, rep):
    small = generate(st.dgp(), rep, PURPOSE_DATA)
    large = generate(st.dgp(st.n_large), rep, PURPOSE_DATA_LARGE)
    J_small, _ = rot_select(small, st.p, st.s, st.v)
    J_large, _ = rot_select(large, st.p, st.s, st.v)
    return {'J_small': J_small, 'J_large': J_large, 'ratio': J_large / J_small}


def _dots_error(dots, target):
    return float(np.mean([abs(value - target(center)) for center, value in dots]))


def _rep_covadj_contrast(st, rep):
    dgp = st.dgp()
    data = generate(dgp, rep)
    J = _bins(data, replace(st, p=0, s=0, v=0))
    w_bar = float(data.w.mean())

    def target(x0):
        return float(dgp.mu(x0)) + w_bar

    part = build_partition(data, sort_index(data), J)
    semi = fit_binscatter(data, BasisSpec(p=0, s=0, v=0, partition=part))
    resid = fit_residualized(data, BasisSpec(p=0, s=0, v=0, partition=part))
    return {
        'J': J,
        'semi_linear_error': _dots_error(binscatter_dots(semi), target),
        'residualized_error': _dots_error(binscatter_dots(resid), target),
    }


def _rep_imse_constants(st, rep):
    data = generate(st.dgp(), rep)
    _, rot = rot_select(data, st.p, st.s, st.v)
    _, dpi = dpi_select(data, st.p, st.s, st.v, st.J)
    return {
        'rot_variance': rot.variance_const, 'rot_bias': rot.bias_const,
        'dpi_variance': dpi.variance_const, 'dpi_bias': dpi.bias_const,
    }


REPLICATIONS = {
    'ci_coverage': _rep_ci_coverage,
    'band_coverage': _rep_band_coverage,
    'spec_size': _rep_spec,
    'spec_power': _rep_spec,
    'shape_size': _rep_shape,
    'shape_power': _rep_shape,
    'selector_rate': _rep_selector_rate,
    'covadj_contrast': _rep_covadj_contrast,
    'imse_constants': _rep_imse_constants,
}


def _rate(flags):
    flags = np.asarray(flags, dtype=float)
    m = float(flags.mean())
    return m, float(np.sqrt(m * (1 - m) / flags.size))


def _mean(values):
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), se


def canonical_bias_oracle(dgp):
    """
    (1/12) * integral of mu'(x)^2 / f(x) over the support, by adaptive quadrature

    Finite only when f is bounded away from zero (x_dist='uniform').
    """
    if dgp.x_dist != "uniform":
        return None
    value, _ = integrate.quad(lambda t: float(dgp.mu(t, 1)) ** 2 / float(dgp.density(t)), 0.0, 1.0)
    return value / 12.0


def _summarize(kind, st, results):
    rates, errors = {}, {}
    if kind == 'ci_coverage':
        covered = np.array([r['covered'] for r in results])
        for k, x0 in enumerate(st.points):
            rates[f"coverage@{x0:.4f}"], errors[f"coverage@{x0:.4f}"] = _rate(covered[:, k])
    elif kind == 'band_coverage':
        rates['coverage'], errors['coverage'] = _rate([r['covered'] for r in results])
        rates['coverage_interior'], errors['coverage_interior'] = _rate(
            [r['covered_interior'] for r in results])
    elif kind in ('spec_size', 'spec_power', 'shape_size', 'shape_power'):
        rates['rejection_rate'], errors['rejection_rate'] = _rate([r['reject'] for r in results])
    elif kind == 'selector_rate':
        rates['mean_ratio'], errors['mean_ratio'] = _mean([r['ratio'] for r in results])
    elif kind == 'covadj_contrast':
        for key in ('semi_linear_error', 'residualized_error'):
            rates[key], errors[key] = _mean([r[key] for r in results])
        rates['error_ratio'] = rates['residualized_error'] / rates['semi_linear_error']
    elif kind == 'imse_constants':
        for key in ('rot_variance', 'rot_bias', 'dpi_variance', 'dpi_bias'):
            rates[key], errors[key] = _mean([r[key] for r in results])
        dgp = st.dgp()
        rates['oracle_variance'] = float(np.mean(dgp.noise_variance(np.linspace(0, 1, 101))))
        if st.p == 0 and st.v == 0:
            rates['oracle_bias'] = canonical_bias_oracle(dgp)
    return rates, errors


def run_experiment(kind, reps, settings=None, threads=None):
    """
    Run a Monte Carlo experiment

    Replications run in parallel; replication r uses the substreams
    (seed, r, purpose), and results are aggregated in replication order.

    Args:
        kind: One of EXPERIMENTS
        reps: Number of replications
        settings: ExperimentSettings (default: the kind's defaults)
        threads: Worker threads (default settings.threads, capped at Config.THREADS)

    Returns:
        dict: settings, aggregate rates, Monte Carlo standard errors and per-rep results
    """
    if kind not in EXPERIMENTS:
        raise ConfigurationError(f"Unknown experiment: {kind}")
    if reps < 1:
        raise ConfigurationError(f"reps must be positive (got {reps})")
    st = settings or ExperimentSettings.for_kind(kind)
    replicate = REPLICATIONS[kind]
    workers = Config.workers(threads or st.threads)

    logger.info("Running %s: %d reps, n=%d, %d threads", kind, reps, st.n, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda r: replicate(st, r), range(reps)))

    rates, errors = _summarize(kind, st, results)
    logger.info("%s finished: %s", kind, rates)
    return {
        'experiment': kind,
        'reps': reps,
        'settings': st.as_dict(),
        'rates': rates,
        'mc_se': errors,
        'per_rep': results,
    }
