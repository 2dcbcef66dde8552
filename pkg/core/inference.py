"""
Inference Module
Robust bias-corrected confidence intervals, uniform bands and sup-type tests
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np
from scipy import stats

from core.basis import BasisSpec, design_matrix
from core.dataset import sort_index
from core.errors import ConfigurationError, UnsupportedConfigurationError
from core.fit import evaluate_many, fit_binscatter
from core.partition import build_partition
from core.variance import effective_dof, variance_model
from utils.config import Config

logger = logging.getLogger(__name__)

BLOCK_SIZE = 250
SUP_MODES = ("abs", "pos", "neg")
CALIBRATIONS = ("satterthwaite", "gaussian")


@dataclass(frozen=True, eq=False)
class EvalGrid:
    """
    Evaluation points with estimates and standard errors

    ``design`` caches the basis rows at the points; ``lower``/``upper``
    hold pointwise interval limits when computed.
    ``dof`` holds Satterthwaite degrees of freedom of se when computed.
    """

    points: np.ndarray
    mu: np.ndarray
    omega: np.ndarray
    se: np.ndarray
    n: int
    v: int
    design: object = field(repr=False, default=None)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    z: Optional[float] = None
    dof: Optional[np.ndarray] = None

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def informative(self):
        """Points with strictly positive variance"""
        return self.omega > 0

    def as_dict(self):
        out = {
            'grid': self.points.tolist(),
            'mu': self.mu.tolist(),
            'omega': self.omega.tolist(),
            'se': self.se.tolist(),
            'n': self.n,
            'v': self.v,
        }
        if self.lower is not None:
            out['ci_lower'] = self.lower.tolist()
            out['ci_upper'] = self.upper.tolist()
            out['z'] = self.z
        if self.dof is not None:
            out['dof'] = [d if np.isfinite(d) else None for d in self.dof.tolist()]
        return out


@dataclass(frozen=True, eq=False)
class BiasCorrectedFit:
    """Order p+q fit on the partition selected for order p"""

    partition: object
    spec: BasisSpec
    fit: object
    varmodel: object
    p: int
    q: int


@dataclass(frozen=True, eq=False)
class SupDistribution:
    """Simulated suprema of the Studentized Gaussian process"""

    sups: np.ndarray
    mode: str
    draws: int
    seed: int
    rank: int

    def critical_value(self, alpha):
        """
        Order statistic s_(k) with k = B + 2 - ceil(alpha (B + 1))

        With p_value = (r + 1) / (B + 1), statistic > cv holds exactly when
        p_value < alpha. Infinite when alpha (B + 1) <= 1.
        """
        B = self.sups.size
        k = B + 2 - ceil(alpha * (B + 1))
        if k > B:
            return float("inf")
        k = max(k, 1)
        return float(np.sort(self.sups)[k - 1])

    def p_value(self, statistic):
        r = int(np.count_nonzero(self.sups >= statistic))
        return (r + 1) / (self.sups.size + 1)


@dataclass(frozen=True, eq=False)
class BandResult:
    grid: EvalGrid
    cv: float
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    draws: int
    seed: int
    sup: SupDistribution = field(repr=False, default=None)
    rbc: BiasCorrectedFit = field(repr=False, default=None)
    multiplier: Optional[np.ndarray] = field(repr=False, default=None)
    calibration: str = "gaussian"

    def as_dict(self):
        return {
            'cv': self.cv,
            'alpha': self.alpha,
            'draws': self.draws,
            'seed': self.seed,
            'lower': self.lower.tolist(),
            'upper': self.upper.tolist(),
            'rank': self.sup.rank if self.sup else None,
            'calibration': self.calibration,
        }


@dataclass(frozen=True, eq=False)
class TestResult:
    """Sup-type test outcome"""

    statistic: float
    cv: float
    p_value: float
    kind: str
    alpha: float
    model_fit: Optional[dict] = None
    grid: Optional[EvalGrid] = field(repr=False, default=None)
    reference: Optional[np.ndarray] = field(repr=False, default=None)
    calibration: str = "gaussian"

    __test__ = False

    @property
    def reject(self):
        return self.statistic > self.cv

    def as_dict(self):
        return {
            'statistic': self.statistic,
            'cv': self.cv,
            'p_value': self.p_value,
            'kind': self.kind,
            'alpha': self.alpha,
            'reject': bool(self.reject),
            'model': self.model_fit,
            'calibration': self.calibration,
        }


def build_grid(part, s, size=None):
    """
    Evaluation grid with an equal number of points per bin

    For s = 0 the last point of every bin but the final one is the left
    limit at the next knot, so both one-sided limits at interior knots are
    covered.

    Args:
        part: QuantilePartition
        s: Smoothness order
        size: Total number of points (default max(20 J, 500))

    Returns:
        np.ndarray: strictly increasing points spanning [tau_0, tau_J]
    """
    J = part.J
    size = size or max(20 * J, 500)
    per = max(int(ceil(size / J)), 2)
    knots = part.knots
    pieces = []
    for j in range(J):
        if s == 0:
            pts = np.linspace(knots[j], knots[j + 1], per)
            if j < J - 1:
                pts[-1] = np.nextafter(knots[j + 1], -np.inf)
        else:
            pts = np.linspace(knots[j], knots[j + 1], per, endpoint=False)
        pieces.append(pts)
    if s > 0:
        pieces.append(knots[-1:])
    return np.concatenate(pieces)


def bias_corrected_fit(data, p, s, v, q, J, vce=Config.DEFAULT_VCE, sort=None, partition=None):
    """
    Refit at (p+q, min(s+q, p+q)) on the quantile partition with J bins

    Args:
        data: Dataset
        p, s, v: Orders of the point estimator
        q: Bias-correction order (>= 1)
        J: Number of bins (selected at order p)
        vce: hc0, hc1, hc2, hc3 or cluster
        sort: Optional SortIndex of data
        partition: Reuse this partition instead of building one with J bins

    Returns:
        BiasCorrectedFit
    """
    if v > p:
        raise UnsupportedConfigurationError(f"v exceeds p (v={v}, p={p})")
    part = partition or build_partition(data, sort or sort_index(data), J)
    spec = BasisSpec(p=p + q, s=min(s + q, p + q), v=v, partition=part)
    fit = fit_binscatter(data, spec)
    varmodel = variance_model(fit, data, vce)
    return BiasCorrectedFit(partition=part, spec=spec, fit=fit, varmodel=varmodel, p=p, q=q)


def evaluate_grid(rbc, points, v, calibration="gaussian"):
    """Estimates, Omega_hat and standard errors at the given points"""
    if calibration not in CALIBRATIONS:
        raise ConfigurationError(f"calibration must be one of {CALIBRATIONS}")
    points = np.asarray(points, dtype=float)
    design = design_matrix(rbc.spec, points, v=v)
    mu = evaluate_many(rbc.fit, points, v)
    omega = rbc.varmodel.omega_many(points, v=v)
    se = np.sqrt(omega / rbc.fit.n)
    dof = None
    if calibration == "satterthwaite":
        dof = effective_dof(rbc.fit, rbc.varmodel, points, v=v)
        logger.debug("Smallest effective degrees of freedom %.2f", dof.min())
    return EvalGrid(points=points, mu=mu, omega=omega, se=se, n=rbc.fit.n, v=v, design=design,
                    dof=dof)


def gaussian_scale(t, dof):
    """
    Map t-ratios to the normal scale, z = Phi^-1(F_dof(t))

    Points with infinite dof are returned unchanged.
    """
    t = np.asarray(t, dtype=float)
    dof = np.broadcast_to(np.asarray(dof, dtype=float), t.shape)
    z = t.copy()
    finite = np.isfinite(dof)
    if np.any(finite):
        tail = stats.t.sf(np.abs(t[finite]), dof[finite])
        z[finite] = np.sign(t[finite]) * stats.norm.isf(tail)
    return z


def band_multiplier(cv, dof):
    """
    Per-point multiplier t_dof^-1(Phi(cv))

    |t(x)| exceeds it exactly when the normal-scale statistic exceeds cv.
    """
    dof = np.asarray(dof, dtype=float)
    m = np.full(dof.shape, cv, dtype=float)
    finite = np.isfinite(dof)
    if np.isfinite(cv) and np.any(finite):
        m[finite] = stats.t.isf(stats.norm.sf(cv), dof[finite])
    return m


def pointwise_ci(data, p, s, v, q, alpha, J, points=None, vce=Config.DEFAULT_VCE, grid_size=None,
                 rbc=None, calibration="gaussian"):
    """
    Robust bias-corrected pointwise intervals mu_{p+q}^(v)(x) -+ z_{1-alpha/2} se(x)

    Args:
        data: Dataset
        p, s, v, q: Orders
        alpha: Level
        J: Number of bins
        points: Evaluation points (default the inference grid)
        vce: Variance estimator
        grid_size: Default grid size override
        calibration: 'satterthwaite' also stores the per-point dof; the
            intervals themselves always use the normal quantile

    Returns:
        EvalGrid: with lower, upper and z filled
    """
    rbc = rbc or bias_corrected_fit(data, p, s, v, q, J, vce)
    if points is None:
        points = build_grid(rbc.partition, rbc.spec.s, grid_size)
    grid = evaluate_grid(rbc, points, v, calibration)
    z = float(stats.norm.ppf(1 - alpha / 2))
    return EvalGrid(
        points=grid.points, mu=grid.mu, omega=grid.omega, se=grid.se, n=grid.n, v=v,
        design=grid.design, lower=grid.mu - z * grid.se, upper=grid.mu + z * grid.se, z=z,
        dof=grid.dof,
    )


def _sup_block(loadings, block, seed, size, mode):
    rng = np.random.default_rng(np.random.SeedSequence([seed, block]))
    Z = loadings @ rng.standard_normal((loadings.shape[1], size))
    if mode == "abs":
        return np.abs(Z).max(axis=0)
    if mode == "pos":
        return Z.max(axis=0)
    return (-Z).max(axis=0)


def simulate_sup(fit, varmodel, grid, draws, seed, mode="abs", threads=None):
    """
    Simulate sup of Z(x) = b(x)' Q^-1 Sigma^1/2 N / sqrt(Omega(x)) over the grid

    Draws are generated in fixed blocks, block b from the substream
    SeedSequence([seed, b]), and concatenated in block order, so the
    result does not depend on the number of threads.

    Args:
        fit: FitResult at order p+q
        varmodel: VarianceModel of that fit
        grid: EvalGrid (points with Omega = 0 are excluded)
        draws: Number of Gaussian draws
        seed: Master seed
        mode: abs, pos or neg
        threads: Worker threads, capped at Config.THREADS

    Returns:
        SupDistribution
    """
    if mode not in SUP_MODES:
        raise ConfigurationError(f"mode must be one of {SUP_MODES}")
    root, rank = varmodel.sigma_root()
    keep = grid.informative
    if not np.any(keep):
        logger.warning("All grid variances are zero; sup distribution is degenerate")
        return SupDistribution(sups=np.zeros(draws), mode=mode, draws=draws, seed=seed, rank=rank)

    B = grid.design[keep].toarray()
    A = fit.gram.solve(B.T)
    loadings = (root @ A).T / np.sqrt(grid.omega[keep])[:, None]

    sizes = [min(BLOCK_SIZE, draws - start) for start in range(0, draws, BLOCK_SIZE)]
    with ThreadPoolExecutor(max_workers=Config.workers(threads)) as pool:
        blocks = list(pool.map(
            lambda args: _sup_block(loadings, args[0], seed, args[1], mode),
            enumerate(sizes),
        ))
    sups = np.concatenate(blocks)
    logger.debug("Simulated %d sup draws (%s) over %d points, rank %d", draws, mode, keep.sum(), rank)
    return SupDistribution(sups=sups, mode=mode, draws=draws, seed=seed, rank=rank)


def confidence_band(data, p, s, v, q, alpha, J, draws, seed, vce=Config.DEFAULT_VCE,
                    grid_size=None, threads=None, rbc=None,
                    calibration=Config.DEFAULT_CALIBRATION):
    """
    Uniform band mu_{p+q}^(v) -+ m(x) se with m(x) from the simulated (1-alpha) sup quantile cv

    With calibration 'gaussian' m(x) = cv. With 'satterthwaite' m(x) is
    the t quantile with the local dof at the normal level of cv, so the
    band is the set of curves whose normal-scale sup statistic stays
    below cv.

    Returns:
        BandResult
    """
    rbc = rbc or bias_corrected_fit(data, p, s, v, q, J, vce)
    grid = pointwise_ci(data, p, s, v, q, alpha, J, vce=vce, grid_size=grid_size, rbc=rbc,
                        calibration=calibration)
    sup = simulate_sup(rbc.fit, rbc.varmodel, grid, draws, seed, "abs", threads)
    cv = sup.critical_value(alpha)
    multiplier = np.full(grid.size, cv) if grid.dof is None else band_multiplier(cv, grid.dof)
    logger.info("Band critical value %.4f (alpha=%.3f, draws=%d, %s, widest multiplier %.4f)",
                cv, alpha, draws, calibration, multiplier.max())
    return BandResult(
        grid=grid, cv=cv, lower=grid.mu - multiplier * grid.se, upper=grid.mu + multiplier * grid.se,
        alpha=alpha, draws=draws, seed=seed, sup=sup, rbc=rbc, multiplier=multiplier,
        calibration=calibration,
    )


def _studentized(grid, reference):
    keep = grid.informative
    t = (grid.mu[keep] - reference[keep]) / grid.se[keep]
    if grid.dof is not None:
        t = gaussian_scale(t, grid.dof[keep])
    return t


def test_specification(data, p, s, v, q, alpha, J, model, draws, seed, vce=Config.DEFAULT_VCE,
                       grid_size=None, threads=None, rbc=None,
                       calibration=Config.DEFAULT_CALIBRATION):
    """
    Two-sided sup test of H0: mu^(v)(x) = m^(v)(x, theta) for all x

    theta is estimated by least squares of y on the model and w; the
    critical value comes from the same simulated sup|Z| as the band.

    Args:
        data: Dataset
        p, s, v, q: Orders
        alpha: Level
        J: Number of bins
        model: ParametricModel
        draws, seed: Simulation settings
        calibration: 'satterthwaite' maps each t-ratio to the normal scale
            with its local dof before taking the sup

    Returns:
        TestResult: kind 'two_sided_spec'
    """
    rbc = rbc or bias_corrected_fit(data, p, s, v, q, J, vce)
    grid = evaluate_grid(rbc, build_grid(rbc.partition, rbc.spec.s, grid_size), v, calibration)
    fitted = model.fit(data)
    reference = fitted.evaluate(grid.points, v)
    t = _studentized(grid, reference)
    statistic = float(np.abs(t).max()) if t.size else 0.0

    sup = simulate_sup(rbc.fit, rbc.varmodel, grid, draws, seed, "abs", threads)
    result = TestResult(
        statistic=statistic, cv=sup.critical_value(alpha), p_value=sup.p_value(statistic),
        kind="two_sided_spec", alpha=alpha, model_fit=fitted.describe(), grid=grid,
        reference=reference, calibration=calibration,
    )
    logger.info("Specification test (%s): T=%.4f cv=%.4f p=%.4f",
                fitted.family, result.statistic, result.cv, result.p_value)
    return result


def test_shape(data, p, s, v, q, alpha, J, direction, draws, seed, model=None,
               vce=Config.DEFAULT_VCE, grid_size=None, threads=None, rbc=None,
               calibration=Config.DEFAULT_CALIBRATION):
    """
    One-sided sup test of H0: mu^(v)(x) <= m^(v)(x) ('le') or >= ('ge') for all x

    Without a model the baseline is zero (negativity, monotonicity or
    concavity depending on v).

    Args:
        direction: 'le' or 'ge'
        model: Optional ParametricModel baseline

    Returns:
        TestResult: kind 'one_sided_right' for 'le', 'one_sided_left' for 'ge'
    """
    if direction not in ("le", "ge"):
        raise ConfigurationError(f"direction must be le or ge (got {direction!r})")
    rbc = rbc or bias_corrected_fit(data, p, s, v, q, J, vce)
    grid = evaluate_grid(rbc, build_grid(rbc.partition, rbc.spec.s, grid_size), v, calibration)
    fitted = model.fit(data) if model is not None else None
    reference = fitted.evaluate(grid.points, v) if fitted else np.zeros(grid.size)
    t = _studentized(grid, reference)
    if direction == "ge":
        t = -t
    statistic = float(t.max()) if t.size else -float("inf")

    mode = "pos" if direction == "le" else "neg"
    sup = simulate_sup(rbc.fit, rbc.varmodel, grid, draws, seed, mode, threads)
    result = TestResult(
        statistic=statistic, cv=sup.critical_value(alpha), p_value=sup.p_value(statistic),
        kind="one_sided_right" if direction == "le" else "one_sided_left",
        alpha=alpha, model_fit=fitted.describe() if fitted else None, grid=grid,
        reference=reference, calibration=calibration,
    )
    logger.info("Shape test (v=%d, %s): T=%.4f cv=%.4f p=%.4f",
                v, direction, result.statistic, result.cv, result.p_value)
    return result


# not pytest test functions
test_specification.__test__ = False
test_shape.__test__ = False
