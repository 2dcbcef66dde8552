"""
Fit Module
Covariate-adjusted binscatter least squares and the residualized comparator
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import linalg

from core.basis import BasisSpec, design_matrix, evaluate_row
from core.dataset import Dataset, sort_index
from core.errors import (
    ConfigurationError, SampleSizeError, SingularFitError, UnsupportedConfigurationError,
)
from core.partition import bin_centers, build_partition
from utils.config import Config

logger = logging.getLogger(__name__)


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class BandedGram:
    """
    Cholesky factorization of the banded Gram matrix Q = B'B / n

    B'B has lower bandwidth p for both the piecewise-polynomial and the
    spline basis, so the factor is stored in LAPACK lower-banded form.
    """

    def __init__(self, Q, bandwidth):
        self.K = Q.shape[0]
        self.bandwidth = bandwidth
        self.ab = np.zeros((bandwidth + 1, self.K))
        for k in range(bandwidth + 1):
            self.ab[k, :self.K - k] = np.diagonal(Q, offset=-k)
        self.factor = None

    def eigen_extremes(self):
        """Smallest and largest eigenvalue plus the eigenvector of the smallest"""
        vals = linalg.eigvals_banded(self.ab, lower=True)
        _, vec = linalg.eig_banded(self.ab, lower=True, select="i", select_range=(0, 0))
        return float(vals.min()), float(vals.max()), vec[:, 0]

    def factorize(self):
        self.factor = linalg.cholesky_banded(self.ab, lower=True)
        return self

    def solve(self, rhs):
        return linalg.cho_solve_banded((self.factor, True), rhs)


def _offending_bin(spec, k):
    """1-based bin in whose active set basis function k first appears"""
    if spec.s == 0:
        return k // (spec.p + 1) + 1
    mult = spec.p - spec.s + 1
    return max(0, -(-(k - spec.p) // mult)) + 1


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    Result of a binscatter least-squares fit

    ``dot_values`` are mu_hat(b_j) plus ``dots_shift``, the sample-average
    covariate contribution w_bar'gamma_hat.
    """

    spec: BasisSpec
    beta: np.ndarray
    gamma: np.ndarray
    Q_hat: np.ndarray
    gram: BandedGram
    design: object
    residuals: np.ndarray
    fitted: np.ndarray
    n: int
    w_mean: np.ndarray
    dots_shift: float
    dot_values: np.ndarray
    basis_scale: float = 1.0
    method: str = "semi-linear"
    recentering: Optional[dict] = None

    @property
    def K(self):
        return self.beta.shape[0]

    @property
    def d(self):
        return self.gamma.shape[0]

    @property
    def partition(self):
        return self.spec.partition

    def metadata(self):
        return {
            'method': self.method,
            'p': self.spec.p,
            's': self.spec.s,
            'K': self.K,
            'd': self.d,
            'n': self.n,
            'dots_include_covariate_mean': True,
            'dots_shift': self.dots_shift,
            'recentering': self.recentering,
        }


def _check_gram(gram, spec):
    lo, hi, vec = gram.eigen_extremes()
    rcond = lo / hi if hi > 0 else 0.0
    logger.debug("Gram matrix eigenvalues: min=%.3e max=%.3e rcond=%.3e", lo, hi, rcond)
    if rcond < Config.SINGULAR_RCOND:
        k = int(np.argmax(np.abs(vec)))
        bin_no = _offending_bin(spec, k)
        raise SingularFitError(
            f"Gram matrix of the basis is singular (rcond={rcond:.2e}); "
            f"bin {bin_no} has too few distinct x values for p={spec.p}",
            block="basis",
            index=bin_no,
        )


def _check_covariates(WMW, WW, names):
    vals, vecs = linalg.eigh(WMW)
    scale = linalg.eigvalsh(WW).max()
    rcond = vals.min() / scale if scale > 0 else 0.0
    if rcond < Config.SINGULAR_RCOND:
        k = int(np.argmax(np.abs(vecs[:, 0])))
        name = names[k] if k < len(names) else f"w{k + 1}"
        raise SingularFitError(
            f"Covariate block is singular (rcond={rcond:.2e}); "
            f"covariate '{name}' is collinear with the basis or other covariates",
            block="covariates",
            index=name,
        )


def fit_binscatter(data, spec, basis_scale=1.0):
    """
    Semi-linear binscatter fit by backfitting

    gamma = (W'M_B W)^-1 W'M_B Y and beta = (B'B)^-1 B'(Y - W gamma), with
    every (B'B)^-1 applied through a banded Cholesky factorization.

    Args:
        data: Dataset
        spec: BasisSpec (its v is ignored; evaluation chooses the derivative)
        basis_scale: Extra positive factor on the standardized basis

    Returns:
        FitResult: coefficients, Gram matrix, residuals and dots
    """
    n, d, K = data.n, data.d, spec.K
    if n <= K + d:
        raise SampleSizeError(
            f"Sample too small: n={n} must exceed K+d={K + d} (p={spec.p}, s={spec.s}, J={spec.J})"
        )

    scale = spec.scale * basis_scale
    B = design_matrix(spec, data.x, v=0, scale=scale)
    Q = (B.T @ B).toarray() / n
    gram = BandedGram(Q, spec.p)
    _check_gram(gram, spec)
    gram.factorize()

    y, W = data.y, data.w
    BY = B.T @ y / n
    if d > 0:
        BW = np.asarray(B.T @ W) / n
        WW = W.T @ W / n
        QinvBW = gram.solve(BW)
        WMW = WW - BW.T @ QinvBW
        WMY = W.T @ y / n - QinvBW.T @ BY
        _check_covariates(WMW, WW, data.w_names)
        gamma = linalg.solve(WMW, WMY, assume_a="sym")
        beta = gram.solve(BY - BW @ gamma)
        covariate_part = W @ gamma
    else:
        gamma = np.zeros(0)
        beta = gram.solve(BY)
        covariate_part = np.zeros(n)

    fitted = B @ beta + covariate_part
    residuals = y - fitted
    w_mean = W.mean(axis=0) if d > 0 else np.zeros(0)
    dots_shift = float(w_mean @ gamma) if d > 0 else 0.0

    centers = bin_centers(spec.partition)
    mu_centers = design_matrix(spec, centers, v=0, scale=scale) @ beta

    logger.info("Fitted binscatter: n=%d, J=%d, p=%d, s=%d, K=%d, d=%d",
                n, spec.J, spec.p, spec.s, K, d)

    return FitResult(
        spec=spec,
        beta=_readonly(beta),
        gamma=_readonly(gamma),
        Q_hat=_readonly(Q),
        gram=gram,
        design=B,
        residuals=_readonly(residuals),
        fitted=_readonly(fitted),
        n=n,
        w_mean=_readonly(w_mean),
        dots_shift=dots_shift,
        dot_values=_readonly(mu_centers + dots_shift),
        basis_scale=basis_scale,
    )


def _check_derivative(fit, v):
    if v > fit.spec.p:
        raise UnsupportedConfigurationError(f"v exceeds p (v={v}, p={fit.spec.p})")


def evaluate(fit, x0, v=0):
    """
    mu_hat^(v)(x0) as a sparse dot product with beta

    Args:
        fit: FitResult
        x0: Scalar in the support
        v: Derivative order

    Returns:
        float: fitted value (or derivative)
    """
    _check_derivative(fit, v)
    row = evaluate_row(fit.spec.with_derivative(v), x0)
    return fit.basis_scale * row.dot(fit.beta)


def evaluate_many(fit, x, v=0):
    """Vectorized mu_hat^(v) at every point of x"""
    _check_derivative(fit, v)
    B = design_matrix(fit.spec, x, v=v, scale=fit.spec.scale * fit.basis_scale)
    return B @ fit.beta


def binscatter_dots(fit):
    """
    One dot per bin at the bin midpoint

    Returns:
        list: (b_j, dot value) tuples
    """
    centers = bin_centers(fit.partition)
    return [(float(c), float(v)) for c, v in zip(centers, fit.dot_values)]


def fit_residualized(data, spec):
    """
    Residualized binscatter: bin the residuals of y and x on (1, w)

    Both residual series are re-centered at the sample means of y and x so
    the dots share axes with the semi-linear fit. The partition is rebuilt
    on the residualized x with the same number of bins.

    Args:
        data: Dataset with d >= 1
        spec: BasisSpec with p = s = 0

    Returns:
        FitResult: canonical binscatter of y_tilde on x_tilde
    """
    if data.d == 0:
        raise ConfigurationError("Residualized binscatter requires at least one covariate")
    if spec.p != 0 or spec.s != 0:
        raise UnsupportedConfigurationError("Residualized binscatter is defined for p = s = 0 only")

    Z = np.column_stack((np.ones(data.n), data.w))
    coef, _, rank, _ = np.linalg.lstsq(Z, np.column_stack((data.y, data.x)), rcond=None)
    if rank < Z.shape[1]:
        raise SingularFitError(
            "Design (1, w) is rank deficient; cannot residualize",
            block="covariates",
            index=None,
        )
    resid = np.column_stack((data.y, data.x)) - Z @ coef
    y_tilde = resid[:, 0] + data.y.mean()
    x_tilde = resid[:, 1] + data.x.mean()

    tilde = Dataset.from_arrays(y_tilde, x_tilde, cluster=data.cluster)
    sort = sort_index(tilde)
    J = min(spec.J, sort.distinct_count)
    part = build_partition(tilde, sort, J)
    result = fit_binscatter(tilde, BasisSpec(p=0, s=0, v=0, partition=part))

    logger.info("Residualized comparator fitted on J=%d bins", part.J)
    return replace(
        result,
        method="residualized",
        recentering={'y_mean': float(data.y.mean()), 'x_mean': float(data.x.mean())},
    )
