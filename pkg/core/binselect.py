"""
Bin Selection Module
IMSE-optimal number of bins: rule-of-thumb and direct plug-in selectors
"""

import logging
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from math import ceil, comb, factorial
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg, special, stats

from core.basis import BasisSpec, design_matrix
from core.dataset import sort_index
from core.errors import SampleSizeError, SelectionError, SingularFitError
from core.fit import evaluate_many, fit_binscatter
from core.partition import bin_index, build_partition
from core.variance import sandwich
from utils.config import Config

logger = logging.getLogger(__name__)

# ratio 2(p-v+1)B / ((1+2v)V) below this is treated as a vanishing bias
DEGENERATE_RATIO = 1e-12


@dataclass(frozen=True)
class ImseConstants:
    """Variance and bias constants of the IMSE expansion"""

    variance_const: float
    bias_const: float
    p: int
    s: int
    v: int
    method: str
    n: int = 0
    J_pre: Optional[int] = None
    s_pilot: Optional[int] = None
    degenerate_bias: bool = False
    degenerate_variance: bool = False

    @property
    def ratio(self):
        return 2 * (self.p - self.v + 1) * self.bias_const / ((1 + 2 * self.v) * self.variance_const)

    def as_dict(self):
        return asdict(self)


class PolyTables:
    """
    Legendre and Bernoulli polynomial constants
    """

    @staticmethod
    def legendre_sq_integral(m):
        """
        Integral over [0, 1] of the squared rescaled shifted Legendre polynomial

        binom(2m, m) * B_m is the shifted Legendre polynomial of degree m,
        whose squared integral is 1 / (2m + 1).

        Returns:
            Fraction: exact value (1/12 for m = 1)
        """
        return Fraction(1, (2 * m + 1) * comb(2 * m, m) ** 2)

    @staticmethod
    def bernoulli_number(m):
        return float(special.bernoulli(m)[m])

    @staticmethod
    def bernoulli_poly(m, z):
        """
        Bernoulli polynomial E_m(z) = sum_k binom(m, k) B_k z^(m-k)

        Args:
            m: Degree
            z: Scalar or array

        Returns:
            np.ndarray or float
        """
        z = np.asarray(z, dtype=float)
        numbers = special.bernoulli(m)
        out = np.zeros_like(z)
        for k in range(m + 1):
            out = out + comb(m, k) * numbers[k] * z ** (m - k)
        return out if out.ndim else float(out)


def psi_trace_constant(p, v):
    """
    tr{ (int psi psi')^-1 int psi^(v) psi^(v)' } for psi(z) = (1, z, ..., z^p) on [0, 1]
    """
    idx = np.arange(p + 1)
    gram = 1.0 / (idx[:, None] + idx[None, :] + 1)
    fall = np.array([np.prod(np.arange(a - v + 1, a + 1)) if a >= v else 0 for a in idx], dtype=float)
    deriv = np.zeros((p + 1, p + 1))
    for a in range(v, p + 1):
        for b in range(v, p + 1):
            deriv[a, b] = fall[a] * fall[b] / (a + b - 2 * v + 1)
    return float(np.trace(linalg.solve(gram, deriv, assume_a="pos")))


def imse_optimal_J(consts, n):
    """
    J = ceil( (2(p-v+1)B / ((1+2v)V))^(1/(2p+3)) * n^(1/(2p+3)) )

    Args:
        consts: ImseConstants
        n: Sample size

    Returns:
        int: unclamped IMSE-optimal number of bins
    """
    V, B = consts.variance_const, consts.bias_const
    if not np.isfinite(V) or not np.isfinite(B):
        raise SelectionError(f"IMSE constants are not finite (V={V}, B={B})")
    if V <= 0:
        raise SelectionError(f"Variance constant must be positive (got {V})")
    rate = 1.0 / (2 * consts.p + 3)
    return int(ceil(consts.ratio ** rate * n ** rate))


def max_bins(data, sort, p, s):
    """Largest J with J <= distinct x values and K_s + d < n"""
    slope = p + 1 - s
    by_dimension = -(-(data.n - data.d - s) // slope) - 1
    return max(min(sort.distinct_count, by_dimension), 0)


def _clamp(J_raw, J_max, consts):
    if J_max < 2:
        raise SelectionError(
            f"Not enough data for two bins at p={consts.p}, s={consts.s} (J_max={J_max})"
        )
    if consts.degenerate_variance:
        logger.warning("Variance constant is numerically zero; using J_max=%d", J_max)
        return J_max
    if consts.degenerate_bias:
        logger.warning("Degenerate bias constant (B=%.3e); falling back to J=2", consts.bias_const)
        return 2
    J = int(min(max(J_raw, 2), J_max))
    if J != J_raw:
        logger.warning("IMSE-optimal J=%d clamped to %d (range [2, %d])", J_raw, J, J_max)
    return J


def _global_poly(x, W, target, degree):
    """Least squares on standardized powers of x (degree `degree`) plus W"""
    loc, scl = x.mean(), x.std()
    if scl <= 0:
        raise SelectionError("x has no variation; cannot fit the reference polynomial")
    z = (x - loc) / scl
    P = np.column_stack([z ** k for k in range(degree + 1)] + ([W] if W.shape[1] else []))
    coef, _, rank, _ = np.linalg.lstsq(P, target, rcond=None)
    if rank < P.shape[1]:
        raise SelectionError(
            f"Degenerate pilot fit: global polynomial of degree {degree} is rank deficient"
        )
    return coef, P @ coef, scl


def rot_select(data, p, s, v):
    """
    Rule-of-thumb selector with a Gaussian reference density

    Args:
        data: Dataset
        p, s, v: Orders

    Returns:
        tuple: (J, ImseConstants)
    """
    n = data.n
    x, y, W = data.x, data.y, data.w
    if n <= p + 2 + data.d:
        raise SampleSizeError(f"n={n} too small for a degree-{p + 1} reference polynomial")
    var_y = float(y.var())
    if var_y <= 0:
        raise SelectionError("Degenerate pilot fit: y is constant")

    coef, mean_fit, scl = _global_poly(x, W, y, p + 1)
    _, sq_fit, _ = _global_poly(x, W, y ** 2, p + 1)
    sigma2 = np.maximum(sq_fit - mean_fit ** 2, Config.VARIANCE_FLOOR * var_y)

    deriv = factorial(p + 1) * coef[p + 1] / scl ** (p + 1)
    dens = stats.norm.pdf(x, loc=x.mean(), scale=x.std())

    m = p + 1 - v
    V = psi_trace_constant(p, v) * float(np.mean(sigma2 * dens ** (2 * v)))
    B = float(PolyTables.legendre_sq_integral(m)) / factorial(m) ** 2 \
        * float(np.mean(deriv ** 2 / dens ** (2 * m)))

    consts = ImseConstants(variance_const=V, bias_const=B, p=p, s=s, v=v, method="rot", n=n)
    consts = _flag_degenerate(consts, var_y)
    J_raw = 0 if consts.degenerate_bias or consts.degenerate_variance else imse_optimal_J(consts, n)
    J = _clamp(J_raw, max_bins(data, sort_index(data), p, s), consts)
    logger.info("ROT selector: J=%d (V=%.4g, B=%.4g)", J, V, B)
    return J, consts


def _flag_degenerate(consts, var_y):
    degenerate_variance = consts.variance_const <= Config.VARIANCE_FLOOR * var_y * 1e-10
    degenerate_bias = (not degenerate_variance) and (
        consts.bias_const <= 0 or consts.ratio < DEGENERATE_RATIO
    )
    if consts.variance_const <= 0 and not degenerate_variance:
        raise SelectionError(f"Variance constant must be positive (got {consts.variance_const})")
    return replace(consts, degenerate_bias=bool(degenerate_bias),
                   degenerate_variance=bool(degenerate_variance))


def _quadrature(part, p):
    """Gauss-Legendre nodes (p+2 per bin) and weights times the bin density N_j/(n h_j)"""
    t, wt = leggauss(p + 2)
    left, h = part.knots[:-1, None], part.widths[:, None]
    nodes = left + 0.5 * (t[None, :] + 1.0) * h
    density = (part.counts / (part.n * part.widths))[:, None]
    weights = 0.5 * h * wt[None, :] * density
    return nodes.ravel(), weights.ravel()


def _leading_error(pilot, part, x, order, v):
    """mu^(p+1)(x) h^(order-v) / (order-v)! * E_(order-v)((x - tau_L) / h)"""
    deriv = evaluate_many(pilot, x, v=order)
    j = bin_index(part, x)
    h = part.widths[j]
    u = (x - part.knots[j]) / h
    m = order - v
    return deriv * h ** m / factorial(m) * PolyTables.bernoulli_poly(m, u)


def dpi_select(data, p, s, v, J_pre=None):
    """
    Direct plug-in selector

    The variance constant integrates Omega_hat of a binscatter fit on the
    preliminary partition; the bias constant integrates the squared
    orthogonalized leading error, with mu^(p+1) estimated by an order p+1
    binscatter on the same partition.

    Args:
        data: Dataset
        p, s, v: Orders
        J_pre: Preliminary number of bins (default: rule-of-thumb J)

    Returns:
        tuple: (J, ImseConstants)
    """
    if J_pre is None:
        J_pre, _ = rot_select(data, p, s, v)
    sort = sort_index(data)
    part = build_partition(data, sort, J_pre)
    J = part.J
    s_pilot = min(s + 1, p + 1)

    spec = BasisSpec(p=p, s=s, v=v, partition=part)
    try:
        fit = fit_binscatter(data, spec)
        pilot = fit_binscatter(data, BasisSpec(p=p + 1, s=s_pilot, v=0, partition=part))
    except (SingularFitError, SampleSizeError) as e:
        raise SelectionError(
            f"J_pre={J_pre} does not support the order-{p + 1} pilot fit: {e}"
        ) from e

    nodes, weights = _quadrature(part, p)
    varmodel = sandwich(fit, data)
    V = J ** -(1 + 2 * v) * float(weights @ varmodel.omega_many(nodes, v=v))

    r0 = _leading_error(pilot, part, data.x, p + 1, 0)
    B_data = fit.design
    c = B_data.T @ r0 / data.n
    projection = design_matrix(spec, nodes, v=v) @ fit.gram.solve(c)
    bias = projection - _leading_error(pilot, part, nodes, p + 1, v)
    B = J ** (2 * p + 2 - 2 * v) * float(weights @ bias ** 2)

    consts = ImseConstants(
        variance_const=V, bias_const=B, p=p, s=s, v=v, method="dpi",
        n=data.n, J_pre=int(J), s_pilot=s_pilot,
    )
    consts = _flag_degenerate(consts, float(data.y.var()))
    J_raw = 0 if consts.degenerate_bias or consts.degenerate_variance else imse_optimal_J(consts, data.n)
    J_sel = _clamp(J_raw, max_bins(data, sort, p, s), consts)
    logger.info("DPI selector: J=%d (J_pre=%d, V=%.4g, B=%.4g)", J_sel, J, V, B)
    return J_sel, consts


def select_bins(data, p, s, v, method="rot", J_pre=None):
    """Dispatch to the rule-of-thumb or direct plug-in selector"""
    if method == "rot":
        return rot_select(data, p, s, v)
    if method == "dpi":
        return dpi_select(data, p, s, v, J_pre)
    raise SelectionError(f"Unknown selection method: {method}")
