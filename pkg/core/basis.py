"""
Basis Module
Standardized piecewise-polynomial and B-spline bases on a quantile partition
"""

import logging
from dataclasses import dataclass, replace
from math import comb

import numpy as np
from scipy import sparse

from core.errors import UnsupportedConfigurationError
from core.partition import bin_index

logger = logging.getLogger(__name__)


def basis_dimension(p, s, J):
    """K_s = (p+1)J - s(J-1)"""
    return (p + 1) * J - s * (J - 1)


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """
    Polynomial order p, smoothness s (0 <= s <= p), derivative order v
    (0 <= v <= p) on a given partition.
    """

    p: int
    s: int
    v: int
    partition: object

    def __post_init__(self):
        if self.p < 0 or not 0 <= self.s <= self.p:
            raise UnsupportedConfigurationError(
                f"Invalid basis orders p={self.p}, s={self.s}; need 0 <= s <= p"
            )
        if not 0 <= self.v <= self.p:
            raise UnsupportedConfigurationError(f"v exceeds p (v={self.v}, p={self.p})")

    @property
    def J(self):
        return self.partition.J

    @property
    def K(self):
        return basis_dimension(self.p, self.s, self.J)

    @property
    def scale(self):
        return np.sqrt(self.J)

    def with_derivative(self, v):
        return replace(self, v=v)


@dataclass(frozen=True)
class SparseBasisRow:
    """Active basis indices (strictly increasing) and their values"""

    indices: tuple
    values: tuple

    def dot(self, coef):
        return float(np.dot(np.asarray(self.values), np.asarray(coef)[list(self.indices)]))

    def to_dense(self, K):
        out = np.zeros(K)
        out[list(self.indices)] = self.values
        return out


@dataclass(frozen=True, eq=False)
class ExtendedKnots:
    """Open knot vector: endpoints stacked p+1 times, interior knots p-s+1 times"""

    xi: np.ndarray
    p: int
    s: int

    @property
    def multiplicity(self):
        return self.p - self.s + 1

    def span(self, j):
        """Knot index mu with xi[mu] = tau_j the start of 0-based bin j"""
        return self.p + np.asarray(j) * self.multiplicity


def _falling(alpha, v):
    out = 1
    for k in range(v):
        out *= alpha - k
    return out


def _safe_div(num, den):
    # 0/0 = 0 convention of the recursive relation
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _unconstrained_values(spec, x, v, scale):
    part = spec.partition
    p = spec.p
    j = bin_index(part, x)
    h = part.widths[j]
    u = (x - part.knots[j]) / h
    vals = np.zeros((x.size, p + 1))
    for alpha in range(v, p + 1):
        vals[:, alpha] = _falling(alpha, v) * u ** (alpha - v) / h ** v
    cols = j[:, None] * (p + 1) + np.arange(p + 1)[None, :]
    return scale * vals, cols


def eval_unconstrained(spec, x0):
    """
    Rotated, rescaled monomial basis of the bin containing x0

    Entries are sqrt(J) * ((x0 - tau_{j-1}) / h_j)^alpha, alpha = 0..p,
    differentiated spec.v times.

    Args:
        spec: BasisSpec (its s is ignored: this is the s = 0 basis)
        x0: Scalar evaluation point

    Returns:
        SparseBasisRow: p+1 entries
    """
    vals, cols = _unconstrained_values(spec, np.array([float(x0)]), spec.v, spec.scale)
    return SparseBasisRow(indices=tuple(int(c) for c in cols[0]),
                          values=tuple(float(v) for v in vals[0]))


def build_extended_knots(spec):
    """
    Extended knot sequence for the constrained basis

    Args:
        spec: BasisSpec with 1 <= s <= p

    Returns:
        ExtendedKnots: length 2(p+1) + (p-s+1)(J-1)
    """
    p, s = spec.p, spec.s
    if s < 1:
        raise UnsupportedConfigurationError("s = 0 uses the unconstrained basis, not splines")
    knots = spec.partition.knots
    xi = np.concatenate((
        np.repeat(knots[0], p + 1),
        np.repeat(knots[1:-1], p - s + 1),
        np.repeat(knots[-1], p + 1),
    ))
    xi.setflags(write=False)
    return ExtendedKnots(xi=xi, p=p, s=s)


def _bspline_derivatives(xi, mu, x, p, nd):
    """
    Nonzero B-spline values and derivatives up to order nd.

    Vectorized form of the triangular Cox-de Boor scheme: for points x with
    xi[mu] <= x <= xi[mu+1], returns array (nd+1, p+1, m) where entry
    [k, r] is the k-th derivative of basis mu-p+r.
    """
    m = x.size
    ndu = np.zeros((p + 1, p + 1, m))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, m))
    right = np.zeros((p + 1, m))
    for j in range(1, p + 1):
        left[j] = x - xi[mu + 1 - j]
        right[j] = xi[mu + j] - x
        saved = np.zeros(m)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = _safe_div(ndu[r, j - 1], ndu[j, r])
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nd + 1, p + 1, m))
    ders[0] = ndu[:, p]
    for r in range(p + 1):
        a = np.zeros((2, p + 1, m))
        a[0, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, nd + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = _safe_div(a[s1, 0], ndu[pk + 1, rk])
                d += a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for jj in range(j1, j2 + 1):
                a[s2, jj] = _safe_div(a[s1, jj] - a[s1, jj - 1], ndu[pk + 1, rk + jj])
                d += a[s2, jj] * ndu[rk + jj, pk]
            if r <= pk:
                a[s2, k] = _safe_div(-a[s1, k - 1], ndu[pk + 1, r])
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1

    factor = p
    for k in range(1, nd + 1):
        ders[k] *= factor
        factor *= p - k
    return ders


def _spline_values(spec, x, v, scale, ext=None):
    ext = ext or build_extended_knots(spec)
    j = bin_index(spec.partition, x)
    mu = ext.span(j)
    ders = _bspline_derivatives(ext.xi, mu, x, spec.p, v)
    vals = ders[v].T
    cols = (mu - spec.p)[:, None] + np.arange(spec.p + 1)[None, :]
    return scale * vals, cols


def eval_spline(spec, x0):
    """
    B-spline basis of order p+1 on the extended knots, scaled by sqrt(J)

    Args:
        spec: BasisSpec with s >= 1
        x0: Scalar evaluation point

    Returns:
        SparseBasisRow: p+1 consecutive indices
    """
    vals, cols = _spline_values(spec, np.array([float(x0)]), spec.v, spec.scale)
    return SparseBasisRow(indices=tuple(int(c) for c in cols[0]),
                          values=tuple(float(v) for v in vals[0]))


def evaluate_row(spec, x0):
    """Dispatch to the unconstrained (s = 0) or spline (s >= 1) basis"""
    if spec.s == 0:
        return eval_unconstrained(spec, x0)
    return eval_spline(spec, x0)


def design_matrix(spec, x, v=None, scale=None):
    """
    Basis (or its v-th derivative) at every point of x

    Args:
        spec: BasisSpec
        x: Evaluation points
        v: Derivative order (default spec.v)
        scale: Standardization factor (default sqrt(J))

    Returns:
        scipy.sparse.csr_matrix: shape (len(x), K_s)
    """
    x = np.asarray(x, dtype=float).ravel()
    v = spec.v if v is None else v
    scale = spec.scale if scale is None else scale
    if v > spec.p:
        vals = np.zeros((x.size, spec.p + 1))
        cols = np.zeros((x.size, spec.p + 1), dtype=np.intp)
    elif spec.s == 0:
        vals, cols = _unconstrained_values(spec, x, v, scale)
    else:
        vals, cols = _spline_values(spec, x, v, scale)
    rows = np.repeat(np.arange(x.size), spec.p + 1)
    return sparse.csr_matrix(
        (vals.ravel(), (rows, cols.ravel())), shape=(x.size, spec.K)
    )


def _truncated_power_coefficients(t, a, p):
    """
    Coefficients c_alpha of a simple-knot B-spline with knots t[0..p+1]
    on its cell [t[a-1], t[a]], in powers of (x - t[a-1]) / (t[a] - t[a-1]).
    """
    h = t[a] - t[a - 1]
    span = t[p + 1] - t[0]
    c = np.zeros(p + 1)
    for k in range(a):
        denom = np.prod([t[kk] - t[k] for kk in range(p + 2) if kk != k])
        for alpha in range(p + 1):
            c[alpha] += comb(p, alpha) * (t[a - 1] - t[k]) ** (p - alpha) * h ** alpha * span / denom
    return c


def transformation_matrix(spec):
    """
    Sparse T_p mapping the unconstrained basis to the simple-knot B-spline basis

    Interior functions use the closed-form truncated-power coefficients;
    the boundary functions, whose knot windows repeat an endpoint, are
    expanded by exact interpolation on their cells.

    Args:
        spec: BasisSpec with s = p

    Returns:
        scipy.sparse.csr_matrix: shape (K_p, (p+1)J)
    """
    p, J = spec.p, spec.J
    if spec.s != p:
        raise UnsupportedConfigurationError(
            f"Closed-form transformation only available for s = p (got s={spec.s}, p={p}); "
            "use eval_spline for 0 < s < p"
        )
    if p == 0:
        return sparse.identity(J, format="csr")

    ext = build_extended_knots(spec)
    xi = ext.xi
    knots = spec.partition.knots
    nodes = np.linspace(0.0, 1.0, p + 1)
    vander = np.vander(nodes, p + 1, increasing=True)

    rows, cols, vals = [], [], []
    for ell in range(spec.K):
        window = xi[ell:ell + p + 2]
        simple = np.all(np.diff(window) > 0)
        for j in range(max(ell - p, 0), min(ell, J - 1) + 1):
            if simple:
                a = p + j + 1 - ell
                c = _truncated_power_coefficients(window, a, p)
            else:
                xs = knots[j] + nodes * spec.partition.widths[j]
                mu = np.full(xs.size, ext.span(j))
                raw = _bspline_derivatives(xi, mu, xs, p, 0)[0][ell - (ext.span(j) - p)]
                c = np.linalg.solve(vander, raw)
            for alpha in range(p + 1):
                rows.append(ell)
                cols.append(j * (p + 1) + alpha)
                vals.append(c[alpha])

    T = sparse.csr_matrix((vals, (rows, cols)), shape=(spec.K, (p + 1) * J))
    T.eliminate_zeros()
    return T