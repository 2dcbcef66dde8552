"""
Variance Module
Sandwich meat matrix (HC0-HC3 and cluster-robust), pointwise variance
function and its Satterthwaite degrees of freedom
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from core.basis import design_matrix
from core.errors import ConfigurationError, VarianceError
from utils.config import Config

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VarianceModel:
    """
    Sigma_hat with the factorized Gram matrix of the fit it belongs to.

    Omega(x) = b(x)' Q^-1 Sigma Q^-1 b(x); Q^-1 is only ever applied
    through the stored banded factorization.
    """

    Sigma_hat: np.ndarray
    gram: object
    spec: object
    mode: str
    n: int
    n_eff: int
    basis_scale: float = 1.0
    dof_factor: float = 1.0
    groups: object = None

    @property
    def K(self):
        return self.Sigma_hat.shape[0]

    def omega_many(self, x, v=None, spec=None):
        """
        Omega_hat at every point of x

        Args:
            x: Evaluation points
            v: Derivative order (default spec.v)
            spec: BasisSpec to evaluate (default the fitted one)

        Returns:
            np.ndarray: nonnegative variances
        """
        spec = spec or self.spec
        B = design_matrix(spec, x, v=v, scale=spec.scale * self.basis_scale)
        A = self.gram.solve(B.toarray().T)
        omega = np.einsum("km,km->m", A, self.Sigma_hat @ A)
        return np.maximum(omega, 0.0)

    def standard_errors(self, x, v=None):
        return np.sqrt(self.omega_many(x, v) / self.n)

    def explicit_sandwich(self):
        """Dense Q^-1 Sigma Q^-1 (diagnostics only)"""
        Q = self.gram_matrix()
        Qinv_Sigma = linalg.solve(Q, self.Sigma_hat, assume_a="pos")
        return linalg.solve(Q, Qinv_Sigma.T, assume_a="pos")

    def gram_matrix(self):
        ab = self.gram.ab
        K = ab.shape[1]
        Q = np.zeros((K, K))
        for k in range(ab.shape[0]):
            idx = np.arange(K - k)
            Q[idx + k, idx] = ab[k, :K - k]
            Q[idx, idx + k] = ab[k, :K - k]
        return Q

    def sigma_root(self):
        """
        Symmetric square root of Sigma_hat via eigendecomposition

        Eigenvalues below SIGMA_CLIP * trace are set to zero.

        Returns:
            tuple: (root, rank)
        """
        vals, vecs = linalg.eigh(self.Sigma_hat)
        trace = float(np.trace(self.Sigma_hat))
        if trace <= 0:
            return np.zeros_like(self.Sigma_hat), 0
        if vals.min() < -1e-8 * trace:
            raise VarianceError(
                f"Sigma_hat is indefinite (smallest eigenvalue {vals.min():.3e}, trace {trace:.3e})"
            )
        keep = vals > Config.SIGMA_CLIP * trace
        rank = int(keep.sum())
        if rank < vals.size:
            logger.warning("Sigma_hat square root clipped to rank %d of %d", rank, vals.size)
        root = (vecs[:, keep] * np.sqrt(vals[keep])) @ vecs[:, keep].T
        return root, rank


def omega(varmodel, spec, x0, v=0):
    """
    Pointwise variance Omega_hat(x0)

    Args:
        varmodel: VarianceModel
        spec: BasisSpec of the fit
        x0: Scalar in the support
        v: Derivative order

    Returns:
        float: Omega_hat(x0) >= 0
    """
    return float(varmodel.omega_many(np.array([x0]), v=v, spec=spec)[0])


LEVERAGE_CHUNK = 4096
MAX_LEVERAGE = 1.0 - 1e-8
LEVERAGE_ADJUSTMENTS = ("hc2", "hc3")


def _score_matrix(fit, weights=None):
    residuals = fit.residuals if weights is None else fit.residuals * weights
    return sparse.csr_matrix(fit.design.multiply(residuals[:, None]))


def leverage(fit, data):
    """
    Diagonal of the hat matrix of the semi-linear fit

    h_i = b_i'(B'B)^-1 b_i + w~_i'(W~'W~)^-1 w~_i with W~ = W - B Q^-1 B'W / n,
    so that sum(h) = K + d. Rows of B are processed in chunks.

    Args:
        fit: FitResult
        data: Dataset the fit was computed on

    Returns:
        np.ndarray: leverages clipped to [0, 1)
    """
    n = fit.n
    B = sparse.csr_matrix(fit.design)
    h = np.empty(n)
    for start in range(0, n, LEVERAGE_CHUNK):
        rows = B[start:start + LEVERAGE_CHUNK].toarray()
        h[start:start + rows.shape[0]] = np.einsum("ik,ki->i", rows, fit.gram.solve(rows.T)) / n
    if data.d > 0:
        W = data.w
        QinvBW = fit.gram.solve(np.asarray(B.T @ W) / n)
        W_res = W - np.asarray(B @ QinvBW)
        WMW = W_res.T @ W_res / n
        h += np.einsum("ij,ji->i", W_res, linalg.solve(WMW, W_res.T, assume_a="pos")) / n
    clipped = int(np.sum(h > MAX_LEVERAGE))
    if clipped:
        logger.warning("%d observations with leverage 1 (bins with at most p+1 distinct x)",
                       clipped)
    return np.clip(h, 0.0, MAX_LEVERAGE)


def sandwich(fit, data, hc1=False, adjust=None):
    """
    Heteroskedasticity-robust Sigma_hat = (1/n) sum b(x_i) b(x_i)' e_i^2

    Args:
        fit: FitResult
        data: Dataset the fit was computed on
        hc1: Apply the n / (n - K - d) degrees-of-freedom factor
        adjust: "hc2" scales e_i^2 by 1 / (1 - h_i), "hc3" by 1 / (1 - h_i)^2

    Returns:
        VarianceModel: heteroskedastic mode
    """
    n = fit.n
    weights = None
    if adjust is not None:
        if adjust not in LEVERAGE_ADJUSTMENTS:
            raise ConfigurationError(f"Unknown leverage adjustment: {adjust}")
        h = leverage(fit, data)
        weights = 1.0 / np.sqrt(1.0 - h) if adjust == "hc2" else 1.0 / (1.0 - h)
    U = _score_matrix(fit, weights)
    Sigma = (U.T @ U).toarray() / n
    factor = 1.0
    if hc1:
        factor = n / (n - fit.K - fit.d)
        Sigma = Sigma * factor
    return VarianceModel(
        Sigma_hat=0.5 * (Sigma + Sigma.T),
        gram=fit.gram,
        spec=fit.spec,
        mode=adjust or ("hc1" if hc1 else "hc0"),
        n=n,
        n_eff=n,
        basis_scale=fit.basis_scale,
        dof_factor=factor,
    )


def sandwich_clustered(fit, data):
    """
    Cluster-robust Sigma_hat: outer products of within-cluster score sums

    Args:
        fit: FitResult
        data: Dataset with cluster labels

    Returns:
        VarianceModel: cluster mode, n_eff = number of clusters
    """
    if data.cluster is None:
        raise ConfigurationError("Cluster-robust variance requires cluster labels (--cluster)")
    n = fit.n
    labels, inverse = np.unique(data.cluster, return_inverse=True)
    groups = sparse.csr_matrix(
        (np.ones(n), (inverse.ravel(), np.arange(n))), shape=(labels.size, n)
    )
    S = groups @ _score_matrix(fit)
    Sigma = (S.T @ S).toarray() / n
    logger.debug("Clustered Sigma_hat over %d clusters", labels.size)
    return VarianceModel(
        Sigma_hat=0.5 * (Sigma + Sigma.T),
        gram=fit.gram,
        spec=fit.spec,
        mode="cluster",
        n=n,
        n_eff=int(labels.size),
        basis_scale=fit.basis_scale,
        groups=sparse.csc_matrix(groups),
    )


def variance_model(fit, data, vce=Config.DEFAULT_VCE):
    """Dispatch on vce in {hc0, hc1, hc2, hc3, cluster}"""
    if vce == "hc0":
        return sandwich(fit, data)
    if vce == "hc1":
        return sandwich(fit, data, hc1=True)
    if vce in LEVERAGE_ADJUSTMENTS:
        return sandwich(fit, data, adjust=vce)
    if vce == "cluster":
        return sandwich_clustered(fit, data)
    raise ConfigurationError(f"Unknown variance estimator: {vce}")


def effective_dof(fit, varmodel, x, v=None, spec=None):
    """
    Satterthwaite degrees of freedom of Omega_hat(x) at every point of x

    Omega_hat(x) / n = sum_i a_i(x)^2 e_i^2 with a_i(x) = b(x)' Q^-1 b(x_i) / n.
    Treating the e_i^2 as independent scaled chi-square(1) variables gives
    dof(x) = (sum a_i^2)^2 / sum a_i^4. In cluster mode the a_i^2 are summed
    within each cluster first.

    Args:
        fit: FitResult the variance model belongs to
        varmodel: VarianceModel
        x: Evaluation points
        v: Derivative order (default spec.v)
        spec: BasisSpec to evaluate (default the fitted one)

    Returns:
        np.ndarray: positive degrees of freedom, inf where Omega_hat(x) = 0
    """
    spec = spec or varmodel.spec
    n = fit.n
    Bx = design_matrix(spec, x, v=v, scale=spec.scale * varmodel.basis_scale).toarray()
    R = varmodel.gram.solve(Bx.T)
    B = sparse.csr_matrix(fit.design)
    groups = varmodel.groups
    second = np.zeros(Bx.shape[0])
    fourth = np.zeros(Bx.shape[0])
    lam = None if groups is None else np.zeros((groups.shape[0], Bx.shape[0]))
    for start in range(0, n, LEVERAGE_CHUNK):
        a2 = (np.asarray(B[start:start + LEVERAGE_CHUNK] @ R) / n) ** 2
        if lam is None:
            second += a2.sum(axis=0)
            fourth += (a2 ** 2).sum(axis=0)
        else:
            lam += groups[:, start:start + a2.shape[0]] @ a2
    if lam is not None:
        second = lam.sum(axis=0)
        fourth = (lam ** 2).sum(axis=0)
    dof = np.full(Bx.shape[0], np.inf)
    positive = fourth > 0
    dof[positive] = second[positive] ** 2 / fourth[positive]
    return dof


def unit_variance_model(fit):
    """Sigma_hat = Q_hat, the unit conditional variance limit"""
    return VarianceModel(
        Sigma_hat=np.array(fit.Q_hat),
        gram=fit.gram,
        spec=fit.spec,
        mode="unit",
        n=fit.n,
        n_eff=fit.n,
        basis_scale=fit.basis_scale,
    )
