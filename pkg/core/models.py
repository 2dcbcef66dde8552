"""
Models Module
Parametric families m(x, theta) for specification and shape tests
"""

import logging
import re
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize, special

from core.errors import ModelError

logger = logging.getLogger(__name__)

POLY_DEGREES = {'constant': 0, 'linear': 1, 'quadratic': 2, 'cubic': 3}


@dataclass(frozen=True, eq=False)
class FittedModel:
    """
    Estimated parametric fit: theta for m(x, theta), gamma for the covariates
    """

    family: str
    theta: np.ndarray
    gamma: np.ndarray
    evaluator: object = field(repr=False)

    def evaluate(self, x, v=0):
        """m^(v)(x, theta_hat) at every point of x"""
        return self.evaluator(np.asarray(x, dtype=float), v)

    def describe(self):
        return {
            'family': self.family,
            'theta': [float(t) for t in self.theta],
            'gamma': [float(g) for g in self.gamma],
        }


class ParametricModel:
    """
    Base class for parametric families

    Subclasses implement ``_estimate`` returning (theta, gamma) and
    ``derivative(theta, x, v)``.
    """

    family = "model"

    def fit(self, data):
        """
        Least squares of y on m(x, theta) and w

        Args:
            data: Dataset

        Returns:
            FittedModel: estimated model
        """
        theta, gamma = self._estimate(data)
        theta = np.asarray(theta, dtype=float)
        logger.debug("Fitted %s model: theta=%s", self.family, theta)
        return FittedModel(
            family=self.family,
            theta=theta,
            gamma=np.asarray(gamma, dtype=float),
            evaluator=lambda x, v: self.derivative(theta, x, v),
        )

    def _estimate(self, data):
        raise NotImplementedError

    def derivative(self, theta, x, v):
        raise NotImplementedError


class PolynomialModel(ParametricModel):
    """m(x) = theta_0 + theta_1 x + ... + theta_k x^k"""

    def __init__(self, degree):
        self.degree = int(degree)
        self.family = f"poly{self.degree}"

    def _estimate(self, data):
        X = np.column_stack([data.x ** k for k in range(self.degree + 1)] + [data.w])
        coef, _, rank, _ = np.linalg.lstsq(X, data.y, rcond=None)
        if rank < X.shape[1]:
            raise ModelError(f"Polynomial model of degree {self.degree} is not identified")
        return coef[:self.degree + 1], coef[self.degree + 1:]

    def derivative(self, theta, x, v):
        return Polynomial(theta).deriv(v)(x)


class UserPolynomialModel(PolynomialModel):
    """Fixed user coefficients; only gamma is estimated"""

    def __init__(self, coefficients):
        super().__init__(len(coefficients) - 1)
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.family = "user"

    def _estimate(self, data):
        gamma = np.zeros(data.d)
        if data.d:
            target = data.y - Polynomial(self.coefficients)(data.x)
            gamma, *_ = np.linalg.lstsq(data.w, target, rcond=None)
        return self.coefficients, gamma


def _nonlinear_fit(family, data, mean_fn, start):
    """Joint least squares over theta and gamma"""
    d = data.d

    def residual(params):
        return data.y - mean_fn(params[:2], data.x) - data.w @ params[2:]

    result = optimize.least_squares(residual, np.concatenate((start, np.zeros(d))), method="trf")
    if not result.success or not np.all(np.isfinite(result.x)):
        raise ModelError(f"{family} model fit did not converge: {result.message}")
    return result.x[:2], result.x[2:]


class LogisticModel(ParametricModel):
    """
    m(x) = 1 / (1 + exp(-(theta_0 + theta_1 x)))

    Derivatives are polynomials in the logistic function itself.
    """

    family = "logistic"

    def _estimate(self, data):
        p = np.clip(data.y, 0.01, 0.99)
        slope, intercept = np.polyfit(data.x, special.logit(p), 1)
        return _nonlinear_fit(
            self.family, data,
            lambda th, x: special.expit(th[0] + th[1] * x),
            np.array([intercept, slope]),
        )

    def derivative(self, theta, x, v):
        sig = special.expit(theta[0] + theta[1] * x)
        poly = Polynomial([0, 1])
        step = Polynomial([0, 1, -1])
        for _ in range(v):
            poly = poly.deriv() * step
        return theta[1] ** v * poly(sig)


class ExponentialModel(ParametricModel):
    """m(x) = exp(theta_0 + theta_1 x)"""

    family = "exponential"

    def _estimate(self, data):
        slope, intercept = np.polyfit(data.x, np.log(np.abs(data.y) + 1e-8), 1)
        return _nonlinear_fit(
            self.family, data,
            lambda th, x: np.exp(th[0] + th[1] * x),
            np.array([intercept, slope]),
        )

    def derivative(self, theta, x, v):
        return theta[1] ** v * np.exp(theta[0] + theta[1] * x)


def parse_model(name, coefficients=()):
    """
    Build a parametric family from its command-line name

    Args:
        name: constant, linear, quadratic, cubic, poly<k>, logistic,
            exponential or user
        coefficients: Polynomial coefficients for 'user'

    Returns:
        ParametricModel: the family
    """
    if name in POLY_DEGREES:
        return PolynomialModel(POLY_DEGREES[name])
    match = re.fullmatch(r"poly(?:nomial)?[:\-]?(\d+)", name or "")
    if match:
        return PolynomialModel(int(match.group(1)))
    if name == "logistic":
        return LogisticModel()
    if name == "exponential":
        return ExponentialModel()
    if name == "user":
        if not coefficients:
            raise ModelError("Model 'user' requires coefficients")
        return UserPolynomialModel(coefficients)
    raise ModelError(f"Unknown model: {name}")
