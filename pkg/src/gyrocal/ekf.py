"""Gaussian filtering engine: linear prediction and Joseph-form update.

Beliefs are value types; every operation returns a new belief and symmetrizes
the covariance to bound floating-point drift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import rotation
from .dynamics import StateLayout

MAX_CONDITION = 1e12


class UpdateRejectedError(RuntimeError):
    """Innovation covariance singular or ill-conditioned; belief left unchanged."""


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean length")

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy())


@dataclass
class MeasurementModel:
    """Nonlinear measurement: prediction, Jacobian, and additive noise covariance."""

    predict: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    noise_cov: np.ndarray


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def predict(belief: GaussianBelief, transition: np.ndarray, process_noise: np.ndarray) -> GaussianBelief:
    """Linear prediction: mean <- A m, cov <- A P A^T + Q."""
    n = belief.mean.size
    if transition.shape != (n, n) or process_noise.shape != (n, n):
        raise ValueError("transition/process-noise shape does not match state size")
    mean = transition @ belief.mean
    cov = _symmetrize(transition @ belief.cov @ transition.T + process_noise)
    return GaussianBelief(mean, cov)


def update(belief: GaussianBelief, y: np.ndarray, model: MeasurementModel):
    """Joseph-form measurement update.

    Returns (posterior, innovation, innovation_cov). Raises UpdateRejectedError
    when the innovation covariance is singular or has condition number above
    MAX_CONDITION; the input belief is not modified in that case.
    """
    y = np.asarray(y, dtype=float)
    m = belief.mean
    p = belief.cov
    predicted = model.predict(m)
    if predicted.shape != y.shape:
        raise ValueError("measurement length does not match model prediction")
    jac = model.jacobian(m)
    if jac.shape != (y.size, m.size):
        raise ValueError("jacobian shape does not match measurement/state sizes")
    noise = np.asarray(model.noise_cov, dtype=float)

    innovation = y - predicted
    s = _symmetrize(jac @ p @ jac.T + noise)
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > MAX_CONDITION:
        raise UpdateRejectedError("innovation covariance ill-conditioned")
    try:
        factor = cho_factor(s, lower=True)
    except LinAlgError as exc:
        raise UpdateRejectedError("innovation covariance not positive definite") from exc
    # K = P H^T S^-1 via the SPD factorization of S
    gain = cho_solve(factor, jac @ p).T
    mean = m + gain @ innovation
    i_kh = np.eye(m.size) - gain @ jac
    cov = _symmetrize(i_kh @ p @ i_kh.T + gain @ noise @ gain.T)
    return GaussianBelief(mean, cov), innovation, s


def renormalize_quaternion(belief: GaussianBelief, layout: StateLayout) -> GaussianBelief:
    """Normalize (and sign-canonicalize) the quaternion entries of the mean.

    The covariance is intentionally left untouched.
    """
    mean = belief.mean.copy()
    mean[layout.quaternion] = rotation.normalize(mean[layout.quaternion])
    return GaussianBelief(mean, belief.cov)
