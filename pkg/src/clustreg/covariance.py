"""Covariance parameterizations and Gaussian log-densities.

Six of the spectral-decomposition constraints are supported. In the usual
volume/shape/orientation notation they are::

    SPHERICAL_EQUAL    EII   lambda I
    SPHERICAL_VARYING  VII   lambda_k I
    DIAGONAL_EQUAL     EEI   lambda A          (A diagonal)
    DIAGONAL_VARYING   VVI   lambda_k A_k
    FULL_EQUAL         EEE   lambda D A D'
    FULL_VARYING       VVV   lambda_k D_k A_k D_k'

All six have closed-form M-steps given the responsibility-weighted scatter
matrices of the components.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ValidationError


class CovForm(str, Enum):
    """Form of a single covariance matrix (used for the uninformative block)."""

    SPHERICAL = "SPHERICAL"
    DIAGONAL = "DIAGONAL"
    FULL = "FULL"

    @classmethod
    def parse(cls, value) -> "CovForm":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValidationError(f"unknown covariance form {value!r}") from None

    def count(self, d: int) -> int:
        if d == 0:
            return 0
        if self is CovForm.SPHERICAL:
            return 1
        if self is CovForm.DIAGONAL:
            return d
        return d * (d + 1) // 2


_ALIASES = {
    "EII": "SPHERICAL_EQUAL",
    "VII": "SPHERICAL_VARYING",
    "EEI": "DIAGONAL_EQUAL",
    "VVI": "DIAGONAL_VARYING",
    "EEE": "FULL_EQUAL",
    "VVV": "FULL_VARYING",
}


class CovParam(str, Enum):
    """Covariance constraint across the components of one mixture."""

    SPHERICAL_EQUAL = "SPHERICAL_EQUAL"
    SPHERICAL_VARYING = "SPHERICAL_VARYING"
    DIAGONAL_EQUAL = "DIAGONAL_EQUAL"
    DIAGONAL_VARYING = "DIAGONAL_VARYING"
    FULL_EQUAL = "FULL_EQUAL"
    FULL_VARYING = "FULL_VARYING"

    @classmethod
    def parse(cls, value) -> "CovParam":
        """Accept an enum member, its name, or the three-letter alias."""
        if isinstance(value, cls):
            return value
        key = str(value).upper()
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown covariance parameterization {value!r}") from None

    @property
    def alias(self) -> str:
        return {v: k for k, v in _ALIASES.items()}[self.value]

    @property
    def form(self) -> CovForm:
        return CovForm(self.value.split("_")[0])

    @property
    def equal(self) -> bool:
        return self.value.endswith("_EQUAL")

    def count(self, d: int, K: int) -> int:
        """Number of free covariance parameters for ``K`` components in ``d`` dims."""
        per = self.form.count(d)
        return per if self.equal else K * per


# Ordering used by the genetic algorithm's parameterization genes (1-based there).
COV_PARAMS = tuple(CovParam)
COV_FORMS = tuple(CovForm)


def project_form(scatter: np.ndarray, form: CovForm) -> np.ndarray:
    """Constrained ML covariance from an (already normalized) scatter matrix."""
    d = scatter.shape[-1]
    if form is CovForm.FULL:
        out = 0.5 * (scatter + np.swapaxes(scatter, -1, -2))
    elif form is CovForm.DIAGONAL:
        out = np.zeros_like(scatter)
        idx = np.arange(d)
        out[..., idx, idx] = scatter[..., idx, idx]
    else:
        tr = np.trace(scatter, axis1=-2, axis2=-1) / d
        out = tr[..., None, None] * np.eye(d)
    return out


def update_covariances(scatter: np.ndarray, nk: np.ndarray, param: CovParam) -> np.ndarray:
    """M-step covariance update.

    Parameters
    ----------
    scatter : (K, d, d) array
        ``W_k = sum_i tau_ik r_ik r_ik'`` with component-specific residuals.
    nk : (K,) array
        Effective component sizes ``sum_i tau_ik``.
    param : CovParam

    Returns
    -------
    (K, d, d) array of constrained covariance matrices.
    """
    K = scatter.shape[0]
    if param.equal:
        pooled = scatter.sum(axis=0) / nk.sum()
        cov = project_form(pooled, param.form)
        return np.broadcast_to(cov, (K,) + cov.shape).copy()
    return project_form(scatter / nk[:, None, None], param.form)


def min_eigenvalues(covs: np.ndarray, form: CovForm) -> np.ndarray:
    if form is CovForm.FULL:
        return np.linalg.eigvalsh(covs)[..., 0]
    return np.diagonal(covs, axis1=-2, axis2=-1).min(axis=-1)


def clip_eigenvalues(covs: np.ndarray, form: CovForm, floor: float) -> np.ndarray:
    """Raise every eigenvalue below ``floor`` up to it, preserving the structure."""
    if form is CovForm.FULL:
        w, v = np.linalg.eigh(covs)
        w = np.maximum(w, floor)
        out = np.einsum("...ij,...j,...kj->...ik", v, w, v)
        return 0.5 * (out + np.swapaxes(out, -1, -2))
    out = covs.copy()
    d = covs.shape[-1]
    idx = np.arange(d)
    out[..., idx, idx] = np.maximum(out[..., idx, idx], floor)
    return out


def component_logpdf(resid: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Gaussian log-density of component-specific residuals.

    Parameters
    ----------
    resid : (K, n, d) array
    covs : (K, d, d) array

    Returns
    -------
    (n, K) array of ``log phi_d(r_ik; 0, Sigma_k)``.

    Raises ``numpy.linalg.LinAlgError`` if a covariance is not positive definite.
    """
    K, n, d = resid.shape
    chol = np.linalg.cholesky(covs)
    # batched inverse of the triangular factor; d is small
    chol_inv = np.linalg.inv(chol)
    out = np.empty((n, K))
    const = d * np.log(2.0 * np.pi)
    for k in range(K):
        z = resid[k] @ chol_inv[k].T
        logdet = 2.0 * np.log(np.diag(chol[k])).sum()
        out[:, k] = -0.5 * ((z * z).sum(axis=1) + logdet + const)
    return out


def log_normalize(logp: np.ndarray):
    """Row-wise log-sum-exp and the normalized probabilities."""
    m = logp.max(axis=1, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    p = np.exp(logp - m)
    s = p.sum(axis=1, keepdims=True)
    p /= s
    return (np.log(s) + m)[:, 0], p


def is_positive_definite(cov: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return False
    return bool(np.allclose(cov, np.swapaxes(cov, -1, -2)))
