"""Gaussian mixture models with parsimonious covariance structures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._em import BlockFit, EMControl, MixtureEM
from .covariance import CovParam, component_logpdf, is_positive_definite
from .errors import ValidationError

__all__ = [
    "BlockFit",
    "CovParam",
    "EMControl",
    "GmmParams",
    "count_params_gmm",
    "fit_gmm",
    "gmm_logpdf",
]


@dataclass
class GmmParams:
    """Weights, means and covariances of a ``K``-component mixture."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    param: CovParam = CovParam.FULL_VARYING

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float)
        self.param = CovParam.parse(self.param)
        K, d = self.means.shape
        if self.weights.shape != (K,) or self.covariances.shape != (K, d, d):
            raise ValidationError("inconsistent mixture parameter shapes")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValidationError("mixture weights must be positive and sum to one")

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def check_positive_definite(self):
        for k, cov in enumerate(self.covariances):
            if not is_positive_definite(cov):
                raise ValidationError(f"covariance of component {k} is not positive definite")

    def to_dict(self) -> dict:
        return {
            "param": self.param.value,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmParams":
        return cls(
            weights=d["weights"],
            means=d["means"],
            covariances=d["covariances"],
            param=d.get("param", "FULL_VARYING"),
        )


def count_params_gmm(L: int, K: int, param=CovParam.FULL_VARYING) -> int:
    """``(K - 1) + K L`` plus the covariance parameters of ``param``.

    >>> count_params_gmm(3, 1, CovParam.FULL_VARYING)
    9
    >>> count_params_gmm(3, 2, CovParam.SPHERICAL_EQUAL)
    8
    """
    if L < 1 or K < 1:
        raise ValidationError("L and K must be >= 1")
    return (K - 1) + K * L + CovParam.parse(param).count(L, K)


def gmm_logpdf(params: GmmParams, X) -> np.ndarray:
    """Per-observation log-density of the mixture."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    resid = X[None, :, :] - params.means[:, None, :]
    logp = component_logpdf(resid, params.covariances) + np.log(params.weights)
    return logsumexp(logp, axis=1)


def fit_gmm(X, K: int, param=CovParam.FULL_VARYING, ctrl: EMControl | None = None) -> BlockFit:
    """Fit a ``K``-component Gaussian mixture by EM.

    Parameters
    ----------
    X : (n, L) array
        The variables of the block (already restricted to its columns).
    K : int
        Number of components.
    param : CovParam or str
        Covariance parameterization (``"VVV"`` style aliases accepted).
    ctrl : EMControl, optional

    Returns
    -------
    BlockFit
        with :class:`GmmParams`, the best log-likelihood over all starts and
        the final E-step responsibilities.

    Raises
    ------
    ValidationError
        ``K`` larger than the sample size.
    DegenerateFitError
        every start collapsed onto the eigenvalue floor.
    """
    ctrl = ctrl or EMControl()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    param = CovParam.parse(param)
    em = MixtureEM(X, None, None, K, param, ctrl)
    res = em.run()
    st = res.state
    params = GmmParams(st.weights / st.weights.sum(), st.intercepts, st.covs, param)
    return BlockFit(
        params=params,
        loglik=res.loglik,
        npar=count_params_gmm(X.shape[1], K, param),
        posteriors=res.resp,
        labels=np.argmax(res.resp, axis=1),
        n_iter=res.n_iter,
        converged=res.converged,
        trace=tuple(res.trace),
        failed_starts=res.failed_starts,
        kind="gmm",
    )
