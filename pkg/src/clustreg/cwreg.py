"""Clusterwise linear regression with component-shared slopes.

Each response vector follows ``y | x, z=k ~ N(gamma_k + B x, Sigma_k)``: the
intercepts and covariances vary by component, the slope matrix ``B`` does
not. ``B`` may be restricted so that each response uses its own subset of the
regressors (seemingly unrelated regressions with mixture errors).

Estimation is ECM: each cycle updates ``B`` by weighted generalized least
squares holding the intercepts and covariances fixed, then the intercepts,
then the covariances. Every conditional step is closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._em import BlockFit, EMControl, MixtureEM, check_full_rank
from .covariance import CovParam, component_logpdf, is_positive_definite
from .errors import ValidationError

SHARED_B = "SHARED_B"
SUR = "SUR"


@dataclass
class CwRegParams:
    """Parameters of a shared-slope mixture of regressions.

    ``slopes`` is ``(L_g, p)`` over the regressor columns; in SUR mode the
    entries outside ``mask`` are structural zeros. ``regressors`` records the
    dataset column indices the slopes refer to (empty when unknown).
    """

    weights: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray
    covariances: np.ndarray
    param: CovParam = CovParam.FULL_VARYING
    mask: np.ndarray | None = None
    regressors: tuple = field(default=())

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.intercepts = np.atleast_2d(np.asarray(self.intercepts, dtype=float))
        K, d = self.intercepts.shape
        self.slopes = np.asarray(self.slopes, dtype=float).reshape(d, -1)
        self.covariances = np.asarray(self.covariances, dtype=float)
        self.param = CovParam.parse(self.param)
        if self.mask is None:
            self.mask = np.ones(self.slopes.shape, bool)
        self.mask = np.asarray(self.mask, bool).reshape(self.slopes.shape)
        self.regressors = tuple(int(j) for j in self.regressors)
        if self.weights.shape != (K,) or self.covariances.shape != (K, d, d):
            raise ValidationError("inconsistent mixture-regression parameter shapes")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValidationError("mixture weights must be positive and sum to one")
        if self.regressors and len(self.regressors) != self.slopes.shape[1]:
            raise ValidationError("regressor indices do not match the slope matrix")
        if np.any(self.slopes[~self.mask] != 0):
            raise ValidationError("slopes outside the regressor mask must be zero")

    @property
    def K(self) -> int:
        return self.intercepts.shape[0]

    @property
    def dim(self) -> int:
        return self.intercepts.shape[1]

    @property
    def mode(self) -> str:
        return SHARED_B if self.mask.all() else SUR

    def regressor_sets(self):
        """Per-response tuples of regressor positions (columns of ``slopes``)."""
        return tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in self.mask)

    def check_positive_definite(self):
        for k, cov in enumerate(self.covariances):
            if not is_positive_definite(cov):
                raise ValidationError(f"covariance of component {k} is not positive definite")

    def to_dict(self) -> dict:
        return {
            "param": self.param.value,
            "mode": self.mode,
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
            "slopes": self.slopes.tolist(),
            "covariances": self.covariances.tolist(),
            "regressors": list(self.regressors),
            "regressor_sets": [list(s) for s in self.regressor_sets()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CwRegParams":
        slopes = np.asarray(d["slopes"], dtype=float)
        K = len(d["weights"])
        dim = np.asarray(d["intercepts"]).reshape(K, -1).shape[1]
        slopes = slopes.reshape(dim, -1)
        mask = None
        if "regressor_sets" in d:
            mask = np.zeros(slopes.shape, bool)
            for l, s in enumerate(d["regressor_sets"]):
                mask[l, list(s)] = True
        return cls(
            weights=d["weights"],
            intercepts=d["intercepts"],
            slopes=slopes,
            covariances=d["covariances"],
            param=d.get("param", "FULL_VARYING"),
            mask=mask,
            regressors=tuple(d.get("regressors", ())),
        )


def count_params_cwreg(L_g: int, p: int, K: int, param=CovParam.FULL_VARYING, mode=SHARED_B, regressor_sets=None) -> int:
    """``(K-1) + K L_g + slopes + covariance`` parameters.

    In SUR mode pass ``regressor_sets``; the slope count is then
    ``sum(len(s) for s in regressor_sets)``.
    """
    if L_g < 1 or K < 1 or p < 0:
        raise ValidationError("invalid dimensions")
    if mode == SUR:
        if regressor_sets is None:
            raise ValidationError("SUR mode needs the per-response regressor sets")
        slopes = sum(len(s) for s in regressor_sets)
    else:
        slopes = L_g * p
    return (K - 1) + K * L_g + slopes + CovParam.parse(param).count(L_g, K)


def _mask_from_sets(d: int, p: int, regressor_sets) -> np.ndarray:
    if len(regressor_sets) != d:
        raise ValidationError(f"need one regressor set per response ({d}), got {len(regressor_sets)}")
    mask = np.zeros((d, p), bool)
    for l, s in enumerate(regressor_sets):
        s = list(s)
        if any(j < 0 or j >= p for j in s):
            raise ValidationError(f"regressor set {s} out of range for {p} regressors")
        mask[l, s] = True
    return mask


def cwreg_logpdf(params: CwRegParams, Y, X) -> np.ndarray:
    """Per-observation conditional log-density ``log f(y_i | x_i)``."""
    Y = np.asarray(Y, dtype=float).reshape(-1, params.dim)
    X = np.asarray(X, dtype=float).reshape(Y.shape[0], -1)
    base = Y - X @ params.slopes.T if X.shape[1] else Y
    resid = base[None, :, :] - params.intercepts[:, None, :]
    logp = component_logpdf(resid, params.covariances) + np.log(params.weights)
    return logsumexp(logp, axis=1)


def fit_cwreg(
    Y,
    X,
    K: int,
    param=CovParam.FULL_VARYING,
    regressor_sets=None,
    ctrl: EMControl | None = None,
    regressors=(),
) -> BlockFit:
    """Fit a ``K``-component shared-slope mixture of Gaussian regressions.

    Parameters
    ----------
    Y : (n, L_g) array
        Responses (the block's own variables).
    X : (n, p) array
        Regressors (variables of preceding blocks); ``p`` may be zero, in which
        case the fit is an ordinary Gaussian mixture.
    K : int
    param : CovParam or str
    regressor_sets : sequence of sequences, optional
        SUR mode: for each response, the positions (columns of ``X``) of its
        regressors. ``None`` means every response uses every column.
    ctrl : EMControl, optional
    regressors : tuple of int
        Dataset column indices of ``X``, stored in the parameters.

    Raises
    ------
    RankDeficientError
        ``[1, X]`` is not of full column rank.
    ValidationError
        too few observations for the number of parameters.
    DegenerateFitError
        all starts collapsed.
    """
    ctrl = ctrl or EMControl()
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = Y.shape
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    p = X.shape[1]
    param = CovParam.parse(param)
    if regressor_sets is None:
        mask = np.ones((d, p), bool)
        mode = SHARED_B
    else:
        mask = _mask_from_sets(d, p, regressor_sets)
        mode = SUR
    check_full_rank(X)
    npar = count_params_cwreg(d, p, K, param, mode, regressor_sets)
    if n <= npar:
        raise ValidationError(f"n={n} observations cannot support {npar} parameters")
    em = MixtureEM(Y, X, mask, K, param, ctrl)
    res = em.run()
    st = res.state
    params = CwRegParams(
        weights=st.weights / st.weights.sum(),
        intercepts=st.intercepts,
        slopes=np.where(mask, st.coef, 0.0),
        covariances=st.covs,
        param=param,
        mask=mask,
        regressors=tuple(regressors),
    )
    return BlockFit(
        params=params,
        loglik=res.loglik,
        npar=npar,
        posteriors=res.resp,
        labels=np.argmax(res.resp, axis=1),
        n_iter=res.n_iter,
        converged=res.converged,
        trace=tuple(res.trace),
        failed_starts=res.failed_starts,
        kind="cwreg",
    )
