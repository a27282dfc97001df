"""Multivariate Gaussian linear regression for uninformative variables.

Also covers the independent block: a regression with no regressors is a
single multivariate Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._em import BlockFit, check_full_rank, masked_ols, solve_slopes
from .covariance import CovForm, min_eigenvalues, project_form
from .errors import DegenerateFitError, ValidationError


@dataclass
class LinRegParams:
    """Intercept, coefficient matrix and error covariance of a Gaussian regression."""

    intercept: np.ndarray
    coef: np.ndarray
    covariance: np.ndarray
    form: CovForm = CovForm.FULL
    mask: np.ndarray | None = None
    regressors: tuple = field(default=())

    def __post_init__(self):
        self.intercept = np.atleast_1d(np.asarray(self.intercept, dtype=float))
        d = self.intercept.shape[0]
        self.coef = np.asarray(self.coef, dtype=float).reshape(d, -1)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(d, d)
        self.form = CovForm.parse(self.form)
        if self.mask is None:
            self.mask = np.ones(self.coef.shape, bool)
        self.mask = np.asarray(self.mask, bool).reshape(self.coef.shape)
        self.regressors = tuple(int(j) for j in self.regressors)
        if self.regressors and len(self.regressors) != self.coef.shape[1]:
            raise ValidationError("regressor indices do not match the coefficient matrix")

    @property
    def dim(self) -> int:
        return self.intercept.shape[0]

    def regressor_sets(self):
        return tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in self.mask)

    def to_dict(self) -> dict:
        return {
            "form": self.form.value,
            "intercept": self.intercept.tolist(),
            "coef": self.coef.tolist(),
            "covariance": self.covariance.tolist(),
            "regressors": list(self.regressors),
            "regressor_sets": [list(s) for s in self.regressor_sets()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinRegParams":
        intercept = np.atleast_1d(np.asarray(d["intercept"], dtype=float))
        coef = np.asarray(d.get("coef", []), dtype=float).reshape(intercept.shape[0], -1)
        mask = None
        if "regressor_sets" in d:
            mask = np.zeros(coef.shape, bool)
            for l, s in enumerate(d["regressor_sets"]):
                mask[l, list(s)] = True
        return cls(
            intercept=intercept,
            coef=coef,
            covariance=d["covariance"],
            form=d.get("form", "FULL"),
            mask=mask,
            regressors=tuple(d.get("regressors", ())),
        )


def count_params_linreg(L_U: int, p: int, form=CovForm.FULL, regressor_sets=None) -> int:
    """``L_U + L_U p + cov(form)``; with ``regressor_sets`` the slope count is their total size."""
    if L_U < 0 or p < 0:
        raise ValidationError("dimensions must be non-negative")
    if L_U == 0:
        return 0
    slopes = L_U * p if regressor_sets is None else sum(len(s) for s in regressor_sets)
    return L_U + slopes + CovForm.parse(form).count(L_U)


def gaussian_loglik(resid: np.ndarray, cov: np.ndarray) -> np.ndarray:
    n, d = resid.shape
    chol = linalg.cholesky(cov, lower=True)
    z = linalg.solve_triangular(chol, resid.T, lower=True)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * ((z * z).sum(axis=0) + logdet + d * np.log(2.0 * np.pi))


def linreg_logpdf(params: LinRegParams, Y, X) -> np.ndarray:
    Y = np.asarray(Y, dtype=float).reshape(-1, params.dim)
    X = np.asarray(X, dtype=float).reshape(Y.shape[0], -1)
    mean = params.intercept + (X @ params.coef.T if X.shape[1] else 0.0)
    return gaussian_loglik(Y - mean, params.covariance)


def fit_linreg(
    Y,
    X=None,
    form=CovForm.FULL,
    regressor_sets=None,
    tol: float = 1e-10,
    max_iter: int = 1000,
    floor_scale: float = 1e-8,
    regressors=(),
) -> BlockFit:
    """Maximum-likelihood Gaussian regression of ``Y`` on ``X``.

    With a common regressor set the estimates are closed form (QR least
    squares, then the constrained ML covariance of the residuals). When each
    response has its own regressors and the covariance is ``FULL``, GLS and
    covariance updates alternate until the log-likelihood gain drops below
    ``tol``; for ``DIAGONAL``/``SPHERICAL`` equation-wise least squares is
    already the ML solution.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = Y.shape
    if d == 0:
        raise ValidationError("empty response block; skip this factor instead")
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    p = X.shape[1]
    form = CovForm.parse(form)
    check_full_rank(X)

    if regressor_sets is None:
        mask = np.ones((d, p), bool)
    else:
        if len(regressor_sets) != d:
            raise ValidationError("need one regressor set per response")
        mask = np.zeros((d, p), bool)
        for l, s in enumerate(regressor_sets):
            mask[l, list(s)] = True

    Z = np.column_stack([np.ones(n), X])
    zmask = np.column_stack([np.ones(d, bool), mask])
    floor = floor_scale * Y.var(axis=0).mean()

    def covariance(coef):
        resid = Y - Z @ coef.T
        return resid, project_form(resid.T @ resid / n, form)

    coef = masked_ols(Y, Z, zmask)
    resid, cov = covariance(coef)
    n_iter = 0
    trace = []
    if not zmask.all() and form is CovForm.FULL and d > 1:
        ll = _loglik_or_raise(resid, cov, floor)
        trace.append(ll)
        while n_iter < max_iter:
            prec = np.linalg.inv(cov)[None]
            coef = solve_slopes(Y, Z, zmask, np.ones((n, 1)), np.zeros((1, d)), prec)
            resid, cov = covariance(coef)
            n_iter += 1
            ll_new = _loglik_or_raise(resid, cov, floor)
            trace.append(ll_new)
            if ll_new - ll < tol:
                break
            ll = ll_new
    ll = _loglik_or_raise(resid, cov, floor)
    if not trace:
        trace.append(ll)

    params = LinRegParams(
        intercept=coef[:, 0],
        coef=np.where(mask, coef[:, 1:], 0.0),
        covariance=cov,
        form=form,
        mask=mask,
        regressors=tuple(regressors),
    )
    return BlockFit(
        params=params,
        loglik=ll,
        npar=count_params_linreg(d, p, form, regressor_sets if regressor_sets is not None else None),
        posteriors=np.ones((n, 1)),
        labels=np.zeros(n, dtype=int),
        n_iter=n_iter,
        converged=True,
        trace=tuple(trace),
        kind="linreg",
    )


def _loglik_or_raise(resid, cov, floor) -> float:
    lam = float(min_eigenvalues(cov[None], CovForm.FULL)[0])
    if not lam >= floor or lam <= 0:
        raise DegenerateFitError(
            f"regression error covariance is degenerate (smallest eigenvalue {lam:.3g})"
        )
    return float(gaussian_loglik(resid, cov).sum())
