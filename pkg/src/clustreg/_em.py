"""Shared EM/ECM engine for Gaussian mixtures of shared-slope regressions.

The model fitted here is::

    y_i | z_i = k  ~  N(gamma_k + B x_i, Sigma_k)

with ``B`` common to all components and optionally constrained to zero
outside a boolean ``mask`` (per-response regressor sets). A plain Gaussian
mixture is the special case with no regressors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import linalg
from scipy.cluster.vq import kmeans2

from .covariance import (
    CovParam,
    clip_eigenvalues,
    component_logpdf,
    log_normalize,
    min_eigenvalues,
    update_covariances,
)
from .errors import DegenerateFitError, RankDeficientError, ValidationError


@dataclass(frozen=True)
class EMControl:
    """Settings for every EM/ECM fit.

    ``n_starts`` random starts (nearest-of-K-random-observations partitions)
    are tried in addition to one k-means seeding (start 0) when
    ``kmeans_start`` is true. The best final log-likelihood wins; ties go to
    the lowest start index.
    """

    tol: float = 1e-6
    max_iter: int = 500
    n_starts: int = 10
    seed: int = 0
    floor_scale: float = 1e-8
    kmeans_start: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.n_starts < 0 or (self.n_starts == 0 and not self.kmeans_start):
            raise ValidationError("at least one EM start is required")

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "max_iter": self.max_iter,
            "n_starts": self.n_starts,
            "seed": self.seed,
            "floor_scale": self.floor_scale,
            "kmeans_start": self.kmeans_start,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EMControl":
        return cls(**d)


@dataclass
class BlockFit:
    """Result of fitting one factor of the joint likelihood."""

    params: Any
    loglik: float
    npar: int
    posteriors: np.ndarray
    labels: np.ndarray
    n_iter: int = 0
    converged: bool = True
    trace: tuple = ()
    failed_starts: int = 0
    kind: str = ""

    def __post_init__(self):
        self.posteriors.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def K(self) -> int:
        return self.posteriors.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params.to_dict(),
            "loglik": self.loglik,
            "npar": self.npar,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "labels": self.labels.tolist(),
        }


@dataclass
class MixtureState:
    weights: np.ndarray  # (K,)
    intercepts: np.ndarray  # (K, d)
    coef: np.ndarray  # (d, p)
    covs: np.ndarray  # (K, d, d)


@dataclass
class EMResult:
    state: MixtureState
    loglik: float
    resp: np.ndarray
    trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    failed_starts: int = 0


def check_full_rank(X: np.ndarray, names=None, rtol: float = 1e-10) -> None:
    """Raise :class:`RankDeficientError` if ``[1, X]`` lacks full column rank."""
    n, p = X.shape
    if p == 0:
        return
    Z = np.column_stack([np.ones(n), X])
    if n < p + 1:
        raise RankDeficientError(f"{n} observations for {p + 1} regression coefficients")
    _, R, piv = linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > rtol * diag[0]).sum())
    if rank < p + 1:
        # pivot order puts the dependent columns last; column 0 is the intercept
        dependent = sorted(int(j) - 1 for j in piv[rank:])
        if names is not None:
            dependent = [names[j] if j >= 0 else "intercept" for j in dependent]
        raise RankDeficientError("regressor matrix is rank deficient", dependent)


def masked_ols(Y: np.ndarray, Z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Equation-by-equation least squares of ``Y`` on the masked columns of ``Z``.

    Returns a ``(d, q)`` coefficient matrix with zeros where ``mask`` is false.
    """
    d = Y.shape[1]
    coef = np.zeros((d, Z.shape[1]))
    if mask.all():
        q, r = np.linalg.qr(Z)
        coef[:] = linalg.solve_triangular(r, q.T @ Y).T
        return coef
    for l in range(d):
        cols = np.flatnonzero(mask[l])
        if cols.size == 0:
            continue
        q, r = np.linalg.qr(Z[:, cols])
        coef[l, cols] = linalg.solve_triangular(r, q.T @ Y[:, l])
    return coef


def solve_slopes(Y, X, mask, resp, intercepts, precisions) -> np.ndarray:
    """Conditional maximizer of the expected complete log-likelihood in ``B``.

    Solves ``sum_k P_k B Xk = sum_k P_k Ek`` over the free entries of ``B``,
    where ``Xk = sum_i tau_ik x_i x_i'``, ``Ek = sum_i tau_ik (y_i - gamma_k) x_i'``
    and ``P_k`` is the k-th precision matrix.
    """
    d, p = mask.shape
    Xw = resp.T[:, :, None] * X[None]  # (K, n, p)
    Xk = np.matmul(Xw.transpose(0, 2, 1), X)  # (K, p, p)
    Ek = np.matmul(Y.T[None], Xw) - intercepts[:, :, None] * Xw.sum(axis=1)[:, None, :]
    # sum_k kron(Xk, P_k) in column-major vec order: index (a, i) -> a * d + i
    A = np.einsum("kab,kij->aibj", Xk, precisions).reshape(d * p, d * p)
    rhs = np.matmul(precisions, Ek).sum(axis=0).ravel(order="F")
    free = mask.ravel(order="F")
    coef = np.zeros(d * p)
    coef[free] = linalg.solve(A[np.ix_(free, free)], rhs[free], assume_a="pos")
    return coef.reshape((d, p), order="F")


class _Aborted(Exception):
    def __init__(self, component):
        self.component = component


class MixtureEM:
    """One EM/ECM problem: data, structure and control, run over several starts."""

    def __init__(self, Y, X, mask, K, param: CovParam, ctrl: EMControl):
        self.Y = np.asarray(Y, dtype=float)
        n, d = self.Y.shape
        self.X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float)
        self.p = self.X.shape[1]
        self.mask = np.ones((d, self.p), bool) if mask is None else np.asarray(mask, bool)
        if self.mask.shape != (d, self.p):
            raise ValidationError(f"mask shape {self.mask.shape} != {(d, self.p)}")
        if K < 1:
            raise ValidationError("K must be >= 1")
        if K > n:
            raise ValidationError(f"K={K} exceeds the number of observations n={n}")
        self.n, self.d, self.K = n, d, K
        self.param = CovParam.parse(param)
        self.ctrl = ctrl
        var = self.Y.var(axis=0).mean()
        self.floor = ctrl.floor_scale * var
        self.min_nk = max(1e-8 * n, 1e-300)

    # -- single steps -------------------------------------------------------

    def fitted_base(self, coef):
        if self.p == 0:
            return self.Y
        return self.Y - self.X @ coef.T

    def estep(self, state: MixtureState):
        base = self.fitted_base(state.coef)
        resid = base[None, :, :] - state.intercepts[:, None, :]
        with np.errstate(divide="ignore"):
            logp = component_logpdf(resid, state.covs) + np.log(state.weights)
        ll_i, resp = log_normalize(logp)
        return float(ll_i.sum()), resp

    def mstep(self, resp, state: MixtureState):
        """Returns ``(new_state, floored_component_or_None)``."""
        nk = resp.sum(axis=0)
        small = np.flatnonzero(nk < self.min_nk)
        if small.size:
            raise _Aborted(int(small[0]))
        weights = nk / nk.sum()
        coef = state.coef
        if self.p and self.mask.any():
            precisions = np.linalg.inv(state.covs)
            coef = solve_slopes(self.Y, self.X, self.mask, resp, state.intercepts, precisions)
        base = self.fitted_base(coef)
        intercepts = (resp.T @ base) / nk[:, None]
        covs, floored = self._covariances(base, intercepts, resp, nk)
        return MixtureState(weights, intercepts, coef, covs), floored

    def _covariances(self, base, intercepts, resp, nk):
        K = intercepts.shape[0]
        scatter = np.empty((K, self.d, self.d))
        for k in range(K):
            r = base - intercepts[k]
            scatter[k] = (r * resp[:, k : k + 1]).T @ r
        covs = update_covariances(scatter, nk, self.param)
        mins = min_eigenvalues(covs, self.param.form)
        bad = np.flatnonzero(~(mins >= self.floor))
        if bad.size:
            if not np.all(np.isfinite(covs)):
                raise _Aborted(int(bad[0]))
            covs = clip_eigenvalues(covs, self.param.form, self.floor)
            return covs, int(bad[0])
        return covs, None

    def initial_state(self, resp) -> MixtureState:
        nk = resp.sum(axis=0)
        if np.any(nk < self.min_nk):
            raise _Aborted(int(np.argmin(nk)))
        coef = np.zeros((self.d, self.p))
        if self.p:
            Z = np.column_stack([np.ones(self.n), self.X])
            zmask = np.column_stack([np.ones(self.d, bool), self.mask])
            coef = masked_ols(self.Y, Z, zmask)[:, 1:]
        base = self.fitted_base(coef)
        intercepts = (resp.T @ base) / nk[:, None]
        covs, floored = self._covariances(base, intercepts, resp, nk)
        return MixtureState(nk / nk.sum(), intercepts, coef, covs), floored

    # -- starts -------------------------------------------------------------

    def start_responsibilities(self):
        """Yield initial responsibility matrices, k-means seeding first.

        Random starts draw ``K`` distinct observations as seeds and assign
        every observation to its nearest seed (standardized residual space).
        """
        K, n = self.K, self.n
        if K == 1:
            yield np.ones((n, 1))
            return
        ss = np.random.SeedSequence([self.ctrl.seed, K, self.d, self.p])
        streams = [np.random.default_rng(s) for s in ss.spawn(self.ctrl.n_starts + 1)]
        base = self._standardized_residuals()
        if self.ctrl.kmeans_start:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _, labels = kmeans2(base, K, minit="++", seed=streams[0])
            yield self._one_hot(labels, streams[0])
        for rng in streams[1:]:
            seeds = base[rng.choice(n, size=K, replace=False)]
            dist = ((base[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
            yield self._one_hot(np.argmin(dist, axis=1), rng)

    def _standardized_residuals(self):
        base = self.Y
        if self.p:
            Z = np.column_stack([np.ones(self.n), self.X])
            zmask = np.column_stack([np.ones(self.d, bool), self.mask])
            base = self.Y - Z @ masked_ols(self.Y, Z, zmask).T
        scale = base.std(axis=0)
        scale[scale == 0] = 1.0
        return base / scale

    def _one_hot(self, labels, rng):
        if np.bincount(labels, minlength=self.K).min() == 0:
            labels = rng.permutation(np.arange(self.n) % self.K)
        return np.eye(self.K)[labels]

    def run_start(self, resp0) -> EMResult:
        ctrl = self.ctrl
        state, floored = self.initial_state(resp0)
        if self.K == 1 and self.mask.all():
            # closed form: OLS slopes, ML covariance; no iterations needed
            if floored is not None:
                raise _Aborted(0)
            ll, resp = self.estep(state)
            return EMResult(state, ll, resp, [ll], 0, True)
        trace = []
        strike = None
        n_iter = 0
        converged = False
        while True:
            try:
                ll, resp = self.estep(state)
            except np.linalg.LinAlgError:
                raise _Aborted(None)
            if not np.isfinite(ll):
                raise _Aborted(None)
            trace.append(ll)
            if len(trace) > 1 and trace[-1] - trace[-2] < ctrl.tol:
                converged = True
                break
            if n_iter >= ctrl.max_iter:
                break
            state, floored = self.mstep(resp, state)
            n_iter += 1
            if floored is not None:
                if strike is not None:
                    raise _Aborted(floored)
                strike = floored
            else:
                strike = None
        return EMResult(state, ll, resp, trace, n_iter, converged)

    def run(self) -> EMResult:
        best = None
        failed = 0
        last_component = None
        for resp0 in self.start_responsibilities():
            try:
                res = self.run_start(resp0)
            except _Aborted as exc:
                failed += 1
                last_component = exc.component
                continue
            if best is None or res.loglik > best.loglik:
                best = res
        if best is None:
            raise DegenerateFitError(
                f"all {failed} EM starts degenerated (K={self.K}, {self.param.value})",
                component=last_component,
            )
        best.failed_starts = failed
        return best
