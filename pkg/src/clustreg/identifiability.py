"""Necessary condition for identifiability of one cluster structure.

A block ``y | x ~ sum_t pi_t N(gamma_t + B x, Sigma_t)`` is not identifiable
within the model class if its variables split into ``(a, b)`` and its
``K = K_a K_b`` components into a grid ``t = (k, k')`` such that

* ``pi_t = pi^a_k pi^b_k'``,
* ``y_a`` only depends on ``k``: ``gamma_t[a] = gamma^a_k``, ``Sigma_t[aa] = Sigma^a_k``,
* ``y_b | y_a`` only depends on ``k'``, with one regression matrix ``B_ba``
  shared by every component: ``Sigma_t[ba] = B_ba Sigma_t[aa]``,
  ``gamma_t[b] - B_ba gamma_t[a] = gamma^b_k'`` and
  ``Sigma_t[bb] - B_ba Sigma_t[ab] = Sigma^b_k'``.

Then the block is the product of a mixture for ``y_a`` and a shared-slope
mixture of regressions for ``y_b`` on ``y_a``, i.e. two cluster structures
posing as one. The slope rows of ``B`` never constrain the split, since
``B[a]`` and ``B[b] - B_ba B[a]`` are free in the factorized model.

Comparisons are made on standardized parameters (each variable divided by
its mixture-averaged within-component standard deviation) with an absolute
tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ._em import BlockFit
from .covariance import CovParam
from .cwreg import CwRegParams
from .errors import BudgetExceededError, ValidationError
from .gmm import GmmParams


@dataclass
class Factorization:
    """A witness that a block is a product of two cluster structures.

    ``table[k, k']`` is the index of the original component identified with
    the pair ``(k, k')``. Parameters are in the block's original units;
    positions ``s_a``/``s_b`` index the block's own variables.
    """

    s_a: tuple
    s_b: tuple
    K_a: int
    K_b: int
    table: np.ndarray
    weights_a: np.ndarray
    intercepts_a: np.ndarray
    covariances_a: np.ndarray
    weights_b: np.ndarray
    intercepts_b: np.ndarray
    covariances_b: np.ndarray
    B_ba: np.ndarray
    slopes_a: np.ndarray
    slopes_b: np.ndarray

    def compose(self) -> CwRegParams:
        """Rebuild the block's parameters, components ordered as in the original."""
        prod = compose_product(
            self.weights_a, self.intercepts_a, self.covariances_a,
            self.weights_b, self.intercepts_b, self.covariances_b,
            self.B_ba, self.s_a, self.s_b, self.slopes_a, self.slopes_b,
        )
        order = np.empty(self.K_a * self.K_b, dtype=int)
        order[self.table.ravel()] = np.arange(order.size)
        return CwRegParams(
            prod.weights[order], prod.intercepts[order], prod.slopes,
            prod.covariances[order], prod.param,
        )


@dataclass
class Verdict:
    """Outcome of :func:`check_identifiability`.

    ``holds`` is true when no factorization was found, i.e. the necessary
    condition for identifiability is satisfied.
    """

    holds: bool
    witness: Factorization | None
    n_checked: int

    def __str__(self):
        if self.holds:
            return f"necessary condition holds ({self.n_checked} bipartitions checked)"
        w = self.witness
        a = ",".join(str(j + 1) for j in w.s_a)
        b = ",".join(str(j + 1) for j in w.s_b)
        return f"factorization found: s_a=({a}) K_a={w.K_a}, s_b=({b}) K_b={w.K_b}"


def compose_product(
    weights_a, intercepts_a, covariances_a,
    weights_b, intercepts_b, covariances_b,
    B_ba, s_a=None, s_b=None, slopes_a=None, slopes_b=None,
) -> CwRegParams:
    """Product of a mixture for ``y_a`` and a shared-slope regression of ``y_b`` on ``y_a``.

    Component ``t = k K_b + k'`` of the result has weight
    ``pi^a_k pi^b_k'``, mean ``(gamma^a_k, gamma^b_k' + B_ba gamma^a_k)`` and
    covariance ``[[S_a, S_a B'], [B S_a, S^b_k' + B S_a B']]``. ``slopes_a``
    and ``slopes_b`` are the rows of the regression on outside regressors
    (``B_bh`` for the second factor); the joint slope rows are ``slopes_a``
    and ``slopes_b + B_ba slopes_a``.
    """
    wa = np.asarray(weights_a, float)
    wb = np.asarray(weights_b, float)
    ga = np.atleast_2d(np.asarray(intercepts_a, float))
    gb = np.atleast_2d(np.asarray(intercepts_b, float))
    Sa = np.asarray(covariances_a, float)
    Sb = np.asarray(covariances_b, float)
    Ka, da = ga.shape
    Kb, db = gb.shape
    B = np.asarray(B_ba, float).reshape(db, da)
    d = da + db
    s_a = tuple(range(da)) if s_a is None else tuple(s_a)
    s_b = tuple(range(da, d)) if s_b is None else tuple(s_b)
    if sorted(s_a + s_b) != list(range(d)) or len(s_a) != da:
        raise ValidationError("s_a and s_b must split the block's positions")
    a, b = list(s_a), list(s_b)
    K = Ka * Kb
    weights = np.empty(K)
    intercepts = np.empty((K, d))
    covs = np.empty((K, d, d))
    for k in range(Ka):
        for kk in range(Kb):
            t = k * Kb + kk
            weights[t] = wa[k] * wb[kk]
            intercepts[t, a] = ga[k]
            intercepts[t, b] = gb[kk] + B @ ga[k]
            C = np.empty((d, d))
            C[np.ix_(a, a)] = Sa[k]
            C[np.ix_(b, a)] = B @ Sa[k]
            C[np.ix_(a, b)] = Sa[k] @ B.T
            C[np.ix_(b, b)] = Sb[kk] + B @ Sa[k] @ B.T
            covs[t] = 0.5 * (C + C.T)
    if slopes_a is None:
        slopes = np.zeros((d, 0))
    else:
        Ba_h = np.asarray(slopes_a, float).reshape(da, -1)
        Bb_h = np.asarray(slopes_b, float).reshape(db, Ba_h.shape[1])
        slopes = np.empty((d, Ba_h.shape[1]))
        slopes[a] = Ba_h
        slopes[b] = Bb_h + B @ Ba_h
    return CwRegParams(weights / weights.sum(), intercepts, slopes, covs, CovParam.FULL_VARYING)


def _unpack(block):
    if isinstance(block, BlockFit):
        block = block.params
    if isinstance(block, GmmParams):
        d = block.dim
        return block.weights, block.means, np.zeros((d, 0)), block.covariances
    if isinstance(block, CwRegParams):
        return block.weights, block.intercepts, block.slopes, block.covariances
    raise ValidationError("identifiability check needs Gaussian-mixture or mixture-regression parameters")


def _group(signatures, tol):
    """Cluster standardized signatures; returns (labels, representatives) or None if ambiguous."""
    reps = []
    labels = []
    for s in signatures:
        for j, r in enumerate(reps):
            if np.max(np.abs(s - r)) <= tol:
                labels.append(j)
                break
        else:
            reps.append(s)
            labels.append(len(reps) - 1)
    labels = np.array(labels)
    # every member must be within tol of every other in its group, or the grouping is ambiguous
    for j in range(len(reps)):
        members = [signatures[i] for i in np.flatnonzero(labels == j)]
        for x, y in combinations(members, 2):
            if np.max(np.abs(x - y)) > tol:
                return None
    return labels


def _divisor_pairs(K):
    return [(ka, K // ka) for ka in range(1, K + 1) if K % ka == 0]


def check_identifiability(block, tol: float = 1e-6, max_checks: int = 1_000_000) -> Verdict:
    """Search for a factorization of a fitted block into two cluster structures.

    Every ordered bipartition ``(s_a, s_b)`` of the block's variables is
    visited once; the component signatures under that split determine
    ``K_a`` and ``K_b`` directly, which covers every factorization
    ``K_a K_b = K`` (including ``K_a = 1`` or ``K_b = 1``). The first witness
    found is returned.

    Parameters
    ----------
    block : BlockFit, CwRegParams or GmmParams
    tol : float
        Absolute tolerance on standardized parameters.
    max_checks : int
        Cap on (bipartition, factorization) pairs; exceeding it raises
        :class:`BudgetExceededError` before any work is done.
    """
    weights, gammas, slopes, covs = _unpack(block)
    K, d = gammas.shape
    if K < 2 or d < 2:
        raise ValidationError("identifiability check needs K >= 2 components and >= 2 variables")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    n_pairs = (2**d - 2) * len(_divisor_pairs(K))
    if n_pairs > max_checks:
        raise BudgetExceededError(f"{n_pairs} bipartition/factorization pairs exceed the cap of {max_checks}")

    scale = np.sqrt(np.einsum("t,tii->i", weights, covs))
    z_gam = gammas / scale
    z_cov = covs / np.outer(scale, scale)
    n_checked = 0
    for da in range(1, d):
        for s_a in combinations(range(d), da):
            s_b = tuple(j for j in range(d) if j not in s_a)
            n_checked += 1
            w = _test_split(weights, z_gam, z_cov, s_a, s_b, tol)
            if w is None:
                continue
            return Verdict(False, _witness(w, s_a, s_b, weights, gammas, slopes, covs), n_checked)
    return Verdict(True, None, n_checked)


def _test_split(weights, z_gam, z_cov, s_a, s_b, tol):
    a, b = list(s_a), list(s_b)
    K = len(weights)
    Bs = [z_cov[t][np.ix_(b, a)] @ np.linalg.inv(z_cov[t][np.ix_(a, a)]) for t in range(K)]
    if any(np.max(np.abs(Bs[t] - Bs[0])) > tol for t in range(1, K)):
        return None
    B = np.mean(Bs, axis=0)
    sig_a, sig_b = [], []
    for t in range(K):
        Caa = z_cov[t][np.ix_(a, a)]
        schur = z_cov[t][np.ix_(b, b)] - B @ z_cov[t][np.ix_(a, b)]
        sig_a.append(np.concatenate([z_gam[t, a], Caa.ravel()]))
        sig_b.append(np.concatenate([z_gam[t, b] - B @ z_gam[t, a], schur.ravel()]))
    la = _group(sig_a, tol)
    lb = _group(sig_b, tol)
    if la is None or lb is None:
        return None
    Ka, Kb = la.max() + 1, lb.max() + 1
    if Ka * Kb != K:
        return None
    table = -np.ones((Ka, Kb), dtype=int)
    for t in range(K):
        if table[la[t], lb[t]] >= 0:
            return None
        table[la[t], lb[t]] = t
    if np.any(table < 0):
        return None
    wa = np.array([weights[la == k].sum() for k in range(Ka)])
    wb = np.array([weights[lb == k].sum() for k in range(Kb)])
    if np.max(np.abs(np.outer(wa, wb) - weights[table])) > tol:
        return None
    return table, wa, wb


def _witness(found, s_a, s_b, weights, gammas, slopes, covs) -> Factorization:
    table, wa, wb = found
    a, b = list(s_a), list(s_b)
    Ka, Kb = table.shape
    # representatives in original units; B_ba averaged over components
    B = np.mean([covs[t][np.ix_(b, a)] @ np.linalg.inv(covs[t][np.ix_(a, a)]) for t in range(len(weights))], axis=0)
    ga = np.array([gammas[table[k, 0], a] for k in range(Ka)])
    Sa = np.array([covs[table[k, 0]][np.ix_(a, a)] for k in range(Ka)])
    gb, Sb = [], []
    for kk in range(Kb):
        t = table[0, kk]
        gb.append(gammas[t, b] - B @ gammas[t, a])
        S = covs[t][np.ix_(b, b)] - B @ covs[t][np.ix_(a, b)]
        Sb.append(0.5 * (S + S.T))
    return Factorization(
        s_a=tuple(s_a), s_b=tuple(s_b), K_a=Ka, K_b=Kb, table=table,
        weights_a=wa, intercepts_a=ga, covariances_a=Sa,
        weights_b=wb, intercepts_b=np.array(gb), covariances_b=np.array(Sb),
        B_ba=B, slopes_a=slopes[a], slopes_b=slopes[b] - B @ slopes[a],
    )
