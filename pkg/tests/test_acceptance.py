"""Acceptance criteria, each checked at its stated tolerance.

Every criterion records one PASS/FAIL line (see ``conftest.py``); the lines
are repeated in the pytest terminal summary.
"""

import math

import numpy as np
import pytest

from builders import random_generic, random_product
from clustreg._em import EMControl
from clustreg.covariance import COV_FORMS, COV_PARAMS, CovForm
from clustreg.cwreg import count_params_cwreg, fit_cwreg
from clustreg.data import VariablePartition, generate, monte_carlo_design
from clustreg.errors import BlockFitError
from clustreg.gmm import count_params_gmm, fit_gmm
from clustreg.identifiability import check_identifiability
from clustreg.joint import ModelSpec, bic, fit_joint
from clustreg.metrics import ari, ari_from_table
from clustreg.search import GAControl, search

# (loglik, npar, printed BIC) of the seven three-variable models, n = 33
BIC_ROWS = [
    (-235.51, 9, -502.48),
    (-231.82, 11, -502.10),
    (-232.68, 10, -500.33),
    (-238.00, 6, -496.98),
    (-235.15, 8, -498.27),
    (-228.46, 13, -502.38),
    (-229.83, 12, -501.63),
]

# printed contingency tables and their aRi values
ARI_TABLES = [
    ("heights structure 1", [[8, 8], [13, 4]], 0.047),
    ("heights structure 2", [[1, 15], [16, 1]], 0.765),
    ("crabs four clusters, all variables", [[49, 11, 0, 0], [0, 0, 5, 50], [0, 39, 0, 0], [1, 0, 45, 0]], 0.794),
    ("crabs four clusters, selected variables", [[50, 10, 0, 0], [0, 0, 5, 50], [0, 40, 0, 0], [0, 0, 45, 0]], 0.815),
    ("crabs S1 colour and gender", [[50, 7, 50, 3], [0, 43, 0, 47]], 0.400),
    # colour margins rebuilt from the four-class columns (see the decisions ledger)
    ("crabs S1 colour", [[57, 53], [43, 47]], -0.003),
    ("crabs S1 gender", [[100, 10], [0, 90]], 0.810),
    ("crabs S2 colour and gender", [[50, 50, 1, 0], [0, 0, 49, 50]], 0.486),
    ("crabs S2 colour", [[100, 1], [0, 99]], 0.980),
    ("crabs S2 gender", [[51, 50], [49, 50]], -0.005),
]

CORRECT = VariablePartition(8, ((0, 1, 2), (3, 4, 5)), (6, 7))
N_REPLICATES = 25
# EM control inside the GA is reduced for runtime (see the decisions ledger)
GA = dict(n1=200, d1max=30, k1max=3, k2max=3, n2=80, d2max=20, em=EMControl(n_starts=1, max_iter=200))


def test_criterion_1_bic_arithmetic(acceptance_report):
    errs = [abs(bic(ll, k, 33) - printed) for ll, k, printed in BIC_ROWS]
    ok = max(errs) <= 0.02
    acceptance_report(1, ok, f"BIC arithmetic, max |error| {max(errs):.4f} over {len(errs)} rows (tol 0.02)")
    assert ok


def test_criterion_2_ari_tables(acceptance_report):
    errs = {name: abs(ari_from_table(t) - v) for name, t, v in ARI_TABLES}
    ok = max(errs.values()) <= 0.001
    worst = max(errs, key=errs.get)
    acceptance_report(2, ok, f"aRi tables, max |error| {errs[worst]:.5f} ({worst}) over {len(errs)} tables (tol 0.001)")
    assert ok


@pytest.fixture(scope="module")
def monte_carlo_runs():
    runs = []
    for r in range(N_REPLICATES):
        data, labels = generate(monte_carlo_design(1000 + r), 400)
        res = search(data, GAControl(seed=r, **GA))
        runs.append((res.best, labels))
    return runs


def _labels(fit, g, n):
    if g < fit.spec.G:
        return fit.assignments[g]
    return np.zeros(n, dtype=int)


@pytest.mark.slow
def test_criterion_3_partition_recovery(monte_carlo_runs, acceptance_report):
    hits = sum(
        best.spec.partition.blocks == CORRECT.blocks and best.spec.partition.uninformative == CORRECT.uninformative
        for best, _ in monte_carlo_runs
    )
    ok = hits >= 20
    acceptance_report(3, ok, f"correct partition selected in {hits}/{N_REPLICATES} replicates (need >= 20)")
    assert ok


@pytest.mark.slow
def test_criterion_4_cluster_recovery(monte_carlo_runs, acceptance_report):
    a1 = [ari(_labels(best, 0, len(lab[0])), lab[0]) for best, lab in monte_carlo_runs]
    a2 = [ari(_labels(best, 1, len(lab[1])), lab[1]) for best, lab in monte_carlo_runs]
    m1, m2 = float(np.mean(a1)), float(np.mean(a2))
    ok = round(m1, 3) == 1.0 and m2 >= 0.99
    acceptance_report(4, ok, f"mean aRi block 1 {m1:.4f} (need 1.000), block 2 {m2:.4f} (need >= 0.99)")
    assert ok


# -- criterion 5: EM/ECM properties on random small instances ----------------------


def closed_form_loglik(resid, form):
    n, d = resid.shape
    S = resid.T @ resid / n
    if form == CovForm.DIAGONAL:
        Sig = np.diag(np.diag(S))
    elif form == CovForm.SPHERICAL:
        Sig = np.eye(d) * np.trace(S) / d
    else:
        Sig = S
    _, logdet = np.linalg.slogdet(Sig)
    return -0.5 * n * (d * math.log(2 * math.pi) + logdet) - 0.5 * n * np.trace(np.linalg.solve(Sig, S))


def random_instance(i):
    rng = np.random.default_rng(5000 + i)
    kind = "gmm" if i % 2 == 0 else "cwreg"
    param = COV_PARAMS[int(rng.integers(len(COV_PARAMS)))]
    if kind == "gmm":
        d, p = int(rng.integers(1, 5)), 0
    else:
        d = int(rng.integers(1, 4))
        p = int(rng.integers(1, 5 - d))
    K = int(rng.integers(1, 4))
    npar = count_params_gmm(d, K, param) if kind == "gmm" else count_params_cwreg(d, p, K, param)
    while 4 * npar > 300 and K > 1:
        K -= 1
        npar = count_params_gmm(d, K, param) if kind == "gmm" else count_params_cwreg(d, p, K, param)
    n = int(rng.integers(max(50, 4 * npar), 301))
    z = rng.integers(0, K, n)
    centers = rng.normal(0, 4, (K, d))
    Y = centers[z] + rng.standard_normal((n, d))
    X = None
    if p:
        X = rng.standard_normal((n, p))
        Y = Y + X @ rng.normal(0, 1.5, (d, p)).T
    return kind, Y, X, K, param


def test_criterion_5_em_properties(acceptance_report):
    fails = {"a": 0, "b": 0, "c": 0, "d": 0}
    n_sur = 0
    tight = EMControl(n_starts=2, tol=1e-12, max_iter=20_000)
    for i in range(100):
        kind, Y, X, K, param = random_instance(i)
        ctrl = EMControl(n_starts=2, seed=i)
        fit = fit_gmm(Y, K, param, ctrl) if kind == "gmm" else fit_cwreg(Y, X, K, param, ctrl=ctrl)
        fails["a"] += not np.all(np.diff(fit.trace) >= -1e-8)
        fails["d"] += not np.all(np.abs(fit.posteriors.sum(axis=1) - 1.0) <= 1e-8)
        one = fit_gmm(Y, 1, param, ctrl) if kind == "gmm" else fit_cwreg(Y, X, 1, param, ctrl=ctrl)
        Z = np.ones((len(Y), 1)) if X is None else np.column_stack([np.ones(len(Y)), X])
        resid = Y - Z @ np.linalg.lstsq(Z, Y, rcond=None)[0]
        fails["b"] += abs(one.loglik - closed_form_loglik(resid, param.form)) > 1e-6
        if kind == "cwreg":
            n_sur += 1
            full = [tuple(range(X.shape[1]))] * Y.shape[1]
            a = fit_cwreg(Y, X, K, param, ctrl=tight)
            b = fit_cwreg(Y, X, K, param, full, ctrl=tight)
            fails["c"] += abs(a.loglik - b.loglik) > 1e-6
    ok = not any(fails.values())
    detail = ", ".join(f"({k}) {v} failures" for k, v in fails.items())
    acceptance_report(5, ok, f"100 random instances ({n_sur} with SUR check): {detail}")
    assert ok


# -- criterion 6: BIC additivity and fitting-order invariance ----------------------


def random_spec(rng):
    while True:
        assign = rng.integers(0, 4, 8)
        parts = [tuple(int(j) for j in np.flatnonzero(assign == c)) for c in range(4)]
        blocks = tuple(p for p in parts[:2] if p)
        if blocks:
            break
    K = tuple(int(k) for k in rng.integers(1, 4, len(blocks)))
    params = tuple(COV_PARAMS[int(j)] for j in rng.integers(len(COV_PARAMS), size=len(blocks)))
    u_form = COV_FORMS[int(rng.integers(len(COV_FORMS)))]
    return ModelSpec(VariablePartition(8, blocks, parts[2], parts[3]), K, params, u_form)


def test_criterion_6_additivity_and_order(acceptance_report):
    rng = np.random.default_rng(6)
    data, _ = generate(monte_carlo_design(6), 400)
    ctrl = EMControl(n_starts=1, seed=0)
    additive = invariant = done = skipped = 0
    while done < 50:
        spec = random_spec(rng)
        try:
            fit = fit_joint(data, spec, ctrl)
        except BlockFitError:
            skipped += 1
            continue
        done += 1
        order = list(range(len(fit.block_names)))[::-1]
        again = fit_joint(data, spec, ctrl, order=order)
        additive += abs(math.fsum(fit.block_bics().values()) - fit.bic) <= 1e-9
        invariant += all(x.loglik == y.loglik for x, y in zip(fit.block_fits, again.block_fits)) and again.bic == fit.bic
    ok = additive == 50 and invariant == 50
    acceptance_report(
        6, ok, f"{additive}/50 additive within 1e-9, {invariant}/50 order invariant ({skipped} degenerate specs redrawn)"
    )
    assert ok


# -- criterion 7: identifiability detector -----------------------------------------


def test_criterion_7_identifiability(acceptance_report):
    rng = np.random.default_rng(7)
    shapes = [(1, 1, 2, 2), (1, 2, 2, 2), (2, 1, 2, 3), (2, 2, 3, 2), (1, 2, 1, 3), (2, 1, 3, 1)]
    flagged = 0
    for i in range(50):
        d_a, d_b, K_a, K_b = shapes[i % len(shapes)]
        v = check_identifiability(random_product(rng, d_a, d_b, K_a, K_b), tol=1e-6)
        flagged += (not v.holds) and v.witness is not None
    passed = 0
    for i in range(50):
        d = int(rng.integers(2, 5))
        K = int(rng.integers(2, 5))
        passed += check_identifiability(random_generic(rng, d, K), tol=1e-6).holds
    ok = flagged == 50 and passed == 50
    acceptance_report(7, ok, f"{flagged}/50 products flagged with a witness, {passed}/50 generic models pass")
    assert ok


def test_criterion_8_real_data_note(acceptance_report):
    # real-data model choices are not an acceptance target; the arithmetic is pinned by 1 and 2
    acceptance_report(8, True, "informational only: real-data reruns are a manual smoke test (see README)")
