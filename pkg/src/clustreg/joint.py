"""Joint models: composition of block fits, BIC scoring and fit caching.

The joint density factorizes as

    f(x) = f(x^S1) prod_{g>=2} f(x^Sg | x^S1..x^S(g-1)) f(x^U | x^S) f(x^I)

so the log-likelihood is a sum over factors and each factor is maximized on
its own. A block's fit depends only on its own columns, its regressor
columns, its component count and parameterization, which is what the cache
keys on.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from ._em import BlockFit, EMControl
from .covariance import COV_PARAMS, CovForm, CovParam
from .cwreg import SHARED_B, SUR, CwRegParams, cwreg_logpdf, count_params_cwreg, fit_cwreg
from .data import Dataset, VariablePartition
from .errors import BlockFitError, ClustregError, ValidationError
from .gmm import GmmParams, count_params_gmm, fit_gmm, gmm_logpdf
from .linreg import LinRegParams, count_params_linreg, fit_linreg, linreg_logpdf


def bic(loglik: float, npar: int, n: int) -> float:
    """``2 loglik - npar ln(n)``; larger is better.

    >>> round(bic(-235.51, 9, 33), 2)
    -502.48
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if npar < 0:
        raise ValidationError("npar must be non-negative")
    return 2.0 * loglik - npar * math.log(n)


@dataclass(frozen=True)
class ModelSpec:
    """A point of the model space.

    ``K`` and ``params`` give one component count and one covariance
    parameterization per informative block. The regression mode of each
    block (shared slopes or per-response regressor sets) is read off the
    partition's regressor entries.
    """

    partition: VariablePartition
    K: tuple
    params: tuple = ()
    u_form: CovForm = CovForm.FULL
    i_form: CovForm = CovForm.FULL

    def __post_init__(self):
        G = self.partition.G
        K = tuple(int(k) for k in self.K)
        if len(K) != G:
            raise ValidationError(f"{len(K)} component counts for {G} blocks")
        if any(k < 1 for k in K):
            raise ValidationError("component counts must be >= 1")
        params = tuple(self.params) or (CovParam.FULL_VARYING,) * G
        if len(params) != G:
            raise ValidationError(f"{len(params)} parameterizations for {G} blocks")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "params", tuple(CovParam.parse(p) for p in params))
        object.__setattr__(self, "u_form", CovForm.parse(self.u_form))
        object.__setattr__(self, "i_form", CovForm.parse(self.i_form))

    @property
    def G(self) -> int:
        return self.partition.G

    @property
    def modes(self) -> tuple:
        out = []
        for g in range(self.G):
            _, sets = self.partition.block_regressor_columns(g)
            out.append(SUR if sets is not None else SHARED_B)
        return tuple(out)

    def block_names(self) -> list:
        names = [f"S{g + 1}" for g in range(self.G)]
        if self.partition.uninformative:
            names.append("U")
        if self.partition.independent:
            names.append("I")
        return names

    def block_key(self, name: str) -> tuple:
        """Hashable description of one factor; equal keys mean equal fits on equal data."""
        P = self.partition
        if name == "U":
            cols, sets = P.u_regressor_columns()
            return ("linreg", P.uninformative, cols, sets, self.u_form.value)
        if name == "I":
            return ("linreg", P.independent, (), None, self.i_form.value)
        g = int(name[1:]) - 1
        if g == 0:
            return ("gmm", P.blocks[0], self.K[0], self.params[0].value)
        cols, sets = P.block_regressor_columns(g)
        return ("cwreg", P.blocks[g], cols, sets, self.K[g], self.params[g].value)

    def npar(self) -> int:
        return sum(block_npar(self.block_key(b)) for b in self.block_names())

    def to_dict(self) -> dict:
        return {
            "partition": self.partition.to_dict(),
            "K": list(self.K),
            "params": [p.value for p in self.params],
            "u_form": self.u_form.value,
            "i_form": self.i_form.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            partition=VariablePartition.from_dict(d["partition"]),
            K=tuple(d["K"]),
            params=tuple(d.get("params", ())),
            u_form=d.get("u_form", "FULL"),
            i_form=d.get("i_form", "FULL"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def describe(self, names=None) -> str:
        Ks = " ".join(f"K{g + 1}={k}" for g, k in enumerate(self.K))
        return f"{self.partition.describe(names)} {Ks}"


def block_npar(key: tuple) -> int:
    kind = key[0]
    if kind == "gmm":
        _, cols, K, param = key
        return count_params_gmm(len(cols), K, param)
    if kind == "cwreg":
        _, cols, regs, sets, K, param = key
        return count_params_cwreg(len(cols), len(regs), K, param, SUR if sets is not None else SHARED_B, sets)
    _, cols, regs, sets, form = key
    return count_params_linreg(len(cols), len(regs), form, sets)


class FitCache:
    """Thread-safe memo of block fits keyed by data fingerprint, block and EM settings.

    Failed fits are memoized too (the exception is re-raised on lookup), so a
    search never retries a block that is known to degenerate.
    """

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._store)

    def get_or_fit(self, key, fitter):
        with self._lock:
            if key in self._store:
                self.hits += 1
                hit = self._store[key]
            else:
                hit = None
                self.misses += 1
        if hit is not None:
            if isinstance(hit, Exception):
                raise hit
            return hit
        try:
            value = fitter()
        except ClustregError as exc:
            with self._lock:
                self._store[key] = exc
            raise
        with self._lock:
            # identical keys give identical results, so the last writer is as good as any
            self._store[key] = value
        return value


def fit_block(data: Dataset, key: tuple, ctrl: EMControl) -> BlockFit:
    """Fit one factor described by a :meth:`ModelSpec.block_key`."""
    kind = key[0]
    X = data.values
    if kind == "gmm":
        _, cols, K, param = key
        return fit_gmm(X[:, list(cols)], K, param, ctrl)
    if kind == "cwreg":
        _, cols, regs, sets, K, param = key
        return fit_cwreg(X[:, list(cols)], X[:, list(regs)], K, param, sets, ctrl, regressors=regs)
    _, cols, regs, sets, form = key
    return fit_linreg(
        X[:, list(cols)], X[:, list(regs)], form, sets,
        floor_scale=ctrl.floor_scale, regressors=regs,
    )


@dataclass
class JointFit:
    """A fitted joint model."""

    spec: ModelSpec
    block_names: list
    block_fits: list
    n: int
    loglik: float = field(init=False)
    npar: int = field(init=False)
    bic: float = field(init=False)

    def __post_init__(self):
        self.loglik = float(math.fsum(b.loglik for b in self.block_fits))
        self.npar = int(sum(b.npar for b in self.block_fits))
        self.bic = bic(self.loglik, self.npar, self.n)

    def block(self, name: str) -> BlockFit:
        return self.block_fits[self.block_names.index(name)]

    @property
    def assignments(self) -> list:
        """Hard component labels of the ``G`` informative blocks."""
        return [self.block(f"S{g + 1}").labels for g in range(self.spec.G)]

    def block_bics(self) -> dict:
        return {name: bic(b.loglik, b.npar, self.n) for name, b in zip(self.block_names, self.block_fits)}

    def to_dict(self) -> dict:
        blocks = []
        for name, b in zip(self.block_names, self.block_fits):
            entry = b.to_dict()
            entry["name"] = name
            blocks.append(entry)
        return {
            "spec": self.spec.to_dict(),
            "n": self.n,
            "loglik": self.loglik,
            "npar": self.npar,
            "bic": self.bic,
            "blocks": blocks,
        }

    def summary(self, names=None) -> str:
        lines = [
            f"model   {self.spec.describe(names)}",
            f"loglik  {self.loglik:.4f}",
            f"npar    {self.npar}",
            f"BIC     {self.bic:.4f}",
        ]
        for name, b in zip(self.block_names, self.block_fits):
            lines.append(f"  {name:<3} {b.kind:<7} loglik={b.loglik:.4f} npar={b.npar} K={b.K}")
        return "\n".join(lines)


def _control_key(ctrl: EMControl) -> tuple:
    return tuple(sorted(ctrl.to_dict().items()))


def fit_joint(
    data: Dataset,
    spec: ModelSpec,
    ctrl: EMControl | None = None,
    cache: FitCache | None = None,
    order=None,
) -> JointFit:
    """Fit every factor of ``spec`` on ``data`` and compose them.

    ``order`` optionally permutes the order in which blocks are fitted; the
    result does not depend on it. Block failures are re-raised as
    :class:`BlockFitError` carrying the block name.
    """
    ctrl = ctrl or EMControl()
    if spec.partition.n_vars != data.L:
        raise ValidationError(f"spec covers {spec.partition.n_vars} variables, data has {data.L}")
    names = spec.block_names()
    todo = list(range(len(names))) if order is None else list(order)
    if sorted(todo) != list(range(len(names))):
        raise ValidationError("order must be a permutation of the blocks")
    fp = data.fingerprint()
    ck = _control_key(ctrl)
    fits = [None] * len(names)
    for i in todo:
        key = spec.block_key(names[i])
        try:
            if cache is None:
                fits[i] = fit_block(data, key, ctrl)
            else:
                fits[i] = cache.get_or_fit((fp, key, ck), lambda key=key: fit_block(data, key, ctrl))
        except ClustregError as exc:
            raise BlockFitError(names[i], exc) from exc
    return JointFit(spec, names, fits, data.n)


def block_logpdf(entry: dict, spec: ModelSpec, data: Dataset) -> np.ndarray:
    """Per-observation log-density of one serialized block under its parameters."""
    key = spec.block_key(entry["name"])
    X = data.values
    prm = entry["params"]
    if key[0] == "gmm":
        return gmm_logpdf(GmmParams.from_dict(prm), X[:, list(key[1])])
    if key[0] == "cwreg":
        return cwreg_logpdf(CwRegParams.from_dict(prm), X[:, list(key[1])], X[:, list(key[2])])
    return linreg_logpdf(LinRegParams.from_dict(prm), X[:, list(key[1])], X[:, list(key[2])])


def rescore(document: dict, data: Dataset) -> dict:
    """Recompute loglik, npar and BIC of a serialized :class:`JointFit`."""
    spec = ModelSpec.from_dict(document["spec"])
    if spec.partition.n_vars != data.L:
        raise ValidationError("document does not match the data's variable count")
    total = []
    npar = 0
    for entry in document["blocks"]:
        total.append(float(block_logpdf(entry, spec, data).sum()))
        npar += block_npar(spec.block_key(entry["name"]))
    ll = math.fsum(total)
    return {"loglik": ll, "npar": npar, "bic": bic(ll, npar, data.n)}


__all__ = [
    "COV_PARAMS",
    "FitCache",
    "JointFit",
    "ModelSpec",
    "bic",
    "block_npar",
    "fit_block",
    "fit_joint",
    "rescore",
]
