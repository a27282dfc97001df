"""Datasets, variable partitions and simulation from the joint model.

Column indices are 0-based throughout the API and in JSON documents;
human-readable summaries print them 1-based.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .cwreg import CwRegParams
from .errors import DataError, ValidationError
from .gmm import GmmParams
from .linreg import LinRegParams


@dataclass(frozen=True)
class Dataset:
    """Immutable ``n x L`` matrix of finite reals with unique column names."""

    values: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValidationError("dataset values must be a 2-d matrix")
        n, L = values.shape
        if n < 2 or L < 1:
            raise ValidationError(f"need n >= 2 and L >= 1, got n={n}, L={L}")
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise ValidationError(f"non-finite value at observation {i}, column {j}")
        names = tuple(self.column_names) or tuple(f"X{j + 1}" for j in range(L))
        if len(names) != L:
            raise ValidationError(f"{len(names)} column names for {L} columns")
        if len(set(names)) != L:
            dup = sorted({c for c in names if names.count(c) > 1})
            raise ValidationError(f"duplicate column names: {dup}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", tuple(str(c) for c in names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def L(self) -> int:
        return self.values.shape[1]

    def columns(self, idx) -> np.ndarray:
        return self.values[:, list(idx)]

    def fingerprint(self) -> str:
        h = hashlib.sha1(self.values.tobytes())
        h.update(repr(self.values.shape).encode())
        return h.hexdigest()


def load_csv(path) -> Dataset:
    """Read a comma-separated file with a header row of column names."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        seen = {}
        for j, name in enumerate(header, start=1):
            if name in seen:
                raise DataError(f"{path}: duplicate header {name!r}", row=1, column=j)
            seen[name] = j
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: expected {len(header)} fields, found {len(row)}", row=r
                )
            vals = []
            for j, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: cannot parse {cell!r} as a number", row=r, column=j) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value {cell!r}", row=r, column=j)
                vals.append(v)
            rows.append(vals)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two data rows")
    return Dataset(np.array(rows), tuple(header))


def save_csv(data: Dataset, path) -> None:
    """Write ``data`` so that :func:`load_csv` recovers it bit for bit."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(data.column_names)
        for row in data.values:
            w.writerow([repr(float(v)) for v in row])


def save_labels(labels, path, name="label") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([name])
        for v in labels:
            w.writerow([v])


def load_labels(path) -> list:
    """Read a one-column label file (header row first). Labels stay strings."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        out = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1:
                raise DataError(f"{path}: label files have a single column", row=r)
            out.append(row[0].strip())
    return out


# -- partitions ---------------------------------------------------------------


def _index_tuple(values, what) -> tuple:
    try:
        out = tuple(sorted(int(v) for v in values))
    except (TypeError, ValueError):
        raise ValidationError(f"{what} must be a collection of integer indices") from None
    if len(set(out)) != len(out):
        raise ValidationError(f"{what} repeats an index")
    return out


def _regressor_entry(entry, n_responses, allowed, what):
    """Normalize a regressor specification.

    ``None`` keeps the default (all allowed columns); a flat collection is a
    common reduced set; a list of collections gives one set per response.
    """
    if entry is None:
        return None
    entry = list(entry)
    per_response = bool(entry) and all(isinstance(e, (list, tuple, set, frozenset)) for e in entry)
    if per_response:
        if len(entry) != n_responses:
            raise ValidationError(f"{what}: {len(entry)} regressor sets for {n_responses} responses")
        sets = tuple(_index_tuple(e, what) for e in entry)
        bad = sorted({j for s in sets for j in s} - set(allowed))
    else:
        sets = _index_tuple(entry, what)
        bad = sorted(set(sets) - set(allowed))
    if bad:
        raise ValidationError(f"{what}: regressors {bad} are not in the allowed blocks")
    return sets


@dataclass(frozen=True)
class VariablePartition:
    """Disjoint cover of ``{0..L-1}`` by blocks ``S_1..S_G``, ``U`` and ``I``.

    ``block_regressors[g]`` (``g >= 1``) and ``u_regressors`` optionally
    reduce the regressors of block ``g`` / of ``U``: a flat tuple is a subset
    shared by all responses, a tuple of tuples assigns one subset to each
    response (in the block's sorted variable order). ``None`` means every
    variable of the preceding blocks (of all blocks, for ``U``).
    """

    n_vars: int
    blocks: tuple
    uninformative: tuple = ()
    independent: tuple = ()
    block_regressors: tuple | None = None
    u_regressors: tuple | None = None

    def __post_init__(self):
        if not self.blocks:
            raise ValidationError("a partition needs at least one block")
        blocks = tuple(_index_tuple(b, f"block {g + 1}") for g, b in enumerate(self.blocks))
        if any(len(b) == 0 for b in blocks):
            raise ValidationError("blocks must be non-empty")
        U = _index_tuple(self.uninformative, "U")
        I = _index_tuple(self.independent, "I")
        parts = list(blocks) + [U, I]
        flat = [j for part in parts for j in part]
        if len(flat) != len(set(flat)):
            dup = sorted({j for j in flat if flat.count(j) > 1})
            raise ValidationError(f"variables {dup} appear in more than one part of the partition")
        if set(flat) != set(range(self.n_vars)):
            missing = sorted(set(range(self.n_vars)) - set(flat))
            extra = sorted(set(flat) - set(range(self.n_vars)))
            raise ValidationError(f"partition is not a cover of 0..{self.n_vars - 1}: missing {missing}, out of range {extra}")
        G = len(blocks)
        breg = self.block_regressors
        if breg is None:
            breg = (None,) * G
        breg = tuple(breg)
        if len(breg) != G:
            raise ValidationError(f"{len(breg)} regressor entries for {G} blocks")
        if breg[0] not in (None, (), []):
            raise ValidationError("the first block has no regressors")
        norm = [None]
        for g in range(1, G):
            allowed = [j for b in blocks[:g] for j in b]
            norm.append(_regressor_entry(breg[g], len(blocks[g]), allowed, f"block {g + 1} regressors"))
        ureg = None
        if U:
            allowed = [j for b in blocks for j in b]
            ureg = _regressor_entry(self.u_regressors, len(U), allowed, "U regressors")
        elif self.u_regressors not in (None, (), []):
            raise ValidationError("U regressors given but U is empty")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "uninformative", U)
        object.__setattr__(self, "independent", I)
        object.__setattr__(self, "block_regressors", tuple(norm) if any(e is not None for e in norm) else None)
        object.__setattr__(self, "u_regressors", ureg)

    @property
    def G(self) -> int:
        return len(self.blocks)

    def _resolve(self, entry, default, n_resp):
        """(regressor columns, per-response position sets or None)."""
        if entry is None:
            return tuple(default), None
        if entry and isinstance(entry[0], tuple):
            cols = tuple(sorted({j for s in entry for j in s}))
            pos = {c: i for i, c in enumerate(cols)}
            return cols, tuple(tuple(pos[j] for j in s) for s in entry)
        return tuple(entry), None

    def block_regressor_columns(self, g: int):
        """Regressor column indices for block ``g`` and the SUR position sets (or ``None``)."""
        if g == 0:
            return (), None
        default = [j for b in self.blocks[:g] for j in b]
        entry = None if self.block_regressors is None else self.block_regressors[g]
        return self._resolve(entry, default, len(self.blocks[g]))

    def u_regressor_columns(self):
        default = [j for b in self.blocks for j in b]
        return self._resolve(self.u_regressors, default, len(self.uninformative))

    def to_dict(self) -> dict:
        def conv(e):
            if e is None:
                return None
            if e and isinstance(e[0], tuple):
                return [list(s) for s in e]
            return list(e)

        d = {
            "n_vars": self.n_vars,
            "blocks": [list(b) for b in self.blocks],
            "uninformative": list(self.uninformative),
            "independent": list(self.independent),
        }
        if self.block_regressors is not None:
            d["block_regressors"] = [conv(e) for e in self.block_regressors]
        if self.u_regressors is not None:
            d["u_regressors"] = conv(self.u_regressors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VariablePartition":
        return cls(
            n_vars=int(d["n_vars"]),
            blocks=tuple(tuple(b) for b in d["blocks"]),
            uninformative=tuple(d.get("uninformative", ())),
            independent=tuple(d.get("independent", ())),
            block_regressors=d.get("block_regressors"),
            u_regressors=d.get("u_regressors"),
        )

    def describe(self, names=None) -> str:
        """Set notation with 1-based indices, e.g. ``S1=(1,2,3) S2=(4,5,6) U=(7,8)``."""

        def fmt(idx):
            if names is not None:
                return "(" + ", ".join(names[j] for j in idx) + ")"
            return "(" + ",".join(str(j + 1) for j in idx) + ")"

        parts = [f"S{g + 1}={fmt(b)}" for g, b in enumerate(self.blocks)]
        parts.append(f"U={fmt(self.uninformative)}" if self.uninformative else "U=()")
        if self.independent:
            parts.append(f"I={fmt(self.independent)}")
        return " ".join(parts)


# -- simulation ---------------------------------------------------------------


@dataclass
class GeneratorSpec:
    """A fully parameterized joint model to sample from.

    ``blocks[0]`` is a :class:`GmmParams`; ``blocks[g]`` for ``g >= 1`` is a
    :class:`CwRegParams` whose slope columns follow
    ``partition.block_regressor_columns(g)``. ``uninformative`` regresses on
    ``partition.u_regressor_columns()``; ``independent`` is a
    :class:`LinRegParams` with no regressors.
    """

    partition: VariablePartition
    blocks: list
    uninformative: LinRegParams | None = None
    independent: LinRegParams | None = None
    seed: int = 0
    column_names: tuple = field(default=())

    def __post_init__(self):
        P = self.partition
        if len(self.blocks) != P.G:
            raise ValidationError(f"{len(self.blocks)} parameter sets for {P.G} blocks")
        for g, (idx, prm) in enumerate(zip(P.blocks, self.blocks)):
            want = GmmParams if g == 0 else CwRegParams
            if not isinstance(prm, want):
                raise ValidationError(f"block {g + 1} parameters must be {want.__name__}")
            if prm.dim != len(idx):
                raise ValidationError(f"block {g + 1}: parameters are {prm.dim}-dimensional, block has {len(idx)} variables")
            if g:
                cols, sets = P.block_regressor_columns(g)
                if prm.slopes.shape[1] != len(cols):
                    raise ValidationError(f"block {g + 1}: slopes need {len(cols)} columns")
            prm.check_positive_definite()
        for name, part, prm, cols in (
            ("U", P.uninformative, self.uninformative, P.u_regressor_columns()[0]),
            ("I", P.independent, self.independent, ()),
        ):
            if not part:
                continue
            if prm is None:
                raise ValidationError(f"parameters for {name} are missing")
            if prm.dim != len(part) or prm.coef.shape[1] != len(cols):
                raise ValidationError(f"{name} parameters do not match the partition")
            try:
                np.linalg.cholesky(prm.covariance)
            except np.linalg.LinAlgError:
                raise ValidationError(f"{name} covariance is not positive definite") from None

    def to_dict(self) -> dict:
        d = {
            "partition": self.partition.to_dict(),
            "blocks": [b.to_dict() for b in self.blocks],
            "seed": self.seed,
        }
        if self.uninformative is not None:
            d["uninformative"] = self.uninformative.to_dict()
        if self.independent is not None:
            d["independent"] = self.independent.to_dict()
        if self.column_names:
            d["column_names"] = list(self.column_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        part = VariablePartition.from_dict(d["partition"])
        blocks = [GmmParams.from_dict(d["blocks"][0])]
        blocks += [CwRegParams.from_dict(b) for b in d["blocks"][1:]]
        u = LinRegParams.from_dict(d["uninformative"]) if d.get("uninformative") else None
        i = d.get("independent")
        if i:
            i = dict(i)
            i.setdefault("intercept", i.get("mean"))
            i = LinRegParams.from_dict(i)
        return cls(part, blocks, u, i or None, int(d.get("seed", 0)), tuple(d.get("column_names", ())))

    @classmethod
    def from_json(cls, path) -> "GeneratorSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def monte_carlo_design(seed: int = 0) -> GeneratorSpec:
    """The eight-variable two-structure simulation design (bundled JSON)."""
    text = resources.files("clustreg").joinpath("designs/montecarlo.json").read_text()
    d = json.loads(text)
    d["seed"] = seed
    return GeneratorSpec.from_dict(d)


def _sample_mixture(rng, weights, means, covs, n):
    """Multinomial labels, then ``mean + chol(Sigma) z`` per observation."""
    K = len(weights)
    labels = rng.choice(K, size=n, p=weights)
    noise = rng.standard_normal((n, means.shape[1]))
    chol = np.linalg.cholesky(covs)
    out = means[labels] + np.einsum("nij,nj->ni", chol[labels], noise)
    return out, labels


def generate(spec: GeneratorSpec, n: int, seed: int | None = None):
    """Draw ``n`` observations from the joint model.

    Randomness comes from a PCG64 generator seeded with
    ``SeedSequence(seed)``. The sequence is split into ``G + 2`` child
    streams in the order (block 1, ..., block G, U, I); each block stream
    draws the component labels first and then the Gaussian noise.

    Returns
    -------
    (Dataset, list of G integer label arrays)
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    seed = spec.seed if seed is None else seed
    P = spec.partition
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(P.G + 2)]
    X = np.zeros((n, P.n_vars))
    labels = []
    for g, (idx, prm) in enumerate(zip(P.blocks, spec.blocks)):
        rng = streams[g]
        if g == 0:
            x, z = _sample_mixture(rng, prm.weights, prm.means, prm.covariances, n)
        else:
            cols, _ = P.block_regressor_columns(g)
            dev, z = _sample_mixture(rng, prm.weights, prm.intercepts, prm.covariances, n)
            x = dev + X[:, list(cols)] @ prm.slopes.T
        X[:, list(idx)] = x
        labels.append(z)
    for part, prm, cols, rng in (
        (P.uninformative, spec.uninformative, P.u_regressor_columns()[0], streams[P.G]),
        (P.independent, spec.independent, (), streams[P.G + 1]),
    ):
        if not part:
            continue
        chol = np.linalg.cholesky(prm.covariance)
        noise = rng.standard_normal((n, len(part))) @ chol.T
        mean = prm.intercept + (X[:, list(cols)] @ prm.coef.T if cols else 0.0)
        X[:, list(part)] = mean + noise
    names = spec.column_names or tuple(f"X{j + 1}" for j in range(P.n_vars))
    if n < 2:
        # Dataset requires n >= 2; a single draw is returned as a bare matrix wrapper
        raise ValidationError("generate needs n >= 2 to build a Dataset")
    return Dataset(X, names), labels
