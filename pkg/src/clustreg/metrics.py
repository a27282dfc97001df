"""Contingency tables and the adjusted Rand index.

Pair counts are computed with exact integer binomials; only the final ratio
is taken in floating point, so near-zero indices keep their sign and digits.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ContingencyTable:
    """Cross-classification of two labelings.

    ``counts[i, j]`` is the number of items with row label ``row_labels[i]``
    and column label ``col_labels[j]``. Labels are sorted.
    """

    counts: np.ndarray
    row_labels: tuple = ()
    col_labels: tuple = ()

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 2:
            raise ValidationError("a contingency table is a 2-d array")
        if np.any(counts < 0):
            raise ValidationError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        r, c = counts.shape
        object.__setattr__(self, "row_labels", tuple(self.row_labels) or tuple(range(1, r + 1)))
        object.__setattr__(self, "col_labels", tuple(self.col_labels) or tuple(range(1, c + 1)))
        if len(self.row_labels) != r or len(self.col_labels) != c:
            raise ValidationError("label count does not match the table shape")

    @property
    def row_margins(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_margins(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def ari(self) -> float:
        return ari_from_table(self.counts)

    def to_text(self, row_title="a", col_title="b") -> str:
        head = [f"{row_title}\\{col_title}"] + [str(c) for c in self.col_labels] + ["total"]
        rows = [[str(r)] + [str(v) for v in row] + [str(row.sum())] for r, row in zip(self.row_labels, self.counts)]
        rows.append(["total"] + [str(v) for v in self.col_margins] + [str(self.n)])
        table = [head] + rows
        widths = [max(len(line[j]) for line in table) for j in range(len(head))]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in table)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.col_labels))
        for r, row in zip(self.row_labels, self.counts):
            w.writerow([r] + [int(v) for v in row])
        return buf.getvalue()


def _check_pair(a, b):
    a = list(a)
    b = list(b)
    if len(a) != len(b):
        raise ValidationError(f"label vectors differ in length ({len(a)} vs {len(b)})")
    return a, b


def _sorted_unique(values):
    try:
        return sorted(set(values))
    except TypeError:
        return sorted(set(values), key=repr)


def crosstab(a, b) -> ContingencyTable:
    """Contingency table of two labelings of the same items."""
    a, b = _check_pair(a, b)
    ra = _sorted_unique(a)
    cb = _sorted_unique(b)
    ia = {v: i for i, v in enumerate(ra)}
    ib = {v: j for j, v in enumerate(cb)}
    counts = np.zeros((len(ra), len(cb)), dtype=np.int64)
    for x, y in zip(a, b):
        counts[ia[x], ib[y]] += 1
    return ContingencyTable(counts, tuple(ra), tuple(cb))


def ari_from_table(counts) -> float:
    """Hubert-Arabie adjusted Rand index of a contingency table.

    Returns 0.0 when the index is undefined (maximum equals expectation,
    e.g. both partitions trivial) unless the two partitions are identical,
    in which case it is 1.0.
    """
    counts = [[int(v) for v in row] for row in np.asarray(counts)]
    if any(v < 0 for row in counts for v in row):
        raise ValidationError("counts must be non-negative")
    n = sum(map(sum, counts))
    if n < 2:
        raise ValidationError("need at least two items")
    rows = [sum(r) for r in counts]
    cols = [sum(c) for c in zip(*counts)]
    index = sum(comb(v, 2) for row in counts for v in row)
    sa = sum(comb(v, 2) for v in rows)
    sb = sum(comb(v, 2) for v in cols)
    total = comb(n, 2)
    # scale by 2*total so expectation and maximum stay integers
    num = 2 * total * index - 2 * sa * sb
    den = total * (sa + sb) - 2 * sa * sb
    if den == 0:
        return 1.0 if num == 0 and index == sa == sb else 0.0
    return num / den


def ari(a, b) -> float:
    """Adjusted Rand index between two labelings (any hashable labels)."""
    a, b = _check_pair(a, b)
    if len(a) < 2:
        raise ValidationError("need at least two items")
    return ari_from_table(crosstab(a, b).counts)
