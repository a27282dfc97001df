"""Two-phase genetic search over partitions, component counts and parameterizations.

Phase A chromosomes hold one binary gene per variable (membership of
``S1``) followed by the integer genes ``K1`` and ``K2`` and, in parsimonious
mode, the parameterization genes ``P1`` and ``P2``. The variables left out
of ``S1`` form a single conditional block regressed on ``S1`` with ``K2``
components, so every phase-A fitness is a BIC of a full joint model.

Phase B holds ``S1`` and ``K1`` (and ``P1``) fixed. Its chromosomes carry
one binary gene per remaining variable (membership of ``S2``; the others go
to ``U``), the gene ``K2`` and, in parsimonious mode, ``P2`` and the form of
the ``U`` covariance.

Operators: linear-rank selection (pressure 2), single-point crossover,
one-gene mutation and elitism of one chromosome.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._em import EMControl
from .covariance import COV_FORMS, COV_PARAMS, CovForm, CovParam
from .data import Dataset, VariablePartition
from .errors import ClustregError, ValidationError
from .joint import FitCache, JointFit, ModelSpec, fit_joint

PHASE_A = "A"
PHASE_B = "B"


@dataclass(frozen=True)
class GAControl:
    """Tuning parameters of the genetic search."""

    n1: int = 200
    n2: int = 80
    d1max: int = 30
    d2max: int = 20
    k1max: int = 3
    k2max: int = 3
    crossover_prob: float = 0.8
    mutation_prob: float = 0.1
    seed: int = 0
    parsimonious: bool = False
    max_evaluations: int | None = None
    threads: int = 1
    em: EMControl = field(default_factory=EMControl)

    def __post_init__(self):
        if self.n1 < 2 or self.n2 < 2:
            raise ValidationError("population sizes must be >= 2")
        if self.d1max < 0 or self.d2max < 0:
            raise ValidationError("generation caps must be >= 0")
        if self.k1max < 1 or self.k2max < 1:
            raise ValidationError("component caps must be >= 1")
        for name in ("crossover_prob", "mutation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise ValidationError("max_evaluations must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "em"}
        d["em"] = self.em.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GAControl":
        d = dict(d)
        if "em" in d:
            d["em"] = EMControl.from_dict(d["em"])
        return cls(**d)


@dataclass(frozen=True)
class Chromosome:
    phase: str
    genes: tuple

    def __str__(self):
        return f"{self.phase}:" + "".join(str(g) if g < 10 else f"[{g}]" for g in self.genes)


@dataclass(frozen=True)
class PhaseContext:
    """Fixed phase-A solution handed to phase B."""

    n_vars: int
    s1: tuple
    k1: int
    p1: CovParam = CovParam.FULL_VARYING

    @property
    def remainder(self) -> tuple:
        return tuple(j for j in range(self.n_vars) if j not in self.s1)


def gene_ranges(phase: str, L: int, ctrl: GAControl, context: PhaseContext | None = None) -> list:
    """Inclusive ``(low, high)`` range of every gene."""
    if phase == PHASE_A:
        out = [(0, 1)] * L + [(1, ctrl.k1max), (1, ctrl.k2max)]
        if ctrl.parsimonious:
            out += [(1, len(COV_PARAMS))] * 2
        return out
    if context is None:
        raise ValidationError("phase B needs the phase-A context")
    out = [(0, 1)] * len(context.remainder) + [(1, ctrl.k2max)]
    if ctrl.parsimonious:
        out += [(1, len(COV_PARAMS)), (1, len(COV_FORMS))]
    return out


def decode(chrom: Chromosome, L: int, parsimonious: bool = False, context: PhaseContext | None = None) -> ModelSpec:
    """Map a chromosome to the model it represents.

    Raises :class:`ValidationError` for chromosomes that encode no model
    (an empty ``S1`` in phase A) or have the wrong length.
    """
    g = chrom.genes
    extra_a = 2 if parsimonious else 0
    if chrom.phase == PHASE_A:
        if len(g) != L + 2 + extra_a:
            raise ValidationError(f"phase-A chromosome needs {L + 2 + extra_a} genes, got {len(g)}")
        member = g[:L]
        if any(v not in (0, 1) for v in member):
            raise ValidationError("membership genes are binary")
        s1 = tuple(j for j in range(L) if member[j])
        rest = tuple(j for j in range(L) if not member[j])
        if not s1:
            raise ValidationError("S1 is empty")
        k1, k2 = g[L], g[L + 1]
        p1 = p2 = CovParam.FULL_VARYING
        if parsimonious:
            p1, p2 = COV_PARAMS[g[L + 2] - 1], COV_PARAMS[g[L + 3] - 1]
        if not rest:
            return ModelSpec(VariablePartition(L, (s1,)), (k1,), (p1,))
        return ModelSpec(VariablePartition(L, (s1, rest)), (k1, k2), (p1, p2))

    if chrom.phase != PHASE_B:
        raise ValidationError(f"unknown phase {chrom.phase!r}")
    if context is None:
        raise ValidationError("phase B needs the phase-A context")
    rem = context.remainder
    m = len(rem)
    extra_b = 2 if parsimonious else 0
    if len(g) != m + 1 + extra_b:
        raise ValidationError(f"phase-B chromosome needs {m + 1 + extra_b} genes, got {len(g)}")
    if any(v not in (0, 1) for v in g[:m]):
        raise ValidationError("membership genes are binary")
    s2 = tuple(j for j, v in zip(rem, g[:m]) if v)
    u = tuple(j for j, v in zip(rem, g[:m]) if not v)
    k2 = g[m]
    p2, pu = CovParam.FULL_VARYING, CovForm.FULL
    if parsimonious:
        p2, pu = COV_PARAMS[g[m + 1] - 1], COV_FORMS[g[m + 2] - 1]
    if not s2:
        return ModelSpec(VariablePartition(L, (context.s1,), u), (context.k1,), (context.p1,), pu)
    return ModelSpec(VariablePartition(L, (context.s1, s2), u), (context.k1, k2), (context.p1, p2), pu)


def _order_key(fitness, spec, chrom):
    """Sort key: higher BIC, then fewer parameters, then smaller partition, then genes."""
    if spec is None or not math.isfinite(fitness):
        return (math.inf, math.inf, (), chrom.genes)
    P = spec.partition
    part = tuple(P.blocks) + (P.uninformative, P.independent)
    return (-fitness, spec.npar(), part, chrom.genes)


@dataclass
class SearchResult:
    best: JointFit
    phase_a: JointFit
    history: list
    exhausted: bool
    n_evaluations: int
    evaluations: dict = field(default_factory=dict, repr=False)

    def history_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "generation", "best_bic", "mean_bic"])
            for row in self.history:
                w.writerow([row["phase"], row["generation"], repr(row["best_bic"]), repr(row["mean_bic"])])


class _Evaluator:
    """Chromosome fitness with memoization, threads and an evaluation budget."""

    def __init__(self, data, ctrl, cache, context=None):
        self.data = data
        self.ctrl = ctrl
        self.cache = cache
        self.context = context
        self.memo = {}
        self.n_evaluations = 0
        self.exhausted = False

    def _fit(self, chrom):
        try:
            spec = decode(chrom, self.data.L, self.ctrl.parsimonious, self.context)
        except ValidationError:
            return None, None, -math.inf
        try:
            fit = fit_joint(self.data, spec, self.ctrl.em, self.cache)
        except ClustregError:
            return spec, None, -math.inf
        return spec, fit, fit.bic

    def evaluate(self, population, used):
        """Fitness of every chromosome; ``used`` counts fresh evaluations so far across phases."""
        fresh = []
        for c in population:
            if c not in self.memo and c not in fresh:
                fresh.append(c)
        budget = self.ctrl.max_evaluations
        if budget is not None and used + len(fresh) > budget:
            fresh = fresh[: max(budget - used, 0)]
            self.exhausted = True
        if self.ctrl.threads > 1 and len(fresh) > 1:
            with ThreadPoolExecutor(self.ctrl.threads) as pool:
                results = list(pool.map(self._fit, fresh))
        else:
            results = [self._fit(c) for c in fresh]
        for c, r in zip(fresh, results):
            self.memo[c] = r
        self.n_evaluations += len(fresh)
        return [self.memo.get(c) for c in population]


def _random_chromosome(rng, phase, ranges):
    return Chromosome(phase, tuple(int(rng.integers(lo, hi + 1)) for lo, hi in ranges))


def _rank_probabilities(N, pressure=2.0):
    """Linear-rank selection probabilities; index 0 is the best chromosome."""
    if N == 1:
        return np.ones(1)
    ranks = np.arange(N, 0, -1)  # best gets rank N
    p = (2.0 - pressure) / N + 2.0 * (ranks - 1) * (pressure - 1.0) / (N * (N - 1))
    return p / p.sum()


def _next_generation(rng, ordered, ranges, ctrl, N):
    phase = ordered[0].phase
    probs = _rank_probabilities(len(ordered))
    out = [ordered[0]]
    while len(out) < N:
        i, j = rng.choice(len(ordered), size=2, p=probs)
        a, b = list(ordered[i].genes), list(ordered[j].genes)
        if len(a) > 1 and rng.random() < ctrl.crossover_prob:
            cut = int(rng.integers(1, len(a)))
            a, b = a[:cut] + b[cut:], b[:cut] + a[cut:]
        for child in (a, b):
            if rng.random() < ctrl.mutation_prob:
                pos = int(rng.integers(len(child)))
                lo, hi = ranges[pos]
                child[pos] = 1 - child[pos] if (lo, hi) == (0, 1) else int(rng.integers(lo, hi + 1))
            if len(out) < N:
                out.append(Chromosome(phase, tuple(child)))
    return out


def _run_phase(rng, evaluator, phase, ranges, N, dmax, ctrl, history, used, seeds=()):
    population = list(seeds)[:N]
    while len(population) < N:
        population.append(_random_chromosome(rng, phase, ranges))
    best = None
    for gen in range(dmax + 1):
        results = evaluator.evaluate(population, used + evaluator.n_evaluations)
        scored = []
        for c, r in zip(population, results):
            if r is None:  # budget ran out before this chromosome was evaluated
                continue
            spec, fit, fitness = r
            scored.append((_order_key(fitness, spec, c), c, fit))
        scored.sort(key=lambda s: s[0])
        if scored and (best is None or scored[0][0] < best[0]):
            best = scored[0]
        finite = [-s[0][0] for s in scored if math.isfinite(s[0][0])]
        history.append({
            "phase": phase,
            "generation": gen,
            "best_bic": -best[0][0] if best and math.isfinite(best[0][0]) else -math.inf,
            "mean_bic": float(np.mean(finite)) if finite else -math.inf,
        })
        if evaluator.exhausted or gen == dmax or not scored:
            break
        # duplicates keep their own ranks so good chromosomes can spread
        ordered = [s[1] for s in scored]
        if ordered[0] != best[1]:
            ordered.insert(0, best[1])
        population = _next_generation(rng, ordered, ranges, ctrl, N)
    return best


def search(data: Dataset, ctrl: GAControl | None = None, cache: FitCache | None = None) -> SearchResult:
    """Maximize BIC over models with up to two cluster structures.

    Returns the best model found, the phase-A winner and the per-generation
    history. When ``ctrl.max_evaluations`` runs out the best model so far is
    returned with ``exhausted=True``.
    """
    ctrl = ctrl or GAControl()
    L = data.L
    if L < 2:
        raise ValidationError("the search needs at least two variables")
    cache = cache if cache is not None else FitCache()
    rng_a, rng_b = (np.random.default_rng(s) for s in np.random.SeedSequence(ctrl.seed).spawn(2))
    history = []

    ev_a = _Evaluator(data, ctrl, cache)
    best_a = _run_phase(rng_a, ev_a, PHASE_A, gene_ranges(PHASE_A, L, ctrl), ctrl.n1, ctrl.d1max, ctrl, history, 0)
    if best_a is None or best_a[2] is None:
        raise ClustregError("no chromosome of phase A could be fitted")
    fit_a = best_a[2]
    used = ev_a.n_evaluations
    exhausted = ev_a.exhausted
    evaluations = {str(c): r[2] for c, r in ev_a.memo.items()}
    s1 = fit_a.spec.partition.blocks[0]
    best = fit_a
    if len(s1) < L and not exhausted:
        ctx = PhaseContext(L, s1, fit_a.spec.K[0], fit_a.spec.params[0])
        ranges = gene_ranges(PHASE_B, L, ctrl, ctx)
        # seed phase B with the phase-A winner's conditional block taken as S2
        g = best_a[1].genes
        seed_genes = [1] * len(ctx.remainder) + [g[L + 1]]
        if ctrl.parsimonious:
            seed_genes += [g[L + 3], len(COV_FORMS)]
        ev_b = _Evaluator(data, ctrl, cache, ctx)
        best_b = _run_phase(
            rng_b, ev_b, PHASE_B, ranges, ctrl.n2, ctrl.d2max, ctrl, history, used,
            seeds=[Chromosome(PHASE_B, tuple(seed_genes))],
        )
        used += ev_b.n_evaluations
        exhausted = exhausted or ev_b.exhausted
        evaluations.update({str(c): r[2] for c, r in ev_b.memo.items()})
        if best_b is not None and best_b[2] is not None:
            best = best_b[2]
    return SearchResult(best, fit_a, history, exhausted, used, evaluations)


# -- regressor refinement -----------------------------------------------------


def _full_sets(P: VariablePartition):
    """Per-response regressor sets (dataset indices) for blocks 2..G and U."""
    blocks = [None]
    for g in range(1, P.G):
        cols, sets = P.block_regressor_columns(g)
        if sets is None:
            blocks.append([set(cols) for _ in P.blocks[g]])
        else:
            blocks.append([{cols[i] for i in s} for s in sets])
    u = None
    if P.uninformative:
        cols, sets = P.u_regressor_columns()
        u = [set(cols) for _ in P.uninformative] if sets is None else [{cols[i] for i in s} for s in sets]
    return blocks, u


def _with_sets(spec: ModelSpec, blocks, u) -> ModelSpec:
    P = spec.partition
    breg = [None] + [tuple(tuple(sorted(s)) for s in blocks[g]) for g in range(1, P.G)]
    part = VariablePartition(
        P.n_vars, P.blocks, P.uninformative, P.independent,
        block_regressors=tuple(breg) if P.G > 1 else None,
        u_regressors=tuple(tuple(sorted(s)) for s in u) if u is not None else None,
    )
    return replace(spec, partition=part)


def regressor_refine(
    data: Dataset,
    fit: JointFit,
    ctrl: EMControl | None = None,
    cache: FitCache | None = None,
    max_rounds: int = 1000,
) -> JointFit:
    """Steepest-ascent search over per-response regressor sets.

    Each move adds or removes one regressor of one response (in any block
    ``g >= 2`` or in ``U``); the best BIC-improving move is applied until
    none improves. The returned model's BIC is never below the input's.
    """
    ctrl = ctrl or EMControl()
    cache = cache if cache is not None else FitCache()
    P = fit.spec.partition
    if P.G < 2 and not P.uninformative:
        return fit
    blocks, u = _full_sets(P)
    allowed = [None] + [[j for b in P.blocks[:g] for j in b] for g in range(1, P.G)]
    u_allowed = [j for b in P.blocks for j in b]
    best = fit
    for _ in range(max_rounds):
        moves = []
        for g in range(1, P.G):
            for r in range(len(blocks[g])):
                for j in allowed[g]:
                    moves.append(("S", g, r, j))
        if u is not None:
            for r in range(len(u)):
                for j in u_allowed:
                    moves.append(("U", 0, r, j))
        improved = None
        for kind, g, r, j in moves:
            nb = [None] + [[set(s) for s in blocks[h]] for h in range(1, P.G)]
            nu = None if u is None else [set(s) for s in u]
            target = nu[r] if kind == "U" else nb[g][r]
            target.symmetric_difference_update({j})
            spec = _with_sets(fit.spec, nb, nu)
            try:
                cand = fit_joint(data, spec, ctrl, cache)
            except ClustregError:
                continue
            ref = best if improved is None else improved[0]
            if cand.bic > ref.bic:
                improved = (cand, nb, nu)
        if improved is None:
            break
        best, blocks, u = improved
    return best
