import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from clustreg._em import EMControl
from clustreg.data import Dataset, GeneratorSpec, VariablePartition, generate, monte_carlo_design
from clustreg.errors import ValidationError
from clustreg.joint import FitCache, ModelSpec, fit_joint
from clustreg.search import (
    PHASE_A,
    PHASE_B,
    Chromosome,
    GAControl,
    PhaseContext,
    decode,
    gene_ranges,
    regressor_refine,
    search,
)

EM = EMControl(n_starts=1, max_iter=200)
TINY = GAControl(n1=20, n2=10, d1max=6, d2max=4, k1max=2, k2max=2, seed=3, em=EM)


def two_structure_data(seed, n=300):
    """Four variables: a two-cluster pair, one conditional variable with two lines, and noise."""
    rng = np.random.default_rng(seed)
    z1 = rng.integers(0, 2, n)
    z2 = rng.integers(0, 2, n)
    x12 = rng.standard_normal((n, 2)) + 5 * z1[:, None]
    x3 = 1.0 * x12[:, 0] + 6 * z2 + rng.standard_normal(n)
    x4 = rng.standard_normal(n)
    return Dataset(np.column_stack([x12, x3, x4])), (z1, z2)


def zeroed_a2_design(seed):
    d = monte_carlo_design(seed).to_dict()
    for row in d["uninformative"]["coef"]:
        row[3:] = [0.0, 0.0, 0.0]
    return GeneratorSpec.from_dict(d)


class TestDecode:
    def test_phase_a_example(self):
        spec = decode(Chromosome(PHASE_A, (1, 1, 0, 2, 1)), 3)
        assert spec.partition.blocks == ((0, 1), (2,))
        assert spec.K == (2, 1)
        assert spec.partition.block_regressor_columns(1) == ((0, 1), None)

    def test_phase_a_all_in_s1(self):
        spec = decode(Chromosome(PHASE_A, (1, 1, 1, 3, 2)), 3)
        assert spec.G == 1 and spec.K == (3,)

    def test_phase_a_empty_s1(self):
        with pytest.raises(ValidationError):
            decode(Chromosome(PHASE_A, (0, 0, 0, 1, 1)), 3)

    def test_phase_b_example(self):
        ctx = PhaseContext(4, (0, 1), 2)
        spec = decode(Chromosome(PHASE_B, (1, 0, 2)), 4, context=ctx)
        assert spec.partition.blocks == ((0, 1), (2,))
        assert spec.partition.uninformative == (3,)
        assert spec.K == (2, 2)

    def test_phase_b_empty_s2(self):
        ctx = PhaseContext(4, (0, 1), 2)
        spec = decode(Chromosome(PHASE_B, (0, 0, 1)), 4, context=ctx)
        assert spec.G == 1 and spec.partition.uninformative == (2, 3)

    def test_wrong_length(self):
        with pytest.raises(ValidationError):
            decode(Chromosome(PHASE_A, (1, 1)), 3)

    def test_parsimonious_genes(self):
        ctrl = GAControl(parsimonious=True)
        assert len(gene_ranges(PHASE_A, 3, ctrl)) == 3 + 4
        spec = decode(Chromosome(PHASE_A, (1, 1, 0, 2, 2, 1, 6)), 3, parsimonious=True)
        assert spec.params[0].alias == "EII" and spec.params[1].alias == "VVV"

    def test_phase_a_injective_on_used_genes(self):
        ctrl = GAControl(k1max=2, k2max=2)
        seen = {}
        for genes in itertools.product(*[range(lo, hi + 1) for lo, hi in gene_ranges(PHASE_A, 3, ctrl)]):
            try:
                spec = decode(Chromosome(PHASE_A, genes), 3)
            except ValidationError:
                continue
            # the K2 gene is unused when every variable is in S1
            used = genes[:4] if all(genes[:3]) else genes
            key = spec.to_json()
            assert seen.setdefault(key, used) == used

    def test_phase_b_injective(self):
        ctx = PhaseContext(5, (0,), 2)
        ctrl = GAControl(k2max=3)
        specs = set()
        count = 0
        for genes in itertools.product(*[range(lo, hi + 1) for lo, hi in gene_ranges(PHASE_B, 5, ctrl, ctx)]):
            if not any(genes[:4]) and genes[4] > 1:
                continue  # K2 is unused without S2
            specs.add(decode(Chromosome(PHASE_B, genes), 5, context=ctx).to_json())
            count += 1
        assert len(specs) == count


class TestControl:
    def test_validation(self):
        with pytest.raises(ValidationError):
            GAControl(n1=1)
        with pytest.raises(ValidationError):
            GAControl(mutation_prob=1.5)
        with pytest.raises(ValidationError):
            GAControl(max_evaluations=0)

    def test_round_trip(self):
        assert GAControl.from_dict(TINY.to_dict()) == TINY


@pytest.fixture(scope="module")
def small_run():
    data, truth = two_structure_data(0)
    return data, truth, search(data, TINY)


class TestSearch:
    def test_fitness_is_joint_bic(self, small_run):
        data, _, res = small_run
        again = fit_joint(data, res.best.spec, EM)
        assert again.bic == res.best.bic

    def test_phase_b_keeps_s1(self, small_run):
        _, _, res = small_run
        assert res.best.spec.partition.blocks[0] == res.phase_a.spec.partition.blocks[0]
        assert res.best.spec.K[0] == res.phase_a.spec.K[0]
        assert res.best.bic >= res.phase_a.bic

    def test_history_monotone(self, small_run):
        _, _, res = small_run
        for phase in (PHASE_A, PHASE_B):
            best = [h["best_bic"] for h in res.history if h["phase"] == phase]
            assert all(b >= a for a, b in zip(best, best[1:]))

    def test_history_csv(self, small_run, tmp_path):
        _, _, res = small_run
        p = tmp_path / "h.csv"
        res.history_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "phase,generation,best_bic,mean_bic"
        assert len(lines) == len(res.history) + 1

    def test_deterministic(self, small_run):
        data, _, res = small_run
        again = search(data, TINY)
        assert again.best.spec == res.best.spec
        assert again.best.bic == res.best.bic
        assert again.history == res.history

    def test_threads_do_not_change_result(self, small_run):
        data, _, res = small_run
        again = search(data, replace(TINY, threads=2))
        assert again.best.bic == res.best.bic

    def test_finds_two_structures(self, small_run):
        _, _, res = small_run
        P = res.best.spec.partition
        assert P.blocks == ((0, 1), (2,)) and P.uninformative == (3,)

    def test_budget(self):
        data, _ = two_structure_data(1)
        res = search(data, replace(TINY, max_evaluations=5))
        assert res.exhausted
        assert res.n_evaluations <= 5
        assert math.isfinite(res.best.bic)

    def test_one_block_data(self):
        rng = np.random.default_rng(4)
        z = rng.integers(0, 2, 200)
        X = rng.standard_normal((200, 2)) + 6 * z[:, None]
        res = search(Dataset(X), TINY)
        assert res.best.spec.G == 1
        assert res.best.spec.partition.blocks[0] == (0, 1)

    def test_needs_two_variables(self):
        with pytest.raises(ValidationError):
            search(Dataset(np.zeros((5, 1))), TINY)

    def test_shared_cache(self):
        data, _ = two_structure_data(2)
        cache = FitCache()
        search(data, TINY, cache)
        misses = cache.misses
        search(data, TINY, cache)
        assert cache.misses == misses


class TestRefine:
    def test_never_decreases(self):
        data, _ = two_structure_data(5)
        spec = ModelSpec(VariablePartition(4, ((0, 1), (2,)), (3,)), (2, 2))
        fit = fit_joint(data, spec, EM)
        out = regressor_refine(data, fit, EM)
        assert out.bic >= fit.bic
        # X2 has no effect on X3 and U is pure noise
        cols, sets = out.spec.partition.block_regressor_columns(1)
        assert [cols[i] for i in sets[0]] == [0]

    def test_single_block_is_returned_unchanged(self):
        data, _ = two_structure_data(6)
        fit = fit_joint(data, ModelSpec(VariablePartition(4, ((0, 1, 2, 3),)), (2,)), EM)
        assert regressor_refine(data, fit, EM) is fit

    @pytest.mark.slow
    def test_drops_zeroed_a2_regressor(self):
        P = VariablePartition(8, ((0, 1, 2), (3, 4, 5)), (6, 7))
        dropped = 0
        n_rep = 10
        for seed in range(n_rep):
            data, _ = generate(zeroed_a2_design(seed), 400)
            fit = fit_joint(data, ModelSpec(P, (2, 2)), EM)
            out = regressor_refine(data, fit, EM)
            assert out.bic >= fit.bic
            cols, sets = out.spec.partition.u_regressor_columns()
            if sets is not None:
                kept = {cols[i] for s in sets for i in s}
                dropped += not {3, 4, 5} <= kept
        assert dropped >= 0.9 * n_rep
