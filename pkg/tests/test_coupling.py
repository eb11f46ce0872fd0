import itertools
import math

import numpy as np
import pytest

from perclab.coupling import (
    CoupledBondField,
    CoupledBondRealization,
    Embedding,
    bond_indicators,
    coupled_bond_field,
    coupled_realization,
    coupled_survival,
    default_bond_tuples,
    p_hat,
    verify_independence,
)
from perclab.gobp import bond, count_paths, survival_probability
from perclab.lattice import PerturbationField, support_box
from perclab.stats import RandomStream


class TestPHat:
    def test_boundary_and_substitutions(self):
        assert p_hat(0.5) == 0.0
        assert p_hat(1.0) == pytest.approx(0.25)
        assert p_hat(2.0) == pytest.approx(0.5625)

    def test_below_half_clamps_to_zero(self):
        assert p_hat(0.4) == 0.0
        assert p_hat(0.499) == 0.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            p_hat(0.0)
        with pytest.raises(ValueError):
            p_hat(-1.0)


class TestEmbedding:
    def test_definition_substitution(self):
        emb = Embedding(3)
        assert emb.embed(5, (2, 1)) == (2, 2, 1)
        assert emb.embed(0, (0, 0)) == (0, 0, 0)

    def test_unembed_inverse(self):
        emb = Embedding(3)
        assert emb.unembed((2, 2, 1)) == (5, (2, 1))
        assert emb.unembed((0, 0, 0)) == (0, (0, 0))

    def test_round_trip_random(self):
        emb = Embedding(4)
        stream = RandomStream.from_seed(5, "emb")
        u = stream.uniform(np.arange(30_000, dtype=np.uint64)).reshape(10_000, 3)
        for row in u[:200]:
            w = tuple(int(v * 6) for v in row)
            t = sum(w) + int(row[0] * 5)
            assert emb.unembed(emb.embed(t, w)) == (t, w)

    def test_embed_unembed_identity_on_orthant(self):
        emb = Embedding(3)
        for z in itertools.product(range(8), repeat=3):
            t, w = emb.unembed(z)
            assert emb.embed(t, w) == z

    def test_level_below_norm_rejected(self):
        with pytest.raises(ValueError):
            Embedding(3).embed(2, (2, 1))

    def test_negative_coordinates_rejected(self):
        with pytest.raises(ValueError):
            Embedding(3).unembed((1, -1, 0))
        with pytest.raises(ValueError):
            Embedding(3).embed(4, (-1, 2))

    def test_bond_steps_are_unit_vectors(self):
        # a stay move advances the first embedded coordinate, a spatial move
        # the matching later one
        emb = Embedding(3)
        a = emb.embed(4, (2, 1))
        assert tuple(x - y for x, y in zip(emb.embed(5, (2, 1)), a)) == (1, 0, 0)
        assert tuple(x - y for x, y in zip(emb.embed(5, (3, 1)), a)) == (0, 1, 0)
        assert tuple(x - y for x, y in zip(emb.embed(5, (2, 2)), a)) == (0, 0, 1)


class TestBondOpen:
    def test_below_half_always_closed(self):
        real = coupled_realization(3, 0.4, 2)
        opens = bond_indicators(3, 0.4, [((0, 0), 0)], 2000)[0]
        assert not opens.any()
        assert not real.bond_open((0, 0), (1, 0))

    def test_empirical_rate_at_one(self):
        n = 100_000
        opens = bond_indicators(11, 1.0, [((0, 0), 0)], n)[0]
        se = math.sqrt(0.25 * 0.75 / n)
        assert abs(opens.mean() - 0.25) < 3 * se

    def test_empirical_rate_large_amplitude(self):
        n = 100_000
        L = 100.0
        expect = (1 - 1 / 200.0) ** 2
        opens = bond_indicators(13, L, [((0, 0), 1)], n)[0]
        se = math.sqrt(expect * (1 - expect) / n)
        assert abs(opens.mean() - expect) < 3 * se

    def test_marginal_correctness_grid(self):
        n = 100_000
        for L in (0.75, 1.0, 2.0, 5.0):
            expect = p_hat(L)
            opens = bond_indicators(17, L, [((2, -1), 0)], n)[0]
            se = math.sqrt(expect * (1 - expect) / n)
            assert abs(opens.mean() - expect) < 3 * se, L

    def test_rejects_non_adjacent(self):
        real = coupled_realization(3, 1.0, 2)
        with pytest.raises(ValueError):
            real.bond_open((0, 0), (1, 1))
        with pytest.raises(ValueError):
            real.bond_open((0, 0), (-1, 0))  # backward step

    def test_matches_literal_box_geometry(self):
        # the offset-space rule equals literal membership of both perturbed
        # points in the overlap of the two support boxes
        for trial in range(300):
            real = coupled_realization(29, 1.3, 2, trial=trial)
            z, w = (1, 2), (1, 3)
            ov = support_box(z, 1.3).intersect(support_box(w, 1.3))
            xpt = real.x_field.point(z)
            ypt = real.y_field.point(w)
            literal = ov.contains(xpt) and ov.contains(ypt)
            assert real.bond_open(z, w) == literal

    def test_scalar_matches_vectorized(self):
        n = 500
        bonds = [((0, 0), 0), ((3, -2), 1)]
        vec = bond_indicators(41, 1.5, bonds, n)
        for row, (z, j) in enumerate(bonds):
            head = tuple(a + (1 if i == j else 0) for i, a in enumerate(z))
            for i in range(0, n, 97):
                real = coupled_realization(41, 1.5, 2, trial=i)
                assert vec[row, i] == real.bond_open(z, head)


class TestIndependence:
    def test_default_battery_passes(self):
        report = verify_independence(101, 1.0, default_bond_tuples(2), 100_000)
        assert report.all_passed
        for res in report.results:
            if res.correlation is not None:
                assert abs(res.correlation) < 3 / math.sqrt(report.trials)

    def test_fanout_product_form(self):
        # all-open frequency of the d-fold fan-out equals p_hat^d
        d, n = 3, 100_000
        tuples = [("fanout", [(tuple([0] * d), j) for j in range(d)])]
        report = verify_independence(7, 1.0, tuples, n)
        res = report.results[0]
        expect = p_hat(1.0) ** d
        se = math.sqrt(expect * (1 - expect) / n)
        assert abs(res.joint_all_open - expect) < 3 * se
        assert abs(res.joint_all_open - res.product_all_open) < 3 * se

    def test_shared_arrival_reported_separately(self):
        report = verify_independence(55, 1.0, default_bond_tuples(2), 50_000)
        shared = report.by_name("shared_arrival")
        assert shared and all(r.report.p_value >= report.corrected_alpha
                              for r in shared)

    def test_duplicate_bonds_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            verify_independence(1, 1.0, [("dup", [((0, 0), 0), ((0, 0), 0)])], 100)

    def test_sparse_battery_rejected(self):
        # p_hat(0.55) ~ 0.008: the all-open cell starves at small n
        with pytest.raises(ValueError, match="increase"):
            verify_independence(1, 0.55, default_bond_tuples(2), 500)


class TestCoupledBondField:
    def test_embedding_consistency_exhaustive(self):
        # a time-space path is open iff its embedded lattice path is open
        T, d = 4, 3
        emb = Embedding(d)
        for trial in range(6):
            real = coupled_realization(71, 1.1, d, trial=trial)
            field = coupled_bond_field(real, emb, T)
            for steps in itertools.product(range(d), repeat=T):
                z = tuple([0] * (d - 1))
                open_ts = True
                open_emb = True
                for t, k in enumerate(steps, start=1):
                    b = bond(t, z, k)
                    open_ts = open_ts and field.is_open(b)
                    a_site = emb.embed(t - 1, z)
                    b_site = emb.embed(t, b.head.z)
                    open_emb = open_emb and real.bond_open(a_site, b_site)
                    z = b.head.z
                assert open_ts == open_emb

    def test_counts_match_direct_bond_evaluation(self):
        # exact DP under the coupled field reproduces per-bond evaluation
        field = CoupledBondField(coupled_realization(5, 1.4, 3, trial=2),
                                 Embedding(3), 5)
        layers = count_paths(field, 5, mode="exact")
        brute = {}
        for steps in itertools.product(range(3), repeat=5):
            z = tuple([0, 0])
            ok = True
            for t, k in enumerate(steps, start=1):
                b = bond(t, z, k)
                if not field.is_open(b):
                    ok = False
                    break
                z = b.head.z
            if ok:
                brute[z] = brute.get(z, 0) + 1
        assert layers[5].counts == brute

    def test_below_half_no_growth(self):
        field = CoupledBondField(coupled_realization(5, 0.45, 3, trial=0),
                                 Embedding(3), 10)
        layers = count_paths(field, 2, mode="exact")
        assert layers[1].counts == {}
        assert layers[2].counts == {}

    def test_survival_matches_bernoulli_proxy(self):
        # survival through the coupling overlays the direct Bernoulli field
        # at p = p_hat(L), within overlapping 95% intervals
        L, d, T, n = 1.5, 3, 25, 800
        via_coupling = coupled_survival(L, d, T, n, seed=2027, workers=2)
        direct = survival_probability(p_hat(L), d - 1, T, n, seed=2027, workers=2)
        assert via_coupling.ci_low <= direct.ci_high
        assert direct.ci_low <= via_coupling.ci_high

    def test_distributional_transfer_on_grid(self):
        d, T, n = 3, 20, 500
        for L in (0.8, 1.0, 1.5, 2.5, 4.0):
            via = coupled_survival(L, d, T, n, seed=31, workers=1)
            direct = survival_probability(p_hat(L), d - 1, T, n, seed=31, workers=1)
            assert via.ci_low <= direct.ci_high and direct.ci_low <= via.ci_high, L

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            CoupledBondField(coupled_realization(1, 1.0, 3), Embedding(4), 5)

    def test_mismatched_fields_rejected(self):
        x = PerturbationField(1, 1.0, "X", 2)
        y = PerturbationField(1, 2.0, "Y", 2)
        with pytest.raises(ValueError):
            CoupledBondRealization(x, y)

    def test_pathwise_monotone_in_amplitude(self):
        # shared trial noise: a trial surviving at L also survives at L' > L
        from perclab.gobp import reach_level

        T = 15
        for trial in range(40):
            lo_field = CoupledBondField(coupled_realization(9, 1.0, 3, trial), Embedding(3), T)
            hi_field = CoupledBondField(coupled_realization(9, 1.6, 3, trial), Embedding(3), T)
            lo_r = reach_level(lo_field, T)
            hi_r = reach_level(hi_field, T)
            if lo_r >= T:
                assert hi_r >= T
