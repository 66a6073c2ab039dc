import json
from importlib import resources

import numpy as np
import pytest

from netred import benchmarks as bm, linalg
from netred.errors import FixtureError


class TestFixture:
    def test_transcribed_values(self, paper_fixture):
        sys, l = paper_fixture
        assert sys.a[0, 0] == -4.6
        assert sys.a[6, 6] == -3.3242
        assert sys.a[11, 11] == -2.5285
        assert sys.b[0, 0] == 0.0569
        assert sys.b[11, 0] == 0.9798
        assert sys.c[0, 0] == 0.2848
        assert sys.c[0, 11] == 0.3747
        assert np.array_equal(l, np.array([[0.0, 0.0, 0.0, 1.0]]))

    def test_dimensions_and_topology(self, paper_fixture):
        sys, _ = paper_fixture
        assert (sys.n, sys.m, sys.p) == (12, 1, 1)
        assert sys.topology.sizes == (3, 3, 3, 3)
        assert sys.topology.state_neighbors[3] == frozenset({3, 4})
        assert sys.topology.forbidden_pairs() == [(1, 4), (2, 4), (4, 1), (4, 2)]

    def test_stable_and_positive(self, paper_fixture):
        sys, _ = paper_fixture
        assert linalg.is_hurwitz(sys.a, margin=0.0)
        offdiag = sys.a - np.diag(np.diag(sys.a))
        assert np.all(offdiag >= 0.0)
        assert np.all(sys.b >= 0.0) and np.all(sys.c >= 0.0)

    def test_checksum_guard(self):
        ref = resources.files("netred").joinpath("data").joinpath(
            "fixture_positive_network.json"
        )
        doc = json.loads(ref.read_text(encoding="utf-8"))
        bm._verify_fixture_doc(doc)  # pristine copy passes
        doc["system"]["A"][0][0] = -4.61
        with pytest.raises(FixtureError, match="checksum"):
            bm._verify_fixture_doc(doc)


class TestPowerNetwork:
    @pytest.mark.parametrize("n_areas", [2, 4, 10, 23])
    def test_dimension_is_4n_minus_1(self, n_areas):
        sys = bm.generate_power_network(n_areas, seed=0)
        assert sys.n == 4 * n_areas - 1
        assert sys.m == n_areas and sys.p == n_areas

    def test_chain_sparsity(self):
        sys = bm.generate_power_network(10, seed=3)
        top = sys.topology
        for i in range(1, 11):
            for j in range(1, 11):
                if abs(i - j) >= 2:
                    blk = sys.a[top.state_slice(i), top.state_slice(j)]
                    assert not np.any(blk)

    def test_stability(self):
        for seed in range(5):
            sys = bm.generate_power_network(6, seed=seed)
            assert linalg.is_hurwitz(sys.a, margin=0.0)

    def test_per_area_inputs_and_speed_outputs(self):
        sys = bm.generate_power_network(4, seed=1)
        top = sys.topology
        assert top.input_neighbors == tuple(frozenset({i}) for i in range(1, 5))
        # B touches only the valve row of the owning area
        for i in range(1, 5):
            col = sys.b[:, i - 1]
            rows = np.nonzero(col)[0]
            assert len(rows) == 1
            assert top.state_slice(i).start + 2 == rows[0]
        # C reads the angular-speed state of each area
        for i in range(1, 5):
            row = sys.c[i - 1]
            assert row[top.state_slice(i).start] == 1.0
            assert np.count_nonzero(row) == 1

    def test_tie_line_antisymmetry_signs(self):
        sys = bm.generate_power_network(3, seed=9)
        top = sys.topology
        # area 2 owns the (2,1) link: its flow row reacts +T to its own
        # speed and -T to the neighbour's
        r = top.state_slice(2).start + 3
        w1 = top.state_slice(1).start
        w2 = top.state_slice(2).start
        stiff = sys.a[r, w2]
        assert stiff > 0
        assert sys.a[r, w1] == -stiff
        # area 1 sees the neighbour's stored flow with the opposite sign
        # of area 2's own-coupling
        assert sys.a[w1, r] > 0
        assert sys.a[w2, r] < 0

    def test_determinism(self):
        a = bm.generate_power_network(5, seed=42)
        b = bm.generate_power_network(5, seed=42)
        assert np.array_equal(a.a, b.a) and np.array_equal(a.b, b.b)

    def test_parameters_validated(self):
        with pytest.raises(ValueError):
            bm.PowerAreaParams(d=100.0, m_a=2.0, t_ch=2.0, r_f=0.05, t_g=5.0)

    def test_needs_two_areas(self):
        with pytest.raises(ValueError):
            bm.generate_power_network(1)


class TestRandomPositive:
    def test_properties(self):
        sys = bm.generate_random_positive(
            (3, 3, 3, 3), 1, 1, seed=7,
            state_neighbors=[[1, 2, 3], [1, 2, 3], [1, 2, 3, 4], [3, 4]],
        )
        assert linalg.is_hurwitz(sys.a, margin=0.0)
        offdiag = sys.a - np.diag(np.diag(sys.a))
        assert np.all(offdiag >= 0.0)
        assert np.all(sys.b >= 0.0) and np.all(sys.c >= 0.0)
        top = sys.topology
        for i, j in top.forbidden_pairs():
            assert not np.any(sys.a[top.state_slice(i), top.state_slice(j)])

    def test_seed_determinism(self):
        a = bm.generate_random_positive((2, 2), 1, 1, seed=5)
        b = bm.generate_random_positive((2, 2), 1, 1, seed=5)
        c = bm.generate_random_positive((2, 2), 1, 1, seed=6)
        assert np.array_equal(a.a, b.a)
        assert not np.array_equal(a.a, c.a)

    def test_full_topology_default(self):
        sys = bm.generate_random_positive((2, 3), 2, 2, seed=1)
        assert sys.topology.forbidden_pairs() == []


class TestSweep:
    def test_tiny_sweep_rows(self):
        rows, failures = bm.sweep_h2_vs_n(
            [2, 3], seed=0, sdp_tol=1e-4, max_grad_iter=60, refine_iters=40,
            refine_scales=(0.0,),
        )
        assert not failures
        assert [r["N"] for r in rows] == [2, 3]
        for r in rows:
            assert r["dimension"] == 4 * r["N"] - 1
            assert r["reduced_hurwitz"] and r["structure_ok"]
            assert r["h2_error"] >= 0.0
            assert r["grad_iterations"] >= 0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            bm.sweep_h2_vs_n([1])
