import numpy as np
import pytest

from netred import gradopt as go, linalg, network as nw
from netred.errors import SolverError, UnstableMatrixError

from conftest import make_structured_system, random_feasible_pair


CHAIN3 = [(3, 3, 2), [{1, 2}, {1, 2, 3}, {2, 3}]]


def setup_case(seed, sizes=(3, 3, 2), neighbors=None, grid=(1.0, 2.0, 3.0)):
    neighbors = neighbors if neighbors is not None else CHAIN3[1]
    sys = make_structured_system(sizes, neighbors, seed=seed)
    rng = np.random.default_rng(seed)
    nu = len(sizes)
    l = rng.standard_normal((1, nu))
    orders = nw.ReducedOrders((1,) * nu)
    pi = nw.compute_pi(sys, np.diag(np.asarray(grid)), l, rank_warning=False)
    return sys, l, orders, pi


class TestObjective:
    def test_matches_full_error_system(self):
        sys, l, orders, pi = setup_case(21)
        s, g = random_feasible_pair(sys, orders, l, 21)
        ev = go.objective(sys, s, g, l, pi)
        err = nw._assemble_error(sys, s - g @ l, g, pi)
        h2 = nw.h2_norm(err)
        assert ev.f == pytest.approx(h2**2, rel=1e-10)
        # Gramian blocks are PSD
        assert np.min(np.linalg.eigvalsh(ev.m)) >= -1e-8
        assert np.min(np.linalg.eigvalsh(ev.w)) >= -1e-8

    def test_zero_output_zero_objective(self):
        sys, l, orders, pi = setup_case(22)
        zero_c = nw.NetworkSystem(sys.a, sys.b, np.zeros((1, sys.n)), sys.topology)
        pi0 = nw.compute_pi(zero_c, np.diag([1.0, 2.0, 3.0]), l, rank_warning=False)
        s, g = random_feasible_pair(zero_c, orders, l, 22)
        ev = go.gradient(zero_c, s, g, l, pi0)
        assert ev.f == pytest.approx(0.0, abs=1e-14)
        assert np.allclose(ev.grad_s, 0.0, atol=1e-12)
        assert np.allclose(ev.grad_g, 0.0, atol=1e-12)

    def test_requires_stability(self):
        sys, l, orders, pi = setup_case(23)
        with pytest.raises(UnstableMatrixError):
            go.objective(sys, np.diag([1.0, -1.0, -2.0]), np.zeros((3, 1)), l, pi)


class TestGradient:
    @pytest.mark.parametrize("seed", range(10))
    def test_finite_difference_agreement(self, seed):
        # ten seeded structured stable points at n = 8, nu = 3
        sys, l, orders, pi = setup_case(100 + seed)
        s, g = random_feasible_pair(sys, orders, l, 200 + seed)
        ev = go.gradient(sys, s, g, l, pi)
        fd_s, fd_g = go.finite_diff_gradient(sys, s, g, l, pi)
        for analytic, numeric in ((ev.grad_s, fd_s), (ev.grad_g, fd_g)):
            mask = np.abs(numeric) > 1e-8
            if mask.any():
                rel = np.abs(analytic[mask] - numeric[mask]) / np.abs(numeric[mask])
                assert rel.max() <= 1e-5

    def test_zero_gradient_at_exact_order_minimum(self):
        sys = make_structured_system(*CHAIN3, seed=31)
        rng = np.random.default_rng(31)
        l = rng.standard_normal((1, sys.n))
        s = sys.a + sys.b @ l
        if not linalg.spectra_disjoint(s, sys.a):
            pytest.skip("spectra collide for this draw")
        pi = np.eye(sys.n)
        ev = go.gradient(sys, s, sys.b, l, pi)
        assert np.linalg.norm(ev.grad_s) <= 1e-7
        assert np.linalg.norm(ev.grad_g) <= 1e-7

    def test_quadratic_case_is_exact_for_central_differences(self):
        # with zero directions the state map ignores G, so the objective is
        # exactly quadratic in G and central differences are exact up to
        # rounding even for a coarse step
        sys, _, orders, pi = setup_case(33)
        l0 = np.zeros((1, 3))
        rng = np.random.default_rng(33)
        s = np.diag([-1.0, -2.0, -3.0])
        g = rng.standard_normal((3, 1))
        ev = go.gradient(sys, s, g, l0, pi)
        _, fd_g = go.finite_diff_gradient(sys, s, g, l0, pi, h=1e-3)
        assert np.allclose(fd_g, ev.grad_g, rtol=1e-9, atol=1e-11)


class TestProjection:
    def test_full_topology_is_identity(self):
        sys = make_structured_system((2, 2), [{1, 2}, {1, 2}], seed=41)
        orders = nw.ReducedOrders((1, 1))
        gs = np.arange(4.0).reshape(2, 2)
        gg = np.arange(2.0).reshape(2, 1)
        ps, pg = go.project_gradient(gs, gg, sys.topology, orders, np.ones((1, 2)))
        assert np.array_equal(ps, gs)
        assert np.array_equal(pg, gg)

    def test_forbidden_block_follows_g_rule(self):
        top = nw.Topology((1, 1), ({1}, {1, 2}), 1, 1)
        orders = nw.ReducedOrders((1, 1))
        l = np.array([[1.0, 1.0]])
        gs = np.array([[1.0, 5.0], [2.0, 3.0]])
        gg = np.array([[0.5], [0.25]])
        ps, pg = go.project_gradient(gs, gg, top, orders, l)
        # forbidden block (1,2): projected S entry equals (G L) there
        assert ps[0, 1] == (pg @ l)[0, 1]
        assert ps[0, 0] == gs[0, 0] and ps[1, 0] == gs[1, 0]
        # a step along the projection keeps the forbidden entry of S - G L fixed
        alpha = 0.37
        f_before = np.zeros((2, 2))
        s0 = f_before + gg * 0 @ l  # start with S - G L = 0 on the forbidden block
        s_new = -alpha * ps
        g_new = -alpha * pg
        assert (s_new - g_new @ l)[0, 1] == pytest.approx(0.0, abs=1e-15)

    def test_input_mask_applied_before_s_rule(self):
        top = nw.Topology((1, 1), ({1}, {1, 2}), 2, 1,
                          input_neighbors=({1}, {2}))
        orders = nw.ReducedOrders((1, 1))
        l = np.eye(2)
        mask = nw.input_entry_mask(top, orders)
        gs = np.ones((2, 2))
        gg = np.ones((2, 2))
        ps, pg = go.project_gradient(gs, gg, top, orders, l, input_mask=mask)
        assert pg[0, 1] == 0.0 and pg[1, 0] == 0.0
        # the S rule sees the masked G gradient
        assert ps[0, 1] == (pg @ l)[0, 1]


class TestLineSearch:
    def test_accepts_descent_step(self):
        sys, l, orders, pi = setup_case(51)
        s, g = random_feasible_pair(sys, orders, l, 51)
        ev = go.gradient(sys, s, g, l, pi)
        proj = go.project_gradient(ev.grad_s, ev.grad_g, sys.topology, orders, l)
        cfg = go.OptimizerConfig()
        alpha, s_new, g_new, f_new = go.line_search(
            sys, s, g, l, pi, proj, cfg, f_current=ev.f
        )
        assert f_new < ev.f
        assert alpha > 0

    def test_halving_near_stability_boundary(self):
        sys, l, orders, pi = setup_case(52)
        # start extremely close to the boundary so a unit step overshoots
        s = np.diag([-0.02, -0.03, -0.04])
        g = np.zeros((3, 1))
        ev = go.gradient(sys, s, g, l, pi)
        proj = go.project_gradient(ev.grad_s, ev.grad_g, sys.topology, orders, l)
        norm = np.sqrt(np.linalg.norm(proj[0]) ** 2 + np.linalg.norm(proj[1]) ** 2)
        if norm < 1e-12:
            pytest.skip("degenerate draw with vanishing gradient")
        cfg = go.OptimizerConfig(initial_step=1e3 / norm)
        alpha, *_ = go.line_search(sys, s, g, l, pi, proj, cfg, f_current=ev.f)
        assert alpha < cfg.initial_step  # at least one halving happened

    def test_small_first_step_accepted_immediately(self):
        # in a locally quadratic-like region a sufficiently small first
        # trial satisfies the Armijo test without any halving
        sys, l, orders, pi = setup_case(54)
        s, g = random_feasible_pair(sys, orders, l, 54)
        ev = go.gradient(sys, s, g, l, pi)
        proj = go.project_gradient(ev.grad_s, ev.grad_g, sys.topology, orders, l)
        cfg = go.OptimizerConfig(initial_step=1e-4)
        alpha, *_ = go.line_search(sys, s, g, l, pi, proj, cfg, f_current=ev.f)
        assert alpha == cfg.initial_step

    def test_stall_reported(self):
        sys, l, orders, pi = setup_case(53)
        s, g = random_feasible_pair(sys, orders, l, 53)
        ev = go.gradient(sys, s, g, l, pi)
        # an ascent direction can never satisfy the Armijo condition
        direction = (-ev.grad_s, -ev.grad_g)
        cfg = go.OptimizerConfig(max_halvings=5)
        if np.linalg.norm(ev.grad_s) + np.linalg.norm(ev.grad_g) < 1e-12:
            pytest.skip("vanishing gradient")
        with pytest.raises(SolverError, match="stalled"):
            go.line_search(sys, s, g, l, pi, direction, cfg, f_current=ev.f)


class TestOptimize:
    def test_stops_immediately_at_global_minimum(self):
        sys = make_structured_system(*CHAIN3, seed=61)
        rng = np.random.default_rng(61)
        l = rng.standard_normal((1, sys.n))
        s = sys.a + sys.b @ l
        if not linalg.spectra_disjoint(s, sys.a):
            pytest.skip("spectra collide for this draw")
        report = go.optimize(sys, (s, sys.b), l, np.eye(sys.n),
                             nw.ReducedOrders((3, 3, 2)), go.OptimizerConfig())
        assert report.iterations == 0
        assert report.converged
        assert report.grad_mapping_history[-1] <= 1e-6

    def test_monotone_descent_and_feasible_iterates(self):
        sys, l, orders, pi = setup_case(62)
        s0, g0 = random_feasible_pair(sys, orders, l, 62)
        mask = nw.forbidden_entry_mask(sys.topology, orders)
        seen = []

        def watch(k, s, g, ev, gamma):
            f_map = s - g @ l
            seen.append((
                np.abs(f_map[mask]).max() if mask.any() else 0.0,
                linalg.spectrum(f_map).max_real_part,
            ))

        cfg = go.OptimizerConfig(max_iter=150)
        report = go.optimize(sys, (s0, g0), l, pi, orders, cfg, callback=watch)
        diffs = np.diff(report.f_history)
        assert np.all(diffs <= 1e-13)
        assert all(drift == 0.0 for drift, _ in seen)
        assert all(real_part < 0.0 for _, real_part in seen)

    def test_rate_monitor_bound_holds(self):
        sys, l, orders, pi = setup_case(63)
        s0, g0 = random_feasible_pair(sys, orders, l, 63)
        cfg = go.OptimizerConfig(max_iter=80)
        report = go.optimize(sys, (s0, g0), l, pi, orders, cfg)
        rate = report.rate_monitor
        if rate["sum_step_sizes"] > 0:
            assert rate["min_grad_mapping_sq"] <= rate["armijo_bound_min_grad_mapping_sq"] * (1 + 1e-9)

    def test_infeasible_init_rejected(self):
        sys, l, orders, pi = setup_case(64)
        bad_s = np.diag([1.0, -1.0, -2.0])
        with pytest.raises(UnstableMatrixError):
            go.optimize(sys, (bad_s, np.zeros((3, 1))), l, pi, orders, go.OptimizerConfig())

    def test_objective_consistency_along_run(self):
        sys, l, orders, pi = setup_case(65)
        s0, g0 = random_feasible_pair(sys, orders, l, 65)
        checks = []

        def watch(k, s, g, ev, gamma):
            if k % 10 == 0:
                err = nw._assemble_error(sys, s - g @ l, g, pi)
                checks.append((ev.f, nw.h2_norm(err) ** 2))

        go.optimize(sys, (s0, g0), l, pi, orders, go.OptimizerConfig(max_iter=60), callback=watch)
        for f_val, h2sq in checks:
            assert f_val == pytest.approx(h2sq, rel=1e-10, abs=1e-12)


class TestConsistentRefinement:
    def test_objective_equals_emitted_error(self):
        sys, l, orders, pi = setup_case(71)
        s0, g0 = random_feasible_pair(sys, orders, l, 71)
        cfg = go.OptimizerConfig(max_iter=300, epsilon=1e-9)
        rep = go.refine_tableau_consistent(sys, (s0, g0), l, None, orders, cfg)
        red = nw.build_reduced(sys, rep.s, rep.g, l, orders)
        h2 = nw.h2_norm(nw.error_realization(sys, red))
        assert np.sqrt(max(rep.f_history[-1], 0.0)) == pytest.approx(h2, rel=1e-8)
        assert np.all(np.diff(rep.f_history) <= 1e-13)

    def test_gradient_includes_tableau_sensitivity(self):
        sys, l, orders, pi = setup_case(72)
        s, g = random_feasible_pair(sys, orders, l, 72)
        ev = go._ConsistentEvaluator(sys, l)
        f0, gs, gg = ev.value_and_grad(s, g)
        h = 1e-6
        for idx in [(0, 0), (1, 2), (2, 1)]:
            sp, sm = s.copy(), s.copy()
            sp[idx] += h
            sm[idx] -= h
            fd = (ev.value(sp, g) - ev.value(sm, g)) / (2 * h)
            assert gs[idx] == pytest.approx(fd, rel=2e-5, abs=1e-9)
