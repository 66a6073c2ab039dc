import numpy as np
import pytest

from netred import benchmarks, network as nw, sdp
from netred.errors import NetredWarning, SolverError, UnstableMatrixError
from netred.sdpsolver import (
    EqualityGroup,
    LmiConstraint,
    SdpProblem,
    VarBlock,
    audit_solution,
    solve_sdp_generic,
)

from conftest import make_structured_system


class TestGenericSolver:
    def test_lambda_max_program(self):
        prob = SdpProblem(
            blocks={"t": VarBlock("t", "sym", (1, 1))},
            objective={"t": np.array([[1.0]])},
            lmis=[LmiConstraint("dom", 2, -np.diag([1.0, 2.0]),
                                [("t", lambda tm: tm[0, 0] * np.eye(2))])],
        )
        sol = solve_sdp_generic(prob, tol=1e-6)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(2.0, abs=1e-5)
        assert sol.audit["feasible"]

    def test_trace_minimization(self):
        prob = SdpProblem(
            blocks={"x": VarBlock("x", "sym", (3, 3))},
            objective={"x": np.eye(3)},
            lmis=[LmiConstraint("psd", 3, -np.eye(3), [("x", lambda m: m)])],
        )
        sol = solve_sdp_generic(prob, tol=1e-6)
        assert sol.objective == pytest.approx(3.0, abs=1e-5)
        assert np.allclose(sol.values["x"], np.eye(3), atol=1e-4)

    def test_infeasibility_detected(self):
        prob = SdpProblem(
            blocks={"x": VarBlock("x", "sym", (2, 2))},
            objective={"x": np.eye(2)},
            lmis=[
                LmiConstraint("ge", 2, -np.eye(2), [("x", lambda m: m)]),
                LmiConstraint("le", 2, np.zeros((2, 2)), [("x", lambda m: -m)]),
            ],
        )
        assert solve_sdp_generic(prob, tol=1e-6).status == "infeasible-detected"

    def test_equality_elimination(self):
        prob = SdpProblem(
            blocks={"x": VarBlock("x", "sym", (2, 2))},
            objective={"x": np.eye(2)},
            lmis=[LmiConstraint("psd", 2, -np.eye(2), [("x", lambda m: m)])],
            equalities=[EqualityGroup("off", lambda v: np.array([v["x"][0, 1]]))],
        )
        sol = solve_sdp_generic(prob, tol=1e-6)
        assert sol.values["x"][0, 1] == 0.0
        assert sol.objective == pytest.approx(2.0, abs=1e-5)

    def test_audit_is_independent(self):
        prob = SdpProblem(
            blocks={"x": VarBlock("x", "sym", (2, 2))},
            objective={"x": np.eye(2)},
            lmis=[LmiConstraint("psd", 2, -np.eye(2), [("x", lambda m: m)])],
        )
        good = audit_solution(prob, {"x": 2.0 * np.eye(2)}, tol=1e-6)
        assert good["feasible"] and good["max_violation"] == 0.0
        bad = audit_solution(prob, {"x": 0.5 * np.eye(2)}, tol=1e-6)
        assert not bad["feasible"]
        assert bad["lmi_min_eigenvalues"]["psd"] == pytest.approx(-0.5)


class TestBuildSdp:
    def test_fixture_shapes_and_structure_equalities(self, paper_fixture):
        sys, l = paper_fixture
        prob = sdp.build_sdp(sys, l, (1, 1, 1, 1))
        shapes = {name: blk.shape for name, blk in prob.blocks.items()}
        assert shapes == {
            "M11": (12, 12), "M22": (4, 4), "X22": (1, 1),
            "Y22": (4, 4), "Z22": (4, 1), "TH22": (4, 4),
        }
        assert prob.blocks["M22"].block_sizes == (1, 1, 1, 1)
        dims = {lmi.name: lmi.dim for lmi in prob.lmis}
        assert dims == {
            "gramian_decay": 4, "schur_coupling": 5, "full_block": 16,
            "M11_psd": 12, "M22_psd": 4,
        }
        # one exact zero per forbidden block of the interconnection map
        zero_vals = prob.unpack(np.zeros(prob.num_params))
        zero_vals["Z22"] = np.ones((4, 1))
        res = prob.equalities[0].residual(zero_vals)
        assert res.shape == (4,)  # forbidden blocks (1,4),(2,4),(4,1),(4,2)

    def test_full_topology_has_no_equalities(self):
        sys = make_structured_system((2, 2), [{1, 2}, {1, 2}], seed=81)
        prob = sdp.build_sdp(sys, np.ones((1, 2)), (1, 1))
        zero_vals = prob.unpack(np.zeros(prob.num_params))
        zero_vals["Z22"] = np.ones((2, 1))
        assert prob.equalities[0].residual(zero_vals).size == 0

    def test_input_coupling_adds_zero_constraints(self):
        sys = benchmarks.generate_power_network(4, seed=5)
        prob = sdp.build_sdp(sys, np.eye(4), (1, 1, 1, 1))
        names = [eq.name for eq in prob.equalities]
        assert "input_zeros" in names
        vals = prob.unpack(np.zeros(prob.num_params))
        vals["Z22"] = np.ones((4, 4))
        input_res = prob.equalities[1].residual(vals)
        # chain topology: areas are only input-coupled to themselves
        assert input_res.size == 12

    def test_objective_is_trace_form(self, paper_fixture):
        sys, l = paper_fixture
        prob = sdp.build_sdp(sys, l, (1, 1, 1, 1))
        vals = prob.unpack(np.zeros(prob.num_params))
        vals["M11"] = np.eye(12)
        vals["X22"] = np.array([[3.0]])
        expected = float(np.trace(sys.b.T @ np.eye(12) @ sys.b)) + 3.0
        assert prob.objective_value(vals) == pytest.approx(expected)


class TestSolveAndRecover:
    @pytest.fixture(scope="class")
    def fixture_solution(self, paper_fixture):
        sys, l = paper_fixture
        prob = sdp.build_sdp(sys, l, (1, 1, 1, 1))
        return sys, l, prob, sdp.solve_sdp(prob, tol=1e-6)

    def test_fixture_solve_certified(self, fixture_solution):
        _, _, prob, sol = fixture_solution
        assert sol.status == "optimal"
        assert sol.duality_gap <= 1e-6 * (1 + abs(sol.objective))
        assert sol.audit["feasible"]
        # relaxation floor is the squared H2 norm of the full network
        assert sol.objective == pytest.approx(2.805, abs=0.02)

    def test_recovered_model_stable_structured(self, fixture_solution):
        sys, l, prob, sol = fixture_solution
        red, mcal = sdp.recover_reduced(sol, sys, l, (1, 1, 1, 1))
        f = red.f
        mask = nw.forbidden_entry_mask(sys.topology, red.orders)
        assert np.all(f[mask] == 0.0)
        assert np.max(np.linalg.eigvals(f).real) < 0
        assert mcal.shape == (16, 16)
        # off-diagonal Gramian coupling is zero by construction
        assert np.array_equal(mcal[:12, 12:], np.zeros((12, 4)))

    def test_identity_m22_recovery_is_verbatim(self, paper_fixture):
        sys, l = paper_fixture
        sol_values = {
            "M11": np.eye(12),
            "M22": np.eye(4),
            "X22": np.array([[1.0]]),
            "Y22": -np.eye(4),
            "Z22": np.zeros((4, 1)),
            "TH22": np.diag([-1.0, -2.0, -3.0, -4.0]),
        }
        from netred.sdpsolver import SdpSolution

        sol = SdpSolution(
            values=sol_values, objective=0.0, status="optimal",
            feasibility_residual=0.0, kkt_residual=0.0, duality_gap=0.0,
            newton_iterations=0,
        )
        red, _ = sdp.recover_reduced(sol, sys, l, (1, 1, 1, 1))
        assert np.allclose(red.s, sol_values["TH22"])
        assert np.allclose(red.g, sol_values["Z22"])

    def test_elimination_identity_holds_at_solution(self, fixture_solution):
        # the analytic elimination rests on two identities that must hold
        # at the assembled solution: the reinstated M11 solves its Lyapunov
        # equation (so the big LMI holds with equality in the Schur
        # complement), and the traced objective splits into the full-model
        # energy plus the Y22-dependent penalty
        sys, l, prob, sol = fixture_solution
        import scipy.linalg as spla

        m11, y22 = sol.values["M11"], sol.values["Y22"]
        red_data = prob.reduction
        cpi = red_data.cpi
        q_eff = sys.c.T @ sys.c + (sys.c.T @ cpi) @ np.linalg.solve(-y22, cpi.T @ sys.c)
        resid = sys.a.T @ m11 + m11 @ sys.a + (q_eff + q_eff.T) / 2.0
        assert np.linalg.norm(resid) <= 1e-8 * max(1.0, np.linalg.norm(q_eff))

        w_full = spla.solve_continuous_lyapunov(sys.a, -(sys.b @ sys.b.T))
        h2_full_sq = float(np.trace(sys.c @ w_full @ sys.c.T))
        penalty = float(
            np.trace(np.linalg.solve(-y22, cpi.T @ (sys.c @ w_full @ sys.c.T) @ cpi))
        )
        traced = float(np.trace(sys.b.T @ m11 @ sys.b))
        assert traced == pytest.approx(h2_full_sq + penalty, rel=1e-8)

    def test_generic_feasible_point_cannot_beat_structured(self, paper_fixture):
        # one-sided dual-route check: any audited-feasible point the plain
        # parameterization reaches must lie above the structured optimum
        sys, l = paper_fixture
        prob = sdp.build_sdp(sys, l, (1, 1, 1, 1))
        fast = sdp.solve_sdp(prob, tol=1e-5)
        slow = solve_sdp_generic(prob, tol=1e-5, max_newton=600)
        assert slow.audit["feasible"]
        assert slow.objective >= fast.objective - 1e-3 * (1 + abs(fast.objective))

    def test_unstable_recovery_raises(self, paper_fixture):
        sys, l = paper_fixture
        from netred.sdpsolver import SdpSolution

        values = {
            "M11": np.eye(12), "M22": np.eye(4), "X22": np.array([[1.0]]),
            "Y22": -np.eye(4), "Z22": np.zeros((4, 1)),
            "TH22": np.diag([1.0, -2.0, -3.0, -4.0]),
        }
        sol = SdpSolution(values=values, objective=0.0, status="optimal",
                          feasibility_residual=0.0, kkt_residual=0.0,
                          duality_gap=0.0, newton_iterations=0)
        with pytest.raises(UnstableMatrixError):
            sdp.recover_reduced(sol, sys, l, (1, 1, 1, 1))

    def test_near_singular_m22_gets_ridge(self, paper_fixture):
        sys, l = paper_fixture
        from netred.sdpsolver import SdpSolution

        values = {
            "M11": np.eye(12), "M22": np.diag([1.0, 1.0, 1.0, 1e-14]),
            "X22": np.array([[1.0]]), "Y22": -np.eye(4),
            "Z22": np.zeros((4, 1)), "TH22": np.diag([-1.0, -2.0, -3.0, -4.0]),
        }
        sol = SdpSolution(values=values, objective=0.0, status="optimal",
                          feasibility_residual=0.0, kkt_residual=0.0,
                          duality_gap=0.0, newton_iterations=0)
        with pytest.warns(NetredWarning, match="ridge"):
            sdp.recover_reduced(sol, sys, l, (1, 1, 1, 1))

    def test_infeasible_solution_rejected(self, paper_fixture):
        sys, l = paper_fixture
        from netred.sdpsolver import SdpSolution

        sol = SdpSolution(values={}, objective=np.nan, status="infeasible-detected",
                          feasibility_residual=np.inf, kkt_residual=np.inf,
                          duality_gap=np.inf, newton_iterations=0)
        with pytest.raises(SolverError):
            sdp.recover_reduced(sol, sys, l, (1, 1, 1, 1))


class TestCertificates:
    def test_scalar_worked_example(self, scalar_system):
        # decoupled scalar instance: both slacks evaluate to exactly -(-1)
        cert = sdp.BlockDiagCertificate(
            m11=np.array([[1.0]]), m22=np.array([[1.0]]), p=np.array([[1.0]]),
            s=np.array([[-1.0]]), g=np.array([[0.0]]),
        )
        zero_b = nw.NetworkSystem(
            scalar_system.a, np.zeros((1, 1)), scalar_system.c, scalar_system.topology
        )
        ok, margins = sdp.check_sufficient_conditions(
            zero_b, np.array([[-1.0]]), np.array([[0.0]]), np.array([[1.0]]), cert
        )
        assert ok
        assert margins["first_slack_min_eig"] == pytest.approx(1.0)
        assert margins["second_slack_min_eig"] == pytest.approx(1.0)

    def test_violated_case(self, scalar_system):
        cert = sdp.BlockDiagCertificate(
            m11=np.array([[1.0]]), m22=np.array([[1.0]]), p=np.array([[3.0]]),
            s=np.array([[-1.0]]), g=np.array([[0.0]]),
        )
        zero_b = nw.NetworkSystem(
            scalar_system.a, np.zeros((1, 1)), scalar_system.c, scalar_system.topology
        )
        ok, margins = sdp.check_sufficient_conditions(
            zero_b, np.array([[-1.0]]), np.array([[0.0]]), np.array([[1.0]]), cert
        )
        assert not ok
        # second inequality has slack -(-2 + 3) = -1
        assert margins["second_slack_min_eig"] == pytest.approx(-1.0)

    def test_non_pd_coupling_rejected(self, scalar_system):
        cert = sdp.BlockDiagCertificate(
            m11=np.array([[1.0]]), m22=np.array([[1.0]]), p=np.array([[0.0]]),
            s=np.array([[-1.0]]), g=np.array([[0.0]]),
        )
        with pytest.raises(ValueError, match="positive definite"):
            sdp.check_sufficient_conditions(
                scalar_system, np.array([[-1.0]]), np.array([[0.0]]),
                np.array([[1.0]]), cert,
            )

    def test_construction_passes_its_own_check(self, paper_fixture):
        sys, l = paper_fixture
        cert = sdp.construct_certificate(sys, np.diag([-10.0, -10.0, -10.0, -10.0]), l)
        if cert is None:
            pytest.skip("coupling matrix not positive definite for this seed matrix")
        ok, margins = sdp.check_sufficient_conditions(sys, cert.s, cert.g, l, cert)
        assert ok
        assert np.min(np.linalg.eigvalsh(cert.m11)) >= -1e-8

    def test_zero_output_always_certifiable(self):
        sys0 = make_structured_system((2, 2), [{1, 2}, {1, 2}], seed=91)
        zero_c = nw.NetworkSystem(sys0.a, sys0.b, np.zeros((1, sys0.n)), sys0.topology)
        seed = np.diag([-1.0, -2.0])
        cert = sdp.construct_certificate(zero_c, seed, np.ones((1, 2)))
        assert cert is not None
        # with no output the coupling matrix is minus twice the seed
        assert np.allclose(cert.p, -(seed + seed.T))
        ok, _ = sdp.check_sufficient_conditions(zero_c, seed, cert.g, np.ones((1, 2)), cert)
        assert ok

    def test_unstable_seed_rejected(self, paper_fixture):
        sys, l = paper_fixture
        with pytest.raises(UnstableMatrixError):
            sdp.construct_certificate(sys, np.diag([1.0, -1.0, -1.5, -2.0]), l)
