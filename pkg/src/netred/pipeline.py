"""End-to-end reduction driver: direction policies, initialization, SDP
warm start, the fixed-tableau descent, and a tableau-consistent finishing
stage.

The fixed-tableau descent treats the reduced output map as data, so its
minimizers need not be self-consistent: re-solving the tableau at the
final interpolation matrix can change the achieved error.  The driver
therefore finishes with projected descent on the tableau-consistent
objective (exact gradient including the tableau sensitivity), run from a
small deterministic bank of starts around the warm start; the best emitted
model wins.  At such a point the reported objective and the error of the
emitted model agree by construction.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import gradopt, linalg, network, sdp
from .errors import NetredWarning, SolverError, SpectraOverlapError
from .network import ReducedOrders

__all__ = ["ReductionResult", "reduce_network", "make_directions", "fallback_init"]


def make_directions(policy, m, nu, matrix=None):
    """Direction matrix L per policy: ``identity``, ``canonical-last`` or ``matrix``."""
    if policy == "identity":
        if m != nu:
            raise SolverError(
                f"identity direction policy needs m == nu, got m={m}, nu={nu}"
            )
        return np.eye(nu)
    if policy == "canonical-last":
        if m != 1:
            raise SolverError("canonical-last directions are defined for single-input systems")
        l = np.zeros((1, nu))
        l[0, -1] = 1.0
        return l
    if policy == "matrix":
        l = np.asarray(matrix, dtype=float)
        if l.shape != (m, nu):
            raise SolverError(f"direction matrix must be {m}x{nu}, got {l.shape}")
        return l
    raise SolverError(f"unknown direction policy {policy!r}")


def fallback_init(sys, orders):
    """Structure-safe initial pair: Hurwitz diagonal S, zero G.

    The nominal spectrum -1, ..., -nu is nudged if it happens to meet the
    spectrum of the network matrix.
    """
    nu = orders.nu
    for shift in (0.0, 0.0371, 0.1113, 0.2154):
        s0 = np.diag(-np.arange(1.0, nu + 1.0) - shift)
        if linalg.spectra_disjoint(s0, sys.a):
            if shift:
                warnings.warn(
                    "fallback initial spectrum nudged to avoid the network spectrum",
                    NetredWarning,
                    stacklevel=2,
                )
            return s0, np.zeros((nu, sys.m))
    raise SolverError("could not find a fallback initial spectrum clear of sigma(A)")


@dataclass
class ReductionResult:
    """Everything a reduction run produced, for reporting and serialization."""

    model: network.ReducedNetwork
    h2_error: float
    method: str
    l_matrix: np.ndarray
    s_grid: np.ndarray
    sdp_solution: object = None
    sdp_objective: float = None
    sdp_model: network.ReducedNetwork = None
    sdp_h2_error: float = None
    optimizer_report: object = None
    refine_summaries: list = field(default_factory=list)
    grad_iterations: int = 0
    constraint_report: object = None
    moment_report: object = None

    def summary(self):
        out = {
            "method": self.method,
            "h2_error": self.h2_error,
            "sdp_objective": self.sdp_objective,
            "sdp_h2_error": self.sdp_h2_error,
            "grad_iterations": int(self.grad_iterations),
            "refine_starts": self.refine_summaries,
        }
        if self.constraint_report is not None:
            out["constraint_report"] = self.constraint_report.to_dict()
        if self.moment_report is not None:
            out["moment_matching_passed"] = bool(self.moment_report.passed)
        return out


def _emitted_error(sys, s, g, l, orders):
    """H2 error of the emitted (tableau-resolved) model at (s, g), or None."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NetredWarning)
            red = network.build_reduced(sys, s, g, l, orders)
        return float(network.h2_norm(network.error_realization(sys, red))), red
    except Exception:
        return None, None


def _perturbed_start(base_s, base_g, l, topology, orders, scale, seed):
    """Deterministic structured perturbation of a feasible pair."""
    rng = np.random.default_rng(seed)
    nu, m = base_g.shape[0], base_g.shape[1]
    mask = network.forbidden_entry_mask(topology, orders)
    p = rng.standard_normal((nu, nu))
    p[mask] = 0.0
    norm_p = np.linalg.norm(p)
    if norm_p > 0.0:
        p /= norm_p
    dg = rng.standard_normal((nu, m))
    norm_g = np.linalg.norm(dg)
    if norm_g > 0.0:
        dg /= norm_g
    g = base_g + scale * dg
    f = (base_s - base_g @ np.asarray(l, float)) + scale * p
    top_real = linalg.spectrum(f).max_real_part
    if top_real >= -0.05:
        f = f - (top_real + 0.3) * np.eye(nu)
    s = f + g @ np.asarray(l, float)
    return s, g


def reduce_network(
    sys,
    l,
    orders,
    method="sdp+grad",
    s_grid=None,
    sdp_tol=1e-6,
    opt_config=None,
    refine_iters=2500,
    refine_scales=(0.0, 0.5, 1.0, 2.0),
    refine_seed=101,
):
    """Reduce a network system by the relaxation, the descent, or both.

    ``method`` is one of ``"sdp"``, ``"grad"``, ``"sdp+grad"`` (default:
    descent initialized at the relaxation recovery, per the reduction
    algorithm).  The gradient stage runs the fixed-tableau descent once
    and then the tableau-consistent refinement from a deterministic bank
    of starts (the descent result plus structured perturbations of the
    warm start at the relative ``refine_scales``); the best stable
    structured model wins.
    """
    with threadpool_limits(limits=1):
        return _reduce_network_inner(
            sys, l, orders, method, s_grid, sdp_tol, opt_config,
            refine_iters, refine_scales, refine_seed,
        )


def _reduce_network_inner(
    sys, l, orders, method, s_grid, sdp_tol, opt_config,
    refine_iters, refine_scales, refine_seed,
):
    if method not in ("sdp", "grad", "sdp+grad"):
        raise SolverError(f"unknown reduction method {method!r}")
    if not isinstance(orders, ReducedOrders):
        orders = ReducedOrders(tuple(orders))
    orders.validate_against(sys.topology)
    l = np.asarray(l, dtype=float)
    nu = orders.nu
    if s_grid is None:
        s_grid = sdp.default_interpolation_grid(nu)
    s_grid = np.asarray(s_grid, dtype=float)

    result = ReductionResult(
        model=None, h2_error=None, method=method, l_matrix=l, s_grid=s_grid
    )

    init = None
    if method in ("sdp", "sdp+grad"):
        prob = sdp.build_sdp(sys, l, orders, s_grid=s_grid)
        sol = sdp.solve_sdp(prob, tol=sdp_tol)
        if sol.status == "infeasible-detected":
            raise SolverError("relaxation reported infeasible")
        red_sdp, _ = sdp.recover_reduced(sol, sys, l, orders)
        result.sdp_solution = sol
        result.sdp_objective = float(sol.objective)
        result.sdp_model = red_sdp
        result.sdp_h2_error = float(
            network.h2_norm(network.error_realization(sys, red_sdp))
        )
        init = (red_sdp.s, red_sdp.g)
        if method == "sdp":
            result.model = red_sdp
            result.h2_error = result.sdp_h2_error
            _attach_reports(sys, result)
            return result

    if init is None:
        init = fallback_init(sys, orders)
    base_s, base_g = np.array(init[0], float), np.array(init[1], float)

    config = opt_config if opt_config is not None else gradopt.OptimizerConfig()
    if config.input_mask is None:
        config.input_mask = network.input_entry_mask(sys.topology, orders)

    # stage 1: fixed-tableau descent from the warm start
    pi0 = _tableau_for(sys, base_s, l, s_grid)
    report = gradopt.optimize(sys, (base_s, base_g), l, pi0, orders, config)
    result.optimizer_report = report
    result.grad_iterations = int(report.iterations)

    # stage 2: tableau-consistent refinement bank
    refine_cfg = gradopt.OptimizerConfig(
        epsilon=min(config.epsilon, 1e-7),
        max_iter=int(refine_iters),
        armijo_c=config.armijo_c,
        backtrack_factor=config.backtrack_factor,
        initial_step=config.initial_step,
        stability_margin=config.stability_margin,
        input_mask=config.input_mask,
    )
    pert_scale = max(1.0, float(np.linalg.norm(base_s)) / 2.0)
    starts = [("descent", report.s, report.g)]
    for k, rel in enumerate(refine_scales):
        if rel == 0.0:
            starts.append(("warm-start", base_s, base_g))
        else:
            s_p, g_p = _perturbed_start(
                base_s, base_g, l, sys.topology, orders, rel * pert_scale, refine_seed + k
            )
            starts.append((f"perturbed-{rel:g}", s_p, g_p))

    best = {"h2": np.inf, "model": None, "report": None}
    for tag, s0, g0 in starts:
        try:
            rep = gradopt.refine_tableau_consistent(
                sys, (s0, g0), l, None, orders, refine_cfg
            )
        except Exception as exc:
            result.refine_summaries.append({"start": tag, "error": str(exc)})
            continue
        h2, emitted = _emitted_error(sys, rep.s, rep.g, l, orders)
        result.refine_summaries.append(
            {
                "start": tag,
                "iterations": int(rep.iterations),
                "termination": rep.termination,
                "objective_sqrt": float(np.sqrt(max(rep.f_history[-1], 0.0))),
                "h2_error": h2,
            }
        )
        result.grad_iterations += int(rep.iterations)
        if h2 is not None and h2 < best["h2"]:
            best = {"h2": h2, "model": emitted, "report": rep}

    if best["model"] is None:
        # fall back to the fixed-tableau result if no refinement start
        # produced a valid emitted model
        h2, emitted = _emitted_error(sys, report.s, report.g, l, orders)
        if emitted is None:
            raise SolverError("gradient stage produced no stable emitted model")
        best = {"h2": h2, "model": emitted, "report": report}

    result.model = best["model"]
    result.h2_error = float(best["h2"])
    _attach_reports(sys, result)
    return result


def _tableau_for(sys, s_init, l, s_grid):
    """Tableau at the initial interpolation matrix, falling back to the grid."""
    try:
        return network.compute_pi(sys, s_init, l, rank_warning=False)
    except SpectraOverlapError:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NetredWarning)
            return network.compute_pi(sys, s_grid, l)


def _attach_reports(sys, result):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NetredWarning)
        result.constraint_report = network.check_problem_constraints(sys, result.model)
        result.moment_report = network.verify_moment_matching(sys, result.model)
