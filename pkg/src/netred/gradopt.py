"""Smooth H2-error objective, its analytic gradient, the topology
projection and the projected-gradient descent loop.

The objective treats the tableau ``pi`` (hence the reduced output map) as
fixed data: the decision variables are the interpolation matrix S and the
free parameter G.  Its value and gradient come from two Lyapunov-type
solves on the error system, done block by block so that the full-order
blocks are factored once per run instead of once per iterate.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg, network
from .errors import NetredWarning, SolverError, UnstableMatrixError

__all__ = [
    "ObjectiveEval",
    "OptimizerConfig",
    "OptimizerReport",
    "objective",
    "gradient",
    "project_gradient",
    "line_search",
    "optimize",
    "finite_diff_gradient",
]


@dataclass(frozen=True)
class ObjectiveEval:
    """Objective value with the Gramian pair it came from.

    ``f`` is the squared H2 norm of the error system at (S, G); the
    gradient blocks are populated only when requested.
    """

    f: float
    m: np.ndarray
    w: np.ndarray
    grad_s: np.ndarray = None
    grad_g: np.ndarray = None


@dataclass
class OptimizerConfig:
    epsilon: float = 1e-6
    max_iter: int = 5000
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    stability_margin: float = 1e-9
    input_mask: np.ndarray = None
    max_halvings: int = 60

    def __post_init__(self):
        if not (0.0 < self.armijo_c < 1.0):
            raise ValueError("armijo_c must lie in (0, 1)")
        if not (0.0 < self.backtrack_factor < 1.0):
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.initial_step <= 0.0 or self.epsilon <= 0.0:
            raise ValueError("initial_step and epsilon must be positive")
        if self.max_iter < 0 or self.max_halvings < 1:
            raise ValueError("iteration limits must be positive")
        if self.stability_margin < 0.0:
            raise ValueError("stability_margin must be nonnegative")


class _Evaluator:
    """Shared factorizations for repeated objective/gradient evaluations.

    Holds the complex Schur forms of A and A^T plus the constant Gramian
    blocks of the error system; per-iterate work is then two small Schur
    factorizations and four triangular back-substitutions.
    """

    def __init__(self, sys, l, pi):
        self.sys = sys
        self.l = np.asarray(l, dtype=float)
        self.pi = np.asarray(pi, dtype=float)
        self.cpi = sys.c @ self.pi
        self.cache_a = linalg.SchurCache(sys.a)
        self.cache_at = linalg.SchurCache(sys.a.T)
        self.m11 = linalg.solve_lyapunov(sys.a, sys.c.T @ sys.c, "observability", margin=0.0)
        self.w11 = linalg.solve_lyapunov(sys.a, sys.b @ sys.b.T, "controllability", margin=0.0)
        self._f_const = float(np.trace(sys.b.T @ self.m11 @ sys.b))
        self._ctcpi = sys.c.T @ self.cpi

    def evaluate(self, s, g, with_grad=False, margin=0.0):
        sys = self.sys
        f_map = s - g @ self.l
        sp = linalg.spectrum(f_map)
        if not sp.max_real_part < -margin:
            raise UnstableMatrixError(
                f"candidate S - G L is not Hurwitz (max real part {sp.max_real_part:.6g})",
                max_real_part=sp.max_real_part,
            )
        cache_f = linalg.SchurCache(f_map)
        cache_ft = linalg.SchurCache(f_map.T)
        m12 = linalg._sylv_dense(sys.a.T, f_map, -self._ctcpi, self.cache_at, cache_f)
        m22 = linalg._sylv_dense(f_map.T, f_map, self.cpi.T @ self.cpi, cache_ft, cache_f)
        m22 = (m22 + m22.T) / 2.0
        t12 = float(np.sum((sys.b.T @ m12) * g.T))
        t22 = float(np.trace(g.T @ m22 @ g))
        fval = self._f_const + 2.0 * t12 + t22
        w12 = linalg._sylv_dense(sys.a, f_map.T, sys.b @ g.T, self.cache_a, cache_ft)
        w22 = linalg._sylv_dense(f_map, f_map.T, g @ g.T, cache_f, cache_ft)
        w22 = (w22 + w22.T) / 2.0
        n, nu = sys.n, f_map.shape[0]
        m_full = np.zeros((n + nu, n + nu))
        m_full[:n, :n] = self.m11
        m_full[:n, n:] = m12
        m_full[n:, :n] = m12.T
        m_full[n:, n:] = m22
        w_full = np.zeros_like(m_full)
        w_full[:n, :n] = self.w11
        w_full[:n, n:] = w12
        w_full[n:, :n] = w12.T
        w_full[n:, n:] = w22
        grad_s = grad_g = None
        if with_grad:
            grad_s = 2.0 * (m12.T @ w12 + m22 @ w22)
            grad_g = 2.0 * (m12.T @ sys.b + m22 @ g) - grad_s @ self.l.T
        return ObjectiveEval(f=fval, m=m_full, w=w_full, grad_s=grad_s, grad_g=grad_g)

    def value(self, s, g, margin=0.0):
        """Objective value only (skips the controllability-side solves)."""
        sys = self.sys
        f_map = s - g @ self.l
        sp = linalg.spectrum(f_map)
        if not sp.max_real_part < -margin:
            raise UnstableMatrixError(
                f"candidate S - G L is not Hurwitz (max real part {sp.max_real_part:.6g})",
                max_real_part=sp.max_real_part,
            )
        cache_f = linalg.SchurCache(f_map)
        cache_ft = linalg.SchurCache(f_map.T)
        m12 = linalg._sylv_dense(sys.a.T, f_map, -self._ctcpi, self.cache_at, cache_f)
        m22 = linalg._sylv_dense(f_map.T, f_map, self.cpi.T @ self.cpi, cache_ft, cache_f)
        t12 = float(np.sum((sys.b.T @ m12) * g.T))
        t22 = float(np.trace(g.T @ m22 @ g))
        return self._f_const + 2.0 * t12 + t22


def objective(sys, s, g, l, pi):
    """Squared H2 norm of the error system at ``(s, g)`` with ``pi`` fixed."""
    s = np.asarray(s, dtype=float)
    g = np.asarray(g, dtype=float)
    return _Evaluator(sys, l, pi).evaluate(s, g, with_grad=False)


def gradient(sys, s, g, l, pi):
    """Objective together with its analytic gradient blocks.

    The gradient comes from the observability and controllability Gramian
    blocks of the error system:
    ``grad_s = 2 (M12' W12 + M22 W22)`` and
    ``grad_g = 2 (M12' B + M22 G) - grad_s L'``.
    """
    s = np.asarray(s, dtype=float)
    g = np.asarray(g, dtype=float)
    return _Evaluator(sys, l, pi).evaluate(s, g, with_grad=True)


def finite_diff_gradient(sys, s, g, l, pi, h=None):
    """Central-difference gradient of the objective; the test oracle.

    When a perturbed point leaves the stable set the step is shrunk by 10
    and retried, at most three times per entry.
    """
    s = np.asarray(s, dtype=float)
    g = np.asarray(g, dtype=float)
    ev = _Evaluator(sys, l, pi)
    if h is None:
        h = 1e-6 * (1.0 + np.sqrt(np.linalg.norm(s) ** 2 + np.linalg.norm(g) ** 2))

    def central(apply_step):
        step = h
        for _ in range(3):
            try:
                return (apply_step(step) - apply_step(-step)) / (2.0 * step)
            except UnstableMatrixError:
                step /= 10.0
        raise SolverError("finite-difference stencil keeps leaving the stable set")

    grad_s = np.zeros_like(s)
    for i in range(s.shape[0]):
        for j in range(s.shape[1]):
            def f_of(delta, i=i, j=j):
                sp = s.copy()
                sp[i, j] += delta
                return ev.value(sp, g)

            grad_s[i, j] = central(f_of)
    grad_g = np.zeros_like(g)
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            def f_of(delta, i=i, j=j):
                gp = g.copy()
                gp[i, j] += delta
                return ev.value(s, gp)

            grad_g[i, j] = central(f_of)
    return grad_s, grad_g


def project_gradient(grad_s, grad_g, topology, orders, l, input_mask=None):
    """Project the gradient onto directions that preserve the topology.

    On every forbidden block (i, j) the S-component is replaced by
    ``(grad_g @ l)`` there, so a step along the negative projected
    direction leaves ``(S - G L)_{ij}`` unchanged.  An input mask (from
    input-coupled topologies) zeroes G-blocks first and feeds the zeroed
    gradient into the S-rule.
    """
    proj_g = np.array(grad_g, dtype=float)
    if input_mask is not None:
        proj_g[np.asarray(input_mask, dtype=bool)] = 0.0
    proj_s = np.array(grad_s, dtype=float)
    mask = network.forbidden_entry_mask(topology, orders)
    if mask.any():
        gl = proj_g @ np.asarray(l, dtype=float)
        proj_s[mask] = gl[mask]
    return proj_s, proj_g


def line_search(sys, s, g, l, pi, direction, config, f_current=None, alpha0=None, _evaluator=None):
    """Backtracking step selection along ``-direction``.

    Accepts the first step that keeps ``S - G L`` Hurwitz with the
    configured margin and achieves the Armijo decrease
    ``f(new) <= f(old) - armijo_c * alpha * ||direction||_F**2``.

    Returns ``(alpha, s_new, g_new, f_new)``; raises SolverError after
    ``max_halvings`` rejected trials.
    """
    ev = _evaluator if _evaluator is not None else _Evaluator(sys, l, pi)
    dir_s, dir_g = direction
    dir_sq = float(np.linalg.norm(dir_s) ** 2 + np.linalg.norm(dir_g) ** 2)
    if f_current is None:
        f_current = ev.value(s, g, margin=config.stability_margin)
    alpha = config.initial_step if alpha0 is None else alpha0
    for _ in range(config.max_halvings):
        s_new = s - alpha * dir_s
        g_new = g - alpha * dir_g
        try:
            f_new = ev.value(s_new, g_new, margin=config.stability_margin)
        except UnstableMatrixError:
            alpha *= config.backtrack_factor
            continue
        if f_new <= f_current - config.armijo_c * alpha * dir_sq:
            return alpha, s_new, g_new, f_new
        alpha *= config.backtrack_factor
    raise SolverError(
        f"line search stalled after {config.max_halvings} halvings "
        f"(f = {f_current:.6e}, |direction|^2 = {dir_sq:.3e})"
    )


@dataclass
class OptimizerReport:
    """Run record of the projected-gradient descent."""

    iterations: int
    f_history: np.ndarray
    grad_mapping_history: np.ndarray
    step_sizes: np.ndarray
    s: np.ndarray
    g: np.ndarray
    final_eval: ObjectiveEval
    termination: str
    rate_monitor: dict = field(default_factory=dict)
    constraint_report: object = None

    @property
    def converged(self):
        return self.termination == "converged"


def optimize(sys, init, l, pi, orders, config=None, callback=None):
    """Projected-gradient descent over the structured stable pairs (S, G).

    ``init`` must lie in the feasible set: structured and with Hurwitz
    ``S - G L``.  Each step moves along the negative topology-projected
    gradient with a backtracking Armijo step, then snaps the forbidden
    entries of ``S - G L`` back to exact zero to kill floating-point
    drift.  Stops when the gradient-mapping norm drops below
    ``config.epsilon``.
    """
    config = config if config is not None else OptimizerConfig()
    if not isinstance(orders, network.ReducedOrders):
        orders = network.ReducedOrders(tuple(orders))
    orders.validate_against(sys.topology)
    s0, g0 = init
    s = network.rezero_structure(np.asarray(s0, float), np.asarray(g0, float), l, sys.topology, orders)
    g = np.array(g0, dtype=float)
    mask_violation = np.abs(np.asarray(s0, float) - s).max() if s.size else 0.0
    if mask_violation > 1e-9 * max(1.0, np.linalg.norm(s)):
        raise ValueError("initial point violates the interconnection topology")
    if config.input_mask is not None and np.any(g[np.asarray(config.input_mask, bool)] != 0.0):
        raise ValueError("initial G violates the input coupling mask")
    ev = _Evaluator(sys, l, pi)

    f_hist, gamma_hist, steps = [], [], []
    termination = "max-iterations"
    last_alpha = config.initial_step
    delta_est = np.inf
    ev_point = ev.evaluate(s, g, with_grad=True, margin=config.stability_margin)
    iterations = 0
    for _ in range(config.max_iter):
        proj = project_gradient(
            ev_point.grad_s, ev_point.grad_g, sys.topology, orders, l, config.input_mask
        )
        gamma = float(np.sqrt(np.linalg.norm(proj[0]) ** 2 + np.linalg.norm(proj[1]) ** 2))
        f_hist.append(ev_point.f)
        gamma_hist.append(gamma)
        if callback is not None:
            callback(iterations, s, g, ev_point, gamma)
        if gamma <= config.epsilon:
            termination = "converged"
            break
        try:
            alpha, s_new, g_new, f_new = line_search(
                sys, s, g, l, pi, proj, config, f_current=ev_point.f,
                alpha0=min(config.initial_step, 4.0 * last_alpha), _evaluator=ev,
            )
        except SolverError:
            termination = "stalled"
            break
        delta_est = min(delta_est, (ev_point.f - f_new) / max(alpha**2 * gamma**2, 1e-300))
        last_alpha = alpha
        steps.append(alpha)
        s = network.rezero_structure(s_new, g_new, l, sys.topology, orders)
        g = g_new
        iterations += 1
        ev_point = ev.evaluate(s, g, with_grad=True, margin=config.stability_margin)
    else:
        f_hist.append(ev_point.f)
        proj = project_gradient(
            ev_point.grad_s, ev_point.grad_g, sys.topology, orders, l, config.input_mask
        )
        gamma_hist.append(float(np.sqrt(np.linalg.norm(proj[0]) ** 2 + np.linalg.norm(proj[1]) ** 2)))

    sum_alpha = float(np.sum(steps)) if steps else 0.0
    rate = {
        "delta_estimate": None if not np.isfinite(delta_est) else float(delta_est),
        "sum_step_sizes": sum_alpha,
        "min_grad_mapping_sq": float(np.min(np.square(gamma_hist))) if gamma_hist else None,
        "armijo_bound_min_grad_mapping_sq": (
            float((f_hist[0] - f_hist[-1]) / (config.armijo_c * sum_alpha))
            if sum_alpha > 0.0
            else None
        ),
    }
    report = OptimizerReport(
        iterations=iterations,
        f_history=np.asarray(f_hist),
        grad_mapping_history=np.asarray(gamma_hist),
        step_sizes=np.asarray(steps),
        s=s,
        g=g,
        final_eval=ev_point,
        termination=termination,
        rate_monitor=rate,
    )
    report.constraint_report = _final_constraint_report(sys, s, g, l, pi, orders)
    return report


def _final_constraint_report(sys, s, g, l, pi, orders):
    try:
        red = network.build_reduced(sys, s, g, l, orders)
    except Exception:
        red = network.ReducedNetwork(
            s=s, g=g, l=np.asarray(l, float), h=sys.c @ pi,
            orders=orders, topology=sys.topology, pi=pi,
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NetredWarning)
        return network.check_problem_constraints(sys, red)


# ---------------------------------------------------------------------------
# Tableau-consistent descent.  The fixed-tableau objective above treats the
# reduced output map as data; the emitted model, however, must carry the
# tableau of its own interpolation matrix.  This variant re-solves the
# tableau at every evaluation and augments the gradient with the adjoint
# sensitivity of the tableau, so its minimizers are self-consistent: the
# objective equals the squared error of the model as emitted.
# ---------------------------------------------------------------------------


class _ConsistentEvaluator:
    """Objective/gradient of the error norm with the tableau tied to S."""

    def __init__(self, sys, l):
        self.sys = sys
        self.l = np.asarray(l, dtype=float)
        self.cache_a = linalg.SchurCache(sys.a)
        self.cache_at = linalg.SchurCache(sys.a.T)
        self.eig_a = linalg.spectrum(sys.a).eigenvalues
        m11 = linalg.solve_lyapunov(sys.a, sys.c.T @ sys.c, "observability", margin=0.0)
        self._f_const = float(np.trace(sys.b.T @ m11 @ sys.b))
        self._bl = sys.b @ self.l

    def _tableau(self, s):
        eig_s = np.linalg.eigvals(s)
        dist = np.abs(eig_s[:, None] - self.eig_a[None, :])
        if dist.min(initial=np.inf) <= 1e-12:
            raise UnstableMatrixError("interpolation matrix touches the network spectrum")
        cache_s = linalg.SchurCache(-s)
        return linalg._sylv_dense(self.sys.a, -s, self._bl, self.cache_a, cache_s)

    def value(self, s, g, margin=0.0):
        sys = self.sys
        f_map = s - g @ self.l
        sp = linalg.spectrum(f_map)
        if not sp.max_real_part < -margin:
            raise UnstableMatrixError(
                f"candidate S - G L is not Hurwitz (max real part {sp.max_real_part:.6g})",
                max_real_part=sp.max_real_part,
            )
        pi = self._tableau(s)
        cpi = sys.c @ pi
        cache_f = linalg.SchurCache(f_map)
        m12 = linalg._sylv_dense(sys.a.T, f_map, -(sys.c.T @ cpi), self.cache_at, cache_f)
        cache_ft = linalg.SchurCache(f_map.T)
        m22 = linalg._sylv_dense(f_map.T, f_map, cpi.T @ cpi, cache_ft, cache_f)
        return self._f_const + 2.0 * float(np.sum((sys.b.T @ m12) * g.T)) + float(
            np.trace(g.T @ m22 @ g)
        )

    def value_and_grad(self, s, g, margin=0.0):
        sys = self.sys
        f_map = s - g @ self.l
        sp = linalg.spectrum(f_map)
        if not sp.max_real_part < -margin:
            raise UnstableMatrixError(
                f"candidate S - G L is not Hurwitz (max real part {sp.max_real_part:.6g})",
                max_real_part=sp.max_real_part,
            )
        pi = self._tableau(s)
        cpi = sys.c @ pi
        cache_f = linalg.SchurCache(f_map)
        cache_ft = linalg.SchurCache(f_map.T)
        m12 = linalg._sylv_dense(sys.a.T, f_map, -(sys.c.T @ cpi), self.cache_at, cache_f)
        m22 = linalg._sylv_dense(f_map.T, f_map, cpi.T @ cpi, cache_ft, cache_f)
        fval = self._f_const + 2.0 * float(np.sum((sys.b.T @ m12) * g.T)) + float(
            np.trace(g.T @ m22 @ g)
        )
        w12 = linalg._sylv_dense(sys.a, f_map.T, sys.b @ g.T, self.cache_a, cache_ft)
        w22 = linalg._sylv_dense(f_map, f_map.T, g @ g.T, cache_f, cache_ft)
        grad_s = 2.0 * (m12.T @ w12 + m22 @ w22)
        grad_g = 2.0 * (m12.T @ sys.b + m22 @ g) - grad_s @ self.l.T
        # adjoint of the tableau sensitivity: d f / d Pi propagated through
        # the Sylvester equation A dPi - dPi S = Pi dS
        nmat = 2.0 * (sys.c.T @ (cpi @ w22 - sys.c @ w12))
        lam = linalg._sylv_dense(
            sys.a.T, -s.T, -nmat, self.cache_at, linalg.SchurCache(-s.T)
        )
        grad_s = grad_s + pi.T @ lam
        return fval, grad_s, grad_g


def refine_tableau_consistent(sys, init, l, pi_unused, orders, config=None):
    """Projected descent on the tableau-consistent error objective.

    Same feasible set and projection as :func:`optimize`; the objective
    re-solves the tableau at each candidate so that, at an accepted point,
    the objective value is exactly the squared error of the emitted
    moment-matching model.  ``pi_unused`` is accepted for signature
    symmetry and ignored.
    """
    config = config if config is not None else OptimizerConfig()
    if not isinstance(orders, network.ReducedOrders):
        orders = network.ReducedOrders(tuple(orders))
    orders.validate_against(sys.topology)
    s = np.array(init[0], dtype=float)
    g = np.array(init[1], dtype=float)
    s = network.rezero_structure(s, g, l, sys.topology, orders)
    ev = _ConsistentEvaluator(sys, l)
    f_hist, gamma_hist, steps = [], [], []
    termination = "max-iterations"
    last_alpha = config.initial_step
    fval, grad_s, grad_g = ev.value_and_grad(s, g, margin=config.stability_margin)
    iterations = 0
    for _ in range(config.max_iter):
        proj = project_gradient(grad_s, grad_g, sys.topology, orders, l, config.input_mask)
        gamma = float(np.sqrt(np.linalg.norm(proj[0]) ** 2 + np.linalg.norm(proj[1]) ** 2))
        f_hist.append(fval)
        gamma_hist.append(gamma)
        if gamma <= config.epsilon:
            termination = "converged"
            break
        alpha = min(4.0 * last_alpha, 1e6 * config.initial_step)
        accepted = False
        for _ in range(config.max_halvings):
            s_new = s - alpha * proj[0]
            g_new = g - alpha * proj[1]
            try:
                f_new = ev.value(s_new, g_new, margin=config.stability_margin)
            except (UnstableMatrixError, SolverError):
                alpha *= config.backtrack_factor
                continue
            if f_new <= fval - config.armijo_c * alpha * gamma**2:
                accepted = True
                break
            alpha *= config.backtrack_factor
        if not accepted:
            termination = "stalled"
            break
        last_alpha = alpha
        steps.append(alpha)
        s = network.rezero_structure(s_new, g_new, l, sys.topology, orders)
        g = g_new
        iterations += 1
        fval, grad_s, grad_g = ev.value_and_grad(s, g, margin=config.stability_margin)
    else:
        f_hist.append(fval)
        proj = project_gradient(grad_s, grad_g, sys.topology, orders, l, config.input_mask)
        gamma_hist.append(float(np.sqrt(np.linalg.norm(proj[0]) ** 2 + np.linalg.norm(proj[1]) ** 2)))

    report = OptimizerReport(
        iterations=iterations,
        f_history=np.asarray(f_hist),
        grad_mapping_history=np.asarray(gamma_hist),
        step_sizes=np.asarray(steps),
        s=s,
        g=g,
        final_eval=None,
        termination=termination,
        rate_monitor={},
    )
    return report
