"""Convex relaxation of the structured H2 reduction problem.

Restricting the error-system observability Gramian to be block diagonal
(zero cross block, per-subsystem diagonal reduced block) and substituting
``Z = M22 G``, ``Theta = M22 S`` turns the bilinear problem into a linear
SDP over (M11, M22, X22, Y22, Z22, Theta22).  ``build_sdp`` emits that
problem verbatim; ``solve_sdp`` solves it and ``recover_reduced`` maps the
solution back to a structured reduced model.

The solver exploits one exact simplification: for fixed Y22 the optimal
M11 is the solution of a Lyapunov equation, so M11 can be minimized out
analytically and reinstated afterwards.  The assembled full solution is
audited against the original inequalities by direct eigenvalue checks.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from . import linalg, network
from .errors import DimensionError, NetredWarning, SolverError, UnstableMatrixError
from .network import ReducedOrders, forbidden_entry_mask, input_entry_mask
from .sdpsolver import (
    EqualityGroup,
    LmiConstraint,
    SdpProblem,
    SdpSolution,
    VarBlock,
    audit_solution,
    solve_sdp_generic,
    _BarrierEngine,
    _materialize,
)

__all__ = [
    "build_sdp",
    "solve_sdp",
    "recover_reduced",
    "BlockDiagCertificate",
    "check_sufficient_conditions",
    "construct_certificate",
    "default_interpolation_grid",
]


def default_interpolation_grid(nu):
    """A priori interpolation matrix diag(1, ..., nu) in the open right half plane."""
    return np.diag(np.arange(1.0, nu + 1.0))


@dataclass
class _ReductionData:
    """Problem data needed by the structured solve and the recovery."""

    sys: object
    l: np.ndarray
    orders: ReducedOrders
    pi: np.ndarray
    cpi: np.ndarray
    forb_mask: np.ndarray
    in_mask: np.ndarray  # None when inputs are uncoupled


def build_sdp(sys, l, orders, s_grid=None):
    """Assemble the block-diagonal-Gramian relaxation for a network system.

    The moment data ``C Pi`` requires an a priori interpolation matrix;
    ``s_grid`` defaults to ``diag(1, ..., nu)``, whose spectrum lies in
    the open right half plane and therefore never meets the spectrum of
    the (Hurwitz) network matrix.

    Returns an :class:`SdpProblem` whose blocks, inequalities and exact
    structure equalities mirror the relaxation one-to-one.
    """
    if not isinstance(orders, ReducedOrders):
        orders = ReducedOrders(tuple(orders))
    orders.validate_against(sys.topology)
    nu, n, m, p = orders.nu, sys.n, sys.m, sys.p
    l = np.asarray(l, dtype=float)
    if l.shape != (m, nu):
        raise DimensionError(f"L must be {m}x{nu}, got {l.shape}")
    if s_grid is None:
        s_grid = default_interpolation_grid(nu)
    s_grid = np.asarray(s_grid, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NetredWarning)
        pi = network.compute_pi(sys, s_grid, l)
    cpi = sys.c @ pi

    forb = forbidden_entry_mask(sys.topology, orders)
    in_mask = input_entry_mask(sys.topology, orders)

    a, b, c = sys.a, sys.b, sys.c
    blocks = {
        "M11": VarBlock("M11", "sym", (n, n)),
        "M22": VarBlock("M22", "sym_blockdiag", (nu, nu), block_sizes=orders.orders),
        "X22": VarBlock("X22", "sym", (m, m)),
        "Y22": VarBlock("Y22", "sym", (nu, nu)),
        "Z22": VarBlock("Z22", "free", (nu, m)),
        "TH22": VarBlock("TH22", "free", (nu, nu)),
    }
    cpi_gram = cpi.T @ cpi

    def emb_block(mat, at, dim):
        out = np.zeros((dim, dim))
        out[at : at + mat.shape[0], at : at + mat.shape[1]] = mat
        return out

    lmis = [
        LmiConstraint(
            "gramian_decay",
            nu,
            -cpi_gram,
            [
                ("Y22", lambda y: y),
                ("TH22", lambda th: -(th + th.T)),
                ("Z22", lambda z: (z @ l) + (z @ l).T),
            ],
        ),
        LmiConstraint(
            "schur_coupling",
            m + nu,
            np.zeros((m + nu, m + nu)),
            [
                ("X22", lambda x, m=m, nu=nu: emb_block(x, 0, m + nu)),
                ("M22", lambda mm, m=m, nu=nu: emb_block(mm, m, m + nu)),
                ("Z22", lambda z, m=m, nu=nu: _offdiag_embed(z, m, nu)),
            ],
        ),
        LmiConstraint(
            "full_block",
            n + nu,
            -_full_block_const(c, cpi, n, nu),
            [
                ("M11", lambda mm, a=a: -_lyap_embed(a, mm, n, nu)),
                ("Y22", lambda y, n=n, nu=nu: -emb_block(y, n, n + nu)),
            ],
        ),
        LmiConstraint("M11_psd", n, np.zeros((n, n)), [("M11", lambda mm: mm)]),
        LmiConstraint("M22_psd", nu, np.zeros((nu, nu)), [("M22", lambda mm: mm)]),
    ]

    def structure_residual(values, l=l, forb=forb):
        theta = values["TH22"]
        z = values["Z22"]
        return (theta - z @ l)[forb]

    equalities = [EqualityGroup("structure_zeros", structure_residual)]
    if in_mask is not None:
        equalities.append(
            EqualityGroup("input_zeros", lambda values, im=in_mask: values["Z22"][im])
        )

    reduction = _ReductionData(
        sys=sys, l=l, orders=orders, pi=pi, cpi=cpi, forb_mask=forb, in_mask=in_mask
    )
    return SdpProblem(
        blocks=blocks,
        objective={"M11": b @ b.T, "X22": np.eye(m)},
        lmis=lmis,
        equalities=equalities,
        reduction=reduction,
        description="block-diagonal-Gramian H2 relaxation",
    )


def _offdiag_embed(z, m, nu):
    out = np.zeros((m + nu, m + nu))
    out[:m, m:] = z.T
    out[m:, :m] = z
    return out


def _full_block_const(c, cpi, n, nu):
    out = np.zeros((n + nu, n + nu))
    out[:n, :n] = c.T @ c
    out[:n, n:] = -(c.T @ cpi)
    out[n:, :n] = -(cpi.T @ c)
    return out


def _lyap_embed(a, m11, n, nu):
    out = np.zeros((n + nu, n + nu))
    out[:n, :n] = a.T @ m11 + m11 @ a
    return out


def _psd_sqrt(mat):
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def solve_sdp(prob, tol=1e-6, max_newton=400, force_generic=False):
    """Solve a relaxation (or any small SDP) to the requested duality gap.

    Problems built by :func:`build_sdp` are, by default, solved through
    the exact analytic elimination of M11 (reinstated afterwards), which
    keeps the barrier subproblem independent of the network order; any
    other problem goes through the generic dense path.  The returned
    solution always carries the independent eigenvalue audit of the
    original constraints, and its objective value is a certified upper
    bound on the relaxation optimum within ``tol * (1 + |objective|)``.
    """
    if prob.reduction is None or force_generic:
        return solve_sdp_generic(prob, tol=tol, max_newton=max_newton)
    return _solve_reduced(prob, tol=tol, max_newton=max_newton)


def _solve_reduced(prob, tol, max_newton):
    """Solve the relaxation with M11 eliminated analytically.

    For fixed Y22 the optimal M11 solves a Lyapunov equation, and its
    traced objective equals the full-model energy plus
    ``tr(V (-Y22)^-1 V')`` with a constant factor V; that penalty is
    SDP-representable through a Schur-complement epigraph, so the barrier
    subproblem no longer involves any n x n variable.  M11 is reinstated
    afterwards and the assembled point is audited against the original
    inequalities.  (Eliminating Y22 at its boundary as well would be
    exact too, but it degrades the central-path conditioning enough to
    break the gap certificate, so Y22 stays a variable.)
    """
    red = prob.reduction
    sys, l, orders = red.sys, red.l, red.orders
    a, b, c = sys.a, sys.b, sys.c
    n, nu, m, p = sys.n, orders.nu, sys.m, sys.p
    cpi = red.cpi
    forb = red.forb_mask
    allowed = ~forb

    w_full = linalg.solve_lyapunov(a, b @ b.T, "controllability", margin=0.0)
    h2_full_sq = float(np.trace(c @ w_full @ c.T))
    v_fac = _psd_sqrt(c @ w_full @ c.T) @ cpi  # (p, nu), V'V = (CPi)' CWC' (CPi)

    free_mask = (
        np.ones((nu, m), dtype=bool) if red.in_mask is None else ~red.in_mask
    )
    blocks = {
        "X22": VarBlock("X22", "sym", (m, m)),
        "Y22": VarBlock("Y22", "sym", (nu, nu)),
        "Z22": VarBlock("Z22", "free_masked", (nu, m), mask=free_mask),
        "THf": VarBlock("THf", "free_masked", (nu, nu), mask=allowed),
        "M22": VarBlock("M22", "sym_blockdiag", (nu, nu), block_sizes=orders.orders),
        "TT": VarBlock("TT", "sym", (p, p)),
    }
    cpi_gram = cpi.T @ cpi

    def theta_of(thf, z, l=l, forb=forb):
        theta = np.array(thf)
        gl = z @ l
        theta[forb] = gl[forb]
        return theta

    def decay_z(z, l=l, allowed=allowed):
        # forbidden Theta entries cancel against Z L there; only the
        # allowed part of Z L survives in Theta - Z L
        gl = z @ l
        keep = np.where(allowed, gl, 0.0)
        return keep + keep.T

    lmis = [
        LmiConstraint(
            "gramian_decay",
            nu,
            -cpi_gram,
            [
                ("Y22", lambda y: y),
                ("THf", lambda th: -(th + th.T)),
                ("Z22", decay_z),
            ],
        ),
        LmiConstraint(
            "schur_coupling",
            m + nu,
            np.zeros((m + nu, m + nu)),
            [
                ("X22", lambda x: _embed_at(x, 0, m + nu)),
                ("M22", lambda mm: _embed_at(mm, m, m + nu)),
                ("Z22", lambda z: _offdiag_embed(z, m, nu)),
            ],
        ),
        LmiConstraint(
            "m11_epigraph",
            p + nu,
            _vy_const(v_fac, p, nu),
            [
                ("TT", lambda t: _embed_at(t, 0, p + nu)),
                ("Y22", lambda y: -_embed_at(y, p, p + nu)),
            ],
        ),
    ]
    sub = SdpProblem(
        blocks=blocks,
        objective={"X22": np.eye(m), "TT": np.eye(p)},
        lmis=lmis,
        objective_const=h2_full_sq,
        description="reduced relaxation after eliminating M11",
    )

    # constructive strictly feasible start
    beta = 1.0
    delta = 0.5 * (beta + float(np.linalg.norm(cpi_gram, 2)) + 2.0)
    start = {
        "X22": np.eye(m),
        "Y22": -beta * np.eye(nu),
        "Z22": np.zeros((nu, m)),
        "THf": np.where(allowed, -delta * np.eye(nu), 0.0),
        "M22": np.eye(nu),
        "TT": (float(np.linalg.norm(v_fac, 2)) ** 2 / beta + 1.0) * np.eye(p),
    }
    mats, total = _materialize(sub)
    cvec = np.zeros(total)
    off = 0
    for name, blk in sub.blocks.items():
        if name in sub.objective:
            coef = np.asarray(sub.objective[name])
            for kth, e in blk.basis():
                cvec[off + kth] = float(np.sum(coef * e))
        off += blk.num_params
    theta0 = sub.pack(start)
    from .sdpsolver import _box_radius

    engine = _BarrierEngine(cvec, mats, total, gap_tol=tol, max_newton=max_newton,
                            box=_box_radius(mats, theta0), max_inner=25,
                            accel=4.0, accel_cap=1e4)
    if engine._barrier_state(theta0) is None:
        raise SolverError("constructive start is not strictly feasible")
    theta, info = engine.solve(theta0, obj_offset=h2_full_sq)
    vals = sub.unpack(theta)

    # reinstate M11 as the Lyapunov solution for the achieved Y22:
    # Q_eff = C'C + (C' CPi) (-Y22)^-1 (CPi' C)
    y22 = (vals["Y22"] + vals["Y22"].T) / 2.0
    cho = spla.cho_factor(-y22)
    q_eff = c.T @ c + (c.T @ cpi) @ spla.cho_solve(cho, cpi.T @ c)
    q_eff = (q_eff + q_eff.T) / 2.0
    m11 = linalg.solve_lyapunov(a, q_eff, "observability", margin=0.0)

    values = {
        "M11": m11,
        "M22": (vals["M22"] + vals["M22"].T) / 2.0,
        "X22": (vals["X22"] + vals["X22"].T) / 2.0,
        "Y22": y22,
        "Z22": vals["Z22"],
        "TH22": theta_of(vals["THf"], vals["Z22"]),
    }
    audit = audit_solution(prob, values, tol)
    status = "optimal" if info["status"] == "optimal" and audit["feasible"] else "max-iterations"
    return SdpSolution(
        values=values,
        objective=prob.objective_value(values),
        status=status,
        feasibility_residual=audit["max_violation"],
        kkt_residual=info["grad_residual"],
        duality_gap=info["gap"],
        newton_iterations=info["newton_iterations"],
        audit=audit,
        notes=("analytic M11 elimination",),
    )


def _embed_at(mat, at, dim):
    out = np.zeros((dim, dim))
    out[at : at + mat.shape[0], at : at + mat.shape[1]] = mat
    return out


def _vy_const(v_fac, p, nu):
    out = np.zeros((p + nu, p + nu))
    out[:p, p:] = v_fac
    out[p:, :p] = v_fac.T
    return out


def recover_reduced(sol, sys, l, orders, ridge_rtol=1e-10):
    """Recover the structured reduced model from a relaxation solution.

    ``S = M22^-1 Theta22`` and ``G = M22^-1 Z22``; a near-singular M22 is
    ridged (with a warning) before inversion.  The forbidden blocks of
    ``S - G L`` are exact zeros by construction and re-zeroed against
    rounding.  Stability of the recovered model is not guaranteed by the
    relaxation and is therefore verified, failing loudly.

    Returns ``(reduced_network, gramian)`` with the block-diagonal
    observability Gramian ``diag(M11, M22)`` of the certificate.
    """
    if not isinstance(orders, ReducedOrders):
        orders = ReducedOrders(tuple(orders))
    if sol.status == "infeasible-detected":
        raise SolverError("cannot recover a model from an infeasible relaxation")
    m22 = np.array(sol.values["M22"], dtype=float)
    eigs = np.linalg.eigvalsh((m22 + m22.T) / 2.0)
    top_eig = max(float(np.max(eigs)), 0.0)
    if float(np.min(eigs)) < ridge_rtol * max(top_eig, 1e-300):
        ridge = ridge_rtol * max(top_eig, 1.0)
        warnings.warn(
            f"M22 is near singular (min eig {eigs.min():.3e}); adding ridge {ridge:.3e}",
            NetredWarning,
            stacklevel=2,
        )
        m22 = m22 + ridge * np.eye(m22.shape[0])
    s = np.linalg.solve(m22, sol.values["TH22"])
    g = np.linalg.solve(m22, sol.values["Z22"])
    l = np.asarray(l, dtype=float)
    s = network.rezero_structure(s, g, l, sys.topology, orders)
    f = s - g @ l
    sp = linalg.spectrum(f)
    if not sp.max_real_part < 0.0:
        raise UnstableMatrixError(
            "recovered reduced model is unstable; eigenvalues of S - G L: "
            f"{np.sort_complex(sp.eigenvalues)}",
            max_real_part=sp.max_real_part,
        )
    red = network.build_reduced(sys, s, g, l, orders)
    mcal = spla.block_diag(sol.values["M11"], sol.values["M22"])
    return red, mcal


@dataclass(frozen=True)
class BlockDiagCertificate:
    """Witness that an error system admits a block-diagonal observability Gramian.

    Carries the Gramian blocks, the positive definite coupling matrix of
    the two sufficient inequalities, and the reduced pair they refer to.
    """

    m11: np.ndarray
    m22: np.ndarray
    p: np.ndarray
    s: np.ndarray
    g: np.ndarray


def _tableau_or_zero(sys, s, l):
    """Tableau of (s, l); the decoupled case (zero input data) short-circuits.

    With ``B L = 0`` the zero matrix solves the tableau equation for any
    spectra, and it is the only solution continuous in the data, so the
    spectral-disjointness precondition is moot.
    """
    if not np.any(sys.b @ l):
        return np.zeros((sys.n, np.asarray(s).shape[0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NetredWarning)
        return network.compute_pi(sys, s, l)


def check_sufficient_conditions(sys, s, g, l, cert, tol=1e-8):
    """Evaluate the two block-diagonalization inequalities for a certificate.

    Returns ``(ok, margins)`` where the margins are the minimum
    eigenvalues of the two slack matrices (nonnegative means satisfied);
    ``ok`` requires both to stay above ``-tol``.
    """
    p_eigs = np.linalg.eigvalsh((cert.p + cert.p.T) / 2.0)
    if float(np.min(p_eigs)) <= 0.0:
        raise ValueError("certificate coupling matrix P must be positive definite")
    s = np.asarray(s, dtype=float)
    g = np.asarray(g, dtype=float)
    l = np.asarray(l, dtype=float)
    pi = _tableau_or_zero(sys, s, l)
    cpi = sys.c @ pi
    a, c = sys.a, sys.c
    p_inv_term = spla.solve((cert.p + cert.p.T) / 2.0, cpi.T @ c, assume_a="pos")
    ineq1 = a.T @ cert.m11 + cert.m11 @ a + c.T @ c + (c.T @ cpi) @ p_inv_term
    fmap = s - g @ l
    ineq2 = fmap.T @ cert.m22 + cert.m22 @ fmap + cpi.T @ cpi + cert.p
    slack1 = float(np.min(np.linalg.eigvalsh(-(ineq1 + ineq1.T) / 2.0)))
    slack2 = float(np.min(np.linalg.eigvalsh(-(ineq2 + ineq2.T) / 2.0)))
    ok = slack1 >= -tol and slack2 >= -tol
    return ok, {"first_slack_min_eig": slack1, "second_slack_min_eig": slack2}


def construct_certificate(sys, s_seed, l):
    """Try the constructive block-diagonalization certificate for ``G = 0``.

    With ``G = 0`` and a stable seed matrix the coupling matrix is forced
    to ``P = -(S' + S) - (C Pi)'(C Pi)``; when that is positive definite,
    the full-order Gramian block solves a Lyapunov equation with positive
    semidefinite data and the certificate exists with unit reduced block.
    Returns None when P fails to be positive definite.
    """
    s_seed = np.asarray(s_seed, dtype=float)
    sp = linalg.spectrum(s_seed)
    if not sp.max_real_part < 0.0:
        raise UnstableMatrixError(
            "certificate seed matrix must be Hurwitz",
            max_real_part=sp.max_real_part,
        )
    pi = _tableau_or_zero(sys, s_seed, l)
    cpi = sys.c @ pi
    p_mat = -(s_seed.T + s_seed) - cpi.T @ cpi
    p_mat = (p_mat + p_mat.T) / 2.0
    if np.min(np.linalg.eigvalsh(p_mat)) <= 0.0:
        return None
    c = sys.c
    q = c.T @ c + (c.T @ cpi) @ spla.solve(p_mat, cpi.T @ c, assume_a="pos")
    m11 = linalg.solve_lyapunov(sys.a, (q + q.T) / 2.0, "observability", margin=0.0)
    nu = s_seed.shape[0]
    return BlockDiagCertificate(
        m11=m11, m22=np.eye(nu), p=p_mat, s=s_seed, g=np.zeros((nu, sys.m))
    )
