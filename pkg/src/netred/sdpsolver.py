"""Small-scale dense semidefinite programming engine.

Problems are affine matrix inequalities over named variable blocks
(symmetric, block-diagonal symmetric, or free/masked rectangular).  The
solver is a log-det barrier path-following method with damped Newton
steps, dense factorizations and a fixed barrier-reduction schedule, so a
given problem always runs the identical arithmetic.  Every reported
solution is re-audited by an independent eigenvalue check.
"""

import numpy as np
import scipy.linalg as spla
from dataclasses import dataclass, field
from threadpoolctl import threadpool_limits

from .errors import DimensionError, SolverError

__all__ = [
    "VarBlock",
    "LmiConstraint",
    "EqualityGroup",
    "SdpProblem",
    "SdpSolution",
    "solve_sdp_generic",
    "audit_solution",
]


# ---------------------------------------------------------------------------
# Variable blocks and their linear parameterizations
# ---------------------------------------------------------------------------


_SQRT2 = np.sqrt(2.0)
_IU_CACHE = {}


def _svec_indices(d):
    """Cached (row idx, col idx, scale) of the upper-triangle layout."""
    hit = _IU_CACHE.get(d)
    if hit is None:
        iu = np.triu_indices(d)
        scale = np.where(iu[0] == iu[1], 1.0, _SQRT2)
        hit = (iu[0], iu[1], scale)
        _IU_CACHE[d] = hit
    return hit


def svec(m):
    """Scaled upper-triangle vectorization with <A,B>_F = svec(A).svec(B)."""
    r, c, scale = _svec_indices(m.shape[0])
    return m[r, c] * scale


def unsvec(v, d):
    r, c, scale = _svec_indices(d)
    m = np.zeros((d, d))
    m[r, c] = v / scale
    m = m + m.T
    m[np.diag_indices(d)] /= 2.0
    return m


@dataclass(frozen=True)
class VarBlock:
    """One named decision block.

    ``kind`` is one of ``"sym"`` (dense symmetric), ``"sym_blockdiag"``
    (symmetric, zero outside the diagonal blocks given by
    ``block_sizes``), ``"free"`` (dense rectangular) or ``"free_masked"``
    (rectangular, free only where ``mask`` is True).
    """

    name: str
    kind: str
    shape: tuple
    block_sizes: tuple = None
    mask: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("sym", "sym_blockdiag", "free", "free_masked"):
            raise DimensionError(f"unknown variable kind {self.kind!r}")
        if self.kind in ("sym", "sym_blockdiag") and self.shape[0] != self.shape[1]:
            raise DimensionError(f"symmetric block {self.name} must be square")
        if self.kind == "sym_blockdiag":
            if self.block_sizes is None or sum(self.block_sizes) != self.shape[0]:
                raise DimensionError(f"block sizes of {self.name} must sum to its dimension")
        if self.kind == "free_masked":
            if self.mask is None or self.mask.shape != self.shape:
                raise DimensionError(f"mask of {self.name} must match its shape")

    @property
    def num_params(self):
        r, c = self.shape
        if self.kind == "sym":
            return r * (r + 1) // 2
        if self.kind == "sym_blockdiag":
            return sum(s * (s + 1) // 2 for s in self.block_sizes)
        if self.kind == "free":
            return r * c
        return int(np.count_nonzero(self.mask))

    def _coords(self):
        """(row, col) pairs of the independent entries, upper triangle first."""
        r, c = self.shape
        if self.kind == "sym":
            return [(i, j) for i in range(r) for j in range(i, c)]
        if self.kind == "sym_blockdiag":
            coords = []
            off = 0
            for s in self.block_sizes:
                coords.extend(
                    (off + i, off + j) for i in range(s) for j in range(i, s)
                )
                off += s
            return coords
        if self.kind == "free":
            return [(i, j) for i in range(r) for j in range(c)]
        rows, cols = np.nonzero(self.mask)
        return list(zip(rows.tolist(), cols.tolist()))

    def embed(self, theta):
        """Parameter vector -> matrix value."""
        m = np.zeros(self.shape)
        for k, (i, j) in enumerate(self._coords()):
            m[i, j] = theta[k]
            if self.kind in ("sym", "sym_blockdiag") and i != j:
                m[j, i] = theta[k]
        return m

    def extract(self, m):
        """Matrix value -> parameter vector (left inverse of embed)."""
        return np.array([m[i, j] for (i, j) in self._coords()])

    def basis(self):
        """Yield (index, basis matrix) pairs spanning the block."""
        for k, (i, j) in enumerate(self._coords()):
            e = np.zeros(self.shape)
            e[i, j] = 1.0
            if self.kind in ("sym", "sym_blockdiag") and i != j:
                e[j, i] = 1.0
            yield k, e


@dataclass
class LmiConstraint:
    """Affine constraint ``const + sum_b term_b(value_b) >= 0`` (PSD).

    Each term maps a variable block's matrix value linearly to a symmetric
    ``dim x dim`` contribution.
    """

    name: str
    dim: int
    const: np.ndarray
    terms: list  # [(block name, linear fn)]

    def evaluate(self, values):
        m = np.array(self.const, dtype=float)
        for bname, fn in self.terms:
            m = m + fn(values[bname])
        return (m + m.T) / 2.0


@dataclass
class EqualityGroup:
    """Exact linear equalities ``residual(values) = 0`` (vector valued)."""

    name: str
    residual: object  # callable: values dict -> 1-D ndarray


@dataclass
class SdpProblem:
    """Linear SDP over named blocks with PSD and equality constraints."""

    blocks: dict
    objective: dict  # block name -> coefficient matrix, <coef, value> summed
    lmis: list
    equalities: list = field(default_factory=list)
    objective_const: float = 0.0
    reduction: object = None
    description: str = ""

    @property
    def num_params(self):
        return sum(b.num_params for b in self.blocks.values())

    def objective_value(self, values):
        tot = self.objective_const
        for name, coef in self.objective.items():
            tot += float(np.sum(coef * values[name]))
        return tot

    def pack(self, values):
        return np.concatenate([self.blocks[n].extract(values[n]) for n in self.blocks])

    def unpack(self, theta):
        out = {}
        off = 0
        for name, blk in self.blocks.items():
            k = blk.num_params
            out[name] = blk.embed(theta[off : off + k])
            off += k
        return out


@dataclass
class SdpSolution:
    """Solver outcome: block values plus the independent feasibility audit."""

    values: dict
    objective: float
    status: str  # optimal | max-iterations | infeasible-detected
    feasibility_residual: float
    kkt_residual: float
    duality_gap: float
    newton_iterations: int
    audit: dict = field(default_factory=dict)
    notes: tuple = ()


# ---------------------------------------------------------------------------
# Materialization: LMIs as svec column matrices over the packed parameters
# ---------------------------------------------------------------------------


@dataclass
class _MatLmi:
    dim: int
    f0: np.ndarray
    cols: np.ndarray  # (svec dim, n_active)
    idx: np.ndarray  # global parameter indices of the active columns


def _block_offsets(prob):
    off, out = 0, {}
    for name, blk in prob.blocks.items():
        out[name] = off
        off += blk.num_params
    return out, off


def _materialize(prob):
    offsets, total = _block_offsets(prob)
    mats = []
    for lmi in prob.lmis:
        active_idx = []
        active_cols = []
        for bname, fn in lmi.terms:
            blk = prob.blocks[bname]
            base = offsets[bname]
            for k, e in blk.basis():
                contrib = fn(e)
                contrib = (contrib + contrib.T) / 2.0
                active_idx.append(base + k)
                active_cols.append(svec(contrib))
        if active_idx:
            order = np.argsort(active_idx)
            idx = np.asarray(active_idx)[order]
            cols = np.asarray(active_cols)[order].T
            # merge duplicate indices (a block may appear in several terms)
            uniq, inv = np.unique(idx, return_inverse=True)
            merged = np.zeros((cols.shape[0], len(uniq)))
            np.add.at(merged.T, inv, cols.T)
            mats.append(_MatLmi(dim=lmi.dim, f0=np.array(lmi.const, float), cols=merged, idx=uniq))
        else:
            mats.append(
                _MatLmi(dim=lmi.dim, f0=np.array(lmi.const, float),
                        cols=np.zeros((lmi.dim * (lmi.dim + 1) // 2, 0)),
                        idx=np.zeros(0, dtype=int))
            )
    return mats, total


def _lmi_value(mat, theta):
    return mat.f0 + unsvec(mat.cols @ theta[mat.idx], mat.dim)


# ---------------------------------------------------------------------------
# Barrier engine
# ---------------------------------------------------------------------------


def _chol_or_none(m):
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None


class _BarrierEngine:
    """Log-det barrier path following with damped Newton centering.

    Inner iterations per stage are capped: when the relaxation's infimum
    is approached along a recession ray (which happens for the Gramian
    relaxation, whose optimum is not attained) the early-stage subproblems
    have no minimizer; the capped stages simply make progress along the
    ray and later stages center normally.  ``box`` is a far-out hard cap
    on the parameter magnitude protecting the factorizations from
    conditioning collapse along such rays.
    """

    def __init__(self, c, mats, total_params, gap_tol=1e-6, t0=1.0, t_factor=10.0,
                 newton_tol=1e-10, max_newton=400, box=None, max_inner=60,
                 accel=2.0, accel_cap=None):
        self.c = c
        self.mats = mats
        self.k = total_params
        self.gap_tol = gap_tol
        self.t0 = t0
        self.t_factor = t_factor
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        self.max_inner = max_inner
        self.accel = accel
        self.accel_cap = accel_cap if accel_cap is not None else 100.0 * t_factor
        self.box = box
        self.cone_dim = sum(m.dim for m in mats)
        self.newton_iterations = 0
        # coefficient tensors are iteration-invariant; build them once
        self._tensors = []
        for mat in mats:
            k = mat.cols.shape[1]
            stack = np.empty((k, mat.dim, mat.dim))
            for a in range(k):
                stack[a] = unsvec(mat.cols[:, a], mat.dim)
            self._tensors.append(stack)

    def _barrier_state(self, theta):
        """Cholesky factors of every LMI value, or None when infeasible."""
        if self.box is not None and np.max(np.abs(theta), initial=0.0) >= self.box:
            return None
        chols = []
        for mat in self.mats:
            f = _lmi_value(mat, theta)
            ch = _chol_or_none(f)
            if ch is None:
                return None
            chols.append(ch)
        return chols

    def _phi(self, theta, t, chols):
        val = t * float(self.c @ theta)
        for ch in chols:
            val -= 2.0 * float(np.sum(np.log(np.diagonal(ch))))
        return val

    def _grad_hess(self, theta, t, chols):
        grad = t * self.c.copy()
        hess = np.zeros((self.k, self.k))
        for mat, tens, ch in zip(self.mats, self._tensors, chols):
            k = mat.cols.shape[1]
            if k == 0:
                continue
            d = mat.dim
            finv = spla.cho_solve((ch, True), np.eye(d), check_finite=False)
            finv = (finv + finv.T) / 2.0
            grad[mat.idx] -= mat.cols.T @ svec(finv)
            # sandwich every coefficient matrix (finv A_a finv) with two
            # flat GEMMs, using that A_a finv and finv A_a are transposes;
            # then H[a, b] = <finv A_a finv, A_b> = svec(mid_a) . svec(A_b)
            right = (tens.reshape(k * d, d) @ finv).reshape(k, d, d)
            mids = (
                np.ascontiguousarray(right.transpose(0, 2, 1)).reshape(k * d, d) @ finv
            ).reshape(k, d, d)
            r, c, scale = _svec_indices(d)
            msv = mids[:, r, c] * scale  # (k, svecdim) of svec(finv A_a finv)
            h_local = msv @ mat.cols
            hess[np.ix_(mat.idx, mat.idx)] += (h_local + h_local.T) / 2.0
        return grad, hess

    def center(self, theta, t, max_inner=None):
        """Damped Newton iterations for the barrier subproblem at ``t``."""
        if max_inner is None:
            max_inner = self.max_inner
        chols = self._barrier_state(theta)
        if chols is None:
            raise SolverError("barrier centering started at an infeasible point")
        diag = None
        for _ in range(max_inner):
            grad, hess = self._grad_hess(theta, t, chols)
            if diag is None:
                diag = np.diag_indices_from(hess)
            reg = 1e-12 * (1.0 + float(np.trace(hess)) / max(self.k, 1))
            step = None
            for _attempt in range(8):
                hess[diag] += reg
                try:
                    step = np.linalg.solve(hess, -grad)
                    break
                except np.linalg.LinAlgError:
                    reg *= 1000.0
            if step is None:
                raise SolverError("Newton system is numerically singular")
            decrement_sq = float(step @ (hess @ step))
            self.newton_iterations += 1
            if self.newton_iterations > self.max_newton:
                return theta, chols, grad, False
            if decrement_sq / 2.0 <= self.newton_tol:
                return theta, chols, grad, True
            phi0 = self._phi(theta, t, chols)
            slope = float(grad @ step)
            stepsize = 1.0
            accepted = False
            for _ in range(60):
                cand = theta + stepsize * step
                cand_chols = self._barrier_state(cand)
                if cand_chols is not None and self._phi(cand, t, cand_chols) <= phi0 + 0.25 * stepsize * slope:
                    theta, chols = cand, cand_chols
                    accepted = True
                    break
                stepsize *= 0.5
            if not accepted:
                return theta, chols, grad, False
        grad, _ = self._grad_hess(theta, t, chols)
        return theta, chols, grad, False

    def solve(self, theta0, obj_offset=0.0, stop_callback=None):
        """Path following from the strictly feasible ``theta0``.

        Returns (theta, info).  ``stop_callback(theta)`` may end the run
        early (used by the phase-I feasibility search).  BLAS threading is
        pinned to one thread for the duration: the iteration is dominated
        by many small and mid-size factorizations, where thread-pool
        spinning costs far more than the lost parallelism.
        """
        with threadpool_limits(limits=1):
            return self._solve_inner(theta0, obj_offset, stop_callback)

    def _solve_inner(self, theta0, obj_offset=0.0, stop_callback=None):
        theta = np.asarray(theta0, dtype=float).copy()
        t = self.t0
        status = "max-iterations"
        grad_res = np.inf
        factor = self.t_factor
        while True:
            theta, chols, grad, centered = self.center(theta, t)
            grad_res = float(np.linalg.norm(grad)) / max(t, 1.0)
            if stop_callback is not None and stop_callback(theta):
                status = "callback-stop"
                break
            obj = float(self.c @ theta) + obj_offset
            gap = self.cone_dim / t
            if gap <= self.gap_tol * (1.0 + abs(obj)) and centered:
                # the gap certificate is only valid at a centered point
                status = "optimal"
                break
            if self.newton_iterations > self.max_newton or t > 1e18:
                status = "max-iterations"
                break
            # accelerate through stages whose subproblem has no nearby
            # center (recession-ray drift); slow back down once centering
            # succeeds so the final stages carry a clean certificate
            factor = self.t_factor if centered else min(factor * self.accel, self.accel_cap)
            t *= factor
        info = {
            "t": t,
            "gap": self.cone_dim / t,
            "grad_residual": grad_res,
            "newton_iterations": self.newton_iterations,
            "status": status,
        }
        return theta, info


def _box_radius(mats, theta0=None):
    scale = max(max(1.0, float(np.abs(m.f0).max(initial=0.0))) for m in mats)
    if theta0 is not None and theta0.size:
        scale = max(scale, float(np.max(np.abs(theta0))))
    return 1e8 * scale


def _phase1(mats, total_params, gap_tol):
    """Find a strictly feasible point, or detect infeasibility.

    Augments every LMI with ``s I`` and minimizes ``s`` from an always
    feasible start; stops as soon as the slack goes clearly negative.
    """
    scale = max(max(1.0, float(np.abs(m.f0).max(initial=0.0))) for m in mats)
    aug = []
    sv_eye = {d: svec(np.eye(d)) for d in {m.dim for m in mats}}
    for m in mats:
        cols = np.hstack([m.cols, sv_eye[m.dim][:, None]])
        idx = np.append(m.idx, total_params)
        aug.append(_MatLmi(dim=m.dim, f0=m.f0, cols=cols, idx=idx))
    # keep s bounded above so the subproblem stays well posed
    s_hi = 10.0 * scale + 10.0
    aug.append(
        _MatLmi(dim=1, f0=np.array([[s_hi]]), cols=-np.ones((1, 1)), idx=np.array([total_params]))
    )
    theta0 = np.zeros(total_params + 1)
    worst = -np.inf
    for m in mats:
        f = _lmi_value(m, theta0[:total_params])
        worst = max(worst, -float(np.min(np.linalg.eigvalsh((f + f.T) / 2.0))))
    theta0[total_params] = worst + 0.1 * scale + 0.1
    c = np.zeros(total_params + 1)
    c[total_params] = 1.0
    target = -1e-4 * scale
    engine = _BarrierEngine(c, aug, total_params + 1, gap_tol=min(gap_tol, 1e-6),
                            max_newton=600, box=_box_radius(aug, theta0))
    theta, info = engine.solve(theta0, stop_callback=lambda th: th[-1] < target)
    if theta[-1] >= 0.0:
        return None, info
    return theta[:total_params], info


def solve_sdp_generic(prob, tol=1e-6, max_newton=400, start=None):
    """Dense barrier solve of an arbitrary small SdpProblem.

    Linear equalities are eliminated through a nullspace parameterization
    before the barrier runs.  Infeasibility of the inequalities is
    detected by the phase-I subproblem.
    """
    mats, total = _materialize(prob)
    offsets, _ = _block_offsets(prob)
    c = np.zeros(total)
    for name, coef in prob.objective.items():
        blk = prob.blocks[name]
        base = offsets[name]
        for k, e in blk.basis():
            c[base + k] = float(np.sum(np.asarray(coef) * e))

    # eliminate equality constraints
    basis = None
    if prob.equalities:
        rows = []
        zero_vals = prob.unpack(np.zeros(total))
        r0 = np.concatenate([np.atleast_1d(eq.residual(zero_vals)) for eq in prob.equalities])
        if np.linalg.norm(r0) > 1e-12:
            raise SolverError("inhomogeneous equality constraints are not supported")
        for a in range(total):
            unit = np.zeros(total)
            unit[a] = 1.0
            vals = prob.unpack(unit)
            rows.append(
                np.concatenate([np.atleast_1d(eq.residual(vals)) for eq in prob.equalities])
            )
        emat = np.asarray(rows).T  # (n_eq, total)
        basis = spla.null_space(emat)
        if basis.shape[1] == 0:
            raise SolverError("equality constraints leave no degrees of freedom")
        mats = [
            _MatLmi(dim=m.dim, f0=m.f0, cols=(m.cols @ basis[m.idx, :]),
                    idx=np.arange(basis.shape[1]))
            for m in mats
        ]
        c = basis.T @ c
        total = basis.shape[1]

    theta0 = None
    if start is not None:
        packed = prob.pack(start)
        theta0 = basis.T @ packed if basis is not None else packed
        probe = _BarrierEngine(c, mats, total)
        if probe._barrier_state(theta0) is None:
            theta0 = None
    notes = []
    if theta0 is None:
        theta0, p1info = _phase1(mats, total, tol)
        if theta0 is None:
            values = prob.unpack(basis @ np.zeros(total) if basis is not None else np.zeros(total))
            return SdpSolution(
                values=values,
                objective=np.nan,
                status="infeasible-detected",
                feasibility_residual=np.inf,
                kkt_residual=np.inf,
                duality_gap=np.inf,
                newton_iterations=p1info["newton_iterations"],
                notes=("phase-I slack stayed nonnegative",),
            )
        notes.append("phase-I start")

    engine = _BarrierEngine(c, mats, total, gap_tol=tol, max_newton=max_newton,
                            box=_box_radius(mats, theta0))
    if engine._barrier_state(theta0) is None:
        values = prob.unpack(basis @ theta0 if basis is not None else theta0)
        return SdpSolution(
            values=values,
            objective=prob.objective_value(values),
            status="max-iterations",
            feasibility_residual=np.inf,
            kkt_residual=np.inf,
            duality_gap=np.inf,
            newton_iterations=engine.newton_iterations,
            notes=tuple(notes) + ("phase-I produced only a marginal point",),
        )
    theta, info = engine.solve(theta0, obj_offset=prob.objective_const)
    packed = basis @ theta if basis is not None else theta
    values = prob.unpack(packed)
    audit = audit_solution(prob, values, tol)
    status = info["status"] if info["status"] != "callback-stop" else "optimal"
    if status == "optimal" and not audit["feasible"]:
        status = "max-iterations"
        notes.append("audit rejected the solution")
    return SdpSolution(
        values=values,
        objective=prob.objective_value(values),
        status=status,
        feasibility_residual=audit["max_violation"],
        kkt_residual=info["grad_residual"],
        duality_gap=info["gap"],
        newton_iterations=info["newton_iterations"],
        audit=audit,
        notes=tuple(notes),
    )


def audit_solution(prob, values, tol=1e-6):
    """Independent feasibility audit by direct eigenvalue checks.

    Each LMI value must have minimum eigenvalue above ``-10 tol`` relative
    to its spectral norm; equality residuals must stay below ``10 tol``.
    """
    lmi_margins = {}
    eq_residuals = {}
    worst = 0.0
    feas_tol = 10.0 * tol
    feasible = True
    for lmi in prob.lmis:
        f = lmi.evaluate(values)
        scale = max(1.0, float(np.linalg.norm(f, 2))) if f.size else 1.0
        mineig = float(np.min(np.linalg.eigvalsh(f))) if f.size else 0.0
        lmi_margins[lmi.name] = mineig
        violation = max(0.0, -mineig) / scale
        worst = max(worst, violation)
        feasible = feasible and violation <= feas_tol
    for eq in prob.equalities:
        r = np.atleast_1d(eq.residual(values))
        resid = float(np.max(np.abs(r))) if r.size else 0.0
        eq_residuals[eq.name] = resid
        worst = max(worst, resid)
        feasible = feasible and resid <= feas_tol
    return {
        "lmi_min_eigenvalues": lmi_margins,
        "equality_residuals": eq_residuals,
        "max_violation": worst,
        "feasible": bool(feasible),
    }
