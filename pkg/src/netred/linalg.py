"""Dense linear-algebra kernels: Schur form, Sylvester/Lyapunov solvers,
spectra and stability tests.

All functions are pure: they never modify their arguments and hold no
global state, so concurrent calls are safe.  Matrices are plain
``numpy.ndarray`` objects with finite real entries.
"""

import numpy as np
import scipy.linalg as spla
from dataclasses import dataclass, field

from .errors import (
    DimensionError,
    SolverError,
    SpectraOverlapError,
    UnstableMatrixError,
)

__all__ = [
    "Spectrum",
    "schur_decompose",
    "solve_sylvester",
    "solve_lyapunov",
    "spectrum",
    "is_hurwitz",
    "observability_rank",
    "spectra_disjoint",
    "DEFAULT_STABILITY_MARGIN",
    "DEFAULT_SPECTRAL_GAP",
]

# Defaults separating genuine boundary cases from rounding noise.
DEFAULT_STABILITY_MARGIN = 1e-9
DEFAULT_SPECTRAL_GAP = 1e-9


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} contains non-finite entries")
    return a


def _as_square(a, name):
    a = _as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a square matrix together with the spectral abscissa."""

    eigenvalues: np.ndarray
    max_real_part: float

    def __len__(self):
        return len(self.eigenvalues)


def schur_decompose(a):
    """Real Schur decomposition ``a = q @ t @ q.T``.

    Parameters
    ----------
    a : (n, n) array_like
        Square real matrix.

    Returns
    -------
    q : (n, n) ndarray
        Orthogonal factor.
    t : (n, n) ndarray
        Quasi-upper-triangular factor (1x1 and 2x2 diagonal blocks).
    """
    a = _as_square(a, "a")
    try:
        t, q = spla.schur(a, output="real")
    except spla.LinAlgError as exc:  # pragma: no cover - QR iteration failure
        raise SolverError(f"Schur eigenvalue iteration failed to converge: {exc}") from exc
    return q, t


def spectrum(a):
    """Eigenvalues of ``a`` (closed under conjugation for real input)."""
    a = _as_square(a, "a")
    if a.size == 0:
        return Spectrum(np.array([], dtype=complex), -np.inf)
    eig = np.linalg.eigvals(a)
    return Spectrum(eig, float(np.max(eig.real)))


def is_hurwitz(a, margin=DEFAULT_STABILITY_MARGIN):
    """True iff every eigenvalue of ``a`` has real part < ``-margin``.

    The imaginary axis itself counts as unstable.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return spectrum(a).max_real_part < -margin


def _closest_eigen_pair(a, s):
    """Minimum pairwise eigenvalue distance between sigma(a) and sigma(s)."""
    ea = spectrum(a).eigenvalues
    es = spectrum(s).eigenvalues
    dist = np.abs(ea[:, None] - es[None, :])
    i, j = np.unravel_index(np.argmin(dist), dist.shape)
    return float(dist[i, j]), (complex(ea[i]), complex(es[j]))


def spectra_disjoint(a, s, gap=DEFAULT_SPECTRAL_GAP):
    """True iff the spectra of ``a`` and ``s`` are more than ``gap`` apart."""
    dist, _ = _closest_eigen_pair(_as_square(a, "a"), _as_square(s, "s"))
    return dist > gap


def observability_rank(l, s, tol=None):
    """Numerical rank of the observability matrix of the pair ``(l, s)``.

    Stacks ``[l; l s; ...; l s**(nu-1)]`` and counts singular values above
    ``tol * sigma_max``.  The default relative tolerance is
    ``max(stack.shape) * machine_eps``.
    """
    l = _as_matrix(l, "l")
    s = _as_square(s, "s")
    nu = s.shape[0]
    if l.shape[1] != nu:
        raise DimensionError(f"l has {l.shape[1]} columns, s is {nu}x{nu}")
    rows = [l]
    for _ in range(nu - 1):
        rows.append(rows[-1] @ s)
    stacked = np.vstack(rows)
    sv = np.linalg.svd(stacked, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    if tol is None:
        tol = max(stacked.shape) * np.finfo(float).eps
    return int(np.sum(sv > tol * sv[0]))


# ---------------------------------------------------------------------------
# Bartels-Stewart solvers (real Schur form, 1x1/2x2 back-substitution)
# ---------------------------------------------------------------------------


def _schur_block_starts(t):
    """Diagonal block boundaries of a real Schur factor.

    Returns a list of (start, stop) index pairs covering the 1x1/2x2
    diagonal blocks of ``t``.
    """
    n = t.shape[0]
    blocks = []
    i = 0
    while i < n:
        if i + 1 < n and t[i + 1, i] != 0.0:
            blocks.append((i, i + 2))
            i += 2
        else:
            blocks.append((i, i + 1))
            i += 1
    return blocks


def _solve_small_sylvester(t_ii, r_jj, e):
    """Solve ``t_ii x - x r_jj = e`` for blocks of size at most 2."""
    a, b = e.shape
    if a == 1 and b == 1:
        den = t_ii[0, 0] - r_jj[0, 0]
        if den == 0.0:
            raise SolverError(
                "singular diagonal subproblem in Sylvester back-substitution "
                "(operand spectra too close)"
            )
        return e / den
    m = np.kron(np.eye(b), t_ii) - np.kron(r_jj.T, np.eye(a))
    try:
        x = np.linalg.solve(m, e.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            "singular diagonal subproblem in Sylvester back-substitution "
            "(operand spectra too close)"
        ) from exc
    return x.reshape(a, b, order="F")


def _quasi_triangular_sylvester(t, r, c):
    """Solve ``t y - y r = c`` with ``t`` and ``r`` quasi-upper-triangular."""
    y = np.zeros_like(c)
    c = c.copy()
    t_blocks = _schur_block_starts(t)
    r_blocks = _schur_block_starts(r)
    for js, je in r_blocks:
        r_jj = r[js:je, js:je]
        d = c[:, js:je]
        for is_, ie in reversed(t_blocks):
            e = d[is_:ie] - t[is_:ie, ie:] @ y[ie:, js:je]
            y[is_:ie, js:je] = _solve_small_sylvester(t[is_:ie, is_:ie], r_jj, e)
        # accumulate the y r coupling into later column blocks
        if je < c.shape[1]:
            c[:, je:] += y[:, js:je] @ r[js:je, je:]
    return y


def _solve_small_lyapunov(t_ii, t_jj, e):
    """Solve ``t_ii.T x + x t_jj = e`` for blocks of size at most 2."""
    a, b = e.shape
    if a == 1 and b == 1:
        den = t_ii[0, 0] + t_jj[0, 0]
        if den == 0.0:
            raise SolverError("singular diagonal subproblem in Lyapunov back-substitution")
        return e / den
    m = np.kron(np.eye(b), t_ii.T) + np.kron(t_jj.T, np.eye(a))
    try:
        x = np.linalg.solve(m, e.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            "singular diagonal subproblem in Lyapunov back-substitution"
        ) from exc
    return x.reshape(a, b, order="F")


def _quasi_triangular_lyapunov(t, c):
    """Solve ``t.T z + z t = c`` for symmetric ``c``, ``t`` quasi-upper-triangular.

    The solution is symmetric, so blocks below the diagonal are mirrored
    instead of re-solved.
    """
    z = np.zeros_like(c)
    c = c.copy()
    blocks = _schur_block_starts(t)
    for jdx, (js, je) in enumerate(blocks):
        t_jj = t[js:je, js:je]
        d = c[:, js:je]
        for idx, (is_, ie) in enumerate(blocks):
            if idx < jdx:
                z[is_:ie, js:je] = z[js:je, is_:ie].T
                continue
            e = d[is_:ie] - t[:is_, is_:ie].T @ z[:is_, js:je]
            z[is_:ie, js:je] = _solve_small_lyapunov(t[is_:ie, is_:ie], t_jj, e)
        if je < c.shape[1]:
            c[:, je:] -= z[:, js:je] @ t[js:je, je:]
    return z


def solve_sylvester(a, s, q):
    """Solve the Sylvester equation ``a @ pi + q = pi @ s``.

    Uses the Bartels-Stewart method: both operands are brought to real
    Schur form and the transformed equation is solved by back-substitution
    over the 1x1/2x2 diagonal blocks.

    Parameters
    ----------
    a : (n, n) array_like
    s : (nu, nu) array_like
        Operand whose spectrum must be disjoint from that of ``a``.
    q : (n, nu) array_like

    Returns
    -------
    pi : (n, nu) ndarray

    Raises
    ------
    SpectraOverlapError
        If the spectra of ``a`` and ``s`` come within the default gap,
        in which case no unique solution exists.
    """
    a = _as_square(a, "a")
    s = _as_square(s, "s")
    q = _as_matrix(q, "q")
    if q.shape != (a.shape[0], s.shape[0]):
        raise DimensionError(
            f"q must be {a.shape[0]}x{s.shape[0]}, got {q.shape}"
        )
    dist, pair = _closest_eigen_pair(a, s)
    if dist <= DEFAULT_SPECTRAL_GAP:
        raise SpectraOverlapError(
            "no unique Sylvester solution: sigma(a) and sigma(s) overlap "
            f"(closest pair {pair[0]:.6g} and {pair[1]:.6g}, distance {dist:.3e})",
            closest_pair=pair,
            distance=dist,
        )
    ta, ua = spla.schur(a, output="real")
    ts, us = spla.schur(s, output="real")
    c = -(ua.T @ q @ us)
    y = _quasi_triangular_sylvester(ta, ts, c)
    return ua @ y @ us.T


def solve_lyapunov(a, q, side="observability", margin=DEFAULT_STABILITY_MARGIN):
    """Solve a continuous Lyapunov equation for Hurwitz ``a``.

    ``side="observability"`` solves ``a.T x + x a + q = 0``;
    ``side="controllability"`` solves ``a x + x a.T + q = 0``.

    ``q`` must be symmetric positive semidefinite; the returned solution
    is symmetrized, which removes the rounding asymmetry that would
    otherwise break downstream definiteness checks.
    """
    a = _as_square(a, "a")
    q = _as_square(q, "q")
    if q.shape != a.shape:
        raise DimensionError(f"q must match a, got {q.shape} vs {a.shape}")
    qnorm = np.linalg.norm(q)
    if np.linalg.norm(q - q.T) > 1e-12 * max(1.0, qnorm):
        raise DimensionError("q must be symmetric")
    if q.size and np.min(np.linalg.eigvalsh((q + q.T) / 2.0)) < -1e-10:
        raise DimensionError("q must be positive semidefinite")
    if side not in ("observability", "controllability"):
        raise ValueError(f"unknown side {side!r}")
    sp = spectrum(a)
    if not sp.max_real_part < -margin:
        raise UnstableMatrixError(
            f"Lyapunov equation requires a Hurwitz matrix; "
            f"max real part is {sp.max_real_part:.6g}",
            max_real_part=sp.max_real_part,
        )
    op = a if side == "observability" else a.T
    t, u = spla.schur(op, output="real")
    c = -(u.T @ ((q + q.T) / 2.0) @ u)
    z = _quasi_triangular_lyapunov(t, c)
    x = u @ z @ u.T
    return (x + x.T) / 2.0


# ---------------------------------------------------------------------------
# Complex-Schur solver core used on the optimizer's hot path.  Same
# Bartels-Stewart family; the strictly triangular complex form lets each
# column be handled by one LAPACK triangular solve, which matters when the
# same operand is reused across thousands of gradient evaluations.
# ---------------------------------------------------------------------------


@dataclass
class SchurCache:
    """Cached complex Schur form of a matrix, reusable across solves."""

    matrix: np.ndarray
    t: np.ndarray = field(init=False)
    u: np.ndarray = field(init=False)

    def __post_init__(self):
        t, u = spla.schur(np.asarray(self.matrix, dtype=complex), output="complex")
        self.t = t
        self.u = u


def _sylv_dense(a1, a2, q, cache1=None, cache2=None):
    """Solve ``a1 x + x a2 + q = 0`` via complex Schur reduction.

    ``cache1``/``cache2`` hold precomputed Schur forms of the operands.
    Raises SpectraOverlapError when ``sigma(a1)`` meets ``-sigma(a2)``.
    """
    c1 = cache1 if cache1 is not None else SchurCache(np.asarray(a1, float))
    c2 = cache2 if cache2 is not None else SchurCache(np.asarray(a2, float))
    t1, u1 = c1.t, c1.u
    t2, u2 = c2.t, c2.u
    n, nu = t1.shape[0], t2.shape[0]
    c = -(u1.conj().T @ q @ u2)
    y = np.zeros((n, nu), dtype=complex)
    d1 = np.diagonal(t1)
    scale = max(np.abs(d1).max(initial=0.0), np.abs(np.diagonal(t2)).max(initial=0.0), 1.0)
    eye = np.eye(n)
    for j in range(nu):
        shift = t2[j, j]
        diag = d1 + shift
        if np.min(np.abs(diag)) <= 1e-14 * scale:
            raise SpectraOverlapError(
                "sigma(a1) and -sigma(a2) overlap; equation has no unique solution"
            )
        rhs = c[:, j]
        y[:, j] = spla.solve_triangular(t1 + shift * eye, rhs, lower=False)
        if j + 1 < nu:
            c[:, j + 1 :] -= np.outer(y[:, j], t2[j, j + 1 :])
    x = u1 @ y @ u2.conj().T
    return np.ascontiguousarray(x.real)
