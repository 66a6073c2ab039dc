"""Bundled fixtures and system generators used by the examples and tests:
the 12th-order positive network, the multi-area power network chain,
random positive networks, and the error-versus-size sweep.
"""

import concurrent.futures
import hashlib
import json
import time
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import linalg
from .errors import FixtureError, NetredWarning, SolverError
from .network import NetworkSystem, Topology

__all__ = [
    "PowerAreaParams",
    "fixture_positive_network",
    "generate_power_network",
    "generate_random_positive",
    "sweep_h2_vs_n",
    "POWER_PARAM_INTERVALS",
]

_FIXTURE_NAME = "fixture_positive_network.json"

# Physical sampling intervals for the power-network generator.
POWER_PARAM_INTERVALS = {
    "d": (0.255, 80.0),
    "m_a": (1.0, 5.0),
    "t_ch": (1.0, 5.0),
    "r_f": (0.03, 0.07),
    "t_g": (4.0, 10.0),
    "t_tie": (1.5, 2.5),
}


@dataclass(frozen=True)
class PowerAreaParams:
    """Per-area physical constants of the frequency-control model."""

    d: float
    m_a: float
    t_ch: float
    r_f: float
    t_g: float

    def __post_init__(self):
        for name in ("d", "m_a", "t_ch", "r_f", "t_g"):
            lo, hi = POWER_PARAM_INTERVALS[name]
            val = getattr(self, name)
            if not (lo <= val <= hi):
                raise ValueError(f"{name}={val} outside the physical interval [{lo}, {hi}]")


def _verify_fixture_doc(doc):
    """Checksum the canonical payload of a fixture document."""
    payload = {"system": doc["system"], "L": doc["L"]}
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canon.encode()).hexdigest()
    if digest != doc.get("sha256"):
        raise FixtureError(
            f"fixture checksum mismatch: computed {digest}, recorded {doc.get('sha256')}"
        )
    return payload


def _fixture_payload():
    ref = resources.files("netred").joinpath("data").joinpath(_FIXTURE_NAME)
    try:
        raw = ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FixtureError(f"fixture file {_FIXTURE_NAME} is missing") from exc
    return _verify_fixture_doc(json.loads(raw))


def fixture_positive_network():
    """The bundled 12th-order positive four-subsystem network.

    Returns the system together with the canonical-last direction matrix
    ``L = [0 0 0 1]`` used throughout its experiments.  The file content
    is checksummed on load.
    """
    payload = _fixture_payload()
    sysdoc = payload["system"]
    top = Topology(
        sizes=tuple(sysdoc["sizes"]),
        state_neighbors=tuple(frozenset(s) for s in sysdoc["state_neighbors"]),
        m=sysdoc["m"],
        p=sysdoc["p"],
    )
    sys = NetworkSystem(
        a=np.array(sysdoc["A"], dtype=float),
        b=np.array(sysdoc["B"], dtype=float),
        c=np.array(sysdoc["C"], dtype=float),
        topology=top,
    )
    return sys, np.array(payload["L"], dtype=float)


def _power_topology(n_areas):
    sizes = [3] + [4] * (n_areas - 1)
    nbrs = []
    for i in range(1, n_areas + 1):
        s = {i}
        if i > 1:
            s.add(i - 1)
        if i < n_areas:
            s.add(i + 1)
        nbrs.append(frozenset(s))
    return Topology(
        sizes=tuple(sizes),
        state_neighbors=tuple(nbrs),
        m=n_areas,
        p=n_areas,
        input_neighbors=tuple(frozenset({i}) for i in range(1, n_areas + 1)),
        input_sizes=(1,) * n_areas,
    )


def _sample_power_matrices(n_areas, rng):
    iv = POWER_PARAM_INTERVALS
    areas = [
        PowerAreaParams(
            d=rng.uniform(*iv["d"]),
            m_a=rng.uniform(*iv["m_a"]),
            t_ch=rng.uniform(*iv["t_ch"]),
            r_f=rng.uniform(*iv["r_f"]),
            t_g=rng.uniform(*iv["t_g"]),
        )
        for _ in range(n_areas)
    ]
    t_tie = [rng.uniform(*iv["t_tie"]) for _ in range(n_areas - 1)]

    n = 4 * n_areas - 1
    a = np.zeros((n, n))
    b = np.zeros((n, n_areas))
    c = np.zeros((n_areas, n))
    offsets = [0] + list(np.cumsum([3] + [4] * (n_areas - 1)))
    for i in range(1, n_areas + 1):
        p = areas[i - 1]
        r = offsets[i - 1]
        # angular-speed deviation
        a[r, r] = -p.d / p.m_a
        a[r, r + 1] = -1.0 / p.m_a
        if i >= 2:
            a[r, r + 3] = -1.0 / p.m_a  # own tie-line state (link to i-1)
        if i < n_areas:
            # the (i, i+1) link state is stored by area i+1 with opposite sign
            a[r, offsets[i] + 3] = 1.0 / p.m_a
        # mechanical power
        a[r + 1, r + 1] = -1.0 / p.t_ch
        a[r + 1, r + 2] = 1.0 / p.t_ch
        # steam-valve position, driven by the reference input
        a[r + 2, r] = -1.0 / (p.r_f * p.t_g)
        a[r + 2, r + 2] = -1.0 / p.t_g
        b[r + 2, i - 1] = 1.0 / p.t_g
        # tie-line power flow toward the upstream neighbour
        if i >= 2:
            stiff = t_tie[i - 2]
            a[r + 3, r] = stiff
            a[r + 3, offsets[i - 2]] = -stiff
        c[i - 1, r] = 1.0
    return a, b, c


def generate_power_network(n_areas, seed=0, max_attempts=20):
    """Chain of ``n_areas`` frequency-control areas coupled by tie-lines.

    Produces the ``4 n_areas - 1`` order model: three states for the first
    area, four for every further area (the extra state being the tie-line
    power flow to its upstream neighbour, with the antisymmetry of the
    flow pair folded into the sign of the coupling entries).  Parameters
    are drawn uniformly from the physical intervals.  Sampled models are
    empirically stable; any unstable draw is resampled (with a warning),
    which keeps the generator a pure function of the seed.
    """
    if n_areas < 2:
        raise ValueError("a tie-line network needs at least 2 areas")
    rng = np.random.default_rng([int(seed), n_areas])
    top = _power_topology(n_areas)
    for attempt in range(max_attempts):
        a, b, c = _sample_power_matrices(n_areas, rng)
        if linalg.is_hurwitz(a, margin=0.0):
            if attempt:
                warnings.warn(
                    f"power network draw resampled {attempt} time(s) for stability",
                    NetredWarning,
                    stacklevel=2,
                )
            return NetworkSystem(a=a, b=b, c=c, topology=top)
    raise SolverError(
        f"no stable power network found in {max_attempts} draws (seed {seed})"
    )


def generate_random_positive(
    sizes,
    m,
    p,
    seed=0,
    interval=(-5.0, 1.0),
    state_neighbors=None,
    input_neighbors=None,
):
    """Random stable positive network respecting a given topology.

    Entries are drawn uniformly from ``interval``; off-diagonal entries of
    A are clamped to be nonnegative (Metzler) and B, C are entrywise
    nonnegative.  The diagonal is shifted downward until the matrix is
    Hurwitz, which always succeeds and preserves positivity.
    """
    sizes = tuple(int(s) for s in sizes)
    n_sub = len(sizes)
    if state_neighbors is None:
        top = Topology.full(sizes, m, p)
        if input_neighbors is not None:
            top = Topology(sizes, top.state_neighbors, m, p,
                           input_neighbors=tuple(frozenset(s) for s in input_neighbors))
    else:
        top = Topology(
            sizes,
            tuple(frozenset(s) for s in state_neighbors),
            m,
            p,
            input_neighbors=(
                tuple(frozenset(s) for s in input_neighbors)
                if input_neighbors is not None
                else None
            ),
        )
    rng = np.random.default_rng(int(seed))
    n = top.n
    a = rng.uniform(interval[0], interval[1], size=(n, n))
    offdiag = ~np.eye(n, dtype=bool)
    a[offdiag] = np.maximum(a[offdiag], 0.0)
    for i, j in top.forbidden_pairs():
        a[top.state_slice(i), top.state_slice(j)] = 0.0
    b = rng.uniform(0.0, 1.0, size=(n, m))
    c = rng.uniform(0.0, 1.0, size=(p, n))
    if top.input_neighbors is not None:
        for i, j in top.input_forbidden_pairs():
            b[top.state_slice(i), top.input_slice(j)] = 0.0
    while not linalg.is_hurwitz(a, margin=0.0):
        shift = linalg.spectrum(a).max_real_part + 0.05
        a = a - shift * np.eye(n)
    return NetworkSystem(a=a, b=b, c=c, topology=top)


def _sweep_row(args):
    """One sweep entry: generate, reduce with per-area order one, report."""
    n_areas, seed, sdp_tol, max_grad_iter, refine_iters, refine_scales = args
    from . import network, pipeline  # deferred: keeps worker imports cheap
    from .gradopt import OptimizerConfig

    start = time.perf_counter()
    sys = generate_power_network(n_areas, seed=seed)
    l = np.eye(n_areas)
    config = OptimizerConfig(max_iter=max_grad_iter)
    result = pipeline.reduce_network(
        sys,
        l,
        (1,) * n_areas,
        method="sdp+grad",
        sdp_tol=sdp_tol,
        opt_config=config,
        refine_iters=refine_iters,
        refine_scales=refine_scales,
    )
    elapsed = time.perf_counter() - start
    report = result.constraint_report
    return {
        "N": n_areas,
        "h2_error": float(result.h2_error),
        "sdp_objective": float(result.sdp_objective),
        "grad_iterations": int(result.grad_iterations),
        "wall_seconds": float(elapsed),
        "dimension": sys.n,
        "system_hurwitz": True,
        "reduced_hurwitz": bool(report.stable),
        "structure_ok": bool(report.structure_ok),
    }


def sweep_h2_vs_n(
    n_values,
    seed=0,
    sdp_tol=1e-5,
    max_grad_iter=400,
    refine_iters=300,
    refine_scales=(0.0, 1.0),
    workers=1,
):
    """Reduce power networks of increasing size and tabulate the errors.

    For each area count the chain network is generated (dimension
    ``4N - 1``), reduced to order N with identity directions through the
    relaxation-plus-descent pipeline, and the achieved error recorded.
    Failed sizes are reported in the ``failures`` list and the sweep
    continues.  Rows are deterministic per (N, seed) and independent, so
    they may run in parallel; the table stays ordered by N.
    """
    n_values = [int(v) for v in n_values]
    if any(v < 2 or v > 64 for v in n_values):
        raise ValueError("sweep sizes must lie in 2..64")
    jobs = [
        (n, seed, sdp_tol, max_grad_iter, refine_iters, tuple(refine_scales))
        for n in n_values
    ]
    rows, failures = [], []
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_sweep_row, job): job[0] for job in jobs}
            results = {}
            for fut in concurrent.futures.as_completed(futures):
                n = futures[fut]
                try:
                    results[n] = fut.result()
                except Exception as exc:
                    failures.append({"N": n, "error": f"{type(exc).__name__}: {exc}"})
            rows = [results[n] for n in n_values if n in results]
    else:
        for job in jobs:
            try:
                rows.append(_sweep_row(job))
            except Exception as exc:
                failures.append({"N": job[0], "error": f"{type(exc).__name__}: {exc}"})
    return rows, failures
