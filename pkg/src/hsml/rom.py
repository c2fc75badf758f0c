"""POD reduced-order models: snapshots, bases, Galerkin operators, online solves.

The reduced model projects the full-order system *after* Dirichlet
elimination, so boundary data enters through the projected load and the
reduced solution reproduces any full-order solution lying in the span of the
basis. Multi-component problems get one basis per component.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import bench, fem
from . import io as hio
from .mesh import VolumeMesh, mesh_from_spec

ENERGY_TOL = 1e-6
RANK_CUTOFF = 1e-14
COND_LIMIT = 1e14


class RomError(RuntimeError):
    pass


@dataclass
class SnapshotSet:
    parameters: np.ndarray  # (M, D)
    matrix: np.ndarray  # (N_h, M) or (N_h, M * N), time-major inside each parameter block
    component: int = 0
    n_times: int = 1

    def __post_init__(self):
        self.parameters = np.atleast_2d(np.asarray(self.parameters, dtype=float))
        expected = len(self.parameters) * self.n_times
        if self.matrix.shape[1] != expected:
            raise RomError(f"snapshot matrix has {self.matrix.shape[1]} columns, expected {expected}")

    def block(self, i):
        return self.matrix[:, i * self.n_times : (i + 1) * self.n_times]


@dataclass
class ReducedBasis:
    modes: np.ndarray  # (N_h, k)
    singular_values: np.ndarray  # all singular values, descending
    tolerance: float | None
    forced_k: int | None = None
    stage_spectra: list = field(default_factory=list)

    @property
    def k(self):
        return self.modes.shape[1]

    def truncate(self, k):
        return ReducedBasis(self.modes[:, :k], self.singular_values, self.tolerance, k, self.stage_spectra)


def energy_rank(sigma, tol):
    """Smallest ``k`` whose discarded energy fraction is at most ``tol``."""
    e = np.asarray(sigma, dtype=float) ** 2
    total = e.sum()
    if total == 0:
        return 0
    tail = 1.0 - np.cumsum(e) / total
    # guard against round-off leaving a tiny positive tail
    tail[-1] = 0.0
    return int(np.argmax(tail <= tol)) + 1


def mgs(Q, passes=2):
    """Modified Gram-Schmidt on the columns of ``Q`` (two passes by default)."""
    Q = np.array(Q, dtype=float, copy=True)
    for _ in range(passes):
        for j in range(Q.shape[1]):
            for i in range(j):
                Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
            Q[:, j] /= np.linalg.norm(Q[:, j])
    return Q


def pod(S, tol=ENERGY_TOL, k=None):
    """POD basis of ``S`` by the method of snapshots.

    Eigenpairs of the Gram matrix ``S^T S`` give ``sigma_i^2`` and the right
    singular vectors; modes are ``S V Sigma^-1``. Directions with eigenvalue
    below ``1e-14 * trace`` are dropped before the division. ``k`` overrides
    the energy criterion.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.size == 0:
        raise RomError("snapshot matrix is empty")
    G = S.T @ S
    trace = np.trace(G)
    if trace == 0.0:
        raise RomError("snapshot matrix is identically zero")
    w, V = np.linalg.eigh(G)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    sigma = np.sqrt(np.clip(w, 0.0, None))
    keep = w > RANK_CUTOFF * trace
    rank = int(keep.sum())
    if k is not None:
        if k > S.shape[1]:
            raise RomError(f"requested k = {k} exceeds the number of snapshots {S.shape[1]}")
        n = min(k, rank)
    else:
        n = min(energy_rank(sigma, tol), rank)
    modes = S @ V[:, :n] / sigma[:n]
    # small singular values lose orthogonality in the Gram route; restore it
    modes = mgs(modes)
    if k is not None and k > n:
        modes = _complete(S, modes, k)
    return ReducedBasis(modes, sigma, None if k is not None else tol, k)


def _complete(S, Q, k):
    """Extend ``Q`` to ``k`` columns from the SVD of the unexplained part of ``S``.

    Used when a forced ``k`` reaches below the Gram-matrix cutoff, where the
    squared spectrum no longer resolves the remaining directions.
    """
    R = S - Q @ (Q.T @ S)
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    need = k - Q.shape[1]
    scale = np.linalg.norm(S, 2)
    if need > len(s) or s[need - 1] <= 1e-13 * scale:
        raise RomError(f"requested k = {k} exceeds the numerical rank of the snapshots")
    return mgs(np.hstack([Q, U[:, :need]]))


def pod_unsteady(snapshots, tol=ENERGY_TOL, k=None, stage1_tol=None):
    """Nested POD: compress each parameter's time block, then across blocks.

    Stage-one modes are scaled by their singular values so the second stage
    sees each block's energy. The final basis is re-orthonormalised with
    modified Gram-Schmidt. Both stage spectra are kept for auditing.
    """
    stage1_tol = tol if stage1_tol is None else stage1_tol
    M = len(snapshots.parameters)
    blocks, spectra = [], []
    for i in range(M):
        B = snapshots.block(i)
        if B.shape[1] == 0:
            raise RomError(f"empty time block for parameter {i}")
        if not np.any(B):
            spectra.append(np.zeros(B.shape[1]))
            continue
        b = pod(B, stage1_tol)
        spectra.append(b.singular_values)
        blocks.append(b.modes * b.singular_values[: b.k])
    if not blocks:
        raise RomError("snapshot matrix is identically zero")
    stage2 = pod(np.hstack(blocks), tol, k)
    return ReducedBasis(mgs(stage2.modes), stage2.singular_values, stage2.tolerance, k, spectra)


# -- parameter sampling ----------------------------------------------------


def sample_parameters(box, M, seed=0, kind="uniform", mean=0.5, sd=0.25):
    """Draw ``M`` parameter vectors from ``box``.

    ``kind="normal"`` draws from a Gaussian truncated to the box.
    """
    box = np.asarray(box, dtype=float)
    rng = np.random.default_rng(seed)
    lo, hi = box[:, 0], box[:, 1]
    if kind == "uniform":
        return lo + (hi - lo) * rng.random((M, len(box)))
    if kind == "normal":
        a, b = (lo - mean) / sd, (hi - mean) / sd
        return stats.truncnorm.rvs(a, b, loc=mean, scale=sd, size=(M, len(box)), random_state=rng)
    raise ValueError(f"unknown sampler {kind!r}")


# -- reduced operators -----------------------------------------------------


@dataclass
class ReducedOperators:
    """Galerkin-projected matrices, one entry per component.

    ``A_r[c] = Q_c^T A Q_c`` with ``A`` the Dirichlet-eliminated operator
    (steady) or the eliminated backward Euler step matrix (unsteady);
    ``M_r[c] = Q_c^T M_free Q_c``. Loads are projected per query.
    """

    problem_id: str
    mesh: VolumeMesh
    bases: list
    A_r: list
    M_r: list
    unsteady: dict | None = None  # {"T": ..., "N": ...}

    @property
    def problem(self):
        return bench.get(self.problem_id)

    @property
    def ks(self):
        return [b.k for b in self.bases]

    def truncate(self, k):
        bases = [b.truncate(min(k, b.k)) for b in self.bases]
        return ReducedOperators(
            self.problem_id,
            self.mesh,
            bases,
            [A[: b.k, : b.k] for A, b in zip(self.A_r, bases)],
            [M[: b.k, : b.k] for M, b in zip(self.M_r, bases)],
            self.unsteady,
        )


def _steady_system(problem, mesh, mu):
    """Eliminated ``(A, f)`` for a linear steady problem."""
    system = fem.assemble(mesh, fem._closure_points(problem.source, mu), sign=problem.stiffness_sign, components=problem.components)
    system = fem.apply_dirichlet(system, fem._closure_points(problem.boundary, mu))
    return system.A, system.f


def _unsteady_setup(problem, mesh, T, N):
    system = fem.assemble(mesh, None, sign=problem.stiffness_sign, components=problem.components)
    nodes = fem.dirichlet_nodes(mesh)
    return system, fem.unsteady_operators(system, nodes, T / N)


def assemble_reduced(problem_id, mesh, bases, unsteady=None):
    problem = bench.get(problem_id)
    if problem.reaction:
        raise RomError(f"{problem_id} is nonlinear; the Galerkin ROM covers linear problems")
    if unsteady is None:
        A, _ = _steady_system(problem, mesh, problem.default_mu)
        Ms = A
    else:
        _, ops = _unsteady_setup(problem, mesh, unsteady["T"], unsteady["N"])
        A, Ms = ops.K, ops.M_free
    A_r = [b.modes.T @ (A @ b.modes) for b in bases]
    M_r = [b.modes.T @ (Ms @ b.modes) for b in bases]
    return ReducedOperators(problem_id, mesh, list(bases), A_r, M_r, unsteady)


# -- offline ---------------------------------------------------------------


@dataclass
class OfflineResult:
    snapshots: list  # SnapshotSet per component
    operators: ReducedOperators
    seconds: float


def full_order(problem_id, mesh, mu, T=1.0, N=21):
    problem = bench.get(problem_id)
    if problem.time_dependent:
        return fem.solve_problem_unsteady(problem, mesh, mu, T=T, N=N)
    return fem.solve_problem_steady(problem, mesh, mu)


def offline(problem_id, mesh, params, tol=ENERGY_TOL, k=None, T=1.0, N=21):
    """Solve the full-order model at every parameter and build the ROM.

    Unsteady problems keep the states ``t_1..t_N`` (the initial state is data)
    and use the nested POD.
    """
    start = time.perf_counter()
    problem = bench.get(problem_id)
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if len(params) < 1:
        raise RomError("at least one parameter sample is required")
    cols = []
    for mu in params:
        try:
            sol = full_order(problem_id, mesh, mu, T, N)
        except fem.FemError as exc:
            raise RomError(f"full-order solve failed at mu = {tuple(mu)}: {exc}") from exc
        cols.append(sol.values[1:] if problem.time_dependent else sol.values)
    data = np.stack(cols)  # (M, T, C, N_h)
    n_times = data.shape[1]
    sets, bases = [], []
    for c in range(problem.components):
        S = data[:, :, c, :].reshape(-1, mesh.n_nodes).T
        snap = SnapshotSet(params, S, c, n_times)
        sets.append(snap)
        if problem.time_dependent:
            bases.append(pod_unsteady(snap, tol, k))
        else:
            bases.append(pod(S, tol, k))
    unsteady = {"T": T, "N": N} if problem.time_dependent else None
    ops = assemble_reduced(problem_id, mesh, bases, unsteady)
    return OfflineResult(sets, ops, time.perf_counter() - start)


# -- online ----------------------------------------------------------------


def _solve_small(A, b):
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RomError(f"reduced system is singular (condition estimate {cond:.2e})")
    return np.linalg.solve(A, b)


def online_coefficients(ops, mu):
    """Reduced coefficients per component; shape ``(steps, k_c)`` each."""
    problem = ops.problem
    mesh = ops.mesh
    if ops.unsteady is None:
        _, f = _steady_system(problem, mesh, mu)
        return [_solve_small(A, b.modes.T @ f[:, c])[None] for c, (A, b) in enumerate(zip(ops.A_r, ops.bases))]

    T, N = ops.unsteady["T"], ops.unsteady["N"]
    h = T / N
    system, fops = _unsteady_setup(problem, mesh, T, N)
    vol, _ = fem.element_geometry(mesh)
    x, y, z = mesh.nodes.T
    u0 = np.stack([np.broadcast_to(v, x.shape) for v in problem.initial(x, y, z, tuple(mu), xp=np)], axis=1)
    nodes = fops.nodes
    alphas = [b.modes.T @ u0[:, c] for c, b in enumerate(ops.bases)]
    out = [[a] for a in alphas]
    lu = [np.linalg.cond(A) for A in ops.A_r]
    for c, cond in enumerate(lu):
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise RomError(f"reduced system is singular (condition estimate {cond:.2e})")
    for n in range(N):
        t1 = (n + 1) * h
        f1 = fem.load_vector(mesh, lambda p: bench.evaluate(problem.source, p, mu, t=t1), vol)
        g1 = bench.evaluate(problem.boundary, mesh.nodes[nodes], mu, t=t1)
        b = fem.step_rhs(fops, f1, g1)
        for c, basis in enumerate(ops.bases):
            rhs = ops.M_r[c] @ alphas[c] / h + basis.modes.T @ b[:, c]
            alphas[c] = np.linalg.solve(ops.A_r[c], rhs)
            out[c].append(alphas[c])
    return [np.array(o) for o in out]


def lift(ops, coeffs):
    """Nodal values ``(steps, C, N_h)`` from reduced coefficients."""
    return np.stack([coeffs[c] @ b.modes.T for c, b in enumerate(ops.bases)], axis=1)


def online(ops, mu):
    """Reduced solve at ``mu`` lifted to a :class:`~hsml.fem.FieldSeries`."""
    mu = tuple(float(v) for v in mu)
    coeffs = online_coefficients(ops, mu)
    values = lift(ops, coeffs)
    C = len(ops.bases)
    if ops.unsteady is None:
        times = [0.0]
    else:
        times = ops.unsteady["T"] / ops.unsteady["N"] * np.arange(ops.unsteady["N"] + 1)
    return fem.FieldSeries(times, values, fem.default_names(C))


# -- error analysis --------------------------------------------------------


def _drop_initial(values, unsteady):
    return values[1:] if unsteady is not None else values


def error_analysis(ops, test_params, full_solver=None, ks=None, per_component=False):
    """Absolute and relative errors of the ROM against full-order solves.

    For every ``k`` in ``ks`` (default ``1..k_max``) the basis is truncated
    and the mean/max over ``test_params`` of the Euclidean L2 errors is
    recorded. Unsteady errors cover ``t_1..t_N``.
    """
    full_solver = full_solver or (lambda mu: full_order(ops.problem_id, ops.mesh, mu, **(ops.unsteady or {})))
    kmax = max(ops.ks)
    ks = list(range(1, kmax + 1)) if ks is None else list(ks)
    refs = [_drop_initial(full_solver(tuple(mu)).values, ops.unsteady) for mu in test_params]
    rows = {"k": [], "mean_abs": [], "max_abs": [], "mean_rel": [], "max_rel": []}
    comp_rel = []
    for k in ks:
        sub = ops.truncate(k)
        abs_e, rel_e, comp = [], [], []
        for mu, ref in zip(test_params, refs):
            red = _drop_initial(online(sub, mu).values, sub.unsteady)
            rep = bench.l2_relative_error(red, ref)
            diff = float(np.linalg.norm(red - ref))
            abs_e.append(diff)
            rel_e.append(diff / np.linalg.norm(ref))
            comp.append(rep.components)
        rows["k"].append(k)
        rows["mean_abs"].append(float(np.mean(abs_e)))
        rows["max_abs"].append(float(np.max(abs_e)))
        rows["mean_rel"].append(float(np.mean(rel_e)))
        rows["max_rel"].append(float(np.max(rel_e)))
        comp_rel.append(np.max(np.array(comp), axis=0).tolist())
    if per_component:
        rows["max_rel_component"] = comp_rel
    return rows


def loglinear_slope(ks, errors):
    """Slope of ``log10(error)`` against ``k`` by least squares."""
    e = np.log10(np.maximum(np.asarray(errors, dtype=float), 1e-300))
    return float(np.polyfit(np.asarray(ks, dtype=float), e, 1)[0])


# -- persistence -----------------------------------------------------------


def save_bundle(ops, path, tol=None, M=None, seed=None, mesh_spec=None):
    """Write ``basis.bin``, ``singular_values.bin``, ``reduced_ops.bin``, ``meta``.

    Components are concatenated inside each file; ``meta`` records the
    per-component sizes needed to split them, and the mesh is stored as
    ``mesh.msh`` so the bundle is self-contained.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    hio.write_array(path / "basis.bin", np.concatenate([b.modes.T.ravel() for b in ops.bases]))
    hio.write_array(path / "singular_values.bin", np.concatenate([b.singular_values for b in ops.bases]))
    hio.write_array(path / "reduced_ops.bin", np.concatenate([np.concatenate([A.ravel(), Mr.ravel()]) for A, Mr in zip(ops.A_r, ops.M_r)]))
    (path / "mesh.msh").write_text(hio.write_msh(ops.mesh))
    meta = {
        "problem": ops.problem_id,
        "k": [b.k for b in ops.bases],
        "n_sigma": [len(b.singular_values) for b in ops.bases],
        "n_nodes": ops.mesh.n_nodes,
        "tolerance": "" if tol is None else tol,
        "M": "" if M is None else M,
        "seed": "" if seed is None else seed,
        "mesh": mesh_spec or "mesh.msh",
    }
    if ops.unsteady is not None:
        meta["T"] = float(ops.unsteady["T"])
        meta["N"] = int(ops.unsteady["N"])
    hio.write_kv(path / "meta", meta)
    return path


def load_bundle(path):
    path = Path(path)
    meta = hio.read_kv(path / "meta")
    mesh = hio.read_msh(path / "mesh.msh")
    ks = [int(v) for v in meta["k"].split(",")]
    ns = [int(v) for v in meta["n_sigma"].split(",")]
    n = int(meta["n_nodes"])
    if n != mesh.n_nodes:
        raise RomError("bundle mesh does not match its metadata")
    modes = hio.read_array(path / "basis.bin")
    sig = hio.read_array(path / "singular_values.bin")
    red = hio.read_array(path / "reduced_ops.bin")
    tol = float(meta["tolerance"]) if meta.get("tolerance") else None
    bases, A_r, M_r = [], [], []
    pm = ps = pr = 0
    for k, ns_c in zip(ks, ns):
        bases.append(ReducedBasis(modes[pm : pm + k * n].reshape(k, n).T.copy(), sig[ps : ps + ns_c], tol))
        A_r.append(red[pr : pr + k * k].reshape(k, k))
        M_r.append(red[pr + k * k : pr + 2 * k * k].reshape(k, k))
        pm += k * n
        ps += ns_c
        pr += 2 * k * k
    unsteady = {"T": float(meta["T"]), "N": int(meta["N"])} if "N" in meta else None
    return ReducedOperators(meta["problem"], mesh, bases, A_r, M_r, unsteady), meta


__all__ = [
    "RomError",
    "SnapshotSet",
    "ReducedBasis",
    "ReducedOperators",
    "OfflineResult",
    "energy_rank",
    "mgs",
    "pod",
    "pod_unsteady",
    "sample_parameters",
    "assemble_reduced",
    "full_order",
    "offline",
    "online",
    "online_coefficients",
    "lift",
    "error_analysis",
    "loglinear_slope",
    "save_bundle",
    "load_bundle",
    "mesh_from_spec",
]
