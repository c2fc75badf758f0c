"""P1 finite elements on tetrahedral meshes.

Stiffness and mass matrices are assembled element-by-element in vectorized
numpy and stored as scipy CSR matrices. Dirichlet data is imposed by
symmetric elimination so the systems stay symmetric positive definite and
can be solved with a Jacobi-preconditioned conjugate gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import bench

# 4-point degree-2 rule on the reference tetrahedron (barycentric coordinates)
_QA = 0.5854101966249685
_QB = 0.1381966011250105
QUAD_BARY = np.array([
    [_QA, _QB, _QB, _QB],
    [_QB, _QA, _QB, _QB],
    [_QB, _QB, _QA, _QB],
    [_QB, _QB, _QB, _QA],
])
QUAD_WEIGHTS = np.full(4, 0.25)

CG_RTOL = 1e-10


class FemError(RuntimeError):
    pass


class ConvergenceError(FemError):
    def __init__(self, message, residual, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


@dataclass
class FieldSeries:
    """Nodal values over time: ``values[time][component]`` is a length ``N_h`` vector."""

    times: np.ndarray
    values: np.ndarray  # (T, C, N_h)
    names: tuple[str, ...] = ("u",)

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.values.ndim != 3 or len(self.values) != len(self.times):
            raise ValueError(f"values shape {self.values.shape} does not match {len(self.times)} times")
        if len(self.names) != self.values.shape[1]:
            self.names = default_names(self.values.shape[1])

    @property
    def n_nodes(self):
        return self.values.shape[2]

    @property
    def n_components(self):
        return self.values.shape[1]

    def component(self, c):
        return self.values[:, c, :]

    def at(self, i):
        return self.values[i]


def default_names(n):
    return ("u",) if n == 1 else tuple(f"u_{i + 1}" for i in range(n))


@dataclass
class SparseSystem:
    """Assembled P1 system.

    ``A`` is the signed stiffness, ``M`` the consistent mass matrix and ``f``
    the load with one column per component. After :func:`apply_dirichlet`
    ``A`` and ``f`` hold the eliminated system and ``dirichlet`` maps the
    constrained node indices to their prescribed values.
    """

    A: sp.csr_matrix
    M: sp.csr_matrix
    f: np.ndarray  # (N_h, C)
    mesh: object = None
    dirichlet: dict = field(default_factory=dict)
    stiffness: sp.csr_matrix | None = None  # unsigned K = int grad u . grad v
    sign: float = 1.0

    @property
    def dimension(self):
        return self.A.shape[0]


# -- element kernels -------------------------------------------------------


def element_geometry(mesh):
    """Per-tet volumes and barycentric gradients ``(E, 4, 3)``."""
    p = mesh.nodes[mesh.tets]  # (E, 4, 3)
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)  # columns
    det = np.linalg.det(J)
    vol = det / 6.0
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    bbox = float(np.prod(np.maximum(hi - lo, 1e-300)))
    bad = np.nonzero(np.abs(vol) < 1e-14 * bbox)[0]
    if len(bad):
        raise FemError(f"degenerate tetrahedron {int(bad[0])} (volume {vol[bad[0]]:.3e})")
    invJ = np.linalg.inv(J)  # rows are gradients of the reference coordinates
    g123 = invJ  # (E, 3, 3): row i = grad lambda_{i+1}
    g0 = -g123.sum(axis=1, keepdims=True)
    grads = np.concatenate([g0, g123], axis=1)
    return np.abs(vol), grads


def quadrature_points(mesh):
    """Physical quadrature points ``(E, 4, 3)``."""
    p = mesh.nodes[mesh.tets]
    return np.einsum("qa,eak->eqk", QUAD_BARY, p)


def _coo(mesh, local):
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness_matrix(mesh, vol=None, grads=None):
    if vol is None:
        vol, grads = element_geometry(mesh)
    local = np.einsum("e,eik,ejk->eij", vol, grads, grads)
    return _coo(mesh, local)


_MASS_REF = (np.ones((4, 4)) + np.eye(4)) / 20.0


def mass_matrix(mesh, vol=None):
    if vol is None:
        vol, _ = element_geometry(mesh)
    local = vol[:, None, None] * _MASS_REF[None]
    return _coo(mesh, local)


def load_vector(mesh, forcing, vol=None):
    """``int f v`` by the 4-point rule; ``forcing(points (n, 3)) -> (n, C)``."""
    if vol is None:
        vol, _ = element_geometry(mesh)
    qp = quadrature_points(mesh)
    E = len(mesh.tets)
    vals = np.asarray(forcing(qp.reshape(-1, 3)), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    vals = vals.reshape(E, 4, -1)  # (E, q, C)
    local = np.einsum("e,q,qa,eqc->eac", vol, QUAD_WEIGHTS, QUAD_BARY, vals)
    C = vals.shape[2]
    f = np.zeros((mesh.n_nodes, C))
    for c in range(C):
        np.add.at(f[:, c], mesh.tets.ravel(), local[:, :, c].ravel())
    return f


def assemble(mesh, forcing=None, sign=1.0, components=1):
    """Assemble ``sign * K``, ``M`` and the load for a P1 problem.

    ``sign = -1`` reproduces the weak form ``-int grad u . grad v = int f v`` of
    ``lap u = f``; ``sign = +1`` is the usual diffusion form.
    """
    vol, grads = element_geometry(mesh)
    K = stiffness_matrix(mesh, vol, grads)
    M = mass_matrix(mesh, vol)
    if forcing is None:
        f = np.zeros((mesh.n_nodes, components))
    else:
        f = load_vector(mesh, forcing, vol)
    return SparseSystem(A=(sign * K).tocsr(), M=M, f=f, mesh=mesh, stiffness=K, sign=sign)


# -- Dirichlet elimination -------------------------------------------------


def dirichlet_nodes(mesh, tags=None):
    return mesh.boundary_nodes(tags)


def apply_dirichlet(system, g, tags=None, t=None):
    """Symmetric elimination of Dirichlet rows and columns.

    ``g(points (n, 3)) -> (n, C)`` gives the prescribed values on the nodes of
    the boundary faces carrying ``tags`` (all faces when ``None``).
    """
    mesh = system.mesh
    nodes = dirichlet_nodes(mesh, tags)
    vals = np.asarray(g(mesh.nodes[nodes]), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    A, f = eliminate(system.A, system.f, nodes, vals)
    d = dict(system.dirichlet)
    d.update(zip(nodes.tolist(), vals))
    return replace(system, A=A, f=f, dirichlet=d)


def eliminate(A, f, nodes, vals):
    n = A.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[nodes] = True
    # unit diagonal carrying the operator's sign keeps the system definite
    unit = 1.0 if A.diagonal().sum() >= 0 else -1.0
    lift = np.zeros((n, vals.shape[1]))
    lift[nodes] = vals
    f = np.array(f, dtype=float, copy=True)
    f -= A @ lift
    f[nodes] = unit * vals
    keep = sp.diags((~mask).astype(float))
    A2 = (keep @ A @ keep + unit * sp.diags(mask.astype(float))).tocsr()
    A2.eliminate_zeros()
    return A2, f


def free_mask(n, nodes):
    mask = np.ones(n, dtype=bool)
    mask[nodes] = False
    return mask


# -- linear solvers --------------------------------------------------------


def pcg(A, b, x0=None, rtol=CG_RTOL, maxiter=None):
    """Jacobi-preconditioned conjugate gradient for SPD ``A``.

    Returns ``(x, relative residual, iterations)``.
    """
    n = A.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    d = A.diagonal()
    if np.any(d <= 0):
        raise FemError("matrix has non-positive diagonal entries; not SPD")
    inv_d = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    r = b - A @ x
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > rtol and it < maxiter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if it % 50 == 0:
            r = b - A @ x  # limit drift of the recursive residual
        res = np.linalg.norm(r) / bnorm
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A @ x) / bnorm
    if res > rtol:
        raise ConvergenceError(f"CG did not converge: relative residual {res:.3e} after {it} iterations", res)
    return x, res, it


def _solve_columns(A, F, x0=None):
    sign = 1.0
    if A.diagonal().sum() < 0:
        # negative definite sign convention: solve (-A) x = -F
        sign = -1.0
    out = np.zeros_like(F)
    for c in range(F.shape[1]):
        guess = None if x0 is None else x0[:, c]
        out[:, c], _, _ = pcg(sign * A, sign * F[:, c], guess)
    return out


def solve_steady(system, x0=None):
    """Solve the eliminated steady system; returns ``(N_h, C)`` nodal values."""
    if not system.dirichlet:
        raise FemError("apply Dirichlet conditions before solving (pure Neumann Laplacian is singular)")
    u = _solve_columns(system.A, system.f, x0)
    # CG leaves rounding noise on the decoupled rows; restore the exact data
    nodes = np.fromiter(system.dirichlet.keys(), dtype=np.int64)
    u[nodes] = np.array(list(system.dirichlet.values()))
    return u


def residual_norm(system, u):
    u = u.reshape(system.f.shape)
    return float(np.linalg.norm(system.A @ u - system.f) / np.linalg.norm(system.f))


# -- problem drivers -------------------------------------------------------


def _closure_points(fn, mu, t=None, **kw):
    def call(points):
        return bench.evaluate(fn, points, mu, t=0.0 if t is None else t, **kw)

    return call


def solve_problem_steady(problem, mesh, mu=(), picard_tol=1e-10, max_picard=100):
    """Full-order steady solve of a registered problem on ``mesh``.

    Reaction-type forcing (``lap u = F(u)``) is handled by Picard iteration
    starting from the boundary lifting.
    """
    mu = tuple(mu) if len(mu) else problem.default_mu
    C = problem.components
    system = assemble(mesh, _closure_points(problem.source, mu), sign=problem.stiffness_sign, components=C)
    system = apply_dirichlet(system, _closure_points(problem.boundary, mu))
    if not problem.reaction:
        return FieldSeries([0.0], solve_steady(system).T[None], default_names(C))

    nodes = np.fromiter(system.dirichlet.keys(), dtype=np.int64)
    vals = np.array(list(system.dirichlet.values()))
    u = np.zeros((mesh.n_nodes, C))
    u[nodes] = vals
    base = assemble(mesh, None, sign=problem.stiffness_sign, components=C)
    change = np.inf
    for _ in range(max_picard):
        f = _reaction_load(problem, mesh, u, mu)
        A, rhs = eliminate(base.A, f, nodes, vals)
        new = _solve_columns(A, rhs, u)
        new[nodes] = vals
        change = np.linalg.norm(new - u) / max(np.linalg.norm(new), 1e-300)
        u = new
        if change <= picard_tol:
            break
    else:
        raise ConvergenceError(f"Picard iteration stalled (change {change:.2e})", change)
    return FieldSeries([0.0], u.T[None], default_names(C))


def _reaction_load(problem, mesh, u, mu):
    """Load for ``lap u = F(u)`` with ``F`` evaluated on the P1 interpolant of ``u``."""
    vol, _ = element_geometry(mesh)
    qp = quadrature_points(mesh).reshape(-1, 3)
    uq = np.einsum("qa,eac->eqc", QUAD_BARY, u[mesh.tets]).reshape(-1, u.shape[1])
    x, y, z = qp.T
    vals = problem.source(x, y, z, np.zeros(len(x)), mu, u=[uq[:, c] for c in range(u.shape[1])], xp=np)
    vals = np.stack([np.broadcast_to(v, x.shape) for v in vals], axis=1)
    return load_vector(mesh, lambda p: vals, vol)


@dataclass
class UnsteadyOperators:
    """Matrices of the backward Euler step ``(M/h + A) u+ = M u / h + f+``."""

    K: sp.csr_matrix  # eliminated M/h + A
    M_free: sp.csr_matrix  # M with Dirichlet rows zeroed
    Kfb: sp.csr_matrix  # coupling of all rows to the Dirichlet columns (free rows only)
    nodes: np.ndarray
    h: float


def unsteady_operators(system, nodes, h):
    n = system.M.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[nodes] = True
    Kfull = (system.M / h + system.A).tocsr()
    keep = sp.diags((~mask).astype(float))
    K = (keep @ Kfull @ keep + sp.diags(mask.astype(float))).tocsr()
    K.eliminate_zeros()
    Kfb = (keep @ Kfull @ sp.diags(mask.astype(float))).tocsr()
    Kfb.eliminate_zeros()
    M_free = (keep @ system.M).tocsr()
    return UnsteadyOperators(K, M_free, Kfb, np.asarray(nodes), h)


def step_rhs(ops, f_next, g_next):
    """Right-hand side pieces independent of ``u_n``: lifted load plus Dirichlet rows."""
    n = ops.K.shape[0]
    C = f_next.shape[1]
    lift = np.zeros((n, C))
    lift[ops.nodes] = g_next
    b = f_next.copy()
    b[ops.nodes] = 0.0
    b -= ops.Kfb @ lift
    b[ops.nodes] = g_next
    return b


def solve_unsteady(system, u0, T, N, boundary=None, forcing=None, tags=None):
    """Backward Euler on ``t_i = i T / N``, ``i = 0..N``.

    ``boundary(points, t)`` and ``forcing(points, t)`` return ``(n, C)``
    arrays; Dirichlet data is re-applied at every step. The step matrix and
    its preconditioner are built once. Returns all ``N + 1`` states.
    """
    mesh = system.mesh
    h = T / N
    u0 = np.asarray(u0, dtype=float)
    if u0.ndim == 1:
        u0 = u0[:, None]
    C = u0.shape[1]
    nodes = dirichlet_nodes(mesh, tags) if boundary is not None else np.zeros(0, np.int64)
    ops = unsteady_operators(system, nodes, h)
    vol, _ = element_geometry(mesh)
    times = h * np.arange(N + 1)
    out = np.zeros((N + 1, C, mesh.n_nodes))
    out[0] = u0.T
    u = u0.copy()
    for n in range(N):
        t1 = times[n + 1]
        f1 = load_vector(mesh, lambda p: forcing(p, t1), vol) if forcing is not None else np.zeros_like(u)
        g1 = np.asarray(boundary(mesh.nodes[nodes], t1), float).reshape(len(nodes), C) if len(nodes) else np.zeros((0, C))
        rhs = ops.M_free @ u / h + step_rhs(ops, f1, g1)
        try:
            u = _solve_columns(ops.K, rhs, u)
        except ConvergenceError as exc:
            raise ConvergenceError(f"time step {n + 1}: {exc}", exc.residual, step=n + 1) from exc
        u[nodes] = g1
        out[n + 1] = u.T
    return FieldSeries(times, out, default_names(C))


def solve_problem_unsteady(problem, mesh, mu=(), T=1.0, N=21, boundary=None, initial=None):
    """Full-order transient solve of a registered problem.

    ``boundary`` / ``initial`` override the problem closures (tp3 has none).
    """
    mu = tuple(mu) if len(mu) else problem.default_mu
    C = problem.components
    system = assemble(mesh, None, sign=problem.stiffness_sign, components=C)
    bfun = boundary or problem.boundary
    ifun = initial or problem.initial

    def g(points, t):
        return bench.evaluate(bfun, points, mu, t=t)

    def f(points, t):
        return bench.evaluate(problem.source, points, mu, t=t)

    x, y, z = mesh.nodes.T
    u0 = np.stack([np.broadcast_to(v, x.shape) for v in ifun(x, y, z, mu, xp=np)], axis=1)
    return solve_unsteady(system, u0, T, N, boundary=g, forcing=f)
