"""Registry of the four benchmark problems.

Every closure takes coordinates as separate arguments ``(x, y, z, t)``, the
parameter vector ``mu = (lam, alpha, beta)`` and an array namespace ``xp``.
Passing ``numpy``, ``torch`` or :data:`hsml.autodiff.expr_math` evaluates the
same formula on arrays, on differentiable tensors or on expression graphs.

Problems
--------
tp1
    Poisson on a rock: ``lap u = -(a^2 + b^2) pi^2 lam x cos(a pi y) sin(b pi z)``.
tp2
    Two-component heat system ``u_t = lap u + F(t)`` with exponential source.
tp3
    Heat equation ``u_t - lap u = 0`` driven by boundary sensor data; no
    closed-form solution (its reference is a FEM solve).
tp4
    Diffusion-reaction system ``lap u = (2 u1, 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PI = math.pi


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    components: int
    time_dependent: bool
    default_mu: tuple[float, ...]
    parameter_box: tuple[tuple[float, float], ...] | None
    # lap u = source(...) in the steady weak form, u_t = lap u + source(...) otherwise
    source: Callable
    boundary: Callable | None
    initial: Callable | None
    solution: Callable | None
    residual: Callable
    stiffness_sign: float = 1.0
    reaction: tuple[float, ...] = ()
    description: str = ""
    param_names: tuple[str, ...] = ("lam", "alpha", "beta")
    extra: dict = field(default_factory=dict)

    @property
    def parametric(self):
        return self.parameter_box is not None

    @property
    def input_dim(self):
        return 4 if self.time_dependent else 3


# -- tp1 -------------------------------------------------------------------


def _tp1_solution(x, y, z, t, mu, xp=np):
    lam, a, b = mu
    return [lam * x * xp.cos(a * PI * y) * xp.sin(b * PI * z)]


def _tp1_source(x, y, z, t, mu, u=None, xp=np):
    lam, a, b = mu
    return [-(a * a + b * b) * PI**2 * lam * x * xp.cos(a * PI * y) * xp.sin(b * PI * z)]


def _tp1_residual(u, u_t, lap, x, y, z, t, mu, xp=np):
    return [lap[0] - _tp1_source(x, y, z, t, mu, xp=xp)[0]]


# -- tp2 -------------------------------------------------------------------


def _tp2_solution(x, y, z, t, mu, xp=np):
    lam, a, b = mu
    e = xp.exp(lam * t)
    return [e + a * x + b * y + z, e + a * x * x + b * y * y + z * z]


def _tp2_source(x, y, z, t, mu, u=None, xp=np):
    lam, a, b = mu
    s = lam * xp.exp(lam * t)
    return [s + 0.0 * x, s - 2.0 * (a + b + 1.0) + 0.0 * x]


def _tp2_initial(x, y, z, mu, xp=np):
    lam, a, b = mu
    return [1.0 + a * x + b * y + z, 1.0 + a * x * x + b * y * y + z * z]


def _tp2_residual(u, u_t, lap, x, y, z, t, mu, xp=np):
    f = _tp2_source(x, y, z, t, mu, xp=xp)
    return [u_t[c] - lap[c] - f[c] for c in range(2)]


# -- tp3 -------------------------------------------------------------------


def _tp3_source(x, y, z, t, mu, u=None, xp=np):
    return [0.0 * x]


def _tp3_residual(u, u_t, lap, x, y, z, t, mu, xp=np):
    return [u_t[0] - lap[0]]


# -- tp4 -------------------------------------------------------------------


def _tp4_solution(x, y, z, t, mu, xp=np):
    return [xp.exp(x + y), x * x - z]


def _tp4_source(x, y, z, t, mu, u=None, xp=np):
    """Right-hand side of ``lap u = F(u)``; ``u`` defaults to the exact field."""
    if u is None:
        u = _tp4_solution(x, y, z, t, mu, xp=xp)
    return [2.0 * u[0], 2.0 + 0.0 * x]


def _tp4_residual(u, u_t, lap, x, y, z, t, mu, xp=np):
    return [lap[0] - 2.0 * u[0], lap[1] - 2.0]


def _boundary_from_solution(sol):
    def boundary(x, y, z, t, mu, xp=np):
        return sol(x, y, z, t, mu, xp=xp)

    return boundary


_REGISTRY = {
    "tp1": ProblemSpec(
        id="tp1",
        components=1,
        time_dependent=False,
        default_mu=(0.1, 0.2, 0.5),
        parameter_box=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
        source=_tp1_source,
        boundary=_boundary_from_solution(_tp1_solution),
        initial=None,
        solution=_tp1_solution,
        residual=_tp1_residual,
        stiffness_sign=-1.0,
        description="Poisson problem with manufactured trigonometric solution",
    ),
    "tp2": ProblemSpec(
        id="tp2",
        components=2,
        time_dependent=True,
        default_mu=(0.1, 0.2, 0.5),
        parameter_box=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
        source=_tp2_source,
        boundary=_boundary_from_solution(_tp2_solution),
        initial=_tp2_initial,
        solution=_tp2_solution,
        residual=_tp2_residual,
        description="coupled heat system with exponential source",
    ),
    "tp3": ProblemSpec(
        id="tp3",
        components=1,
        time_dependent=True,
        default_mu=(),
        parameter_box=None,
        source=_tp3_source,
        boundary=None,
        initial=None,
        solution=None,
        residual=_tp3_residual,
        description="heat equation driven by boundary sensor data",
        param_names=(),
    ),
    "tp4": ProblemSpec(
        id="tp4",
        components=2,
        time_dependent=False,
        default_mu=(),
        parameter_box=None,
        source=_tp4_source,
        boundary=_boundary_from_solution(_tp4_solution),
        initial=None,
        solution=_tp4_solution,
        residual=_tp4_residual,
        stiffness_sign=-1.0,
        reaction=(2.0, 0.0),
        description="diffusion-reaction system",
        param_names=(),
    ),
}


def get(problem_id):
    try:
        return _REGISTRY[problem_id]
    except KeyError:
        raise KeyError(f"unknown problem id {problem_id!r}; known: {sorted(_REGISTRY)}") from None


def problem_ids():
    return sorted(_REGISTRY)


def evaluate(fn, points, mu=(), t=None, **kw):
    """Evaluate a closure on an ``(n, 3)`` or ``(n, 4)`` numpy point array.

    Returns an ``(n, components)`` array.
    """
    points = np.asarray(points, dtype=float)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    if t is None:
        t = points[:, 3] if points.shape[1] > 3 else np.zeros(len(points))
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
    out = fn(x, y, z, t, tuple(mu), xp=np, **kw)
    return np.stack([np.broadcast_to(c, x.shape) for c in out], axis=1)


# -- tp3 sensor fixture ----------------------------------------------------


@dataclass(frozen=True)
class SensorGenerator:
    """Synthetic boundary temperature: ``base + amp sin(2 pi t) s(p) + slope z``.

    ``s(p)`` is a smooth spatial factor in ``[1 - spread, 1 + spread]``. The
    24 hour record is mapped onto ``t in [0, 1]``.
    """

    base: float = 20.0
    amplitude: float = 2.0
    slope: float = 0.5
    spread: float = 0.2

    def factor(self, x, y, z, xp=np):
        return 1.0 + self.spread * xp.sin(PI * x + 0.5) * xp.cos(PI * y - 0.3)

    def __call__(self, x, y, z, t, mu=(), xp=np):
        return [self.base + self.amplitude * xp.sin(2 * PI * t) * self.factor(x, y, z, xp) + self.slope * z]


def sensor_dataset(sites, n_times=99, generator=None):
    """Sensor readings at fixed boundary ``sites`` for ``n_times`` samples.

    Sample times are ``i / n_times`` for ``i = 1..n_times``; the ``t = 0``
    reading is withheld because it defines the initial temperature ``T0``.
    Returns ``(points (n_sites*n_times, 4), values (n, 1), T0)``.
    """
    generator = generator or SensorGenerator()
    sites = np.asarray(sites, dtype=float)
    times = np.arange(1, n_times + 1) / n_times
    pts = np.concatenate([np.column_stack([sites, np.full(len(sites), t)]) for t in times])
    vals = evaluate(generator, pts)
    t0 = float(evaluate(generator, sites, t=0.0).mean())
    return pts, vals, t0


# -- error metrics ---------------------------------------------------------


@dataclass
class ErrorReport:
    components: list[float]
    magnitude: float
    absolute_only: bool = False


def l2_relative_error(a, b, mass=None):
    """Relative error ``||a - b|| / ||b||`` per component and in magnitude.

    ``a`` and ``b`` are arrays of shape ``(times, components, N)`` or
    ``(components, N)`` (also accepted: :class:`hsml.fem.FieldSeries`).
    With ``mass`` the norm is ``sqrt(v^T M v)``. When ``||b|| = 0`` the
    absolute error is returned and ``absolute_only`` is set.
    """
    a = _field_array(a)
    b = _field_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")

    def norm2(v):
        # v: (times, N) -> squared norm summed over times
        if mass is None:
            return float(np.sum(v * v))
        return float(sum(vi @ (mass @ vi) for vi in v))

    flagged = False
    comps = []
    for c in range(a.shape[1]):
        num = norm2(a[:, c] - b[:, c])
        den = norm2(b[:, c])
        if den == 0.0:
            flagged = True
            comps.append(math.sqrt(num))
        else:
            comps.append(math.sqrt(num / den))
    ma = np.sqrt(np.sum(a * a, axis=1))
    mb = np.sqrt(np.sum(b * b, axis=1))
    num, den = norm2(ma - mb), norm2(mb)
    if den == 0.0:
        flagged = True
        mag = math.sqrt(num)
    else:
        mag = math.sqrt(num / den)
    return ErrorReport(comps, mag, flagged)


def _field_array(v):
    values = getattr(v, "values", v)
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, None, :]
    elif arr.ndim == 2:
        arr = arr[None]
    return arr
