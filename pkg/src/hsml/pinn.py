"""Physics-informed networks for direct problems and parameter identification.

Networks are evaluated in float64 with torch. Input derivatives needed by
the PDE residual (gradient and the unmixed second derivatives) are carried
forward through the layers as jets, so one pass yields ``u``, ``grad u`` and
``lap u`` for a whole batch. Torch autograd then supplies gradients with
respect to the weights and the physical parameters.

:func:`graph_forward` and :func:`graph_residual` rebuild a (small) network
as an :class:`hsml.autodiff.ExprGraph`; they serve as an independent route
for checking the jet arithmetic.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import bench
from . import io as hio
from .autodiff import Expr, ExprGraph, expr_math

DTYPE = torch.float64
SPATIAL = 3
RECIPES = ("physics", "physics+data", "physics+data+hard")


class PinnError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


# -- model -----------------------------------------------------------------


def _glorot(fan_in, fan_out, gen):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return (torch.rand(fan_in, fan_out, generator=gen, dtype=DTYPE) * 2 - 1) * a


class PinnModel:
    """Fully connected network with optional gated encoders.

    ``arch="gated"`` is the residual feed-forward variant: two encoders
    ``U = tanh(W_U p + b_U)``, ``V = tanh(W_V p + b_V)`` and hidden layers
    ``H = (1 - Z) U + Z V`` with ``Z = tanh(W H_prev + b)``. ``arch="mlp"``
    is the plain ``H = tanh(W H_prev + b)`` network.

    ``n_nets > 1`` stacks independent networks, each contributing
    ``layer_sizes[-1]`` outputs. ``physical`` maps parameter names to
    initial values; with ``trainable=True`` they are optimised with the
    weights. ``hard_constraint=T0`` applies ``T0 + t * net`` to the output.
    ``dtype`` selects the working precision; weights are drawn in float64
    either way, so a float32 model starts from the rounded float64 weights.
    """

    def __init__(self, layer_sizes, arch="gated", n_nets=1, physical=None, trainable=True,
                 hard_constraint=None, seed=0, zero_last=False, dtype=DTYPE):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise PinnError(f"invalid layer sizes {layer_sizes}")
        if arch not in ("gated", "mlp"):
            raise PinnError(f"unknown architecture {arch!r}")
        if arch == "gated" and len(set(sizes[1:-1])) > 1:
            raise PinnError("gated networks need equal hidden widths")
        self.layer_sizes = sizes
        self.arch = arch
        self.n_nets = int(n_nets)
        self.hard_constraint = None if hard_constraint is None else float(hard_constraint)
        self.trainable = trainable
        self.dtype = dtype
        gen = torch.Generator().manual_seed(int(seed))

        def glorot(a, b):
            # drawn in float64 so both precisions start from the same weights
            return _glorot(a, b, gen).to(dtype).requires_grad_()

        def zeros(n):
            return torch.zeros(n, dtype=dtype, requires_grad=True)

        self.nets = []
        for _ in range(self.n_nets):
            net = {"W": [], "b": []}
            for a, b in zip(sizes[:-1], sizes[1:]):
                net["W"].append(glorot(a, b))
                net["b"].append(zeros(b))
            if zero_last:
                with torch.no_grad():
                    net["W"][-1].zero_()
            if arch == "gated" and len(sizes) > 2:
                h = sizes[1]
                net["WU"] = glorot(sizes[0], h)
                net["bU"] = zeros(h)
                net["WV"] = glorot(sizes[0], h)
                net["bV"] = zeros(h)
            self.nets.append(net)
        physical = dict(physical or {})
        self.physical = {k: torch.tensor(float(v), dtype=dtype, requires_grad=trainable) for k, v in physical.items()}

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def output_dim(self):
        return self.n_nets * self.layer_sizes[-1]

    def weight_tensors(self):
        out = []
        for net in self.nets:
            if "WU" in net:
                out += [net["WU"], net["bU"], net["WV"], net["bV"]]
            for W, b in zip(net["W"], net["b"]):
                out += [W, b]
        return out

    def parameters(self):
        extra = list(self.physical.values()) if self.trainable else []
        return self.weight_tensors() + extra

    def mu(self):
        return tuple(self.physical.values())

    def mu_values(self):
        return {k: float(v.detach()) for k, v in self.physical.items()}

    def n_weights(self):
        return sum(p.numel() for p in self.weight_tensors())

    # -- evaluation ---------------------------------------------------------

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise PinnError(f"expected points of width {self.input_dim}, got shape {tuple(x.shape)}")

    def forward(self, x):
        """Network output ``(P, C)`` at points ``x`` of shape ``(P, input_dim)``."""
        x = _tensor(x, self.dtype)
        self._check(x)
        out = torch.cat([self._net_value(net, x) for net in self.nets], dim=1)
        if self.hard_constraint is not None:
            out = self.hard_constraint + x[:, -1:] * out
        return out

    __call__ = forward

    def _net_value(self, net, x):
        Ws, bs = net["W"], net["b"]
        if len(Ws) == 1:
            return x @ Ws[0] + bs[0]
        if "WU" in net:
            U = torch.tanh(x @ net["WU"] + net["bU"])
            V = torch.tanh(x @ net["WV"] + net["bV"])
        h = x
        for W, b in zip(Ws[:-1], bs[:-1]):
            z = torch.tanh(h @ W + b)
            h = U + z * (V - U) if "WU" in net else z
        return h @ Ws[-1] + bs[-1]

    def jet(self, x, spatial=SPATIAL):
        """Value, first derivatives and unmixed second derivatives.

        Returns ``(u (P, C), du (D, P, C), d2u (spatial, P, C))`` where the
        first ``spatial`` input columns are the spatial coordinates.
        """
        x = _tensor(x, self.dtype)
        self._check(x)
        parts = [self._net_jet(net, x, spatial) for net in self.nets]
        u = torch.cat([p[0] for p in parts], dim=-1)
        du = torch.cat([p[1] for p in parts], dim=-1)
        d2u = torch.cat([p[2] for p in parts], dim=-1)
        if self.hard_constraint is not None:
            t = x[:, -1:]
            ut = u + t * du[-1]
            u = self.hard_constraint + t * u
            du = torch.cat([t * du[:-1], ut[None]], dim=0)
            d2u = t * d2u
        return u, du, d2u

    def _net_jet(self, net, x, ns):
        P, D = x.shape
        Ws, bs = net["W"], net["b"]

        def first(W, b):
            # linear map of the raw input: constant gradient, zero curvature
            return x @ W + b, W.unsqueeze(1).expand(D, P, W.shape[1]), None

        def act(z, d, s):
            a = torch.tanh(z)
            g = 1.0 - a * a
            dd = d[:ns]
            # (tanh)'' = -2 a g; fused multiply-adds keep the passes over the jets few
            s_new = (-2.0 * a * g) * (dd * dd)
            if s is not None:
                s_new = torch.addcmul(s_new, g, s)
            return a, g * d, s_new

        if len(Ws) == 1:
            z, d, _ = first(Ws[0], bs[0])
            return z, d, torch.zeros(ns, P, Ws[0].shape[1], dtype=x.dtype)
        gated = "WU" in net
        if gated:
            U = act(*first(net["WU"], net["bU"]))
            V = act(*first(net["WV"], net["bV"]))
            dU = (V[0] - U[0], V[1] - U[1], V[2] - U[2])
        H = None
        for i, (W, b) in enumerate(zip(Ws[:-1], bs[:-1])):
            if i == 0:
                pre = first(W, b)
            else:
                pre = (H[0] @ W + b, H[1] @ W, H[2] @ W)
            Z = act(*pre)
            if gated:
                h = torch.addcmul(U[0], Z[0], dU[0])
                hd = torch.addcmul(torch.addcmul(U[1], Z[1], dU[0]), Z[0], dU[1])
                hs = torch.addcmul(U[2], Z[2], dU[0])
                hs = torch.addcmul(hs, Z[1][:ns], dU[1][:ns], value=2.0)
                hs = torch.addcmul(hs, Z[0], dU[2])
                H = (h, hd, hs)
            else:
                H = Z
        W, b = Ws[-1], bs[-1]
        return H[0] @ W + b, H[1] @ W, H[2] @ W

    def predict(self, points):
        with torch.no_grad():
            return self.forward(points).numpy()

    # -- state --------------------------------------------------------------

    def state(self):
        """Flat float64 vector of all weights followed by physical values."""
        with torch.no_grad():
            parts = [p.reshape(-1) for p in self.weight_tensors()]
            parts += [v.reshape(1) for v in self.physical.values()]
            return torch.cat(parts).numpy().copy()

    def load_state(self, vec):
        vec = torch.as_tensor(np.asarray(vec, dtype=float)).to(self.dtype)
        i = 0
        with torch.no_grad():
            for p in self.weight_tensors() + list(self.physical.values()):
                n = p.numel()
                p.copy_(vec[i : i + n].reshape(p.shape))
                i += n
        if i != len(vec):
            raise PinnError(f"state vector has {len(vec)} entries, model needs {i}")


def _tensor(x, dtype=DTYPE):
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=dtype)


# -- serialization ---------------------------------------------------------


def save_model(model, path):
    """``model.bin``: header fields, layer sizes, weights, physical values."""
    head = [
        model.n_nets,
        0 if model.arch == "gated" else 1,
        len(model.layer_sizes),
        *model.layer_sizes,
        0 if model.hard_constraint is None else 1,
        0.0 if model.hard_constraint is None else model.hard_constraint,
        len(model.physical),
        32 if model.dtype == torch.float32 else 64,
    ]
    hio.write_array(path, np.concatenate([np.asarray(head, dtype=float), model.state()]))
    names = ",".join(model.physical)
    Path(str(path) + ".names").write_text(names + "\n")


def load_model(path):
    vec = hio.read_array(path)
    n_nets, arch, nl = int(vec[0]), int(vec[1]), int(vec[2])
    sizes = [int(v) for v in vec[3 : 3 + nl]]
    i = 3 + nl
    hard = vec[i + 1] if vec[i] else None
    n_phys = int(vec[i + 2])
    dtype = torch.float32 if int(vec[i + 3]) == 32 else torch.float64
    names_file = Path(str(path) + ".names")
    names = names_file.read_text().strip().split(",") if names_file.exists() else []
    names = [n for n in names if n] or [f"p{j}" for j in range(n_phys)]
    model = PinnModel(sizes, "gated" if arch == 0 else "mlp", n_nets, {n: 0.0 for n in names}, hard_constraint=hard, dtype=dtype)
    model.load_state(vec[i + 4 :])
    return model


# -- losses ----------------------------------------------------------------


@dataclass
class Observations:
    points: np.ndarray  # (n, input_dim)
    values: np.ndarray  # (n, C)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.points), -1)

    def __len__(self):
        return len(self.points)


@dataclass
class LossBreakdown:
    residual: float | None
    boundary: float | None
    initial: float | None
    data: float | None
    total: float
    w_residual: float = 1.0
    w_data: float = 1.0
    multipliers: np.ndarray | None = None

    def terms(self):
        return {k: getattr(self, k) for k in ("residual", "boundary", "initial", "data") if getattr(self, k) is not None}


def _mu(model, problem, mu=None):
    if mu is not None:
        return tuple(_tensor(np.asarray(v, dtype=float), model.dtype) if not isinstance(v, torch.Tensor) else v for v in mu)
    if model.physical:
        return model.mu()
    return tuple(torch.tensor(v, dtype=model.dtype) for v in problem.default_mu)


def _coords(x):
    t = x[:, 3] if x.shape[1] > 3 else torch.zeros(x.shape[0], dtype=x.dtype)
    return x[:, 0], x[:, 1], x[:, 2], t


def pointwise_residual(model, problem, points, mu=None):
    """PDE residual ``(P, C)`` of ``model`` at collocation points."""
    if isinstance(problem, str):
        problem = bench.get(problem)
    x = _tensor(points, model.dtype)
    u, du, d2u = model.jet(x)
    C = u.shape[1]
    lap = [d2u[:, :, c].sum(0) for c in range(C)]
    ut = [du[SPATIAL, :, c] for c in range(C)] if problem.time_dependent else [None] * C
    r = problem.residual([u[:, c] for c in range(C)], ut, lap, *_coords(x), _mu(model, problem, mu), xp=torch)
    return torch.stack([torch.broadcast_to(ri, (x.shape[0],)) for ri in r], dim=1)


def residual_loss(model, problem, points, multipliers=None, mu=None):
    """Mean squared residual and the per-point residuals.

    ``multipliers`` (one per point) weight the residual before squaring.
    """
    r = pointwise_residual(model, problem, points, mu)
    w = r if multipliers is None else _tensor(multipliers, r.dtype)[:, None] * r
    return (w * w).mean(), r


def _closure_values(fn, x, mu, initial=False):
    X, Y, Z, T = _coords(x)
    if initial:
        vals = fn(X, Y, Z, mu, xp=torch)
    else:
        vals = fn(X, Y, Z, T, mu, xp=torch)
    return torch.stack([torch.broadcast_to(torch.as_tensor(v, dtype=X.dtype), X.shape) for v in vals], dim=1)


def _with_time(points, t):
    points = np.asarray(points, dtype=float)
    return np.column_stack([points, np.full(len(points), t)])


class LossFunction:
    """Loss of one problem, recipe and point plan, evaluated on index subsets."""

    def __init__(self, model, problem, plan=None, data=None, recipe="physics", w_residual=1.0, w_data=1.0, mu=None):
        if recipe not in RECIPES:
            raise PinnError(f"unknown recipe {recipe!r}; choose from {RECIPES}")
        self.problem = bench.get(problem) if isinstance(problem, str) else problem
        self.model = model
        self.recipe = recipe
        self.w_residual = float(w_residual)
        self.w_data = float(w_data)
        self.fixed_mu = mu
        p = self.problem
        if recipe == "physics+data+hard" and model.hard_constraint is None:
            raise PinnError("hard-constraint recipe needs a model with hard_constraint set")
        colloc = np.zeros((0, model.input_dim)) if plan is None else np.asarray(plan.collocation, float)
        if len(colloc) == 0:
            raise PinnError("collocation set is empty")
        dt = model.dtype
        self.sets = {"residual": _tensor(colloc, dt)}
        if p.boundary is not None:
            bnd = np.asarray(plan.boundary, float)
            if len(bnd) == 0:
                raise PinnError("boundary set is empty")
            self.sets["boundary"] = _tensor(bnd, dt)
        if p.time_dependent and model.hard_constraint is None:
            init = np.asarray(plan.initial, float)
            if len(init) == 0:
                raise PinnError("initial set is empty")
            self.sets["initial"] = _tensor(_with_time(init, 0.0), dt)
        if recipe != "physics":
            if data is None or len(data) == 0:
                raise PinnError("data recipe needs observations")
            self.sets["data"] = _tensor(data.points, dt)
            self.data_values = _tensor(data.values, dt)

    def sizes(self):
        return {k: v.shape[0] for k, v in self.sets.items()}

    def mu(self):
        return _mu(self.model, self.problem, self.fixed_mu)

    def terms(self, index=None, multipliers=None):
        """Dict of loss-term tensors. ``index`` maps set name to row indices."""
        mu = self.mu()
        out = {}
        r = None
        for name, pts in self.sets.items():
            idx = None if index is None else index.get(name)
            if idx is not None and len(idx) == 0:
                continue
            x = pts if idx is None else pts[idx]
            if name == "residual":
                mult = None
                if multipliers is not None:
                    mult = multipliers if idx is None else multipliers[idx]
                out[name], r = residual_loss(self.model, self.problem, x, mult, mu)
            elif name == "boundary":
                diff = self.model(x) - _closure_values(self.problem.boundary, x, mu)
                out[name] = (diff * diff).mean()
            elif name == "initial":
                diff = self.model(x) - _closure_values(self.problem.initial, x, mu, initial=True)
                out[name] = (diff * diff).mean()
            elif name == "data":
                ref = self.data_values if idx is None else self.data_values[idx]
                diff = self.model(x) - ref
                out[name] = (diff * diff).mean()
        return out, r

    def combine(self, terms):
        phys = sum(terms[k] for k in ("residual", "boundary", "initial") if k in terms)
        total = self.w_residual * phys if not isinstance(phys, int) else torch.zeros((), dtype=self.model.dtype)
        if "data" in terms:
            total = total + self.w_data * terms["data"]
        return total


def total_loss(model, problem, plan, data=None, recipe="physics", w_residual=1.0, w_data=1.0, multipliers=None, mu=None):
    """Evaluate every active term on the full point sets."""
    lf = LossFunction(model, problem, plan, data, recipe, w_residual, w_data, mu)
    terms, _ = lf.terms(multipliers=None if multipliers is None else _tensor(multipliers))
    total = lf.combine(terms)
    vals = {k: float(v.detach()) for k, v in terms.items()}
    return LossBreakdown(
        vals.get("residual"),
        vals.get("boundary"),
        vals.get("initial"),
        vals.get("data"),
        float(total.detach()),
        lf.w_residual,
        lf.w_data if "data" in terms else 0.0,
        None if multipliers is None else np.asarray(multipliers, dtype=float),
    )


# -- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    decay: float = 1e-8
    batch_size: int | None = None
    batch_scope: str = "collocation"
    optimizer: str = "adam"
    seed: int = 0
    rba: bool = True
    rba_gamma: float = 0.999
    rba_eta: float = 0.01
    w_residual: float = 1.0
    w_data: float = 1.0
    recipe: str = "physics"
    swa_fraction: float = 0.25
    swa_every: int = 10
    counts: tuple | None = None  # (collocation, boundary, initial, data) when given

    def __post_init__(self):
        if self.epochs < 1:
            raise PinnError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise PinnError("batch size must be positive")
        if self.batch_scope not in ("collocation", "all"):
            raise PinnError(f"unknown batch scope {self.batch_scope!r}")
        if self.optimizer not in ("adam", "adam+swa"):
            raise PinnError(f"unknown optimizer {self.optimizer!r}")
        if self.counts is not None and min(self.counts) < 0:
            raise PinnError("counts must be non-negative")


@dataclass
class TrainResult:
    model: PinnModel
    loss_history: list  # rows: epoch, residual, boundary, initial, data, total
    param_history: list  # rows: epoch, *physical values
    multipliers: np.ndarray
    seconds: float
    config: TrainConfig = None


def rba_update(multipliers, residuals, gamma, eta, index=None):
    """One residual-based attention step, rescaled so the largest is 1.

    ``residuals`` holds the current residual of the points in ``index``
    (all points when ``index`` is ``None``).
    """
    r = np.abs(np.asarray(residuals, dtype=float))
    if r.ndim == 2:
        r = np.sqrt((r * r).sum(axis=1))
    peak = r.max()
    rt = r / peak if peak > 0 else np.zeros_like(r)
    out = np.array(multipliers, dtype=float, copy=True)
    sel = slice(None) if index is None else index
    out[sel] = gamma * out[sel] + eta * rt
    return out / out.max()


def _batches(sizes, config, rng):
    """Per-step index dicts for one epoch."""
    bs = config.batch_size
    if bs is None:
        return [None]
    if config.batch_scope == "collocation":
        n = sizes["residual"]
        perm = rng.permutation(n)
        out = []
        for s in range(0, n, bs):
            idx = {k: None for k in sizes}
            idx["residual"] = perm[s : s + bs]
            out.append(idx)
        return out
    names = list(sizes)
    offsets = np.cumsum([0] + [sizes[k] for k in names])
    perm = rng.permutation(offsets[-1])
    out = []
    for s in range(0, offsets[-1], bs):
        chunk = np.sort(perm[s : s + bs])
        out.append({k: chunk[(chunk >= offsets[i]) & (chunk < offsets[i + 1])] - offsets[i] for i, k in enumerate(names)})
    return out


def train(model, loss_fn, config, log=None):
    """Adam training with learning-rate decay, RBA weighting and optional SWA."""
    if config.counts is not None:
        sizes = loss_fn.sizes()
        have = (sizes.get("residual", 0), sizes.get("boundary", 0), sizes.get("initial", 0), sizes.get("data", 0))
        for want, got, name in zip(config.counts, have, ("collocation", "boundary", "initial", "data")):
            if want and want != got:
                raise PinnError(f"config expects {want} {name} points, plan has {got}")
    sizes = loss_fn.sizes()
    if sum(sizes.values()) == 0:
        raise PinnError("no training points")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = torch.optim.Adam(params, lr=config.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=1.0 - config.decay)
    mult = np.ones(sizes["residual"])
    swa_start = config.epochs - max(1, math.ceil(config.swa_fraction * config.epochs))
    swa_sum, swa_n = None, 0
    loss_hist, param_hist = [], []
    names = ("residual", "boundary", "initial", "data")
    start = time.perf_counter()
    for epoch in range(config.epochs):
        acc = {k: [] for k in names}
        totals = []
        for index in _batches(sizes, config, rng):
            m_t = torch.as_tensor(mult, dtype=model.dtype) if config.rba else None
            terms, r = loss_fn.terms(index, m_t)
            total = loss_fn.combine(terms)
            if not torch.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}", epoch)
            opt.zero_grad()
            total.backward()
            opt.step()
            if config.rba and r is not None:
                ridx = None if index is None else index["residual"]
                mult = rba_update(mult, r.detach().numpy(), config.rba_gamma, config.rba_eta, ridx)
            for k, v in terms.items():
                acc[k].append(float(v.detach()))
            totals.append(float(total.detach()))
        sched.step()
        loss_hist.append([epoch] + [float(np.mean(acc[k])) if acc[k] else float("nan") for k in names] + [float(np.mean(totals))])
        param_hist.append([epoch] + list(model.mu_values().values()))
        if config.optimizer == "adam+swa" and epoch >= swa_start and (epoch - swa_start) % config.swa_every == 0:
            s = model.state()
            swa_sum = s if swa_sum is None else swa_sum + s
            swa_n += 1
        if log is not None:
            log(epoch, loss_hist[-1], param_hist[-1])
    if swa_n:
        model.load_state(swa_sum / swa_n)
    return TrainResult(model, loss_hist, param_hist, mult, time.perf_counter() - start, config)


# -- inverse problems ------------------------------------------------------


@dataclass
class Identification:
    names: tuple
    estimates: tuple
    reference: tuple | None
    relative_errors: tuple | None
    identifiable: tuple
    result: TrainResult

    def as_dict(self):
        out = {"names": self.names, "estimates": self.estimates}
        if self.reference is not None:
            out["expected"] = self.reference
        return out


def sensitivity(loss_fn, model, delta=0.1):
    """Loss change under a +/- ``delta`` shift of each physical parameter."""
    base = float(loss_fn.combine(loss_fn.terms()[0]).detach())
    out = {}
    for name, p in model.physical.items():
        v = float(p.detach())
        change = 0.0
        for s in (delta, -delta):
            with torch.no_grad():
                p.fill_(v + s)
            change += abs(float(loss_fn.combine(loss_fn.terms()[0]).detach()) - base)
        with torch.no_grad():
            p.fill_(v)
        out[name] = change
    return out


def identify_parameters(problem, plan, data, config, layer_sizes, arch="gated", initial=None, reference=None, log=None,
                        dtype=DTYPE):
    """Train with the physical parameters as weights and report estimates.

    Parameters whose loss sensitivity is below ``1e-3`` of the most
    sensitive one are flagged as not identifiable.
    """
    problem = bench.get(problem) if isinstance(problem, str) else problem
    if data is None or len(data) == 0:
        raise PinnError("parameter identification needs data")
    if initial is None:
        initial = tuple(0.5 * (lo + hi) for lo, hi in problem.parameter_box)
    model = PinnModel(layer_sizes, arch=arch, physical=dict(zip(problem.param_names, initial)), seed=config.seed, dtype=dtype)
    loss_fn = LossFunction(model, problem, plan, data, "physics+data", config.w_residual, config.w_data)
    result = train(model, loss_fn, config, log)
    est = tuple(model.mu_values().values())
    sens = sensitivity(loss_fn, model)
    top = max(sens.values()) if sens else 0.0
    ident = tuple(bool(s > 1e-3 * top) for s in sens.values())
    rel = None
    if reference is not None:
        rel = tuple(float(v) for v in hio.relative_errors(est, reference))
    return Identification(tuple(problem.param_names), est, None if reference is None else tuple(reference), rel, ident, result)


# -- benchmark setups ------------------------------------------------------

# Hyperparameters of the four benchmark studies. "layers" counts the
# spatial inputs only; the time input is added for unsteady problems.
TABLES = {
    "tp1": dict(collocation=200, boundary=50, initial=0, data=500, epochs=3000, batch_size=50,
                lr=1e-3, decay=1e-8, layers=[3, 400, 400, 1], optimizer="adam", batch_scope="all"),
    "tp2": dict(collocation=1000, boundary=400, initial=400, data=1000, epochs=10000, batch_size=None,
                lr=5e-4, decay=1e-8, layers=[4, 400, 400, 2], optimizer="adam"),
    "tp3": dict(collocation=400, boundary=0, initial=0, data=9900, epochs=30000, batch_size=None,
                lr=1e-3, decay=1e-8, layers=[4, 200, 200, 1], optimizer="adam", w_residual=0.1, w_data=0.9),
    "tp4-physics": dict(collocation=1000, boundary=500, initial=0, data=0, epochs=5000, batch_size=None,
                        lr=1e-3, decay=1e-8, layers=[3, 200, 200, 1], optimizer="adam+swa"),
    "tp4-data": dict(collocation=1000, boundary=500, initial=0, data=500, epochs=5000, batch_size=None,
                     lr=5e-4, decay=1e-8, layers=[3, 200, 200, 1], optimizer="adam+swa"),
}


def table_config(name, **overrides):
    """``(TrainConfig, layer sizes)`` for a benchmark table, with overrides."""
    t = dict(TABLES[name])
    t.update({k: v for k, v in overrides.items() if v is not None})
    layers = t.pop("layers")
    counts = (t.pop("collocation"), t.pop("boundary"), t.pop("initial"), t.pop("data"))
    return TrainConfig(counts=counts, **t), layers


def boundary_observations(surface, problem, mu, n, seed, horizon=0.0):
    """Sensor-like data: exact solution at random surface points (and times)."""
    from .mesh import sample_surface

    problem = bench.get(problem) if isinstance(problem, str) else problem
    rng = np.random.default_rng(seed)
    pts, _, _ = sample_surface(surface, n, rng)
    if horizon > 0:
        pts = np.column_stack([pts, horizon * rng.random(n)])
    return Observations(pts, bench.evaluate(problem.solution, pts, mu))


def inverse_setup(problem_id, surface, mu_true, counts, seed=0, horizon=1.0):
    """Point plan and boundary data for identifying ``mu_true``."""
    from .mesh import sample_plan

    problem = bench.get(problem_id)
    h = horizon if problem.time_dependent else 0.0
    r_omega, r_gamma, r_0, n_data = counts
    plan = sample_plan(surface, r_omega, r_gamma, r_0, horizon=h, seed=seed)
    data = boundary_observations(surface, problem, mu_true, n_data, seed + 7919, h)
    return plan, data


def sensor_setup(surface, n_sites=100, n_times=99, n_colloc=400, seed=0, generator=None):
    """Collocation plan, sensor observations and ``T0`` for the heat problem."""
    from .mesh import sample_plan, sample_surface

    rng = np.random.default_rng(seed + 104729)
    sites, _, _ = sample_surface(surface, n_sites, rng)
    pts, vals, t0 = bench.sensor_dataset(sites, n_times, generator)
    plan = sample_plan(surface, n_colloc, 0, 0, horizon=1.0, seed=seed)
    return plan, Observations(pts, vals), t0, sites


def direct_setup(problem_id, surface, counts, seed=0):
    """Plan and (possibly empty) boundary data for a steady direct problem."""
    from .mesh import sample_plan

    problem = bench.get(problem_id)
    r_omega, r_gamma, _, n_data = counts
    plan = sample_plan(surface, r_omega, r_gamma, 0, seed=seed)
    data = boundary_observations(surface, problem, problem.default_mu, n_data, seed + 7919) if n_data else None
    return plan, data


# -- run directories -------------------------------------------------------


def write_run(path, config, result, identification=None):
    """``config``, ``loss_history.csv``, ``param_history.csv``, ``model.bin``, ``estimates``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cfg = {k: ("" if v is None else v) for k, v in asdict(config).items()}
    hio.write_kv(path / "config", cfg)
    hio.write_csv(path / "loss_history.csv", ["epoch", "residual", "boundary", "initial", "data", "total"], result.loss_history)
    names = list(result.model.physical)
    hio.write_csv(path / "param_history.csv", ["epoch"] + names, result.param_history)
    save_model(result.model, path / "model.bin")
    est = {"seconds": result.seconds}
    if identification is not None:
        est.update(dict(zip(identification.names, identification.estimates)))
        if identification.relative_errors is not None:
            est.update({f"{n}_rel_error": e for n, e in zip(identification.names, identification.relative_errors)})
        est.update({f"{n}_identifiable": i for n, i in zip(identification.names, identification.identifiable)})
    hio.write_kv(path / "estimates", est)
    return path


# -- expression-graph route ------------------------------------------------


def graph_forward(model, inputs, net=0):
    """Rebuild output of network ``net`` on ``Expr`` inputs.

    Weights enter as constants. Intended for tiny models used to check the
    jet arithmetic; graph size grows with the weight count.
    """
    nt = model.nets[net]
    W = [w.detach().numpy() for w in nt["W"]]
    b = [v.detach().numpy() for v in nt["b"]]

    def affine(vec, Wm, bv):
        out = []
        for j in range(Wm.shape[1]):
            acc = float(bv[j])
            for i, xi in enumerate(vec):
                acc = xi * float(Wm[i, j]) + acc
            out.append(acc)
        return out

    if len(W) == 1:
        return affine(inputs, W[0], b[0])
    gated = "WU" in nt
    if gated:
        U = [expr_math.tanh(e) for e in affine(inputs, nt["WU"].detach().numpy(), nt["bU"].detach().numpy())]
        V = [expr_math.tanh(e) for e in affine(inputs, nt["WV"].detach().numpy(), nt["bV"].detach().numpy())]
    h = list(inputs)
    for Wm, bv in zip(W[:-1], b[:-1]):
        z = [expr_math.tanh(e) for e in affine(h, Wm, bv)]
        h = [u + zi * (v - u) for u, zi, v in zip(U, z, V)] if gated else z
    out = affine(h, W[-1], b[-1])
    if model.hard_constraint is not None:
        out = [model.hard_constraint + inputs[-1] * o for o in out]
    return out


def graph_residual(model, problem, point, mu=None):
    """Residual at one point computed entirely with :class:`ExprGraph`."""
    problem = bench.get(problem) if isinstance(problem, str) else problem
    g = ExprGraph()
    names = "xyzt"[: model.input_dim]
    xs = [Expr(g, g.var(n)) for n in names]
    outs = []
    for k in range(model.n_nets):
        outs += graph_forward(model, xs, k)
    spatial = [x.index for x in xs[:SPATIAL]]
    lap = [Expr(g, g.laplacian(o.index, spatial)) for o in outs]
    ut = [Expr(g, g.grad(o.index, [xs[SPATIAL].index])[xs[SPATIAL].index]) for o in outs] if problem.time_dependent else [None] * len(outs)
    mu = tuple(float(v) for v in (mu if mu is not None else (model.mu_values().values() if model.physical else problem.default_mu)))
    t = xs[SPATIAL] if problem.time_dependent else 0.0
    r = problem.residual(outs, ut, lap, xs[0], xs[1], xs[2], t, mu, xp=expr_math)
    vals = {x.index: float(v) for x, v in zip(xs, point)}
    return [g.evaluate(ri.index, vals) if isinstance(ri, Expr) else float(ri) for ri in r]


__all__ = [
    "PinnError",
    "TrainingError",
    "PinnModel",
    "Observations",
    "LossBreakdown",
    "LossFunction",
    "TrainConfig",
    "TrainResult",
    "Identification",
    "pointwise_residual",
    "residual_loss",
    "total_loss",
    "rba_update",
    "train",
    "sensitivity",
    "identify_parameters",
    "save_model",
    "load_model",
    "write_run",
    "graph_forward",
    "graph_residual",
    "TABLES",
    "table_config",
    "boundary_observations",
    "inverse_setup",
    "sensor_setup",
    "direct_setup",
]
