"""Command-line front end: ``hsml <command> [options]``.

Exit status is 0 on success, 1 when a module reports a domain error and 2 on
usage errors. ``HSML_THREADS`` caps the worker threads used by torch.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, fem, mesh, pinn, rom
from . import io as hio

COMMANDS = (
    "ingest",
    "sample",
    "fem-solve",
    "rom-offline",
    "rom-online",
    "pinn-direct",
    "pinn-inverse",
    "full-pipeline",
    "export",
    "report",
)


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- shared helpers --------------------------------------------------------


def _add_mesh(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--mesh", default=None, help="procedural mesh: box:N, box:NX,NY,NZ or cyl:N (default box:8)")
    g.add_argument("--msh", default=None, help="MSH 2.2 volume mesh file")


def _add_out(p, required=True):
    p.add_argument("--out", required=required, help="output directory")
    p.add_argument("--force", action="store_true", help="allow a non-empty output directory")


def _mesh(args):
    if getattr(args, "msh", None):
        return hio.read_msh(args.msh), str(args.msh)
    spec = getattr(args, "mesh", None) or "box:8"
    return mesh.mesh_from_spec(spec), spec


def _surface(args, m=None):
    """Surface model from ``--model``, else the boundary of the volume mesh, else the unit cube."""
    if getattr(args, "model", None):
        return mesh.ingest_model_summary(Path(args.model).read_text())
    if m is not None:
        return m.surface_model()
    return mesh.cube_surface()


def _problem_mu(problem, mu):
    if mu is None:
        return problem.default_mu
    if problem.param_names and len(mu) != len(problem.param_names):
        raise UsageError(f"{problem.id} takes {len(problem.param_names)} parameters, got {len(mu)}")
    return mu


def _write_points(path, arr):
    cols = ["x", "y", "z", "t"][: arr.shape[1]]
    hio.write_csv(path, cols, arr.tolist())


def _write_field(path, series, m, meta):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    hio.write_array(path / "solution.bin", series.values)
    hio.write_array(path / "times.bin", np.asarray(series.times, dtype=float))
    (path / "mesh.msh").write_text(hio.write_msh(m))
    info = dict(meta)
    info.update(steps=series.values.shape[0], components=series.values.shape[1], names=",".join(series.names))
    hio.write_kv(path / "meta", info)


def _read_field(path):
    path = Path(path)
    meta = hio.read_kv(path / "meta")
    m = hio.read_msh(path / "mesh.msh")
    T, C = int(meta["steps"]), int(meta["components"])
    values = hio.read_array(path / "solution.bin", (T, C, m.n_nodes))
    times = hio.read_array(path / "times.bin")
    return fem.FieldSeries(times, values, tuple(meta["names"].split(","))), m, meta


# -- commands --------------------------------------------------------------


def cmd_ingest(args):
    out = hio.ensure_dir(args.out, args.force)
    model = mesh.ingest_model_summary(Path(args.model).read_text())
    for obj in model.objects:
        mesh.check_watertight(obj)
    (out / "model.json").write_text(mesh.dump_model_summary(model))
    plan = mesh.sample_plan(model, args.collocation, args.boundary, args.initial, args.horizon, args.seed)
    _write_points(out / "collocation.csv", plan.collocation)
    _write_points(out / "boundary.csv", plan.boundary)
    _write_points(out / "initial.csv", plan.initial)
    lo, hi = model.bounds
    print(f"{len(model.objects)} object(s), area {model.area():.6g}, volume {model.enclosed_volume():.6g}")
    print(f"bounds {lo.tolist()} .. {hi.tolist()}; wrote sampling tables to {out}")
    return 0


def cmd_sample(args):
    out = hio.ensure_dir(args.out, args.force)
    model = _surface(args)
    plan = mesh.sample_plan(model, args.collocation, args.boundary, args.initial, args.horizon, args.seed)
    _write_points(out / "collocation.csv", plan.collocation)
    _write_points(out / "boundary.csv", plan.boundary)
    _write_points(out / "initial.csv", plan.initial)
    print(f"sampled {plan.counts} points into {out}")
    return 0


def cmd_fem_solve(args):
    out = hio.ensure_dir(args.out, args.force)
    problem = bench.get(args.problem)
    m, spec = _mesh(args)
    mu = _problem_mu(problem, args.mu)
    if problem.id == "tp3":
        series = _solve_tp3(m, args.seed)
    elif problem.time_dependent:
        series = fem.solve_problem_unsteady(problem, m, mu, T=args.T, N=args.steps)
    else:
        series = fem.solve_problem_steady(problem, m, mu)
    _write_field(out, series, m, {"problem": problem.id, "mu": list(mu) or "", "mesh": spec, "source": "fem"})
    if problem.solution is not None:
        exact = _exact(problem, m, series, mu)
        err = bench.l2_relative_error(series, exact)
        print(f"relative L2 error vs analytic: {err.components} (magnitude {err.magnitude:.4e})")
    print(f"solution written to {out}")
    return 0


def _exact(problem, m, series, mu):
    vals = np.stack([bench.evaluate(problem.solution, m.nodes, mu, t=t).T for t in series.times])
    return vals


def _solve_tp3(m, seed=0):
    gen = bench.SensorGenerator()
    surface = m.surface_model()
    _, _, t0, _ = pinn.sensor_setup(surface, seed=seed, generator=gen)
    problem = bench.get("tp3")
    return fem.solve_problem_unsteady(problem, m, (), T=1.0, N=99, boundary=gen, initial=lambda x, y, z, mu, xp=np: [t0 + 0.0 * x])


def cmd_rom_offline(args):
    out = hio.ensure_dir(args.out, args.force)
    problem = bench.get(args.problem)
    m, spec = _mesh(args)
    params = rom.sample_parameters(problem.parameter_box, args.snapshots, args.seed, args.sampler)
    res = rom.offline(problem.id, m, params, tol=args.tol, k=args.k, T=args.T, N=args.steps)
    rom.save_bundle(res.operators, out, tol=args.tol, M=args.snapshots, seed=args.seed, mesh_spec=spec)
    print(f"offline: {args.snapshots} snapshots, k = {res.operators.ks}, {res.seconds:.1f} s")
    if args.test:
        test = rom.sample_parameters(problem.parameter_box, args.test, args.seed + 1, args.sampler)
        errs = rom.error_analysis(res.operators, test)
        hio.write_report(errs, None, out / "rom_report.txt", title=f"{problem.id} ROM error analysis")
        print(f"max relative error at k = {errs['k'][-1]}: {errs['max_rel'][-1]:.4e}")
    return 0


def cmd_rom_online(args):
    ops, meta = rom.load_bundle(args.bundle)
    problem = ops.problem
    mu = _problem_mu(problem, args.mu)
    series = rom.online(ops, mu)
    out = hio.ensure_dir(args.out, args.force)
    _write_field(out, series, ops.mesh, {"problem": problem.id, "mu": list(mu), "mesh": meta.get("mesh", ""), "source": "rom"})
    hio.write_xdmf(series, ops.mesh, out / "field")
    print(f"reduced solution at mu = {mu} written to {out}")
    return 0


def _train_log(every):
    if not every:
        return None

    def log(epoch, losses, params):
        if epoch % every == 0:
            extra = " ".join(f"{v:.5f}" for v in params[1:])
            print(f"epoch {epoch:6d} loss {losses[-1]:.4e} {extra}", flush=True)

    return log


def _train_overrides(args):
    return dict(epochs=args.epochs, lr=args.lr, seed=args.seed, batch_scope=args.batch_scope)


def _dtype(args):
    import torch

    return torch.float32 if getattr(args, "precision", 64) == 32 else torch.float64


def cmd_pinn_direct(args):
    out = hio.ensure_dir(args.out, args.force)
    problem = bench.get(args.problem)
    m, _ = _mesh(args)
    surface = _surface(args, m)
    if problem.id == "tp3":
        config, layers = pinn.table_config("tp3", **_train_overrides(args))
        plan, data, t0, _ = pinn.sensor_setup(surface, n_colloc=config.counts[0], seed=args.seed)
        model = pinn.PinnModel(layers, hard_constraint=t0, seed=args.seed, dtype=_dtype(args))
        lf = pinn.LossFunction(model, problem, plan, data, "physics+data+hard", config.w_residual, config.w_data)
    elif problem.id == "tp4":
        name = "tp4-data" if args.recipe == "physics+data" else "tp4-physics"
        config, layers = pinn.table_config(name, **_train_overrides(args))
        plan, data = pinn.direct_setup("tp4", surface, config.counts, seed=args.seed)
        model = pinn.PinnModel(layers, n_nets=2, seed=args.seed, dtype=_dtype(args))
        lf = pinn.LossFunction(model, problem, plan, data, args.recipe if data is not None else "physics")
    else:
        raise UsageError("pinn-direct supports tp3 and tp4")
    result = pinn.train(model, lf, config, _train_log(args.log_every))
    pinn.write_run(out, config, result)
    if problem.id == "tp4":
        exact = bench.evaluate(problem.solution, m.nodes, ())
        err = bench.l2_relative_error(model.predict(m.nodes).T, exact.T)
    else:
        ref = _solve_tp3(m, args.seed)
        pred = np.stack([model.predict(np.column_stack([m.nodes, np.full(m.n_nodes, t)])).T for t in ref.times])
        err = bench.l2_relative_error(pred, ref.values)
    hio.write_kv(out / "errors", {"components": err.components, "magnitude": err.magnitude})
    print(f"relative L2 error: components {err.components}, magnitude {err.magnitude:.4e}")
    return 0


def _inverse(args, out, m):
    problem = bench.get(args.problem)
    if not problem.parametric:
        raise UsageError("pinn-inverse needs a parametrized problem (tp1 or tp2)")
    config, layers = pinn.table_config(problem.id, **_train_overrides(args))
    surface = _surface(args, m)
    mu_true = _problem_mu(problem, args.mu_true)
    plan, data = pinn.inverse_setup(problem.id, surface, mu_true, config.counts, seed=args.seed)
    ident = pinn.identify_parameters(problem, plan, data, config, layers, reference=mu_true, log=_train_log(args.log_every),
                                      dtype=_dtype(args))
    pinn.write_run(out, config, ident.result, ident)
    return ident


def cmd_pinn_inverse(args):
    out = hio.ensure_dir(args.out, args.force)
    m, _ = _mesh(args)
    ident = _inverse(args, out, m)
    for n, e, r in zip(ident.names, ident.estimates, ident.relative_errors):
        print(f"{n:>6} = {e:.6f} (relative error {r:.4e})")
    return 0


def cmd_full_pipeline(args):
    out = hio.ensure_dir(args.out, args.force)
    problem = bench.get(args.problem)
    if problem.id != "tp1":
        raise UsageError("full-pipeline reproduces the steady parametric workflow (tp1)")
    m, spec = _mesh(args)
    surface = _surface(args, m)
    (out / "model.json").write_text(mesh.dump_model_summary(surface))
    plan = mesh.sample_plan(surface, 200, 50, 0, 0.0, args.seed)
    (out / "sample").mkdir()
    _write_points(out / "sample" / "collocation.csv", plan.collocation)
    _write_points(out / "sample" / "boundary.csv", plan.boundary)

    params = rom.sample_parameters(problem.parameter_box, args.snapshots, args.seed, args.sampler)
    res = rom.offline(problem.id, m, params, tol=args.tol, k=args.k)
    rom.save_bundle(res.operators, out / "rom", tol=args.tol, M=args.snapshots, seed=args.seed, mesh_spec=spec)
    test = rom.sample_parameters(problem.parameter_box, args.test, args.seed + 1, args.sampler)
    errs = rom.error_analysis(res.operators, test)

    args.mu_true = args.mu_true or problem.default_mu
    ident = _inverse(args, out / "pinn", m)
    series = rom.online(res.operators, ident.estimates)
    _write_field(out / "online", series, m, {"problem": problem.id, "mu": list(ident.estimates), "mesh": spec, "source": "rom"})
    hio.write_xdmf(series, m, out / "export" / "field")
    hio.write_report(errs, ident.as_dict(), out / "report.txt", title=f"{problem.id} pipeline report")
    print(hio.format_report(errs, ident.as_dict(), title=f"{problem.id} pipeline report"))
    return 0


def cmd_export(args):
    series, m, _ = _read_field(args.input)
    stem = Path(args.out)
    xdmf, binf = hio.write_xdmf(series, m, stem)
    print(f"wrote {xdmf} and {binf}")
    return 0


def cmd_report(args):
    rom_errors = None
    if args.rom:
        header, rows = hio.read_csv(args.rom)
        cols = list(zip(*rows))
        rom_errors = {h: list(c) for h, c in zip(header, cols)}
    estimates = None
    if args.pinn:
        est = hio.read_kv(Path(args.pinn) / "estimates")
        names = [k for k in est if k + "_rel_error" in est]
        estimates = {"names": names, "estimates": [float(est[n]) for n in names]}
        if args.expected:
            estimates["expected"] = list(args.expected)
    hio.write_report(rom_errors, estimates, args.out, title=args.title)
    print(Path(args.out).read_text())
    return 0


HANDLERS = {
    "ingest": cmd_ingest,
    "sample": cmd_sample,
    "fem-solve": cmd_fem_solve,
    "rom-offline": cmd_rom_offline,
    "rom-online": cmd_rom_online,
    "pinn-direct": cmd_pinn_direct,
    "pinn-inverse": cmd_pinn_inverse,
    "full-pipeline": cmd_full_pipeline,
    "export": cmd_export,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hsml", description="FEM, POD reduced models and PINNs for 3D assets")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def sampling(p):
        p.add_argument("--collocation", type=int, default=200)
        p.add_argument("--boundary", type=int, default=50)
        p.add_argument("--initial", type=int, default=0)
        p.add_argument("--horizon", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ingest", help="validate a model summary and write sampling tables")
    p.add_argument("--model", required=True, help="model summary (JSON key-value document)")
    sampling(p)
    _add_out(p)

    p = sub.add_parser("sample", help="sample collocation/boundary/initial points")
    p.add_argument("--model", default=None, help="model summary; unit cube when omitted")
    sampling(p)
    _add_out(p)

    def problem_arg(p):
        p.add_argument("--problem", required=True, choices=bench.problem_ids())

    def time_args(p):
        p.add_argument("--T", type=float, default=1.0)
        p.add_argument("--steps", type=int, default=21)

    p = sub.add_parser("fem-solve", help="full-order FEM solve")
    problem_arg(p)
    _add_mesh(p)
    p.add_argument("--mu", type=_floats, default=None)
    p.add_argument("--seed", type=int, default=0)
    time_args(p)
    _add_out(p)

    def rom_args(p):
        p.add_argument("--snapshots", type=int, default=100)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--tol", type=float, default=rom.ENERGY_TOL)
        p.add_argument("--sampler", choices=("uniform", "normal"), default="uniform")
        p.add_argument("--test", type=int, default=10, help="held-out samples for the error analysis")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("rom-offline", help="snapshots, POD basis and reduced operators")
    problem_arg(p)
    _add_mesh(p)
    rom_args(p)
    time_args(p)
    _add_out(p)

    p = sub.add_parser("rom-online", help="reduced solve at a parameter, exported as XDMF")
    p.add_argument("--bundle", required=True)
    p.add_argument("--mu", type=_floats, required=True)
    _add_out(p)

    def train_args(p):
        p.add_argument("--epochs", type=int, default=None, help="override the benchmark epoch count")
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-scope", choices=("collocation", "all"), default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--model", default=None, help="model summary used for sampling")
        p.add_argument("--log-every", type=int, default=0)
        p.add_argument("--precision", type=int, choices=(32, 64), default=64, help="floating point bits for training")

    p = sub.add_parser("pinn-direct", help="direct PINN solve (tp3, tp4)")
    problem_arg(p)
    _add_mesh(p)
    p.add_argument("--recipe", choices=("physics", "physics+data"), default="physics")
    train_args(p)
    _add_out(p)

    p = sub.add_parser("pinn-inverse", help="identify (lam, alpha, beta) from data (tp1, tp2)")
    problem_arg(p)
    _add_mesh(p)
    p.add_argument("--mu-true", type=_floats, default=None, help="parameters generating the synthetic data")
    train_args(p)
    _add_out(p)

    p = sub.add_parser("full-pipeline", help="ingest, sample, ROM, inverse PINN, online solve, export, report")
    problem_arg(p)
    _add_mesh(p)
    rom_args(p)
    p.add_argument("--mu-true", type=_floats, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-scope", choices=("collocation", "all"), default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--precision", type=int, choices=(32, 64), default=64)
    _add_out(p)

    p = sub.add_parser("export", help="convert a solution directory to XDMF + binary sidecar")
    p.add_argument("--input", required=True, help="directory written by fem-solve or rom-online")
    p.add_argument("--out", required=True, help="output path stem")

    p = sub.add_parser("report", help="assemble a text report from ROM and PINN outputs")
    p.add_argument("--rom", default=None, help="ROM error CSV")
    p.add_argument("--pinn", default=None, help="PINN run directory")
    p.add_argument("--expected", type=_floats, default=None)
    p.add_argument("--title", default="hsml report")
    p.add_argument("--out", required=True)
    return parser


DOMAIN_ERRORS = (
    mesh.MeshError,
    fem.FemError,
    rom.RomError,
    pinn.PinnError,
    pinn.TrainingError,
    hio.FormatError,
    FileExistsError,
    FileNotFoundError,
    KeyError,
    ValueError,
)


def _threads():
    value = os.environ.get("HSML_THREADS")
    if value:
        import torch

        n = max(1, int(value))
        torch.set_num_threads(n)


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _threads()
    try:
        return HANDLERS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hsml: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hsml {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
