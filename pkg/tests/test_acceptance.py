"""Acceptance suite: one PASS/FAIL line per criterion.

Criteria 1, 2, 5 and 8 run in seconds to minutes. The PINN criteria (3, 4,
6, 7) train the full benchmark configurations and take hours on one core.
Their per-run outcomes are stored in ``tests/acceptance_cache`` together
with a fingerprint of the training code and settings; a stored run is
reused only while the fingerprint matches, and the pass/fail decision is
always recomputed from the stored numbers. ``HSML_ACCEPTANCE_RECOMPUTE=1``
ignores the store.

Run directly with ``python tests/test_acceptance.py [criterion ...]``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from hsml import bench, fem, mesh, pinn, rom
from hsml import io as hio

HERE = Path(__file__).resolve().parent
CACHE = HERE / "acceptance_cache"
SRC = HERE.parent / "src" / "hsml"
TRUE_MU = (0.1, 0.2, 0.5)
SEEDS = (0, 1, 2, 3, 4)


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    print(line, flush=True)
    return line


# -- cached runs -----------------------------------------------------------


def _fingerprint(settings):
    h = hashlib.sha256()
    for name in ("autodiff.py", "bench.py", "mesh.py", "fem.py", "pinn.py"):
        h.update((SRC / name).read_bytes())
    h.update(json.dumps(settings, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def cached_run(key, settings, compute):
    """Result dict of ``compute()``, stored under ``key`` for matching code."""
    CACHE.mkdir(exist_ok=True)
    path = CACHE / f"{key}.json"
    fp = _fingerprint(settings)
    if path.exists() and not os.environ.get("HSML_ACCEPTANCE_RECOMPUTE"):
        stored = json.loads(path.read_text())
        if stored.get("fingerprint") == fp:
            return stored["result"]
    result = compute()
    path.write_text(json.dumps({"fingerprint": fp, "settings": settings, "result": result}, indent=1, default=float))
    return result


def _progress(label, every):
    def log(epoch, losses, params):
        if epoch % every == 0:
            extra = " ".join(f"{v:.5f}" for v in params[1:])
            sys.__stderr__.write(f"[{label}] epoch {epoch} loss {losses[-1]:.3e} {extra}\n")
            sys.__stderr__.flush()

    return log


# -- criterion 1: FEM convergence ------------------------------------------


def interior_error(n, mu=TRUE_MU):
    m = mesh.structured_box_mesh(divisions=(n, n, n))
    p = bench.get("tp1")
    u = fem.solve_problem_steady(p, m, mu).values[0, 0]
    free = fem.free_mask(m.n_nodes, m.boundary_nodes())
    exact = bench.evaluate(p.solution, m.nodes, mu)[:, 0]
    return float(np.linalg.norm(u[free] - exact[free]) / np.linalg.norm(exact[free]))


def criterion_1():
    t = time.perf_counter()
    e4, e8 = interior_error(4), interior_error(8)
    secs = time.perf_counter() - t
    ratio = e4 / e8
    ok = 3.2 <= ratio <= 4.8 and secs < 30
    return ok, f"tp1 FEM interior errors {e4:.3e} (4) {e8:.3e} (8), ratio {ratio:.2f} in [3.2, 4.8], {secs:.1f} s"


# -- criterion 2: steady ROM -----------------------------------------------


def criterion_2():
    t = time.perf_counter()
    m = mesh.mesh_from_spec("box:8")
    box = bench.get("tp1").parameter_box
    params = rom.sample_parameters(box, 100, seed=0)
    res = rom.offline("tp1", m, params, k=25)
    test = rom.sample_parameters(box, 10, seed=1)
    errs = rom.error_analysis(res.operators, test)
    secs = time.perf_counter() - t
    sigma = res.operators.bases[0].singular_values
    monotone = bool(np.all(np.diff(sigma) <= 0))
    slope = rom.loglinear_slope(errs["k"], errs["max_rel"])
    worst = errs["max_rel"][-1]
    ok = worst <= 1e-4 and monotone and slope < 0 and secs < 300
    return ok, (f"tp1 ROM k=25 max rel error {worst:.3e} <= 1e-4, singular values monotone {monotone}, "
                f"log-linear slope {slope:.3f} < 0, {secs:.1f} s")


# -- criterion 3: tp1 inverse ----------------------------------------------

TP1_SETTINGS = dict(table="tp1", batch_scope="all", dtype="float64", surface="unit cube", mu=TRUE_MU)


def tp1_inverse(seed):
    def compute():
        cfg, layers = pinn.table_config("tp1", seed=seed)
        plan, data = pinn.inverse_setup("tp1", mesh.cube_surface(), TRUE_MU, cfg.counts, seed=seed)
        idn = pinn.identify_parameters("tp1", plan, data, cfg, layers, reference=TRUE_MU,
                                       log=_progress(f"tp1 seed {seed}", 500))
        return {"estimates": idn.estimates, "rel": idn.relative_errors, "seconds": idn.result.seconds}

    return cached_run(f"tp1_seed{seed}", dict(TP1_SETTINGS, seed=seed), compute)


def criterion_3():
    runs = [tp1_inverse(s) for s in SEEDS]
    good = [all(r <= 5e-2 for r in run["rel"]) for run in runs]
    slow = max(run["seconds"] for run in runs)
    ok = sum(good) >= 4 and slow < 1200
    rel = "; ".join(",".join(f"{r:.2e}" for r in run["rel"]) for run in runs)
    return ok, f"tp1 inverse, {sum(good)}/5 seeds with all rel errors <= 5e-2 [{rel}], slowest seed {slow:.0f} s"


# -- criterion 4: tp2 inverse ----------------------------------------------

TP2_SETTINGS = dict(table="tp2", dtype="float32", surface="unit cube", mu=TRUE_MU, N=21)


def tp2_inverse(seed):
    def compute():
        cfg, layers = pinn.table_config("tp2", seed=seed)
        plan, data = pinn.inverse_setup("tp2", mesh.cube_surface(), TRUE_MU, cfg.counts, seed=seed)
        idn = pinn.identify_parameters("tp2", plan, data, cfg, layers, reference=TRUE_MU,
                                       log=_progress(f"tp2 seed {seed}", 500), dtype=torch.float32)
        return {"estimates": idn.estimates, "rel": idn.relative_errors, "seconds": idn.result.seconds}

    return cached_run(f"tp2_seed{seed}", dict(TP2_SETTINGS, seed=seed), compute)


def criterion_4():
    runs = [tp2_inverse(s) for s in SEEDS]
    good = [run["rel"][0] <= 8e-2 and run["rel"][1] <= 5e-2 and run["rel"][2] <= 5e-2 for run in runs]
    rel = "; ".join(",".join(f"{r:.2e}" for r in run["rel"]) for run in runs)
    return sum(good) >= 4, f"tp2 inverse, {sum(good)}/5 seeds within (8e-2, 5e-2, 5e-2) [{rel}]"


# -- criterion 5: unsteady ROM ---------------------------------------------


def criterion_5():
    m = mesh.mesh_from_spec("box:8")
    box = bench.get("tp2").parameter_box
    params = rom.sample_parameters(box, 20, seed=0)
    res = rom.offline("tp2", m, params, tol=1e-6, T=1.0, N=21)
    test = rom.sample_parameters(box, 5, seed=1)
    worst = [0.0, 0.0]
    for mu in test:
        red = rom.online(res.operators, mu)
        full = rom.full_order("tp2", m, mu, T=1.0, N=21)
        e = bench.l2_relative_error(red.values[1:], full.values[1:]).components
        worst = [max(a, b) for a, b in zip(worst, e)]
    ok = max(worst) <= 1e-4
    return ok, f"tp2 nested POD k={res.operators.ks}, max rel error per component {worst[0]:.3e}, {worst[1]:.3e} <= 1e-4"


# -- criterion 6: tp3 direct with sensor data ------------------------------

TP3_SETTINGS = dict(table="tp3", dtype="float32", mesh="box:8", sites=100, times=99)


def tp3_direct(seed=0):
    def compute():
        m = mesh.mesh_from_spec("box:8")
        surface = m.surface_model()
        gen = bench.SensorGenerator()
        cfg, layers = pinn.table_config("tp3", seed=seed)
        plan, obs, t0, _ = pinn.sensor_setup(surface, n_colloc=cfg.counts[0], seed=seed, generator=gen)
        model = pinn.PinnModel(layers, hard_constraint=t0, seed=seed, dtype=torch.float32)
        lf = pinn.LossFunction(model, "tp3", plan, obs, "physics+data+hard", cfg.w_residual, cfg.w_data)
        result = pinn.train(model, lf, cfg, _progress("tp3", 1000))
        ref = fem.solve_problem_unsteady(bench.get("tp3"), m, (), T=1.0, N=99, boundary=gen,
                                         initial=lambda x, y, z, mu, xp=np: [t0 + 0.0 * x])
        pred = np.stack([model.predict(np.column_stack([m.nodes, np.full(m.n_nodes, t)])).T for t in ref.times])
        err = bench.l2_relative_error(pred.astype(float), ref.values).components[0]
        # hard constraint at t = 0 for random points and the trained weights
        x0 = np.column_stack([np.random.default_rng(1).random((1000, 3)), np.zeros(1000)])
        exact_t0 = bool(np.all(model.predict(x0) == np.float32(t0)))
        return {"rel": err, "t0": t0, "hard_constraint_exact": exact_t0, "seconds": result.seconds}

    return cached_run(f"tp3_seed{seed}", dict(TP3_SETTINGS, seed=seed), compute)


def criterion_6():
    run = tp3_direct()
    ok = run["rel"] <= 5e-2 and run["hard_constraint_exact"]
    return ok, (f"tp3 rel error vs FEM {run['rel']:.3e} <= 5e-2, T0 = {run['t0']:.4f}, "
                f"exact at t=0: {run['hard_constraint_exact']}")


# -- criterion 7: tp4 physics vs data --------------------------------------

TP4_SETTINGS = dict(dtype="float32", surface="unit cube", nets=2, eval="box:8 nodes")


def tp4_direct(recipe, seed):
    name = "tp4-data" if recipe == "physics+data" else "tp4-physics"

    def compute():
        cfg, layers = pinn.table_config(name, seed=seed)
        plan, data = pinn.direct_setup("tp4", mesh.cube_surface(), cfg.counts, seed=seed)
        model = pinn.PinnModel(layers, n_nets=2, seed=seed, dtype=torch.float32)
        lf = pinn.LossFunction(model, "tp4", plan, data, recipe)
        result = pinn.train(model, lf, cfg, _progress(f"{name} seed {seed}", 1000))
        nodes = mesh.mesh_from_spec("box:8").nodes
        exact = bench.evaluate(bench.get("tp4").solution, nodes, ())
        err = bench.l2_relative_error(model.predict(nodes).T.astype(float), exact.T)
        return {"magnitude": err.magnitude, "components": err.components, "seconds": result.seconds}

    return cached_run(f"{name}_seed{seed}", dict(TP4_SETTINGS, table=name, seed=seed), compute)


def criterion_7():
    phys = [tp4_direct("physics", s)["magnitude"] for s in SEEDS]
    data = [tp4_direct("physics+data", s)["magnitude"] for s in SEEDS]
    reach = max(phys) <= 5e-2 and max(data) <= 5e-2
    ratio = float(np.mean(data) / np.mean(phys))
    ok = reach and ratio <= 2.0
    return ok, (f"tp4 magnitude rel error physics max {max(phys):.3e} mean {np.mean(phys):.3e}, "
                f"data max {max(data):.3e} mean {np.mean(data):.3e}, data/physics {ratio:.2f} <= 2")


# -- criterion 8: property suites ------------------------------------------


def criterion_8():
    sys.path.insert(0, str(HERE))
    from _graphs import check_graphs
    from scipy.linalg import subspace_angles

    t = time.perf_counter()
    checks = {}
    checks["autodiff"] = check_graphs(1000, seed=0) <= 1e-5

    rng = np.random.default_rng(3)
    S = rng.normal(size=(40, 12)) @ np.diag(np.logspace(0, -6, 12))
    b = rom.pod(S, k=12)
    checks["pod"] = (np.abs(b.modes.T @ b.modes - np.eye(12)).max() <= 1e-10
                     and abs(np.sum(b.singular_values**2) - np.linalg.norm(S) ** 2) <= 1e-10 * np.linalg.norm(S) ** 2)

    worst = 0.0
    for seed in range(5):
        r = np.random.default_rng(seed)
        S = r.normal(size=(80, 5)) @ r.normal(size=(5, 50))
        nested = rom.pod_unsteady(rom.SnapshotSet(np.zeros((5, 3)), S, 0, n_times=10), 1e-12)
        worst = max(worst, float(np.max(subspace_angles(nested.modes, rom.pod(S, 1e-12).modes))))
    checks["nested"] = worst <= 1e-8

    sphere = mesh.icosphere(radius=0.5, center=(0.5, 0.5, 0.5), subdivisions=4)
    frac = mesh.points_in_model(np.random.default_rng(0).random((100_000, 3)), sphere).mean()
    checks["sphere"] = abs(frac - math.pi / 6) <= 0.01

    m = mesh.structured_box_mesh(divisions=(5, 4, 3))
    checks["mass"] = abs(fem.assemble(m).M.sum() - m.volume()) <= 1e-12 * m.volume()

    import tempfile

    with tempfile.TemporaryDirectory() as d:
        back = hio.parse_msh(hio.write_msh(m))
        msh_ok = np.array_equal(back.tets, m.tets) and np.array_equal(back.nodes, m.nodes)
        series = fem.FieldSeries([0.0, 0.5], np.random.default_rng(1).normal(size=(2, 2, m.n_nodes)))
        xdmf, _ = hio.write_xdmf(series, m, Path(d) / "f")
        nodes, tets, times, values, _ = hio.read_xdmf(xdmf)
        checks["roundtrip"] = msh_ok and values.tobytes() == series.values.tobytes() and np.array_equal(tets, m.tets)

    def history():
        plan, data = pinn.inverse_setup("tp1", mesh.cube_surface(), TRUE_MU, (30, 10, 0, 20), seed=0)
        model = pinn.PinnModel([3, 8, 8, 1], seed=0, physical=dict(lam=0.5, alpha=0.5, beta=0.5))
        cfg = pinn.TrainConfig(epochs=10, batch_size=10, batch_scope="all")
        return np.array(pinn.train(model, pinn.LossFunction(model, "tp1", plan, data, "physics+data"), cfg).loss_history)

    checks["determinism"] = np.array_equal(history(), history(), equal_nan=True)
    secs = time.perf_counter() - t
    ok = all(checks.values()) and secs < 60
    failed = [k for k, v in checks.items() if not v]
    failing = ", ".join(failed) or "none"
    return ok, f"{len(checks) - len(failed)}/{len(checks)} property checks hold (failing: {failing}), {secs:.1f} s < 60 s"


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
            5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_acceptance(n, capsys):
    ok, detail = CRITERIA[n]()
    with capsys.disabled():
        print()
        report(n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    torch.set_num_threads(1)
    wanted = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    for n in wanted:
        ok, detail = CRITERIA[n]()
        report(n, ok, detail)
