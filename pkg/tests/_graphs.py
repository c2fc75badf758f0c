"""Random well-conditioned expression graphs for property checks."""

import numpy as np

from hsml.autodiff import ExprGraph

UNARY = ("sin", "cos", "tanh", "neg", "exp", "pow-const")
BINARY = ("add", "sub", "mul", "div")


def random_graph(rng, n_vars=3, n_ops=12):
    """Graph with ``n_vars`` inputs and about ``n_ops`` random operations.

    Exponentials act on a tanh and divisions use ``2 + d*d`` denominators so
    every graph is smooth and bounded on the unit cube.
    """
    g = ExprGraph()
    xs = [g.var(f"x{i}") for i in range(n_vars)]
    pool = list(xs)
    for _ in range(n_ops):
        if rng.random() < 0.5:
            op = UNARY[rng.integers(len(UNARY))]
            a = pool[rng.integers(len(pool))]
            if op == "exp":
                node = g.build("exp", [g.build("tanh", [a])])
            elif op == "pow-const":
                node = g.build("pow-const", [g.build("tanh", [a])], float(rng.integers(2, 4)))
            else:
                node = g.build(op, [a])
        else:
            op = BINARY[rng.integers(len(BINARY))]
            a = pool[rng.integers(len(pool))]
            b = pool[rng.integers(len(pool))]
            if op == "div":
                b = g.build("add", [g.const(2.0), g.build("mul", [b, b])])
            elif rng.random() < 0.3:
                b = g.build("mul", [g.const(float(rng.uniform(-2, 2))), b])
            node = g.build(op, [a, b])
        pool.append(node)
    # fold the newest nodes together so the output depends on most of the graph
    out = pool[-1]
    for extra in pool[-4:-1]:
        out = g.build("add", [out, g.build("tanh", [extra])])
    return g, xs, out


def fd_gradient(g, xs, out, point, h=1e-6):
    grad = np.empty(len(xs))
    for k in range(len(xs)):
        up = dict(zip(xs, point))
        dn = dict(zip(xs, point))
        up[xs[k]] += h
        dn[xs[k]] -= h
        grad[k] = (g.evaluate(out, up) - g.evaluate(out, dn)) / (2 * h)
    return grad


def check_graphs(n_graphs=1000, seed=0, rtol=1e-5):
    """Worst scaled AD-vs-FD mismatch over ``n_graphs`` random graphs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_graphs):
        g, xs, out = random_graph(rng, n_ops=int(rng.integers(3, 20)))
        point = rng.uniform(0.05, 0.95, len(xs))
        d = g.grad(out, xs)
        ad = np.array(g.evaluate([d[x] for x in xs], dict(zip(xs, point))), dtype=float)
        fd = fd_gradient(g, xs, out, point)
        err = np.max(np.abs(ad - fd) / np.maximum(1.0, np.abs(fd)))
        worst = max(worst, float(err))
    return worst
