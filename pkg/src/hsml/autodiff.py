"""Scalar expression graphs with symbolic reverse-mode differentiation.

A graph is an append-only list of nodes. Every derivative request appends new
nodes to the same graph, so gradients can themselves be differentiated. This
is how second derivatives (and therefore Laplacians and time derivatives of a
network output) are obtained.

Evaluation walks the node list once in append order. There is no recursion,
so very deep graphs evaluate fine. Values may be floats or numpy arrays; with
arrays, one evaluation covers a whole batch of points.

Example
-------
>>> g = ExprGraph()
>>> x = g.var("x")
>>> f = g.build("mul", [g.const(2.0), x])
>>> g.evaluate(f, {x: 3.0})
6.0
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPS = {
    "add": 2,
    "sub": 2,
    "mul": 2,
    "div": 2,
    "pow-const": 1,
    "exp": 1,
    "sin": 1,
    "cos": 1,
    "tanh": 1,
    "neg": 1,
    "const": 0,
    "var": 0,
}


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    op: str
    operands: tuple[int, ...]
    payload: object = None


@dataclass
class DerivativeBundle:
    """Value, gradient and diagonal second derivatives of one scalar output."""

    value: float
    first: dict[int, float] = field(default_factory=dict)
    second_diagonal: dict[int, float] = field(default_factory=dict)


class ExprGraph:
    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: list[int] = []
        self._consts: dict[float, int] = {}
        self._frozen = False

    def __len__(self):
        return len(self.nodes)

    def freeze(self):
        """Forbid further construction; evaluation stays available."""
        self._frozen = True
        return self

    # -- construction -----------------------------------------------------

    def build(self, op, operands=(), payload=None):
        if self._frozen:
            raise GraphError("graph is frozen")
        if op not in OPS:
            raise GraphError(f"unknown op-kind {op!r}")
        operands = tuple(int(i) for i in operands)
        if len(operands) != OPS[op]:
            raise GraphError(f"{op} takes {OPS[op]} operands, got {len(operands)}")
        n = len(self.nodes)
        for i in operands:
            if not 0 <= i < n:
                raise GraphError(f"operand index {i} out of range for graph of size {n}")
        if op == "const":
            payload = float(payload)
            if payload in self._consts:
                return self._consts[payload]
        elif op == "pow-const":
            payload = float(payload)
        self.nodes.append(Node(op, operands, payload))
        if op == "const":
            self._consts[payload] = n
        elif op == "var":
            self.inputs.append(n)
        return n

    def const(self, value):
        return self.build("const", (), value)

    def var(self, name=None):
        return self.build("var", (), name)

    # Small algebraic simplifications keep derivative graphs compact.

    def _is_const(self, i, value):
        node = self.nodes[i]
        return node.op == "const" and node.payload == value

    def add(self, a, b):
        if self._is_const(a, 0.0):
            return b
        if self._is_const(b, 0.0):
            return a
        return self.build("add", (a, b))

    def sub(self, a, b):
        if self._is_const(b, 0.0):
            return a
        return self.build("sub", (a, b))

    def mul(self, a, b):
        if self._is_const(a, 1.0):
            return b
        if self._is_const(b, 1.0):
            return a
        if self._is_const(a, 0.0) or self._is_const(b, 0.0):
            return self.const(0.0)
        return self.build("mul", (a, b))

    def neg(self, a):
        return self.build("neg", (a,))

    # -- evaluation -------------------------------------------------------

    def evaluate(self, outputs, values):
        """Evaluate one node index or a list of them.

        ``values`` maps variable node indices to floats or equally shaped
        arrays. Nodes beyond the largest requested output are not touched.
        """
        single = np.isscalar(outputs) or isinstance(outputs, (int, np.integer))
        wanted = [int(outputs)] if single else [int(o) for o in outputs]
        stop = max(wanted) + 1 if wanted else 0
        buf = [None] * stop
        for i in range(stop):
            node = self.nodes[i]
            op, args = node.op, node.operands
            if op == "var":
                if i not in values:
                    raise GraphError(f"no value supplied for variable node {i} ({node.payload})")
                buf[i] = values[i]
            elif op == "const":
                buf[i] = node.payload
            elif op == "add":
                buf[i] = buf[args[0]] + buf[args[1]]
            elif op == "sub":
                buf[i] = buf[args[0]] - buf[args[1]]
            elif op == "mul":
                buf[i] = buf[args[0]] * buf[args[1]]
            elif op == "div":
                buf[i] = buf[args[0]] / buf[args[1]]
            elif op == "pow-const":
                buf[i] = buf[args[0]] ** node.payload
            elif op == "exp":
                buf[i] = np.exp(buf[args[0]])
            elif op == "sin":
                buf[i] = np.sin(buf[args[0]])
            elif op == "cos":
                buf[i] = np.cos(buf[args[0]])
            elif op == "tanh":
                buf[i] = np.tanh(buf[args[0]])
            elif op == "neg":
                buf[i] = -buf[args[0]]
        out = [_as_float(buf[o]) for o in wanted]
        return out[0] if single else out

    # -- differentiation --------------------------------------------------

    def grad(self, output, wrt):
        """Append nodes computing d(output)/d(v) for each leaf ``v`` in ``wrt``.

        Returns a dict mapping each requested variable to the node holding its
        partial derivative. Variables the output does not depend on map to the
        constant 0 node.
        """
        wrt = [int(v) for v in wrt]
        for v in wrt:
            if not 0 <= v < len(self.nodes) or self.nodes[v].op != "var":
                raise GraphError(f"node {v} is not a leaf variable")
        output = int(output)
        if not 0 <= output < len(self.nodes):
            raise GraphError(f"output index {output} out of range")

        live = np.zeros(output + 1, dtype=bool)
        live[output] = True
        for i in range(output, -1, -1):
            if live[i]:
                for j in self.nodes[i].operands:
                    live[j] = True

        adjoint: dict[int, int] = {output: self.const(1.0)}
        for i in range(output, -1, -1):
            if not live[i] or i not in adjoint:
                continue
            node = self.nodes[i]
            if node.op in ("var", "const"):
                continue
            g = adjoint[i]
            for j, contrib in zip(node.operands, self._local_adjoints(i, node, g)):
                adjoint[j] = self.add(adjoint[j], contrib) if j in adjoint else contrib
        zero = self.const(0.0)
        return {v: adjoint.get(v, zero) for v in wrt}

    def _local_adjoints(self, i, node, g):
        op, args = node.op, node.operands
        if op == "add":
            return g, g
        if op == "sub":
            return g, self.neg(g)
        if op == "mul":
            a, b = args
            return self.mul(g, b), self.mul(g, a)
        if op == "div":
            a, b = args
            gb = self.build("div", (g, b))
            return gb, self.neg(self.mul(gb, i))
        if op == "pow-const":
            p = node.payload
            (a,) = args
            if p == 1.0:
                return (g,)
            if p == 2.0:
                return (self.mul(g, self.mul(self.const(2.0), a)),)
            dp = self.mul(self.const(p), self.build("pow-const", (a,), p - 1.0))
            return (self.mul(g, dp),)
        if op == "exp":
            return (self.mul(g, i),)
        if op == "sin":
            return (self.mul(g, self.build("cos", args)),)
        if op == "cos":
            return (self.neg(self.mul(g, self.build("sin", args))),)
        if op == "tanh":
            sech2 = self.sub(self.const(1.0), self.mul(i, i))
            return (self.mul(g, sech2),)
        if op == "neg":
            return (self.neg(g),)
        raise GraphError(f"cannot differentiate {op}")  # pragma: no cover

    def second_diagonal(self, output, variables):
        """Nodes for d^2(output)/dv^2, one per variable, via grad-of-grad."""
        first = self.grad(output, variables)
        return {v: self.grad(first[v], [v])[v] for v in variables}

    def laplacian(self, output, spatial_vars):
        """Node evaluating the sum of unmixed second derivatives."""
        output = int(output)
        if not 0 <= output < len(self.nodes):
            raise GraphError(f"output index {output} out of range")
        diag = self.second_diagonal(output, spatial_vars)
        terms = [diag[v] for v in spatial_vars]
        if not terms:
            return self.const(0.0)
        acc = terms[0]
        for t in terms[1:]:
            acc = self.build("add", (acc, t))
        return acc

    def derivatives(self, output, values, spatial_vars=(), weight_vars=()):
        """Evaluate a :class:`DerivativeBundle` for ``output``.

        Second derivatives are reported only for ``spatial_vars``; weights get
        first derivatives only.
        """
        spatial_vars = list(spatial_vars)
        everything = spatial_vars + [w for w in weight_vars if w not in spatial_vars]
        first = self.grad(output, everything)
        second = {v: self.grad(first[v], [v])[v] for v in spatial_vars}
        order = [output] + [first[v] for v in everything] + [second[v] for v in spatial_vars]
        vals = self.evaluate(order, values)
        n = len(everything)
        return DerivativeBundle(
            value=vals[0],
            first=dict(zip(everything, vals[1 : n + 1])),
            second_diagonal=dict(zip(spatial_vars, vals[n + 1 :])),
        )


def _as_float(v):
    if isinstance(v, np.ndarray):
        return v
    return float(v)


class Expr:
    """Operator-overloading handle on a graph node.

    Lets network and PDE expressions be written as ordinary arithmetic while
    still producing :class:`ExprGraph` nodes.
    """

    __slots__ = ("graph", "index")
    __array_priority__ = 1000

    def __init__(self, graph, index):
        self.graph = graph
        self.index = int(index)

    def _wrap(self, other):
        if isinstance(other, Expr):
            return other.index
        return self.graph.const(float(other))

    def _new(self, index):
        return Expr(self.graph, index)

    def __add__(self, other):
        return self._new(self.graph.build("add", (self.index, self._wrap(other))))

    def __radd__(self, other):
        return self._new(self.graph.build("add", (self._wrap(other), self.index)))

    def __sub__(self, other):
        return self._new(self.graph.build("sub", (self.index, self._wrap(other))))

    def __rsub__(self, other):
        return self._new(self.graph.build("sub", (self._wrap(other), self.index)))

    def __mul__(self, other):
        return self._new(self.graph.build("mul", (self.index, self._wrap(other))))

    def __rmul__(self, other):
        return self._new(self.graph.build("mul", (self._wrap(other), self.index)))

    def __truediv__(self, other):
        return self._new(self.graph.build("div", (self.index, self._wrap(other))))

    def __rtruediv__(self, other):
        return self._new(self.graph.build("div", (self._wrap(other), self.index)))

    def __neg__(self):
        return self._new(self.graph.build("neg", (self.index,)))

    def __pow__(self, p):
        return self._new(self.graph.build("pow-const", (self.index,), float(p)))

    def __repr__(self):
        node = self.graph.nodes[self.index]
        return f"Expr({node.op}#{self.index})"


class _ExprMath:
    """Namespace mirroring ``numpy``'s elementary functions for :class:`Expr`."""

    pi = np.pi

    @staticmethod
    def _unary(op, e):
        return Expr(e.graph, e.graph.build(op, (e.index,)))

    def exp(self, e):
        return self._unary("exp", e)

    def sin(self, e):
        return self._unary("sin", e)

    def cos(self, e):
        return self._unary("cos", e)

    def tanh(self, e):
        return self._unary("tanh", e)


expr_math = _ExprMath()
