"""Predictive coding over arbitrary directed graphs of neuron groups.

Each edge carries an affine map ``h_src @ W.T + b``. A node with parents
predicts ``mu = act(sum of incoming affine maps)``, summed over parents in
ascending id order. The node's activation is declared on its incoming edges,
which must agree. Energy is ``1/2 sum ||h_c - mu_c||^2`` over every node that
has at least one parent.

Text format, one directive per line (``#`` starts a comment)::

    node <id> <width>
    edge <src> <dst> <activation>
    input <id>
"""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field

import numpy as np

from .numerics import Activation, as_activation, bias_uniform_init, kaiming_uniform_init


class GraphFormatError(ValueError):
    pass


class InfeasibleGraphError(ValueError):
    def __init__(self, msg: str, witness):
        super().__init__(msg)
        self.witness = witness


@dataclass
class Edge:
    src: int
    dst: int
    activation: Activation
    W: np.ndarray | None = None  # (width[dst], width[src])
    b: np.ndarray | None = None  # (width[dst],)


@dataclass
class GraphPCN:
    widths: dict[int, int]
    edges: list[Edge]
    inputs: set[int] = field(default_factory=set)

    def __post_init__(self):
        for e in self.edges:
            for n in (e.src, e.dst):
                if n not in self.widths:
                    raise GraphFormatError(f"edge {e.src}->{e.dst} references unknown node {n}")
            if e.W is not None and e.W.shape != (self.widths[e.dst], self.widths[e.src]):
                raise GraphFormatError(f"edge {e.src}->{e.dst}: weight shape {e.W.shape} mismatches widths")
        for n in self.inputs:
            if n not in self.widths:
                raise GraphFormatError(f"input {n} is not a node")
        for n in self.widths:
            acts = {e.activation for e in self.incoming(n)}
            if len(acts) > 1:
                raise GraphFormatError(f"node {n}: incoming edges disagree on activation {sorted(a.tag for a in acts)}")

    def incoming(self, n: int) -> list[Edge]:
        return sorted((e for e in self.edges if e.dst == n), key=lambda e: e.src)

    def outgoing(self, n: int) -> list[Edge]:
        return [e for e in self.edges if e.src == n]

    def parents(self, n: int) -> list[int]:
        return [e.src for e in self.incoming(n)]

    def roots(self) -> list[int]:
        return sorted(n for n in self.widths if not self.incoming(n))

    def node_activation(self, n: int) -> Activation:
        inc = self.incoming(n)
        return inc[0].activation if inc else Activation("identity")

    def init_weights(self, rng: np.random.Generator, dtype=np.float64) -> "GraphPCN":
        for e in sorted(self.edges, key=lambda e: (e.src, e.dst)):
            fi, fo = self.widths[e.src], self.widths[e.dst]
            e.W = kaiming_uniform_init(fi, fo, rng).astype(dtype)
            e.b = bias_uniform_init(fi, fo, rng).astype(dtype)
        return self


def parse_graph(text: str) -> GraphPCN:
    widths, edges, inputs = {}, [], set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "node" and len(parts) == 3:
                nid = int(parts[1])
                if nid in widths:
                    raise GraphFormatError(f"line {lineno}: duplicate node id {nid}")
                widths[nid] = int(parts[2])
                if widths[nid] < 1:
                    raise GraphFormatError(f"line {lineno}: node width must be >= 1")
            elif parts[0] == "edge" and len(parts) == 4:
                edges.append(Edge(int(parts[1]), int(parts[2]), as_activation(parts[3])))
            elif parts[0] == "input" and len(parts) == 2:
                inputs.add(int(parts[1]))
            else:
                raise GraphFormatError(f"line {lineno}: cannot parse {raw.strip()!r}")
        except ValueError as exc:
            if isinstance(exc, GraphFormatError):
                raise
            raise GraphFormatError(f"line {lineno}: {exc}") from exc
    return GraphPCN(widths, edges, inputs)


def load_graph(path) -> GraphPCN:
    with open(path) as fh:
        return parse_graph(fh.read())


@dataclass
class Feasibility:
    feasible: bool
    order: list[int] | None = None
    cycle: list[int] | None = None
    unclamped_root: int | None = None

    @property
    def witness(self):
        return self.cycle if self.cycle is not None else self.unclamped_root


def _canonical_cycle(cycle: list[int]) -> list[int]:
    """graphlib reports [a, b, ..., a] along edge direction; drop the repeat and
    rotate to start at the smallest id."""
    nodes = cycle[:-1] if len(cycle) > 1 and cycle[0] == cycle[-1] else list(cycle)
    k = nodes.index(min(nodes))
    return nodes[k:] + nodes[:k]


def check_forward_feasible(g: GraphPCN) -> Feasibility:
    """A forward sweep exists iff the graph is acyclic and every root is an input."""
    ts = graphlib.TopologicalSorter()
    for n in sorted(g.widths):
        ts.add(n, *g.parents(n))
    try:
        order = list(ts.static_order())
    except graphlib.CycleError as exc:
        return Feasibility(False, cycle=_canonical_cycle(list(exc.args[1])))
    for r in g.roots():
        if r not in g.inputs:
            return Feasibility(False, unclamped_root=r)
    return Feasibility(True, order=order)


def node_prediction(g: GraphPCN, states: dict[int, np.ndarray], n: int):
    """(mu, z) for node ``n`` from its parents, or None for a root."""
    inc = g.incoming(n)
    if not inc:
        return None
    z = None
    for e in inc:
        term = states[e.src] @ e.W.T + e.b
        z = term if z is None else z + term
    return g.node_activation(n)(z), z


def forward_init_dag(g: GraphPCN, inputs: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    feas = check_forward_feasible(g)
    if not feas.feasible:
        if feas.cycle is not None:
            raise InfeasibleGraphError(f"graph has a cycle {feas.cycle}; forward initialization cannot exist",
                                       feas.cycle)
        raise InfeasibleGraphError(
            f"root node {feas.unclamped_root} is not clamped to an input; forward initialization cannot exist",
            feas.unclamped_root,
        )
    missing = g.inputs - set(inputs)
    if missing:
        raise ValueError(f"no values given for input nodes {sorted(missing)}")
    states = {n: np.asarray(v) for n, v in inputs.items()}
    for n in feas.order:
        if n in g.inputs:
            continue
        states[n] = node_prediction(g, states, n)[0]
    return states


def dag_errors(g: GraphPCN, states: dict[int, np.ndarray]):
    """Errors and preactivations for every node with parents."""
    errs, zs = {}, {}
    for n in sorted(g.widths):
        p = node_prediction(g, states, n)
        if p is not None:
            errs[n] = states[n] - p[0]
            zs[n] = p[1]
    return errs, zs


def dag_energy(g: GraphPCN, states: dict[int, np.ndarray]) -> float:
    errs, _ = dag_errors(g, states)
    return float(sum(0.5 * np.sum(e * e) for e in errs.values()))


def dag_state_gradients(g: GraphPCN, states: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    errs, zs = dag_errors(g, states)
    scaled = {c: errs[c] * g.node_activation(c).deriv(zs[c]) for c in errs}
    grads = {}
    for n in sorted(g.widths):
        if n in g.inputs:
            continue
        grad = errs[n].copy() if n in errs else np.zeros_like(states[n])
        for e in sorted(g.outgoing(n), key=lambda e: e.dst):
            grad -= scaled[e.dst] @ e.W
        grads[n] = grad
    return grads


def dag_inference_step(g: GraphPCN, states: dict[int, np.ndarray], alpha: float) -> dict[int, np.ndarray]:
    """One synchronous gradient step on every non-input node."""
    grads = dag_state_gradients(g, states)
    out = dict(states)
    for n, grad in grads.items():
        out[n] = states[n] - alpha * grad
    return out


def chain_graph(dims: list[int], activations: list) -> GraphPCN:
    """Layered chain 0 -> 1 -> ... -> L with node 0 as the input."""
    widths = dict(enumerate(dims))
    edges = [Edge(l, l + 1, as_activation(a)) for l, a in enumerate(activations)]
    return GraphPCN(widths, edges, {0})
