"""Radial grid topologies and their network matrices.

A :class:`Topology` is a rooted radial tree whose root is the slack bus.  Every
other bus is either *observed* (metered) or *hidden* (an unmetered junction with
zero injection).  Matrices indexed by buses use :attr:`Topology.bus_order`, which
lists hidden buses first and observed buses last, so the observed block of any
covariance or impedance matrix is the trailing block.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TopologyError

SLACK = "slack"
OBSERVED = "observed"
HIDDEN = "hidden"
ROLES = (SLACK, OBSERVED, HIDDEN)

COND_LIMIT = 1e12


@dataclass
class Topology:
    """Radial grid: node roles plus series-impedance edges ``(i, k, z)``."""

    roles: dict[int, str]
    edges: list[tuple[int, int, complex]] = field(default_factory=list)

    def __post_init__(self):
        self.roles = {int(n): r for n, r in self.roles.items()}
        self.edges = [(int(i), int(k), complex(z)) for i, k, z in self.edges]
        for n, r in self.roles.items():
            if r not in ROLES:
                raise TopologyError(f"node {n}: unknown role {r!r}")

    # -- views -----------------------------------------------------------
    @property
    def nodes(self):
        return sorted(self.roles)

    @property
    def slack(self) -> int:
        s = [n for n, r in self.roles.items() if r == SLACK]
        if len(s) != 1:
            raise TopologyError(f"expected exactly one slack node, found {len(s)}")
        return s[0]

    @property
    def observed(self) -> list[int]:
        return sorted(n for n, r in self.roles.items() if r == OBSERVED)

    @property
    def hidden(self) -> list[int]:
        return sorted(n for n, r in self.roles.items() if r == HIDDEN)

    @property
    def bus_order(self) -> list[int]:
        """Non-slack buses, hidden first, observed trailing."""
        return self.hidden + self.observed

    @property
    def node_order(self) -> list[int]:
        return [self.slack] + self.bus_order

    def adjacency(self) -> dict[int, dict[int, complex]]:
        adj: dict[int, dict[int, complex]] = {n: {} for n in self.roles}
        for i, k, z in self.edges:
            if i not in adj or k not in adj:
                raise TopologyError(f"edge ({i}, {k}) references an unknown node")
            adj[i][k] = z
            adj[k][i] = z
        return adj

    def degree(self, n: int) -> int:
        return sum(1 for i, k, _ in self.edges if n in (i, k))

    def parents(self) -> dict[int, tuple[int, complex]]:
        """Map each non-slack node to ``(parent, z_edge)`` with the slack as root."""
        adj = self.adjacency()
        root = self.slack
        parent: dict[int, tuple[int, complex]] = {}
        seen = {root}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v, z in sorted(adj[u].items()):
                if v not in seen:
                    seen.add(v)
                    parent[v] = (u, z)
                    queue.append(v)
        if len(seen) != len(self.roles):
            raise TopologyError("graph is not connected")
        return parent

    # -- checks ----------------------------------------------------------
    def validate(self, require_identifiable: bool = True) -> None:
        """Raise :class:`TopologyError` unless this is a valid radial grid.

        With ``require_identifiable`` every hidden node must have degree >= 3.
        """
        _ = self.slack
        if len(self.edges) != len(self.roles) - 1:
            raise TopologyError(
                f"not a tree: {len(self.edges)} edges for {len(self.roles)} nodes"
            )
        pairs = set()
        for i, k, z in self.edges:
            if i == k:
                raise TopologyError(f"self-loop at node {i}")
            key = (min(i, k), max(i, k))
            if key in pairs:
                raise TopologyError(f"duplicate edge {key}")
            pairs.add(key)
            if z == 0:
                raise TopologyError(f"degenerate edge ({i}, {k}): zero impedance")
            if not z.real > 0:
                raise TopologyError(f"edge ({i}, {k}) has non-positive resistance")
        self.parents()  # connectivity
        if require_identifiable:
            for h in self.hidden:
                if self.degree(h) < 3:
                    raise TopologyError(f"hidden node {h} has degree < 3")

    def contract(self) -> "Topology":
        """Merge away hidden nodes of degree 2 and prune hidden leaves.

        Such nodes cannot be identified from observed data, so comparisons are
        always made against the contracted grid.
        """
        roles = dict(self.roles)
        adj = {n: dict(nb) for n, nb in self.adjacency().items()}
        changed = True
        while changed:
            changed = False
            for n in sorted(roles):
                if roles[n] != HIDDEN:
                    continue
                nb = adj[n]
                if len(nb) <= 1:
                    for m in nb:
                        del adj[m][n]
                    del adj[n], roles[n]
                    changed = True
                elif len(nb) == 2:
                    (a, za), (b, zb) = sorted(nb.items())
                    del adj[a][n], adj[b][n], adj[n], roles[n]
                    adj[a][b] = adj[b][a] = za + zb
                    changed = True
        edges = sorted(
            (min(i, k), max(i, k), z) for i in adj for k, z in adj[i].items() if i < k
        )
        return Topology(roles, edges)

    # -- io --------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n, "role": self.roles[n]} for n in self.nodes],
            "edges": [
                {"i": i, "k": k, "r": z.real, "x": z.imag} for i, k, z in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        try:
            roles = {int(n["id"]): n["role"] for n in data["nodes"]}
            edges = [
                (int(e["i"]), int(e["k"]), complex(float(e["r"]), float(e["x"])))
                for e in data["edges"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"malformed topology document: {exc}") from exc
        return cls(roles, edges)


def load_topology(path) -> Topology:
    return Topology.from_dict(json.loads(Path(path).read_text()))


def save_topology(topology: Topology, path) -> None:
    Path(path).write_text(json.dumps(topology.to_dict(), indent=2, sort_keys=True) + "\n")


# -- network matrices ------------------------------------------------------

def build_admittance(topology: Topology) -> np.ndarray:
    """Full nodal admittance matrix over ``topology.node_order`` (slack first).

    Series impedances only: off-diagonals are ``-1/z`` and every row sums to 0.
    """
    topology.validate(require_identifiable=False)
    order = topology.node_order
    pos = {n: p for p, n in enumerate(order)}
    Y = np.zeros((len(order), len(order)), dtype=complex)
    for i, k, z in topology.edges:
        y = 1.0 / z
        a, b = pos[i], pos[k]
        Y[a, b] -= y
        Y[b, a] -= y
        Y[a, a] += y
        Y[b, b] += y
    return Y


def reduce_slack(Y: np.ndarray, slack_index: int = 0) -> np.ndarray:
    """Remove the slack row and column; the result must be invertible."""
    Y = np.asarray(Y)
    keep = [p for p in range(Y.shape[0]) if p != slack_index]
    Yr = Y[np.ix_(keep, keep)]
    if Yr.size and np.linalg.cond(Yr) > COND_LIMIT:
        raise TopologyError("non-invertible reduced admittance")
    return Yr


def subtree_indicator(topology: Topology) -> np.ndarray:
    """``S[e, a] = 1`` when bus ``a`` lies at or below the child end of edge ``e``.

    Edges are identified by their child bus and ordered like ``bus_order``.
    """
    parent = topology.parents()
    order = topology.bus_order
    pos = {n: p for p, n in enumerate(order)}
    S = np.zeros((len(order), len(order)))
    root = topology.slack
    for a in order:
        node = a
        while node != root:
            S[pos[node], pos[a]] = 1.0
            node = parent[node][0]
    return S


def edge_impedances(topology: Topology) -> np.ndarray:
    """Impedance of the edge above each bus, in ``bus_order``."""
    parent = topology.parents()
    return np.array([parent[n][1] for n in topology.bus_order], dtype=complex)


def build_z_paths(topology: Topology) -> np.ndarray:
    """Shared-path impedance matrix over ``bus_order``.

    ``Z[a, b]`` is the total impedance of the lines common to the paths from
    ``a`` and ``b`` to the slack bus; it equals the inverse of the reduced
    admittance matrix for any radial grid.
    """
    topology.validate(require_identifiable=False)
    S = subtree_indicator(topology)
    return S.T @ (edge_impedances(topology)[:, None] * S)


def true_distance(topology: Topology, a: int, b: int) -> complex:
    """Total impedance of the tree path between buses ``a`` and ``b``."""
    order = topology.bus_order
    for n in (a, b):
        if n not in topology.roles:
            raise TopologyError(f"unknown node id {n}")
        if n == topology.slack:
            raise TopologyError("distances are defined between non-slack buses")
    Z = build_z_paths(topology)
    pa, pb = order.index(a), order.index(b)
    return complex(Z[pa, pa] + Z[pb, pb] - 2 * Z[pa, pb])


# -- benchmark trees -------------------------------------------------------

def random_radial_tree(
    n_nodes: int,
    rng: np.random.Generator,
    hidden_fraction: float = 0.5,
    r_range: tuple[float, float] = (0.1, 1.0),
    x_range: tuple[float, float] = (0.1, 1.0),
    xr_range: tuple[float, float] | None = None,
    feeder_head: bool = True,
) -> Topology:
    """Random radial grid rooted at slack bus 1.

    Nodes attach to a uniformly chosen earlier node (random recursive tree).
    With ``feeder_head`` the slack feeds a single line, as at a substation.
    Reactances are drawn from ``x_range``, or as ``r * U(xr_range)`` when an x/r
    range is given.  ``hidden_fraction`` of the junctions with degree >= 3
    become hidden; all other non-slack buses are observed.
    """
    if n_nodes < 3:
        raise TopologyError("a benchmark grid needs at least 3 nodes")
    edges = []
    for node in range(2, n_nodes + 1):
        lo = 2 if feeder_head and node > 2 else 1
        parent = int(rng.integers(lo, node))
        r = rng.uniform(*r_range)
        x = r * rng.uniform(*xr_range) if xr_range else rng.uniform(*x_range)
        edges.append((parent, node, complex(r, x)))
    deg = np.zeros(n_nodes + 1, dtype=int)
    for i, k, _ in edges:
        deg[i] += 1
        deg[k] += 1
    eligible = [n for n in range(2, n_nodes + 1) if deg[n] >= 3]
    n_hidden = int(round(hidden_fraction * len(eligible)))
    hidden = set(rng.choice(eligible, size=n_hidden, replace=False).tolist()) if n_hidden else set()
    roles = {1: SLACK}
    for n in range(2, n_nodes + 1):
        roles[n] = HIDDEN if n in hidden else OBSERVED
    return Topology(roles, edges)
