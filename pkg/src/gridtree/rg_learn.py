"""Latent tree reconstruction by recursive grouping.

Given additive distances between observed buses, the active set is repeatedly
partitioned into families (a parent with its leaf children, or leaf siblings
sharing an unseen parent).  Hidden parents are introduced for parentless
families, their distances to the remaining active nodes are derived, and the
loop continues on the smaller active set until at most two nodes remain.

Threshold tests compare *residuals* through a scalarization: the modulus of the
complex residual by default, or its real part.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridTreeError
from .impedance_est import MAGNITUDE, DistanceMatrix

log = logging.getLogger(__name__)

PARENT_I = "i_parent_of_j"
PARENT_J = "j_parent_of_i"
SIBLINGS = "siblings"
UNRELATED = "unrelated"

NUMERIC_TOL = 1e-9
DEFAULT_EPS_FRACTION = 0.1


@dataclass
class RGConfig:
    """Thresholds for the relaxed grouping tests.

    ``eps1``/``eps2`` left as ``None`` are derived from the distance matrix by
    :func:`default_thresholds`.  ``average`` averages the hidden-node distance
    updates over all children instead of using the lowest-id child.
    """

    eps1: float | None = None
    eps2: float | None = None
    scalarization: str = "modulus"
    average: bool = False

    def __post_init__(self):
        if self.scalarization not in ("modulus", "real_part"):
            raise GridTreeError(f"unknown scalarization {self.scalarization!r}")
        for name in ("eps1", "eps2"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise GridTreeError(f"{name} must be nonnegative")


@dataclass
class LatentTree:
    """Reconstructed tree: observed ids plus hidden ids ``h1, h2, ...``."""

    nodes: list
    edges: list  # (u, v, distance)
    warnings: list = field(default_factory=list)
    hidden: list | None = None

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = [n for n in self.nodes if _is_hidden(n)]

    @property
    def observed(self):
        hidden = set(self.hidden)
        return [n for n in self.nodes if n not in hidden]

    def degree(self, n) -> int:
        return sum(1 for u, v, _ in self.edges if n in (u, v))

    def adjacency(self) -> dict:
        adj = {n: {} for n in self.nodes}
        for u, v, d in self.edges:
            adj[u][v] = d
            adj[v][u] = d
        return adj

    def is_tree(self) -> bool:
        if len(self.edges) != len(self.nodes) - 1:
            return False
        adj = self.adjacency()
        seen, stack = set(), [self.nodes[0]] if self.nodes else []
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            stack.extend(adj[u])
        return len(seen) == len(self.nodes)

    def to_dict(self) -> dict:
        def num(d):
            d = complex(d)
            return {"r": d.real, "x": d.imag}

        hidden = set(self.hidden)
        return {
            "nodes": [
                {"id": n, "role": "hidden" if n in hidden else "observed"}
                for n in self.nodes
            ],
            "edges": [{"i": u, "k": v, **num(d)} for u, v, d in self.edges],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LatentTree":
        try:
            nodes = [n["id"] for n in data["nodes"]]
            hidden = [n["id"] for n in data["nodes"] if n["role"] == "hidden"]
            edges = [(e["i"], e["k"], complex(e["r"], e.get("x", 0.0))) for e in data["edges"]]
        except (KeyError, TypeError) as exc:
            raise GridTreeError(f"malformed tree document: {exc}") from exc
        return cls(nodes, edges, list(data.get("warnings", [])), hidden)

    def to_dot(self) -> str:
        lines = ["graph latent {"]
        hidden = set(self.hidden)
        for n in self.nodes:
            shape = "circle" if n in hidden else "box"
            lines.append(f'  "{n}" [shape={shape}];')
        for u, v, d in self.edges:
            d = complex(d)
            lines.append(f'  "{u}" -- "{v}" [label="{d.real:.4g}{d.imag:+.4g}j"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _is_hidden(n) -> bool:
    return isinstance(n, str) and n.startswith("h")


def _node_key(n):
    # observed ids sort numerically before hidden ids, hidden by creation index
    return (1, int(n[1:])) if _is_hidden(n) else (0, n)


def _scalar(x, scalarization: str):
    return np.abs(np.real(x)) if scalarization == "real_part" else np.abs(x)


def default_thresholds(D: DistanceMatrix, scalarization: str = "modulus") -> tuple[float, float]:
    """Data-scaled thresholds ``eps1 = eps2 = 0.1 * median(s(d))``.

    Estimated distances carry errors of a few percent of a typical distance,
    so the tolerance scales with the median pairwise distance.
    """
    n = len(D.nodes)
    iu = np.triu_indices(n, 1)
    if not iu[0].size:
        return 0.0, 0.0
    eps = DEFAULT_EPS_FRACTION * float(np.median(_scalar(D.d[iu], scalarization)))
    return eps, eps


def phi(D: DistanceMatrix, i, j, k):
    """``d_ik - d_jk``."""
    if len({i, j, k}) != 3:
        raise GridTreeError("phi needs three distinct nodes")
    return D[i, k] - D[j, k]


def hidden_child_distance(d_ij, phi_ijk):
    """Distance from child ``i`` to the new hidden parent of ``i`` and ``j``."""
    return 0.5 * (d_ij + phi_ijk)


def hidden_other_distance(d_ih, d_ip=None, d_ik=None, d_pk=None):
    """Distance from new hidden ``h`` (child ``i``) to another active node ``p``.

    Pass ``d_ip`` when ``p`` was already active; pass ``d_ik`` and ``d_pk``
    (``k`` a child of ``p``) when ``p`` is itself a new hidden node.
    """
    if d_ip is not None:
        return d_ip - d_ih
    if d_ik is None or d_pk is None:
        raise GridTreeError("orphan hidden node: no reference child for hidden p")
    return d_ik - d_ih - d_pk


class _Dist:
    """Mutable symmetric distance store keyed by node id."""

    def __init__(self, D: DistanceMatrix):
        self.d = {}
        for a, b in itertools.combinations(D.nodes, 2):
            self.set(a, b, D[a, b])

    def __call__(self, a, b):
        return 0.0 if a == b else self.d[(a, b)]

    def set(self, a, b, value):
        self.d[(a, b)] = value
        self.d[(b, a)] = value


@dataclass
class _PairStats:
    spread: float
    child_of_j: float  # residual of "j is the parent of i"
    child_of_i: float  # residual of "i is the parent of j"


def _pair_stats(dist, i, j, others, scalarization) -> _PairStats:
    d_ij = dist(i, j)
    ph = np.array([dist(i, k) - dist(j, k) for k in others])
    if scalarization == "real_part":
        re = np.real(ph)
        spread = float(re.max() - re.min())
        res_j = float(np.max(np.abs(re - np.real(d_ij))))
        res_i = float(np.max(np.abs(re + np.real(d_ij))))
    else:
        spread = float(np.max(np.abs(ph[:, None] - ph[None, :])))
        res_j = float(np.max(np.abs(ph - d_ij)))
        res_i = float(np.max(np.abs(ph + d_ij)))
    return _PairStats(spread, res_j, res_i)


def _verdict(st: _PairStats, eps1, eps2, tol) -> str:
    if st.child_of_j <= eps1 + tol and st.child_of_j <= st.child_of_i:
        return PARENT_J
    if st.child_of_i <= eps1 + tol:
        return PARENT_I
    if st.spread <= eps2 + tol:
        return SIBLINGS
    return UNRELATED


def classify_pair(D: DistanceMatrix, i, j, active=None, cfg: RGConfig | None = None) -> str:
    """Relationship between active nodes ``i`` and ``j``.

    Returns one of ``"i_parent_of_j"``, ``"j_parent_of_i"``, ``"siblings"`` or
    ``"unrelated"``.
    """
    cfg = cfg or RGConfig()
    active = list(D.nodes if active is None else active)
    if len(active) < 3:
        raise GridTreeError("pair classification needs at least 3 active nodes")
    eps1, eps2 = _resolve(D, cfg)
    others = [k for k in active if k not in (i, j)]
    st = _pair_stats(lambda a, b: 0.0 if a == b else D[a, b], i, j, others, cfg.scalarization)
    return _verdict(st, eps1, eps2, _tol(D))


def _resolve(D: DistanceMatrix, cfg: RGConfig) -> tuple[float, float]:
    e1, e2 = default_thresholds(D, cfg.scalarization)
    return (e1 if cfg.eps1 is None else cfg.eps1, e2 if cfg.eps2 is None else cfg.eps2)


def _tol(D: DistanceMatrix) -> float:
    scale = float(np.max(np.abs(D.d))) if D.d.size else 1.0
    return NUMERIC_TOL * max(scale, 1.0)


def _node_grouping(dist, Y, eps1, eps2, tol, scalarization, warnings):
    """Partition ``Y`` into families; returns list of (members, parent or None)."""
    stats = {}
    for i, j in itertools.combinations(Y, 2):
        others = [k for k in Y if k != i and k != j]
        stats[(i, j)] = _pair_stats(dist, i, j, others, scalarization)

    def st(a, b):
        if (a, b) in stats:
            return stats[(a, b)]
        s = stats[(b, a)]
        return _PairStats(s.spread, s.child_of_i, s.child_of_j)

    def related(a, b):
        return _verdict(st(a, b), eps1, eps2, tol) != UNRELATED

    # complete-linkage agglomeration over related pairs, tightest pairs first
    cluster = {n: frozenset([n]) for n in Y}
    candidates = sorted(
        (p for p in stats if related(*p)),
        key=lambda p: (min(stats[p].spread, stats[p].child_of_i, stats[p].child_of_j),
                       _node_key(p[0]), _node_key(p[1])),
    )
    for a, b in candidates:
        A, B = cluster[a], cluster[b]
        if A is B:
            continue
        if all(related(x, y) for x in A for y in B):
            merged = A | B
            for n in merged:
                cluster[n] = merged
        else:
            warnings.append(f"conflicting grouping for ({a}, {b}); kept the tighter family")

    groups = []
    seen = set()
    for n in Y:
        g = cluster[n]
        if g in seen:
            continue
        seen.add(g)
        groups.append(sorted(g, key=_node_key))

    if all(len(g) == 1 for g in groups) and len(Y) >= 3:
        # no family passed the thresholds: force the tightest pair to keep progressing
        a, b = min(stats, key=lambda p: (stats[p].spread, _node_key(p[0]), _node_key(p[1])))
        warnings.append(f"no family within thresholds; forced grouping of ({a}, {b})")
        groups = [g for g in groups if g[0] not in (a, b)] + [sorted([a, b], key=_node_key)]

    result = []
    for g in groups:
        parent = None
        if len(g) >= 2:
            best = None
            for u in g:
                worst = max(st(c, u).child_of_j for c in g if c != u)
                if worst <= eps1 + tol and (best is None or worst < best[0]):
                    best = (worst, u)
            if best is not None:
                parent = best[1]
        result.append((g, parent))
    return result


def recursive_grouping(D: DistanceMatrix, observed=None, cfg: RGConfig | None = None) -> LatentTree:
    """Reconstruct the latent tree over ``observed`` from additive distances."""
    cfg = cfg or RGConfig()
    observed = sorted(D.nodes if observed is None else observed, key=_node_key)
    if any(_is_hidden(n) for n in observed):
        raise GridTreeError("observed ids must not use the hidden prefix 'h'")
    eps1, eps2 = _resolve(D, cfg)
    tol = _tol(D)
    dist = _Dist(D)
    edges = []
    warnings: list[str] = []
    nodes = list(observed)
    n_hidden = 0
    Y = list(observed)

    while len(Y) >= 3:
        groups = _node_grouping(dist, Y, eps1, eps2, tol, cfg.scalarization, warnings)
        Y_old = Y
        Y_new = []
        children = {}
        for g, parent in groups:
            if len(g) == 1:
                Y_new.append(g[0])
            elif parent is not None:
                for c in g:
                    if c != parent:
                        edges.append((parent, c, dist(parent, c)))
                Y_new.append(parent)
            else:
                n_hidden += 1
                h = f"h{n_hidden}"
                nodes.append(h)
                children[h] = g
                Y_new.append(h)

        # distances from each new hidden node to its children
        to_child = {}
        for h, ch in children.items():
            for i in ch:
                js = [j for j in ch if j != i]
                if not cfg.average:
                    js = js[:1]
                vals = []
                for j in js:
                    ks = [k for k in Y_old if k != i and k != j]
                    ph = np.mean([dist(i, k) - dist(j, k) for k in ks])
                    vals.append(hidden_child_distance(dist(i, j), ph))
                to_child[(h, i)] = np.mean(vals)
                edges.append((h, i, to_child[(h, i)]))

        # distances from new hidden nodes to the rest of the new active set
        for h, ch in children.items():
            refs = ch if cfg.average else ch[:1]
            for p in Y_new:
                if p == h or (p in children and (p, h) in dist.d):
                    continue
                vals = []
                for i in refs:
                    if p in children:
                        krefs = children[p] if cfg.average else children[p][:1]
                        for k in krefs:
                            vals.append(hidden_other_distance(
                                to_child[(h, i)], d_ik=dist(i, k), d_pk=to_child[(p, k)]))
                    else:
                        vals.append(hidden_other_distance(to_child[(h, i)], d_ip=dist(i, p)))
                dist.set(h, p, np.mean(vals))

        if len(Y_new) >= len(Y_old):
            raise GridTreeError("recursive grouping made no progress")  # unreachable by construction
        Y = Y_new

    if len(Y) == 2:
        a, b = Y
        edges.append((a, b, dist(a, b)))

    tree = LatentTree(nodes, edges, warnings)
    for w in warnings:
        log.warning(w)
    return tree
