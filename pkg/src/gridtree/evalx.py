"""Scoring reconstructions and estimates against ground truth."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grid_model import HIDDEN, OBSERVED, Topology, build_z_paths
from .impedance_est import MAGNITUDE, DistanceMatrix
from .rg_learn import LatentTree

UNDEFINED_BELOW = 1e-12


@dataclass
class EvalReport:
    topology_exact: bool
    edge_f1: float
    distance_errors: dict = field(default_factory=dict)
    correlation_cdf: list = field(default_factory=list)
    runtime_ms: float = 0.0
    edge_distance_max_error: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path, extra: dict | None = None) -> None:
        doc = {**(extra or {}), **self.to_dict()}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def latent_truth(topology: Topology, magnitude: bool = False) -> LatentTree:
    """The tree recoverable from observed-bus distances.

    The slack bus carries no data, so it is treated like a hidden junction;
    unobserved leaves are pruned and unobserved degree-2 nodes contracted.
    With ``magnitude`` the edge weights are the increments of ``|Z_aa|`` along
    the tree, which is the metric the magnitude-only distances realize.
    """
    roles = {n: (r if r == OBSERVED else HIDDEN) for n, r in topology.roles.items()}
    edges = topology.edges
    if magnitude:
        parent = topology.parents()
        Z = build_z_paths(topology)
        depth = {n: abs(Z[p, p]) for p, n in enumerate(topology.bus_order)}
        depth[topology.slack] = 0.0
        edges = [(parent[n][0], n, complex(depth[n] - depth[parent[n][0]]))
                 for n in topology.bus_order]
    red = Topology(roles, edges).contract()
    out_edges = [(i, k, z.real if magnitude else z) for i, k, z in red.edges]
    return LatentTree(red.nodes, out_edges, hidden=red.hidden)


def _rooted_signatures(tree: LatentTree, root) -> dict:
    """Observed nodes in the subtree of every node, with the tree rooted at ``root``."""
    adj = tree.adjacency()
    hidden = set(tree.hidden)
    order, parent = [], {root: None}
    stack = [root]
    while stack:
        u = stack.pop()
        order.append(u)
        for v in adj[u]:
            if v not in parent:
                parent[v] = u
                stack.append(v)
    sig = {}
    for u in reversed(order):
        s = set() if u in hidden else {u}
        for v in adj[u]:
            if parent.get(v) == u:
                s |= sig[v]
        sig[u] = frozenset(s)
    return sig


def _edge_key(u, v):
    return frozenset((u, v))


def tree_match(recovered: LatentTree, truth) -> tuple[bool, float, dict]:
    """Compare a reconstruction with the truth up to hidden-node relabeling.

    ``truth`` is a :class:`Topology` (projected with :func:`latent_truth`) or an
    already projected :class:`LatentTree`.  Hidden nodes are matched by the set
    of observed nodes below them (both trees rooted at the smallest observed
    id), then greedily by overlap of those sets.  Returns
    ``(exact, edge_f1, mapping)`` with ``mapping`` from recovered hidden ids to
    truth hidden ids.
    """
    if isinstance(truth, Topology):
        truth = latent_truth(truth)
    obs_t = set(truth.observed)
    if set(recovered.observed) != obs_t or not obs_t:
        return False, 0.0, {}
    root = min(obs_t)
    sig_r = _rooted_signatures(recovered, root) if recovered.is_tree() else {}
    sig_t = _rooted_signatures(truth, root)
    by_sig: dict = {}
    for n in truth.hidden:
        by_sig.setdefault(sig_t[n], []).append(n)
    mapping, unmatched = {}, []
    for h in sorted(recovered.hidden, key=str):
        free = [c for c in by_sig.get(sig_r.get(h), []) if c not in mapping.values()]
        if free:
            mapping[h] = free[0]
        else:
            unmatched.append(h)
    for h in unmatched:
        sr = sig_r.get(h, frozenset())
        best, best_score = None, -1.0
        for c in sorted(truth.hidden, key=str):
            if c in mapping.values():
                continue
            st = sig_t[c]
            score = len(sr & st) / max(1, len(sr | st))
            if score > best_score:
                best, best_score = c, score
        if best is not None:
            mapping[h] = best

    def rel(n):
        return mapping.get(n, ("unmatched", n)) if n in set(recovered.hidden) else n

    e_r = {_edge_key(rel(u), rel(v)) for u, v, _ in recovered.edges}
    e_t = {_edge_key(u, v) for u, v, _ in truth.edges}
    tp = len(e_r & e_t)
    prec = tp / len(e_r) if e_r else 0.0
    recall = tp / len(e_t) if e_t else 0.0
    f1 = 2 * prec * recall / (prec + recall) if tp else 0.0
    exact = e_r == e_t and len(recovered.nodes) == len(truth.nodes)
    return exact, float(f1), mapping


def edge_distance_error(recovered: LatentTree, truth: LatentTree, mapping: dict) -> float:
    """Largest absolute difference between matched edge distances."""
    tw = {_edge_key(u, v): w for u, v, w in truth.edges}
    worst = 0.0
    for u, v, w in recovered.edges:
        key = _edge_key(mapping.get(u, u), mapping.get(v, v))
        if key not in tw:
            return float("inf")
        worst = max(worst, abs(complex(w) - complex(tw[key])))
    return worst


def distance_error(D_hat: DistanceMatrix, D_true: DistanceMatrix) -> dict:
    """Per-pair percentage errors of the real and imaginary parts.

    Entries whose true part is below ``1e-12`` in magnitude are reported as
    ``None`` and excluded from the summary statistics.  Magnitude-mode tables
    have a single ``abs`` column.
    """
    if list(D_hat.nodes) != list(D_true.nodes):
        raise ValueError("distance matrices cover different node sets")
    nodes = D_hat.nodes
    parts = ("abs",) if D_hat.mode == MAGNITUDE or D_true.mode == MAGNITUDE else ("real", "imag")
    rows = []
    for a in range(len(nodes)):
        for b in range(a + 1, len(nodes)):
            row = {"a": nodes[a], "b": nodes[b]}
            for part in parts:
                est, tru = _part(D_hat.d[a, b], part), _part(D_true.d[a, b], part)
                row[part] = None if abs(tru) < UNDEFINED_BELOW else 100.0 * abs(est - tru) / abs(tru)
            rows.append(row)
    summary = {}
    for part in parts:
        vals = [r[part] for r in rows if r[part] is not None]
        summary[f"mean_{part}"] = float(np.mean(vals)) if vals else None
        summary[f"max_{part}"] = float(np.max(vals)) if vals else None
    return {"pairs": rows, "summary": summary}


def _part(x, part):
    if part == "real":
        return float(np.real(x))
    if part == "imag":
        return float(np.imag(x))
    return float(np.abs(x))


def correlation_cdf(I_O) -> list:
    """Sorted moduli of pairwise complex correlation coefficients.

    Pairs involving a constant column are ``None`` and sorted to the end.
    """
    I = np.asarray(I_O)
    if I.shape[1] < 2:
        raise ValueError("need at least two columns")
    X = I - I.mean(axis=0, keepdims=True)
    norms = np.sqrt(np.real(np.einsum("nb,nb->b", X.conj(), X)))
    G = X.conj().T @ X
    vals, undefined = [], 0
    for a in range(I.shape[1]):
        for b in range(a + 1, I.shape[1]):
            if norms[a] < UNDEFINED_BELOW or norms[b] < UNDEFINED_BELOW:
                undefined += 1
                continue
            vals.append(float(min(1.0, abs(G[a, b]) / (norms[a] * norms[b]))))
    return sorted(vals) + [None] * undefined


def _comments(fh, comments):
    for line in comments or ():
        fh.write(f"# {line}\n")


def write_error_csv(errors: dict, path, comments=None) -> None:
    rows = errors["pairs"]
    with open(path, "w", newline="") as fh:
        _comments(fh, comments)
        if not rows:
            fh.write("a,b\n")
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("undefined" if v is None else v) for k, v in r.items()})


def write_cdf_csv(values: list, path, comments=None) -> None:
    defined = [v for v in values if v is not None]
    with open(path, "w", newline="") as fh:
        _comments(fh, comments)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["abs_rho", "cdf"])
        for p, v in enumerate(defined, 1):
            w.writerow([repr(v), repr(p / len(defined))])
