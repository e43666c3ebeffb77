"""Impedance and distance estimation from observed-bus measurements.

Three estimators share one inner-product kernel::

    Z(a, b) = i_b^H v_a / (i_b^H i_b)

* ``plain``: raw current deviations (exact when currents are uncorrelated),
* ``whitened``: Cholesky-whitened currents, ``Z = K W`` (exact when only
  observed currents are correlated),
* ``magnitude``: signed deviations of measured magnitudes (angles discarded).

Distances between observed buses then follow from the shared-path structure of
``Z``: ``d_ab = Z_aa + Z_bb - Z_ab - Z_ba``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError
from .whitening import cholesky_upper, sample_covariance, whiten

COMPLEX = "complex"
MAGNITUDE = "magnitude"

DEAD_COLUMN = 1e-15


@dataclass
class DistanceMatrix:
    """Symmetric pairwise distances over an ordered active set."""

    nodes: list
    d: np.ndarray
    mode: str = COMPLEX
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = list(self.nodes)
        self.d = np.asarray(self.d)
        if self.d.shape != (len(self.nodes), len(self.nodes)):
            raise EstimationError("distance matrix shape does not match its node list")
        self._pos = {n: p for p, n in enumerate(self.nodes)}

    def __getitem__(self, pair):
        a, b = pair
        return self.d[self._pos[a], self._pos[b]]

    def index(self, node) -> int:
        return self._pos[node]

    def is_valid(self, tol: float = 1e-12) -> bool:
        d = self.d
        scale = max(1.0, float(np.max(np.abs(d)))) if d.size else 1.0
        ok = np.allclose(d, d.T, atol=tol * scale) and np.allclose(np.diag(d), 0, atol=tol * scale)
        if self.mode == MAGNITUDE:
            ok = ok and bool(np.all(np.real(d) >= -tol * scale))
        return bool(ok)


@dataclass
class ZEstimate:
    Z: np.ndarray
    nodes: list
    mode: str = "plain"


def _inner_ratio(V: np.ndarray, I: np.ndarray) -> np.ndarray:
    """``R[a, b] = i_b^H v_a / i_b^H i_b`` for real or complex columns."""
    V = np.asarray(V)
    I = np.asarray(I)
    if V.shape != I.shape:
        raise EstimationError(f"V {V.shape} and I {I.shape} do not conform")
    power = np.real(np.einsum("nb,nb->b", I.conj(), I))
    dead = np.flatnonzero(np.abs(power) < DEAD_COLUMN)
    if dead.size:
        raise EstimationError(f"dead injection column(s) at position {dead.tolist()}")
    cross = V.T @ I.conj()  # cross[a, b] = sum_n conj(i_b[n]) v_a[n]
    return cross / power[None, :]


def estimate_z_plain(V_O, I_O, nodes=None) -> ZEstimate:
    """Inner-product estimate of the observed block of ``Z``."""
    V_O = np.asarray(V_O)
    nodes = list(nodes) if nodes is not None else list(range(V_O.shape[1]))
    return ZEstimate(_inner_ratio(V_O, I_O), nodes, "plain")


def estimate_z_whitened(V_O, I_O, nodes=None) -> ZEstimate:
    """Whitened estimate ``Z = K W`` with ``K`` from the whitened currents.

    The result is generally not symmetric.
    """
    V_O = np.asarray(V_O)
    I_O = np.asarray(I_O)
    nodes = list(nodes) if nodes is not None else list(range(V_O.shape[1]))
    pair = cholesky_upper(sample_covariance(I_O), bus_order=nodes)
    K = _inner_ratio(V_O, whiten(I_O, pair.W))
    return ZEstimate(K @ pair.W, nodes, "whitened")


def magnitude_deviations(X) -> np.ndarray:
    """Signed deviation of each column's magnitude from its mean.

    With frozen angles this is the (signed) magnitude of the deviation phasor.
    """
    A = np.abs(np.asarray(X))
    return A - A.mean(axis=0, keepdims=True)


def estimate_z_magnitude(Vm, Im, nodes=None, whitened: bool = False) -> ZEstimate:
    """Estimate ``|Z|`` from magnitude-deviation series ``Vm`` and ``Im``.

    ``Vm`` and ``Im`` are real ``N x |O|`` arrays of signed magnitude
    deviations (see :func:`magnitude_deviations`).  The estimate is the modulus
    of the inner-product ratio; with ``whitened`` the currents are first
    decorrelated and ``|Z| = |K| |W|``.
    """
    Vm = np.asarray(Vm, dtype=float)
    Im = np.asarray(Im, dtype=float)
    nodes = list(nodes) if nodes is not None else list(range(Vm.shape[1]))
    if np.iscomplexobj(Vm) or np.iscomplexobj(Im):
        raise EstimationError("magnitude mode expects real magnitude series")
    if whitened:
        pair = cholesky_upper(sample_covariance(Im), bus_order=nodes)
        W = np.real(pair.W)
        K = _inner_ratio(Vm, whiten(Im, W))
        Z = np.abs(K @ W)
    else:
        Z = np.abs(_inner_ratio(Vm, Im))
    return ZEstimate(Z, nodes, MAGNITUDE)


def distance_from_z(est: ZEstimate, symmetrize: bool = True) -> DistanceMatrix:
    """Pairwise distances from an impedance-matrix estimate.

    With ``symmetrize`` (the default) ``d_ab = Z_aa + Z_bb - Z_ab - Z_ba``.
    Otherwise ``d_ab = Z_aa + Z_bb - 2 Z_ab`` is read from the upper triangle
    and mirrored; the two agree when ``Z`` is symmetric.  Magnitude estimates
    use the moduli of the entries.
    """
    Z = np.asarray(est.Z)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise EstimationError("impedance estimate must be square")
    mode = MAGNITUDE if est.mode == MAGNITUDE else COMPLEX
    if mode == MAGNITUDE:
        Z = np.abs(Z)
    diag = np.diag(Z)
    if symmetrize:
        d = diag[:, None] + diag[None, :] - Z - Z.T
    else:
        upper = np.triu(Z, 1)
        off = upper + upper.T
        d = diag[:, None] + diag[None, :] - 2 * off
    np.fill_diagonal(d, 0)
    return DistanceMatrix(est.nodes, d, mode, {"estimator": est.mode})


def weighted_currents(ratios: np.ndarray, phase_I: np.ndarray, present=None) -> np.ndarray:
    """Equivalent currents ``i'_p = sum_k ratios[p, k] i_k``.

    ``phase_I`` has shape ``(N, L, 4)`` for wires (a, b, c, n); the ground
    current ``i_g = i_a + i_b + i_c + i_n`` is appended internally.
    ``ratios`` is the 5 x 5 matrix of impedance ratios ``z_pk / z_pp`` over
    (a, b, c, n, g).  Returns ``(N, L, 4)``; absent phases give zero columns.
    """
    ratios = np.asarray(ratios, dtype=complex)
    phase_I = np.asarray(phase_I)
    if ratios.shape != (5, 5) or phase_I.ndim != 3 or phase_I.shape[2] != 4:
        raise EstimationError("expected 5x5 ratios and (N, L, 4) phase currents")
    present = np.ones(4, bool) if present is None else np.asarray(present, bool)
    ratios = ratios.copy()
    wire_mask = np.append(present, True)
    ratios[:, ~wire_mask] = 0
    for p in range(4):
        if present[p] and not np.any(ratios[p]):
            raise EstimationError(f"unusable ratio prior for phase {'abcn'[p]}")
    full = np.concatenate([phase_I, phase_I.sum(axis=2, keepdims=True)], axis=2)
    out = np.einsum("pk,nlk->nlp", ratios, full)[:, :, :4]
    out[:, :, ~present] = 0
    return out


def save_distances(D: DistanceMatrix, path, comments=None) -> None:
    """Upper-triangle pairs as CSV ``a,b,d_re,d_im`` (``a,b,d`` in magnitude mode)."""
    mag = D.mode == MAGNITUDE
    with open(path, "w", newline="") as fh:
        for line in comments or ():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "d"] if mag else ["a", "b", "d_re", "d_im"])
        for p, a in enumerate(D.nodes):
            for q in range(p + 1, len(D.nodes)):
                v = D.d[p, q]
                w.writerow([a, D.nodes[q], repr(float(np.real(v)))] if mag
                           else [a, D.nodes[q], repr(float(v.real)), repr(float(v.imag))])


def load_distances(path) -> DistanceMatrix:
    with open(path, newline="") as fh:
        r = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(r, None)
        if header not in (["a", "b", "d"], ["a", "b", "d_re", "d_im"]):
            raise EstimationError(f"unexpected distance header {header}")
        mag = len(header) == 3
        rows = []
        for row in r:
            a, b = int(row[0]), int(row[1])
            v = float(row[2]) if mag else complex(float(row[2]), float(row[3]))
            rows.append((a, b, v))
    nodes = sorted({a for a, _, _ in rows} | {b for _, b, _ in rows})
    pos = {n: p for p, n in enumerate(nodes)}
    d = np.zeros((len(nodes), len(nodes)), dtype=float if mag else complex)
    for a, b, v in rows:
        d[pos[a], pos[b]] = d[pos[b], pos[a]] = v
    return DistanceMatrix(nodes, d, MAGNITUDE if mag else COMPLEX)
