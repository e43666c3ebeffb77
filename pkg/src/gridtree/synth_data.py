"""Synthetic measurement sets for radial grids.

Voltages always follow the linear deviation model ``V^T = Z I^T`` with ``Z`` the
shared-path impedance matrix (injection sign convention, so a load draws a
negative injection).  Three generators are provided:

* ``gaussian``: zero-mean complex Gaussian injections at observed buses,
  optionally cross-correlated;
* ``load_profile``: real-power profiles with random power factors converted to
  currents at a flat nominal voltage, optionally switching between regimes;
* three-phase four-wire feeders (:func:`gen_three_phase`).

Hidden buses never inject current.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridTreeError
from .grid_model import Topology, build_z_paths, edge_impedances, subtree_indicator

MODES = ("gaussian", "load_profile", "three_phase")
PHASES = "abcn"
WIRES = "abcng"


@dataclass
class Regime:
    """One operating regime of a load-profile year."""

    weight: float = 1.0
    pf_range: tuple = (0.85, 0.95)
    load_scale: float = 1.0
    v0: complex = 1.0


@dataclass
class GenSpec:
    """Generation settings.

    ``corr`` is an optional ``|O| x |O|`` Hermitian PSD correlation block (unit
    diagonal) for observed buses, scaled by ``sigma_diag``.
    """

    N: int = 8760
    sigma_diag: float = 0.025
    corr: np.ndarray | None = None
    seed: int = 0
    mode: str = "gaussian"
    v0: complex = 1.0
    pf_range: tuple = (0.85, 0.95)
    regimes: list = field(default_factory=list)
    regime_block: int = 24

    def __post_init__(self):
        if self.mode not in MODES:
            raise GridTreeError(f"unknown generation mode {self.mode!r}")
        if self.N < 1 or self.sigma_diag < 0:
            raise GridTreeError("N must be positive and sigma_diag nonnegative")
        if self.corr is not None:
            self.corr = np.asarray(self.corr, dtype=complex)
        self.regimes = [r if isinstance(r, Regime) else Regime(**r) for r in self.regimes]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["v0"] = [complex(self.v0).real, complex(self.v0).imag]
        if self.corr is not None:
            d["corr"] = {"re": self.corr.real.tolist(), "im": self.corr.imag.tolist()}
        d["regimes"] = [
            {**asdict(r), "v0": [complex(r.v0).real, complex(r.v0).imag]} for r in self.regimes
        ]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GenSpec":
        data = dict(data)
        if "v0" in data:
            data["v0"] = _complex_from_json(data["v0"])
        if data.get("corr") is not None:
            c = data["corr"]
            data["corr"] = (np.asarray(c["re"]) + 1j * np.asarray(c.get("im", 0.0))
                            if isinstance(c, dict) else np.asarray(c))
        regimes = []
        for r in data.get("regimes", []):
            r = dict(r)
            if "v0" in r:
                r["v0"] = _complex_from_json(r["v0"])
            if "pf_range" in r:
                r["pf_range"] = tuple(r["pf_range"])
            regimes.append(Regime(**r))
        data["regimes"] = regimes
        if "pf_range" in data:
            data["pf_range"] = tuple(data["pf_range"])
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _complex_from_json(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1] if len(v) > 1 else 0.0)
    return complex(v)


@dataclass
class MeasurementSet:
    """Centered voltage/current deviations, columns in ``bus_order``.

    ``V_mean``/``I_mean`` hold the removed column means, so ``V + V_mean`` is
    the measured phasor series.  ``q`` (reactive power) and ``regime`` labels
    are attached by the load-profile generator.
    """

    V: np.ndarray
    I: np.ndarray
    bus_order: list
    V_mean: np.ndarray | None = None
    I_mean: np.ndarray | None = None
    q: np.ndarray | None = None
    regime: np.ndarray | None = None

    def __post_init__(self):
        if self.V.shape != self.I.shape or self.V.shape[1] != len(self.bus_order):
            raise GridTreeError("V, I and bus_order do not conform")
        m = self.V.shape[1]
        if self.V_mean is None:
            self.V_mean = np.zeros(m, dtype=complex)
        if self.I_mean is None:
            self.I_mean = np.zeros(m, dtype=complex)

    @property
    def N(self) -> int:
        return self.V.shape[0]

    def columns(self, buses) -> list[int]:
        pos = {b: p for p, b in enumerate(self.bus_order)}
        return [pos[b] for b in buses]

    def observed(self, buses):
        """``(V_O, I_O)`` deviation blocks for ``buses``."""
        idx = self.columns(buses)
        return self.V[:, idx], self.I[:, idx]

    def phasors(self, buses=None):
        idx = self.columns(buses if buses is not None else self.bus_order)
        return self.V[:, idx] + self.V_mean[idx], self.I[:, idx] + self.I_mean[idx]

    def subset(self, rows) -> "MeasurementSet":
        """Rows ``rows`` re-centered on their own means."""
        rows = np.asarray(rows)
        V, I = self.phasors()
        return from_phasors(V[rows], I[rows], self.bus_order,
                            q=None if self.q is None else self.q[rows],
                            regime=None if self.regime is None else self.regime[rows])


def from_phasors(V, I, bus_order, q=None, regime=None) -> MeasurementSet:
    V = np.asarray(V, dtype=complex)
    I = np.asarray(I, dtype=complex)
    Vm, Im = V.mean(axis=0), I.mean(axis=0)
    return MeasurementSet(V - Vm, I - Im, list(bus_order), Vm, Im, q, regime)


# -- building blocks -------------------------------------------------------

def _psd_sqrt(C: np.ndarray) -> np.ndarray:
    """``A`` with ``A^H A = C`` for a Hermitian PSD ``C``."""
    if not np.allclose(C, C.conj().T, atol=1e-12):
        raise GridTreeError("invalid correlation block: not Hermitian")
    w, U = np.linalg.eigh(C)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise GridTreeError("invalid correlation block: not positive semidefinite")
    return np.sqrt(np.clip(w, 0, None))[:, None] * U.conj().T


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def sample_currents(spec: GenSpec, topology: Topology, rng=None) -> np.ndarray:
    """Centered complex Gaussian injections over ``topology.bus_order``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    order = topology.bus_order
    obs = topology.observed
    m = len(obs)
    cov = np.eye(m, dtype=complex)
    if spec.corr is not None:
        if spec.corr.shape != (m, m):
            raise GridTreeError(f"invalid correlation block: expected {m}x{m}")
        cov = spec.corr
    # rows z @ conj(B) with B^H B = C have E[i i^H] = C
    A = np.conj(_psd_sqrt(cov)) * np.sqrt(spec.sigma_diag)
    draws = complex_normal(rng, (spec.N, m)) @ A
    draws -= draws.mean(axis=0, keepdims=True)
    I = np.zeros((spec.N, len(order)), dtype=complex)
    I[:, [order.index(b) for b in obs]] = draws
    return I


def factor_correlation(loadings, phases=None) -> np.ndarray:
    """One-factor correlation block ``rho_ab = sqrt(l_a l_b) e^{j(t_a - t_b)}``.

    Gives ``|rho_ab| = sqrt(l_a l_b)`` with unit diagonal; PSD by construction.
    """
    l = np.sqrt(np.asarray(loadings, dtype=float))
    u = l * (np.exp(1j * np.asarray(phases)) if phases is not None else 1.0)
    C = np.outer(u.conj(), u)
    np.fill_diagonal(C, 1.0)
    return C


def reactive_power(p, pf):
    p = np.asarray(p, dtype=float)
    pf = np.asarray(pf, dtype=float)
    return p * np.sqrt(1 - pf ** 2) / pf


def loads_to_currents(p, pf_range=(0.85, 0.95), v0: complex = 1.0, seed=None, pf=None):
    """Load currents ``conj(s / v0)`` for real power ``p`` and random power factors.

    ``pf`` may be given to bypass the draw.  Returns ``(currents, q)``.
    """
    p = np.asarray(p, dtype=float)
    lo, hi = pf_range
    if not (0 < lo <= hi <= 1):
        raise GridTreeError("pf_range must lie within (0, 1]")
    if np.any(p < 0):
        raise GridTreeError("real power must be nonnegative")
    if abs(v0) == 0:
        raise GridTreeError("nominal voltage must be nonzero")
    if pf is None:
        pf = np.random.default_rng(seed).uniform(lo, hi, size=p.shape)
    q = reactive_power(p, pf)
    return np.conj((p + 1j * q) / v0), q


def compute_voltages(Z: np.ndarray, I: np.ndarray) -> np.ndarray:
    """Row-wise ``v = Z i`` for an ``N x m`` current matrix."""
    Z = np.asarray(Z)
    I = np.asarray(I)
    if Z.shape != (I.shape[1], I.shape[1]):
        raise GridTreeError(f"dimension mismatch: Z {Z.shape} vs I {I.shape}")
    return I @ Z.T


# -- generators ------------------------------------------------------------

def gen_gaussian(spec: GenSpec, topology: Topology) -> MeasurementSet:
    I = sample_currents(spec, topology)
    V = compute_voltages(build_z_paths(topology), I)
    return MeasurementSet(V, I, topology.bus_order)


def daily_profile(N: int, n_buses: int, rng: np.random.Generator) -> np.ndarray:
    """Nonnegative hourly real-power profiles with a daily cycle and noise."""
    t = np.arange(N)[:, None]
    base = rng.uniform(0.5, 1.5, size=n_buses)
    phase = rng.uniform(0, 2 * np.pi, size=n_buses)
    cycle = 1 + 0.3 * np.sin(2 * np.pi * t / 24 + phase)
    noise = rng.gamma(4.0, 0.25, size=(N, n_buses))
    return base * cycle * noise


def gen_load_profile(spec: GenSpec, topology: Topology, p=None) -> MeasurementSet:
    """Flat-voltage load-flow dataset from real-power profiles.

    Time is cut into blocks of ``regime_block`` slots, each assigned a regime
    drawn by weight; a regime scales the loads, sets the power-factor range and
    the substation voltage.  Without regimes ``spec.pf_range`` and ``spec.v0``
    apply throughout.
    """
    rng = np.random.default_rng(spec.seed)
    order = topology.bus_order
    obs = topology.observed
    if p is None:
        p = daily_profile(spec.N, len(obs), rng)
    p = np.asarray(p, dtype=float)
    if p.shape != (spec.N, len(obs)):
        raise GridTreeError(f"profile must be {spec.N} x {len(obs)}")
    regimes = spec.regimes or [Regime(1.0, spec.pf_range, 1.0, spec.v0)]
    w = np.array([r.weight for r in regimes], dtype=float)
    n_blocks = -(-spec.N // spec.regime_block)
    labels = np.repeat(rng.choice(len(regimes), size=n_blocks, p=w / w.sum()),
                       spec.regime_block)[: spec.N]
    I_load = np.zeros((spec.N, len(obs)), dtype=complex)
    q = np.zeros((spec.N, len(obs)))
    v0 = np.zeros(spec.N, dtype=complex)
    for r_id, reg in enumerate(regimes):
        rows = labels == r_id
        if not rows.any():
            continue
        pr = p[rows] * reg.load_scale
        pf = rng.uniform(*reg.pf_range, size=pr.shape)
        I_load[rows], q[rows] = loads_to_currents(pr, reg.pf_range, reg.v0, pf=pf)
        v0[rows] = reg.v0
    I = np.zeros((spec.N, len(order)), dtype=complex)
    cols = [order.index(b) for b in obs]
    I[:, cols] = -I_load
    V = v0[:, None] + compute_voltages(build_z_paths(topology), I)
    q_all = np.zeros((spec.N, len(order)))
    q_all[:, cols] = q
    return from_phasors(V, I, order, q=q_all, regime=labels)


def generate(spec: GenSpec, topology: Topology) -> MeasurementSet:
    if spec.mode == "gaussian":
        return gen_gaussian(spec, topology)
    if spec.mode == "load_profile":
        return gen_load_profile(spec, topology)
    raise GridTreeError("three-phase data is produced by gen_three_phase")


# -- three-phase four-wire -------------------------------------------------

@dataclass
class FourWireSpec:
    """Per-unit four-wire line model shared by every line.

    The 5 x 5 block of line ``e`` over wires (a, b, c, n, g) is
    ``z_e * self_scale[p] * ratios[p, k]``, so ``ratios[p, k] = z_pk / z_pp``
    holds on every line.  Absent wires have zero rows and columns.
    ``phase_scale`` sets the standard deviation of each phase's injections and
    ``neutral_return`` the share of the phase currents returning on the neutral.
    """

    ratios: np.ndarray = field(default_factory=lambda: np.eye(5, dtype=complex))
    self_scale: np.ndarray = field(default_factory=lambda: np.ones(5))
    present: np.ndarray = field(default_factory=lambda: np.ones(4, bool))
    phase_scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    neutral_return: float = 0.8

    def __post_init__(self):
        self.ratios = np.array(self.ratios, dtype=complex)
        self.self_scale = np.asarray(self.self_scale, dtype=float)
        self.present = np.asarray(self.present, dtype=bool)
        self.phase_scale = np.asarray(self.phase_scale, dtype=float)
        if self.ratios.shape != (5, 5) or self.self_scale.shape != (5,) or self.present.shape != (4,):
            raise GridTreeError("four-wire spec needs 5x5 ratios, 5 self scales and 4 presence flags")
        mask = self.wire_mask
        self.ratios[:, ~mask] = 0
        self.ratios[~mask, :] = 0
        for p in np.flatnonzero(mask):
            if abs(self.ratios[p, p] - 1) > 1e-12:
                raise GridTreeError(f"ratio prior for wire {WIRES[p]} must have unit diagonal")

    @property
    def wire_mask(self) -> np.ndarray:
        return np.append(self.present, True)

    def block(self, z: complex) -> np.ndarray:
        B = z * self.self_scale[:, None] * self.ratios
        live = np.flatnonzero(self.wire_mask)
        sub = B[np.ix_(live, live)]
        if np.linalg.cond(sub) > 1e12:
            raise GridTreeError("singular four-wire impedance block")
        return B

    @classmethod
    def from_dict(cls, data: dict) -> "FourWireSpec":
        data = dict(data)
        r = data.get("ratios")
        if isinstance(r, dict):
            data["ratios"] = np.asarray(r["re"]) + 1j * np.asarray(r.get("im", 0.0))
        return cls(**data)


@dataclass
class ThreePhaseSet:
    """Raw wire currents ``I[n, bus, a|b|c|n]`` and wire-to-ground voltages
    ``V[n, bus, a|b|c|n|g]``."""

    V: np.ndarray
    I: np.ndarray
    bus_order: list

    def phase(self, p: str) -> MeasurementSet:
        k = WIRES.index(p)
        return MeasurementSet(self.V[:, :, k], self.I[:, :, k], self.bus_order)


def gen_three_phase(fw: FourWireSpec, topology: Topology, gen: GenSpec) -> ThreePhaseSet:
    """Unbalanced four-wire measurements on a radial feeder.

    Phase injections at observed buses are independent complex Gaussians with
    variance ``sigma_diag * phase_scale**2``; the neutral carries
    ``-neutral_return`` times their sum and the ground the remainder.  Each line
    drops ``block(z_e) @ [j_a, j_b, j_c, j_n, j_g]`` where ``j`` are the wire
    currents through the line.
    """
    rng = np.random.default_rng(gen.seed)
    order = topology.bus_order
    obs = topology.observed
    cols = [order.index(b) for b in obs]
    N, L = gen.N, len(order)
    I = np.zeros((N, L, 4), dtype=complex)
    for p in range(3):
        if not fw.present[p]:
            continue
        d = complex_normal(rng, (N, len(obs))) * np.sqrt(gen.sigma_diag) * fw.phase_scale[p]
        I[:, cols, p] = d - d.mean(axis=0, keepdims=True)
    if fw.present[3]:
        I[:, :, 3] = -fw.neutral_return * I[:, :, :3].sum(axis=2)
    wires = np.concatenate([I, I.sum(axis=2, keepdims=True)], axis=2)  # (N, L, 5)
    S = subtree_indicator(topology)  # S[e, bus]
    z = edge_impedances(topology)
    blocks = np.stack([fw.block(ze) for ze in z])  # (E, 5, 5)
    J = np.einsum("eb,nbk->nek", S, wires)  # wire currents through each line
    drop = np.einsum("epk,nek->nep", blocks, J)
    V = np.einsum("eb,nep->nbp", S, drop)
    return ThreePhaseSet(V, I, order)


# -- files -----------------------------------------------------------------

CSV_HEADER = ["t", "bus", "v_re", "v_im", "i_re", "i_im"]
THREE_PHASE_HEADER = ["t", "bus", "wire", "v_re", "v_im", "i_re", "i_im"]


def _write_comments(fh, comments):
    for line in comments or ():
        fh.write(f"# {line}\n")


def _num_pair(x) -> tuple[str, str]:
    # repr of a plain float round-trips exactly
    return repr(float(x.real)), repr(float(x.imag))


def _data_rows(fh):
    return csv.reader(line for line in fh if not line.startswith("#"))


def save_measurements(ms: MeasurementSet, path, buses=None, comments=None) -> None:
    """Write measured phasors (deviation plus mean) as long-format CSV.

    A ``q`` column is added when reactive power is attached.  ``comments`` are
    written first as ``#`` lines.
    """
    buses = list(ms.bus_order if buses is None else buses)
    V, I = ms.phasors(buses)
    q = None if ms.q is None else ms.q[:, ms.columns(buses)]
    with open(path, "w", newline="") as fh:
        _write_comments(fh, comments)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER + ([] if q is None else ["q"]))
        for t in range(ms.N):
            for c, b in enumerate(buses):
                v, i = V[t, c], I[t, c]
                row = [t, b, *_num_pair(v), *_num_pair(i)]
                if q is not None:
                    row.append(repr(float(q[t, c])))
                w.writerow(row)


def load_measurements(path) -> MeasurementSet:
    with open(path, newline="") as fh:
        r = _data_rows(fh)
        header = next(r, None)
        if header not in (CSV_HEADER, CSV_HEADER + ["q"]):
            raise GridTreeError(f"unexpected measurement header {header}")
        has_q = len(header) == 7
        rows = []
        for line_no, row in enumerate(r, 2):
            try:
                rows.append((int(row[0]), int(row[1]), *map(float, row[2:])))
            except (ValueError, IndexError) as exc:
                raise GridTreeError(f"{path}: bad measurement row {line_no}: {exc}") from exc
    buses = sorted({row[1] for row in rows})
    times = sorted({row[0] for row in rows})
    if times != list(range(len(times))):
        raise GridTreeError("measurement time indices must run 0..N-1")
    pos = {b: p for p, b in enumerate(buses)}
    V = np.zeros((len(times), len(buses)), dtype=complex)
    I = np.zeros_like(V)
    q = np.zeros(V.shape) if has_q else None
    for row in rows:
        t, c = row[0], pos[row[1]]
        V[t, c] = complex(row[2], row[3])
        I[t, c] = complex(row[4], row[5])
        if has_q:
            q[t, c] = row[6]
    return from_phasors(V, I, buses, q=q)


def save_three_phase(ts: ThreePhaseSet, path, buses=None, comments=None) -> None:
    """Per-wire long-format CSV of wire voltages and injections (wires a, b, c, n)."""
    buses = list(ts.bus_order if buses is None else buses)
    cols = [ts.bus_order.index(b) for b in buses]
    with open(path, "w", newline="") as fh:
        _write_comments(fh, comments)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(THREE_PHASE_HEADER)
        for t in range(ts.V.shape[0]):
            for b, c in zip(buses, cols):
                for k, wire in enumerate(PHASES):
                    v, i = ts.V[t, c, k], ts.I[t, c, k]
                    w.writerow([t, b, wire, *_num_pair(v), *_num_pair(i)])


def load_three_phase(path) -> ThreePhaseSet:
    with open(path, newline="") as fh:
        r = _data_rows(fh)
        if next(r, None) != THREE_PHASE_HEADER:
            raise GridTreeError("unexpected three-phase header")
        rows = [(int(t), int(b), PHASES.index(wire), complex(float(vr), float(vi)),
                 complex(float(ir), float(ii))) for t, b, wire, vr, vi, ir, ii in r]
    buses = sorted({row[1] for row in rows})
    n = max(row[0] for row in rows) + 1 if rows else 0
    pos = {b: p for p, b in enumerate(buses)}
    V = np.zeros((n, len(buses), 5), dtype=complex)
    I = np.zeros((n, len(buses), 4), dtype=complex)
    for t, b, k, v, i in rows:
        V[t, pos[b], k] = v
        I[t, pos[b], k] = i
    return ThreePhaseSet(V, I, buses)
