"""Command-line driver: generate, select, estimate, reconstruct, evaluate.

Every stage can be run on its own (reading the previous stage's files from the
output directory) or chained with ``pipeline``.  ``bench`` sweeps a grid of
tree sizes, hidden fractions, modes and seeds.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, check_consistency, load_config
from .errors import GridTreeError, StageError, WhiteningError
from .evalx import (
    EvalReport,
    correlation_cdf,
    distance_error,
    edge_distance_error,
    latent_truth,
    tree_match,
    write_cdf_csv,
    write_error_csv,
)
from .grid_model import Topology, build_z_paths, load_topology, random_radial_tree
from .impedance_est import (
    DistanceMatrix,
    ZEstimate,
    distance_from_z,
    estimate_z_magnitude,
    estimate_z_plain,
    estimate_z_whitened,
    load_distances,
    magnitude_deviations,
    save_distances,
    weighted_currents,
)
from .rg_learn import LatentTree, RGConfig, recursive_grouping
from .selection import auto_lambda, embed, kmeans, min_cluster_size, select_cluster
from .synth_data import (
    FourWireSpec,
    GenSpec,
    MeasurementSet,
    ThreePhaseSet,
    factor_correlation,
    gen_three_phase,
    generate,
    load_measurements,
    load_three_phase,
    save_measurements,
    save_three_phase,
)

log = logging.getLogger("gridtree")

MEASUREMENTS = "measurements.csv"
THREE_PHASE = "three_phase.csv"


def _stage(name):
    """Tag errors raised inside a stage with its name."""

    def wrap(fn):
        def run(*args, **kw):
            try:
                return fn(*args, **kw)
            except StageError:
                raise
            except WhiteningError as exc:
                raise StageError("whiten", exc) from exc
            except (GridTreeError, OSError, np.linalg.LinAlgError) as exc:
                raise StageError(name, exc) from exc

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


def _dump(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- stages ----------------------------------------------------------------

@_stage("topology")
def make_topology(cfg: RunConfig) -> Topology:
    t = cfg["topology"]
    if isinstance(t, str):
        topo = load_topology(cfg.resolve_path(t))
    else:
        topo = random_radial_tree(
            t["n_nodes"],
            np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])),
            hidden_fraction=t["hidden_fraction"],
            r_range=tuple(t["r_range"]),
            x_range=tuple(t["x_range"]),
            xr_range=tuple(t["xr_range"]) if t.get("xr_range") else None,
            feeder_head=t["feeder_head"],
        )
    topo.validate(require_identifiable=False)
    return topo


def gen_spec(cfg: RunConfig, topo: Topology) -> GenSpec:
    g = dict(cfg["gen"])
    corr = g.pop("correlation", None)
    spec = GenSpec.from_dict({**g, "seed": cfg.seed})
    if corr is not None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
        m = len(topo.observed)
        spread = corr.get("phase_spread", 0.0)
        spec.corr = factor_correlation(rng.uniform(*corr["loadings"], size=m),
                                       rng.uniform(-spread, spread, size=m))
    return spec


def four_wire(cfg: RunConfig) -> FourWireSpec:
    fw = cfg["four_wire"]
    if isinstance(fw, str):
        fw = json.loads(cfg.resolve_path(fw).read_text())
    return FourWireSpec.from_dict(fw)


@_stage("gen")
def make_data(cfg: RunConfig, topo: Topology):
    spec = gen_spec(cfg, topo)
    if cfg.mode == "three_phase":
        return gen_three_phase(four_wire(cfg), topo, spec)
    return generate(spec, topo)


@dataclass
class Selection:
    rows: np.ndarray
    clustering: object = None
    lam: float | None = None
    cluster: int | None = None


@_stage("select")
def select_rows(cfg: RunConfig, ms: MeasurementSet, observed) -> Selection:
    s = cfg["selection"]
    if not s["enabled"]:
        return Selection(np.arange(ms.N))
    if ms.q is None:
        raise GridTreeError("selection needs reactive power data")
    V, _ = ms.phasors(observed)
    q = ms.q[:, ms.columns(observed)]
    lam = s["lam"] if s["lam"] is not None else auto_lambda(np.abs(V), q - q.mean(axis=0))
    points = embed(np.abs(V), q, lam)
    seed = cfg.seed if s["seed"] is None else s["seed"]
    cl = kmeans(points, s["k"], seed, s["max_iter"])
    query = points[s["query"]]
    rows = select_cluster(cl, query, min_cluster_size(len(observed)))
    return Selection(rows, cl, lam, cl.nearest(query.z))


@_stage("estimate")
def estimate(cfg: RunConfig, data, observed, rows=None) -> tuple[ZEstimate, DistanceMatrix, np.ndarray]:
    """Distances among ``observed`` plus the current block used for them."""
    est_cfg = cfg["estimator"]
    if isinstance(data, ThreePhaseSet):
        fw = four_wire(cfg)
        p = "abc".index(cfg["phase"])
        cols = [data.bus_order.index(b) for b in observed]
        I = weighted_currents(fw.ratios, data.I[:, cols, :], fw.present)[:, :, p]
        V = data.V[:, cols, p]
        if rows is not None:
            V, I = V[rows], I[rows]
        V = V - V.mean(axis=0)
        I = I - I.mean(axis=0)
        fn = estimate_z_whitened if est_cfg["three_phase_base"] == "whitened" else estimate_z_plain
        z = fn(V, I, observed)
    else:
        ms = data if rows is None else data.subset(rows)
        if cfg.mode == "magnitude":
            Vp, Ip = ms.phasors(observed)
            I = magnitude_deviations(Ip)
            z = estimate_z_magnitude(magnitude_deviations(Vp), I, observed,
                                     whitened=est_cfg["magnitude_whitened"])
        else:
            V, I = ms.observed(observed)
            fn = estimate_z_whitened if cfg.mode == "whitened" else estimate_z_plain
            z = fn(V, I, observed)
    return z, distance_from_z(z, symmetrize=est_cfg["symmetrize"]), I


@_stage("reconstruct")
def reconstruct(cfg: RunConfig, D: DistanceMatrix) -> LatentTree:
    return recursive_grouping(D, cfg=RGConfig(**cfg["rg"]))


def _truth_scale(cfg: RunConfig) -> float:
    if cfg.mode != "three_phase":
        return 1.0
    return float(four_wire(cfg).self_scale["abc".index(cfg["phase"])])


def true_distances(topo: Topology, observed, magnitude=False, scale=1.0) -> DistanceMatrix:
    Z = build_z_paths(topo)
    idx = [topo.bus_order.index(b) for b in observed]
    block = scale * Z[np.ix_(idx, idx)]
    mode = "magnitude" if magnitude else "plain"
    return distance_from_z(ZEstimate(block, list(observed), mode))


@_stage("evaluate")
def evaluate(cfg: RunConfig, topo: Topology, tree: LatentTree, D: DistanceMatrix, I_used,
             runtime_ms: float = 0.0) -> EvalReport:
    magnitude = cfg.mode == "magnitude"
    scale = _truth_scale(cfg)
    truth = latent_truth(topo, magnitude=magnitude)
    if scale != 1.0:
        truth = LatentTree(truth.nodes, [(u, v, scale * w) for u, v, w in truth.edges],
                           hidden=truth.hidden)
    exact, f1, mapping = tree_match(tree, truth)
    errs = distance_error(D, true_distances(topo, D.nodes, magnitude, scale))
    edge_err = edge_distance_error(tree, truth, mapping) if exact else None
    cdf = correlation_cdf(I_used) if np.asarray(I_used).shape[1] >= 2 else []
    return EvalReport(exact, f1, errs, cdf, runtime_ms if cfg["record_runtime"] else 0.0, edge_err)


# -- pipeline --------------------------------------------------------------

@dataclass
class PipelineResult:
    topology: Topology
    data: object
    selection: Selection
    estimate: ZEstimate
    distances: DistanceMatrix
    tree: LatentTree
    report: EvalReport


def run_pipeline(cfg: RunConfig, topo: Topology | None = None, data=None) -> PipelineResult:
    """All stages in memory; pass ``topo``/``data`` to skip generation."""
    t0 = time.perf_counter()
    topo = make_topology(cfg) if topo is None else topo
    data = make_data(cfg, topo) if data is None else data
    observed = topo.observed
    sel = (select_rows(cfg, data, observed) if isinstance(data, MeasurementSet)
           else Selection(np.arange(data.V.shape[0])))
    rows = sel.rows if cfg["selection"]["enabled"] else None
    z, D, I_used = estimate(cfg, data, observed, rows)
    tree = reconstruct(cfg, D)
    runtime = 1000.0 * (time.perf_counter() - t0)
    report = evaluate(cfg, topo, tree, D, I_used, runtime)
    return PipelineResult(topo, data, sel, z, D, tree, report)


# -- file-level commands ---------------------------------------------------

def _prepare_out(cfg: RunConfig) -> Path:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("output", exc) from exc
    return cfg.out


def write_topology(cfg, topo):
    _dump(cfg.out / "topology.json", {"provenance": cfg.provenance(), **topo.to_dict()})


def write_data(cfg, topo, data, spec_digest=None):
    out = cfg.out
    if isinstance(data, ThreePhaseSet):
        save_three_phase(data, out / THREE_PHASE, topo.observed, cfg.comments())
        n = data.V.shape[0]
    else:
        save_measurements(data, out / MEASUREMENTS, topo.observed, cfg.comments())
        n = data.N
    _dump(out / "gen.json", {
        "provenance": cfg.provenance(),
        "gen": cfg["gen"],
        "gen_digest": spec_digest,
        "samples": n,
        "observed": topo.observed,
    })


def write_selection(cfg, sel: Selection):
    if sel.clustering is not None:
        sel.clustering.save_csv(cfg.out / "clusters.csv")
        _prepend_comments(cfg.out / "clusters.csv", cfg.comments())
    _dump(cfg.out / "selection.json", {
        "provenance": cfg.provenance(),
        "enabled": cfg["selection"]["enabled"],
        "lam": sel.lam,
        "k": cfg["selection"]["k"],
        "cluster": sel.cluster,
        "rows": [int(r) for r in sel.rows] if cfg["selection"]["enabled"] else None,
        "size": int(len(sel.rows)),
    })


def _prepend_comments(path: Path, comments):
    body = path.read_text()
    path.write_text("".join(f"# {c}\n" for c in comments) + body)


def write_estimate(cfg, z: ZEstimate, D: DistanceMatrix):
    save_distances(D, cfg.out / "distances.csv", cfg.comments())
    _dump(cfg.out / "estimate.json", {"provenance": cfg.provenance(), "mode": cfg.mode,
                                      "estimator": z.mode, "nodes": list(D.nodes)})


def write_tree(cfg, tree: LatentTree):
    _dump(cfg.out / "tree.json", {"provenance": cfg.provenance(), **tree.to_dict()})
    (cfg.out / "tree.dot").write_text(f"// config_hash={cfg.digest()} seed={cfg.seed}\n" + tree.to_dot())


def write_report(cfg, report: EvalReport):
    report.save(cfg.out / "report.json", {"provenance": cfg.provenance(), "mode": cfg.mode})
    write_error_csv(report.distance_errors, cfg.out / "errors.csv", cfg.comments())
    write_cdf_csv(report.correlation_cdf, cfg.out / "cdf.csv", cfg.comments())


def _read_data(cfg):
    if cfg.mode == "three_phase":
        return load_three_phase(cfg.out / THREE_PHASE)
    return load_measurements(cfg.out / MEASUREMENTS)


def _read_rows(cfg):
    if not cfg["selection"]["enabled"]:
        return None
    doc = json.loads((cfg.out / "selection.json").read_text())
    return np.asarray(doc["rows"], dtype=int)


def cmd_gen(cfg: RunConfig) -> int:
    _prepare_out(cfg)
    topo = make_topology(cfg)
    data = make_data(cfg, topo)
    write_topology(cfg, topo)
    write_data(cfg, topo, data, gen_spec(cfg, topo).digest())
    return 0


def cmd_select(cfg: RunConfig) -> int:
    ms = _wrap("select", _read_data, cfg)
    if not isinstance(ms, MeasurementSet):
        raise StageError("select", "selection applies to single-phase data")
    write_selection(cfg, select_rows(cfg, ms, ms.bus_order))
    return 0


def cmd_estimate(cfg: RunConfig) -> int:
    data = _wrap("estimate", _read_data, cfg)
    rows = _wrap("estimate", _read_rows, cfg)
    z, D, _ = estimate(cfg, data, data.bus_order, rows)
    write_estimate(cfg, z, D)
    return 0


def cmd_reconstruct(cfg: RunConfig) -> int:
    D = _wrap("reconstruct", load_distances, cfg.out / "distances.csv")
    write_tree(cfg, reconstruct(cfg, D))
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    def read():
        topo = load_topology(cfg.out / "topology.json")
        tree = LatentTree.from_dict(json.loads((cfg.out / "tree.json").read_text()))
        return topo, tree, load_distances(cfg.out / "distances.csv")

    topo, tree, D = _wrap("evaluate", read)
    data = _wrap("evaluate", _read_data, cfg)
    rows = _wrap("evaluate", _read_rows, cfg)
    _, _, I_used = estimate(cfg, data, data.bus_order, rows)
    write_report(cfg, evaluate(cfg, topo, tree, D, I_used))
    return 0


def cmd_pipeline(cfg: RunConfig) -> int:
    _prepare_out(cfg)
    res = run_pipeline(cfg)
    write_topology(cfg, res.topology)
    write_data(cfg, res.topology, res.data, gen_spec(cfg, res.topology).digest())
    if cfg["selection"]["enabled"]:
        write_selection(cfg, res.selection)
    write_estimate(cfg, res.estimate, res.distances)
    write_tree(cfg, res.tree)
    write_report(cfg, res.report)
    return 0


BENCH_FIELDS = ["n_nodes", "hidden_fraction", "mode", "seed", "exact", "edge_f1",
                "mean_real", "mean_imag", "mean_abs", "runtime_ms", "error"]


def run_bench(cfg: RunConfig) -> tuple[list[dict], list[dict]]:
    b = cfg["bench"]
    rows = []
    for n in b["sizes"]:
        for hf in b["hidden_fractions"]:
            for mode in b["modes"]:
                for seed in b["seeds"]:
                    rows.append(_bench_row(cfg, n, hf, mode, seed))
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["n_nodes"], r["hidden_fraction"], r["mode"]), []).append(r)
    summary = []
    for (n, hf, mode), rs in groups.items():
        ok = [r for r in rs if not r["error"]]

        def mean(key):
            vals = [r[key] for r in ok if r[key] is not None]
            return float(np.mean(vals)) if vals else None

        summary.append({
            "n_nodes": n, "hidden_fraction": hf, "mode": mode, "runs": len(rs),
            "failed": len(rs) - len(ok),
            "recovery_rate": sum(r["exact"] for r in ok) / len(rs),
            "edge_f1": mean("edge_f1"), "mean_real": mean("mean_real"),
            "mean_imag": mean("mean_imag"), "mean_abs": mean("mean_abs"),
            "runtime_ms": mean("runtime_ms"),
        })
    return rows, summary


def _bench_row(cfg: RunConfig, n, hf, mode, seed) -> dict:
    topo_cfg = cfg["topology"] if isinstance(cfg["topology"], dict) else {}
    run = cfg.with_overrides(seed=seed, mode=mode,
                             topology={**topo_cfg, "n_nodes": n, "hidden_fraction": hf},
                             record_runtime=True)
    row = {"n_nodes": n, "hidden_fraction": hf, "mode": mode, "seed": seed, "exact": False,
           "edge_f1": None, "mean_real": None, "mean_imag": None, "mean_abs": None,
           "runtime_ms": None, "error": ""}
    try:
        check_consistency(run.data)
        rep = run_pipeline(run).report
    except GridTreeError as exc:
        row["error"] = str(exc)
        log.error("bench row n=%s mode=%s seed=%s failed: %s", n, mode, seed, exc)
        return row
    s = rep.distance_errors["summary"]
    row.update(exact=rep.topology_exact, edge_f1=rep.edge_f1, mean_real=s.get("mean_real"),
               mean_imag=s.get("mean_imag"), mean_abs=s.get("mean_abs"), runtime_ms=rep.runtime_ms)
    return row


def cmd_bench(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    rows, summary = run_bench(cfg)
    with open(out / "bench.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.digest()} seed={cfg.seed}\n")
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    _dump(out / "bench_summary.json", {"provenance": cfg.provenance(), "groups": summary})
    return 1 if any(r["error"] for r in rows) else 0


def _wrap(stage, fn, *args):
    try:
        return fn(*args)
    except (GridTreeError, OSError, KeyError, ValueError) as exc:
        raise StageError(stage, exc) from exc


COMMANDS = {
    "gen": cmd_gen,
    "select": cmd_select,
    "estimate": cmd_estimate,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridtree", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="overrides the config and $GRIDTREE_SEED")
        p.add_argument("--out", help="output directory")
        p.add_argument("--mode", choices=["plain", "whitened", "magnitude", "three_phase"])
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, mode=args.mode)
    except (ConfigError, OSError) as exc:
        print(f"gridtree: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg)
    except StageError as exc:
        print(f"gridtree: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
