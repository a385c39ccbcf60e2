"""Command-line front-end: load a config, run it, write artifacts."""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import json
import logging
import math
import multiprocessing
import platform
import sys
import time
import typing
from pathlib import Path

import matplotlib
import networkx as nx
import numpy as np
import pydantic
import scipy

from ._config import (
    ExperimentConfig,
    FlowConfig,
    GraphSpec,
    LatticeConfig,
    OdeConfig,
    PdeConfig,
    QuiverSpec,
    WallsConfig,
    config_hash,
    load_config,
    write_schemas,
)
from ._csf import (
    CylinderConfig,
    OdeTrajectory,
    build_cylinder,
    chamber_rates,
    compare_pde_ode,
    extract_y,
    fixed_point,
    grid,
    initial_curve,
    integrate_ode,
    integrate_pde,
    wall_asymptotics,
)
from ._errors import ConfigError, ConsistencyError, IterlogError
from ._flow import (
    construct_asymptotic_solution,
    integrate_metric_flow,
    king_test,
    total_asymptotics,
)
from ._lattice import (
    FIVE_CYCLE_SIGNS,
    OrientedCycleGraph,
    build_ideal_lattice,
    exact,
    filtration_to_json,
    five_cycle,
    harder_narasimhan,
    is_polystable,
    is_semistable,
    iterated_weight_filtration,
    walls_5cycle,
    weight_filtration,
    weight_grading,
)
from ._lozenge import Arrow, QuiverData, build_from_quiver
from ._svg import chamber_diagram, curve_snapshots, v_curves

logger = logging.getLogger(__name__)

#: Representative mass vectors for the three chambers of the five-segment cycle.
CHAMBER_REPRESENTATIVES = {
    "LEFT": (4, 2, 1, 1, 1),
    "MIDDLE": (1, 1, 1, 1, 1),
    "RIGHT": (1, 1, 1, 4, 2),
}

Summary = dict[str, typing.Any]


def _cell(value: typing.Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _finite(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


class Artifacts:
    """Writes every output of one run into ``out``, stamped with the config hash."""

    def __init__(self, out: Path, sha256: str, seed: int) -> None:
        out.mkdir(parents=True, exist_ok=True)
        self.out = out
        self.sha256 = sha256
        self.seed = seed
        self.files: list[str] = []

    def _path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def csv(self, name: str, header: typing.Sequence[str], rows: typing.Iterable[typing.Sequence[typing.Any]]) -> None:
        with open(self._path(name), "w", newline="", encoding="utf-8") as f:
            f.write(f"# config_sha256={self.sha256}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([_cell(x) for x in row] for row in rows)

    def json(self, name: str, data: Summary) -> None:
        document = {"config_sha256": self.sha256, "seed": self.seed, **data}
        text = json.dumps(document, indent=2, sort_keys=True, allow_nan=False)
        self._path(name).write_text(text + "\n", encoding="utf-8")

    def svg(self, name: str, text: str) -> None:
        self._path(name).write_text(text, encoding="utf-8")

    def manifest(self, kind: str, source: str, elapsed: float) -> None:
        from . import __version__

        document = {
            "config_sha256": self.sha256,
            "seed": self.seed,
            "kind": kind,
            "source": source,
            "files": sorted(self.files),
            "versions": {
                "iterlog": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "networkx": nx.__version__,
                "matplotlib": matplotlib.__version__,
                "pydantic": pydantic.__version__,
            },
            "wall_clock_seconds": round(elapsed, 3),
        }
        text = json.dumps(document, indent=2, sort_keys=True)
        (self.out / "manifest.json").write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _cycle(spec: GraphSpec) -> OrientedCycleGraph:
    return OrientedCycleGraph(tuple(exact(m) for m in spec.masses), spec.cycle_signs, spec.periodic)


def _digraph(spec: GraphSpec) -> nx.DiGraph:
    if spec.is_cycle:
        return _cycle(spec).digraph()
    graph = nx.DiGraph()
    for name, mass in spec.named_vertices():
        graph.add_node(name, mass=exact(mass))
    graph.add_edges_from(spec.named_arrows())
    return graph


def _quiver(spec: QuiverSpec) -> QuiverData:
    arrows = tuple(Arrow(a.source, a.target, np.array(a.rows(), dtype=complex)) for a in spec.arrows)
    rho = tuple(np.array(r, dtype=complex) for r in spec.rho_matrices())
    return QuiverData(spec.dims, spec.vertex_masses(), arrows, rho)


def _cylinder(payload: PdeConfig) -> CylinderConfig:
    c = payload.cylinder
    return build_cylinder(c.length, c.punctures, rho=c.rho, boundary=c.boundary)


# ---------------------------------------------------------------------------
# Runners, one per experiment kind
# ---------------------------------------------------------------------------


def run_lattice(payload: LatticeConfig, out: Artifacts) -> Summary:
    graph = _digraph(payload.graph)
    pl = build_ideal_lattice(graph)
    grading = weight_grading(graph)
    summary: Summary = {
        "elements": pl.lattice.size,
        "semistable": is_semistable(pl),
        "polystable": is_polystable(pl),
        "harder_narasimhan": filtration_to_json(pl, harder_narasimhan(pl)),
        "weight_filtration": filtration_to_json(pl, weight_filtration(pl)),
        "weights": {str(v): str(w) for v, w in grading.weights.items()},
        "tight_arrows": sorted([str(s), str(t)] for s, t in grading.tight),
    }
    if payload.iterated:
        summary["iterated"] = filtration_to_json(pl, iterated_weight_filtration(pl))
    if payload.walls:
        if not payload.graph.is_cycle:
            raise ConfigError("wall formulas need a five-segment cycle", "$.payload.walls")
        report = walls_5cycle(payload.graph.masses)
        summary["walls"] = {"d1": report.d1, "d2": report.d2, "chamber": report.chamber.value}
    out.csv(
        "weights.csv",
        ("vertex", "mass", "weight"),
        ((v, graph.nodes[v]["mass"], grading.weights[v]) for v in graph.nodes),
    )
    out.json("summary.json", summary)
    return summary


def run_flow(payload: FlowConfig, out: Artifacts) -> Summary:
    q = _quiver(payload.quiver)
    a = build_from_quiver(q)
    alpha_pp = a.alpha_double_prime()
    predictions = [
        {"trace": float(np.real(a.trace(p))), "coefficients": label.as_dict()}
        for p, label in total_asymptotics(a, alpha_pp)
    ]
    summary: Summary = {"mode": payload.mode, "predicted": predictions}
    if payload.mode == "king":
        summary["verdict"] = king_test(a, alpha_pp).to_json()
    elif payload.mode == "asymptotics":
        solution = construct_asymptotic_solution(a, alpha_pp)
        cert = solution.certificate
        summary["certificate"] = {
            "depth": solution.depth,
            "exponent": _finite(cert.exponent),
            "log_exponent": _finite(cert.log_exponent),
            "integrable": cert.integrable,
            "residual_max": cert.residual_max,
        }
        out.csv("residual.csv", ("t", "residual"), zip(cert.times, cert.residuals))
    else:
        h0 = None
        if payload.h0:
            h0 = a.a0_from_blocks([s * np.eye(d) for s, d in zip(payload.h0, q.dims)])
        t_eval = np.linspace(0.0, payload.t_end, payload.samples + 1)
        traj = integrate_metric_flow(a, a.alpha(), h0, payload.t_end, t_eval=t_eval, tolerance=payload.tolerance)
        width = len(traj.log_eigenvalues(0))
        out.csv(
            "trajectory.csv",
            ("t", "residual", *(f"log_eig_{j}" for j in range(width))),
            ((traj.times[i], traj.residuals[i], *traj.log_eigenvalues(i)) for i in range(len(traj))),
        )
        summary["final_residual"] = float(traj.residuals[-1])
        summary["asymmetry"] = traj.asymmetry
    out.json("summary.json", summary)
    return summary


def run_pde(payload: PdeConfig, out: Artifacts) -> Summary:
    cfg = _cylinder(payload)
    g = grid(cfg, ratio=payload.grid.ratio, h_min=payload.grid.h_min, h_max=payload.grid.h_max, uniform=payload.grid.uniform)
    init = payload.initial
    f0 = initial_curve(cfg, g, fourier=init.fourier, puncture_values=init.puncture_values or None)
    t_eval = np.geomspace(min(1e-3, payload.t_end / 10), payload.t_end, payload.samples)
    max_step = math.inf if payload.max_step is None else payload.max_step
    traj = integrate_pde(cfg, f0, payload.t_end, t_eval=t_eval, max_step=max_step)
    summary: Summary = {
        "nodes": len(g.nodes),
        "steps": traj.steps,
        "t_final": float(traj.times[-1]),
        "sign_flip": None if traj.event is None else {"t": traj.event.t, "puncture": traj.event.puncture},
    }
    out.csv("profile.csv", ("x", "f"), zip(g.nodes, traj.values[-1]))
    if cfg.reduced_punctures:
        series = extract_y(traj, cfg)
        n = series.y.shape[1]
        out.csv("y.csv", ("t", *(f"y{k + 1}" for k in range(n))), ((t, *row) for t, row in zip(series.times, series.y)))
        summary["signs"] = list(series.signs)
    if payload.svg:
        out.svg("curve.svg", curve_snapshots(traj))
    out.json("summary.json", summary)
    return summary


def _v_rows(traj: OdeTrajectory) -> typing.Iterator[tuple[typing.Any, ...]]:
    for s, v, y in zip(traj.s, traj.v, traj.y):
        yield (math.exp(s), s, *v, *y)


def _v_header(n: int) -> tuple[str, ...]:
    return ("t", "s", *(f"v{k + 1}" for k in range(n)), *(f"y{k + 1}" for k in range(n)))


def run_ode(payload: OdeConfig, out: Artifacts) -> Summary:
    graph = _cycle(payload.graph)
    t_eval = np.geomspace(payload.t0, payload.t_end, payload.samples)
    traj = integrate_ode(graph, payload.y0, payload.t_end, payload.t0, t_eval=t_eval)
    out.csv("v.csv", _v_header(graph.n), _v_rows(traj))
    fp = fixed_point(graph)
    summary: Summary = {
        "rates": chamber_rates(graph).tolist(),
        "final_slopes": traj.slopes()[-1].tolist(),
        "fixed_point": {"v": [_finite(x) for x in fp.v], "tight": list(fp.tight), "residual": fp.residual},
    }
    if payload.svg:
        out.svg("v.svg", v_curves(traj))
    out.json("summary.json", summary)
    return summary


def run_compare(payload: PdeConfig, out: Artifacts) -> Summary:
    cfg = _cylinder(payload)
    g = grid(cfg, ratio=payload.grid.ratio, h_min=payload.grid.h_min, h_max=payload.grid.h_max, uniform=payload.grid.uniform)
    init = payload.initial
    f0 = initial_curve(cfg, g, fourier=init.fourier, puncture_values=init.puncture_values or None)
    max_step = math.inf if payload.max_step is None else payload.max_step
    report = compare_pde_ode(cfg, f0, payload.t_end, samples=payload.samples, max_step=max_step)
    n = report.pde.shape[1]
    out.csv(
        "compare.csv",
        ("t", *(f"pde_y{k + 1}" for k in range(n)), *(f"ode_y{k + 1}" for k in range(n))),
        ((t, *p, *o) for t, p, o in zip(report.times, report.pde, report.ode)),
    )
    summary: Summary = {
        "handoff": report.handoff,
        "sup_log_gap": list(report.sup),
        "drift_per_decade": list(report.drift),
        "bounded": report.bounded,
    }
    out.json("summary.json", summary)
    return summary


def _walls_point(
    masses: tuple[float, ...],
    signs: tuple[int, ...],
    periodic: bool,
    y0: tuple[float, ...],
    window: tuple[float, float],
) -> Summary:
    graph = OrientedCycleGraph(tuple(exact(m) for m in masses), signs, periodic)
    report = wall_asymptotics(graph, y0, window=window)
    grading = weight_grading(graph.digraph())
    summary: Summary = {
        "masses": list(masses),
        "rates": list(report.rates),
        "log_coefficients": list(report.log_coefficients),
        "drifting": list(report.drifting),
        "weights": {str(v): str(w) for v, w in sorted(grading.weights.items())},
    }
    if len(masses) == 5 and periodic and signs == FIVE_CYCLE_SIGNS:
        walls = walls_5cycle(masses)
        summary.update({"d1": walls.d1, "d2": walls.d2, "chamber": walls.chamber.value})
    return summary


def _sweep_point(
    index: int, point: tuple[float, ...], payload: WallsConfig, out: Path, sha256: str, seed: int
) -> tuple[int, Summary]:
    spec = payload.graph
    summary = _walls_point(point, spec.cycle_signs, spec.periodic, payload.heights, payload.window)
    Artifacts(out, sha256, seed).json(f"walls-{index:03d}.json", summary)
    return index, summary


def run_walls(payload: WallsConfig, out: Artifacts, *, jobs: int = 1) -> Summary:
    spec = payload.graph
    graph = _cycle(spec)
    summary = _walls_point(spec.masses, spec.cycle_signs, spec.periodic, payload.heights, payload.window)
    s_eval = np.linspace(0.0, payload.window[1], 251)
    traj = integrate_ode(graph, payload.heights, math.exp(payload.window[1]), t_eval=np.exp(s_eval))
    out.csv("v.csv", _v_header(graph.n), _v_rows(traj))
    if payload.grid:
        results: dict[int, Summary] = {}
        if jobs > 1:
            # fork is unsafe once BLAS threads exist
            context = multiprocessing.get_context("spawn")
            with cf.ProcessPoolExecutor(max_workers=jobs, mp_context=context) as ex:
                futs = [
                    ex.submit(_sweep_point, i, point, payload, out.out, out.sha256, out.seed)
                    for i, point in enumerate(payload.grid)
                ]
                for fut in cf.as_completed(futs):
                    i, result = fut.result()
                    results[i] = result
        else:
            for i, point in enumerate(payload.grid):
                results[i] = _sweep_point(i, point, payload, out.out, out.sha256, out.seed)[1]
        out.files.extend(f"walls-{i:03d}.json" for i in sorted(results))
        summary["grid"] = [results[i] for i in sorted(results)]
    out.json("summary.json", summary)
    return summary


def run_experiment(config: ExperimentConfig, out: Path, *, jobs: int = 1, seed: int | None = None) -> Summary:
    """Dispatch ``config`` to its runner and write artifacts plus a manifest."""
    seed = config.seed if seed is None else seed
    artifacts = Artifacts(out, config.sha256, seed)
    start = time.perf_counter()
    payload = config.payload
    logger.info("running %s config %s", config.kind, config.sha256[:12])
    summary: Summary
    if isinstance(payload, LatticeConfig):
        summary = run_lattice(payload, artifacts)
    elif isinstance(payload, FlowConfig):
        summary = run_flow(payload, artifacts)
    elif isinstance(payload, OdeConfig):
        summary = run_ode(payload, artifacts)
    elif isinstance(payload, WallsConfig):
        summary = run_walls(payload, artifacts, jobs=jobs)
    elif config.kind == "compare":
        assert isinstance(payload, PdeConfig)
        summary = run_compare(payload, artifacts)
    else:
        assert isinstance(payload, PdeConfig)
        summary = run_pde(payload, artifacts)
    artifacts.manifest(config.kind, config.source, time.perf_counter() - start)
    return summary


def reproduce_chamber_diagrams(out: Path, *, seed: int = 0) -> Summary:
    """Three panels of vertex heights, one per chamber of the five-segment cycle."""
    request = {"figure": "chamber-diagrams", "representatives": CHAMBER_REPRESENTATIVES}
    artifacts = Artifacts(out, config_hash(request), seed)
    start = time.perf_counter()
    panels = []
    summary: Summary = {"panels": {}}
    for name, masses in CHAMBER_REPRESENTATIVES.items():
        report = walls_5cycle(masses)
        if report.chamber.value != name:
            raise ConsistencyError(f"{masses} lies in {report.chamber.value}, not {name}")
        grading = weight_grading(five_cycle(masses).digraph())
        panels.append((f"{name}  m = {masses}", grading))
        summary["panels"][name] = {
            "masses": list(masses),
            "d1": report.d1,
            "d2": report.d2,
            "heights": [str(grading.weights[v]) for v in sorted(grading.weights)],
            "tight_arrows": sorted([s, t] for s, t in grading.tight),
        }
    artifacts.svg("chamber-diagrams.svg", chamber_diagram(panels))
    artifacts.json("chamber-diagrams.json", summary)
    artifacts.manifest("reproduce", "chamber-diagrams", time.perf_counter() - start)
    return summary


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

_CSF_KINDS = {"pde": "csf-pde", "ode": "csf-ode", "compare": "compare", "walls": "walls"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("iterlog-out"), help="Output directory (default: iterlog-out)")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="Worker processes for mass-grid sweeps")
    common.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")

    parser = argparse.ArgumentParser(prog="iterlog", description="Iterated-logarithm asymptotics experiments.")
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", parents=[common], help="Run any experiment config")
    run.add_argument("config", type=Path)

    lattice = verbs.add_parser("lattice", help="Lattice filtrations")
    lattice_verbs = lattice.add_subparsers(dest="action", required=True)
    analyze = lattice_verbs.add_parser("analyze", parents=[common])
    analyze.add_argument("config", type=Path)
    analyze.add_argument("--iterated", action="store_true", help="Also compute the iterated weight filtration")
    analyze.add_argument("--walls", action="store_true", help="Also evaluate the five-cycle wall functions")

    flow = verbs.add_parser("flow", help="Metric flow on a quiver algebra")
    flow_verbs = flow.add_subparsers(dest="action", required=True)
    for mode in ("run", "king", "asymptotics"):
        p = flow_verbs.add_parser(mode, parents=[common])
        p.add_argument("config", type=Path)

    csf = verbs.add_parser("csf", help="Curve shortening on the punctured cylinder")
    csf_verbs = csf.add_subparsers(dest="action", required=True)
    for action in _CSF_KINDS:
        p = csf_verbs.add_parser(action, parents=[common])
        p.add_argument("config", type=Path)

    reproduce = verbs.add_parser("reproduce", parents=[common], help="Regenerate a figure")
    reproduce.add_argument("figure", choices=["chamber-diagrams"])

    schemas = verbs.add_parser("schemas", help="Write the JSON Schema of every config kind")
    schemas.add_argument("--out", type=Path, default=Path("schemas"), help="Output directory (default: schemas)")
    schemas.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    return parser


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_for_verb(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    if args.verb == "lattice":
        if config.kind != "lattice":
            raise ConfigError(f"expected a lattice config, got {config.kind}", "$.schema")
        assert isinstance(config.payload, LatticeConfig)
        payload = config.payload.model_copy(
            update={"iterated": config.payload.iterated or args.iterated, "walls": config.payload.walls or args.walls}
        )
        return ExperimentConfig(config.kind, payload, config.seed, config.sha256, config.source)
    if args.verb == "flow":
        if config.kind != "flow":
            raise ConfigError(f"expected a flow config, got {config.kind}", "$.schema")
        assert isinstance(config.payload, FlowConfig)
        payload_flow = config.payload.model_copy(update={"mode": args.action})
        return ExperimentConfig(config.kind, payload_flow, config.seed, config.sha256, config.source)
    if args.verb == "csf" and config.kind != _CSF_KINDS[args.action]:
        raise ConfigError(f"expected a {_CSF_KINDS[args.action]} config, got {config.kind}", "$.schema")
    return config


def main(argv: typing.Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        if args.verb == "reproduce":
            summary = reproduce_chamber_diagrams(args.out, seed=args.seed or 0)
            print(json.dumps({name: panel["heights"] for name, panel in summary["panels"].items()}))
            return 0
        if args.verb == "schemas":
            for path in write_schemas(args.out):
                print(f"wrote {path}")
            return 0
        config = _load_for_verb(args)
        summary = run_experiment(config, args.out, jobs=args.jobs, seed=args.seed)
    except ConfigError as e:
        print(f"iterlog: config error: {e}", file=sys.stderr)
        return 2
    except IterlogError as e:
        print(f"iterlog: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    for key in ("chamber", "verdict", "bounded"):
        if key in summary:
            print(f"{key}: {summary[key]}")
    print(f"wrote {args.out}")
    return 0
