"""Command line entry point: ``hipsynth synth|analyze|profile|check-grad|extract``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .analysis import COLUMNS, AnalysisError, analyze
from .cases import torque_profile
from .equilibrium import EquilibriumError, SpringModel
from .extraction import DisconnectedMechanismError, MechanismGraph, extract_mechanism
from .ground_model import DesignVector, GridError, SolverParams, build_grid
from .mma import MmaError
from .response import evaluate_response
from .screw import JointSeparationError
from .sensitivity import fd_oracle, gradients
from .synthesis import run_pipeline

log = logging.getLogger("hipsynth")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 2, 3, 4
HISTORY_COLUMNS = ("iter", "zeta_bar", "max_psi_flex", "max_psi_abd", "max_psi_rot", "feasible")


def fmt(x) -> str:
    """Nine significant digits in scientific notation; integers and flags as is."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.8e}"


def dumps(obj, indent: int = 0) -> str:
    """JSON with every float written by :func:`fmt` (NaN and infinities become null)."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in seq) + "\n" + pad + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return "null" if not math.isfinite(obj) else fmt(obj)
    return json.dumps(obj)


def write_csv(path: Path | None, header, rows):
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _grid_dict(grid) -> dict:
    return {
        "n_azimuth": grid.n_azimuth,
        "n_polar": grid.n_polar,
        "phi_p": grid.phi_p,
        "theta_t": grid.theta_t,
        "block_a": grid.block_a,
    }


def design_document(grid, params: SolverParams, xi) -> dict:
    d = DesignVector.from_array(grid, xi)
    return {
        "config_version": cfgmod.CONFIG_VERSION,
        "grid": _grid_dict(grid),
        "solver": dataclasses.asdict(params),
        "xi_k": d.xi_k,
        "xi_theta": d.xi_theta,
    }


def read_design(path):
    """Grid, params and design vector stored by ``synth``."""
    try:
        data = json.loads(Path(path).read_text())
        grid = build_grid(**{k: v for k, v in data["grid"].items()})
        params = SolverParams(**data["solver"])
        xi = np.concatenate([np.asarray(data["xi_k"], dtype=float), np.asarray(data["xi_theta"], dtype=float)])
    except (OSError, ValueError, KeyError, TypeError, GridError) as exc:
        raise cfgmod.ConfigError(f"{path}: invalid design file ({exc})") from None
    if xi.size != grid.n_design:
        raise cfgmod.ConfigError(f"{path}: expected {grid.n_design} design variables, found {xi.size}")
    return grid, params, xi


def read_mechanism(path) -> MechanismGraph:
    try:
        return MechanismGraph.from_dict(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise cfgmod.ConfigError(f"{path}: invalid mechanism file ({exc})") from None


def _load_config(args):
    if args.config:
        cfg = cfgmod.load(args.config, case_override=args.case)
    else:
        cfg = cfgmod.resolve({"case": args.case if args.case is not None else 2})
    if getattr(args, "budget", None) is not None:
        if args.budget < 0:
            raise cfgmod.ConfigError("--budget: must be nonnegative")
        cfg.synthesis.budget = args.budget
    if getattr(args, "threshold", None) is not None:
        if not 0.0 < args.threshold < 1.0:
            raise cfgmod.ConfigError("--threshold: must lie in (0, 1)")
        cfg.threshold = args.threshold
    return cfg


def _analysis_rows(mech, case, grid, params):
    return [r.values() for r in analyze(mech, case, grid, params)]


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out or cfg.output_dir or "run")
    out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        log.info("iter %d  zeta_bar %.6f  psi %.2e %.2e %.2e", row.iteration, row.zeta_bar, row.max_psi_flex, row.max_psi_abd, row.max_psi_rot)

    try:
        res = run_pipeline(cfg.case, cfg.grid, cfg.params, cfg.synthesis, cfg.refine, cfg.threshold, callback=progress)
    except MmaError as exc:
        (out / "summary.json").write_text(dumps({"status": "solver_failure", "partial": True, "message": str(exc)}) + "\n")
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER

    write_csv(
        out / "history.csv",
        HISTORY_COLUMNS,
        [(r.iteration, r.zeta_bar, r.max_psi_flex, r.max_psi_abd, r.max_psi_rot, int(r.feasible)) for r in res.history],
    )
    (out / "design.json").write_text(dumps(design_document(cfg.grid, cfg.params, res.design)) + "\n")

    summary = {
        "status": "ok",
        "case": cfg.case.name,
        "zeta_bar": res.zeta_bar,
        "feasible": res.feasible,
        "converged": res.converged,
        "iterations": len(res.history) - 1 if res.history else 0,
        "mma_iterations": res.mma_iterations,
        "refined": res.stage2 is not None,
        "partial": False,
    }
    mech = None
    try:
        mech = extract_mechanism(cfg.grid, res.design, cfg.params, cfg.threshold)
        (out / "mechanism.json").write_text(dumps(mech.to_dict()) + "\n")
        summary.update(dof=mech.dof, topology=mech.topology())
    except DisconnectedMechanismError as exc:
        summary["extraction_error"] = str(exc)
    if mech is not None:
        try:
            rows = analyze(mech, cfg.case, cfg.grid, cfg.params)
            write_csv(out / "analysis.csv", COLUMNS, [r.values() for r in rows])
            summary["max_angle_to_target"] = max((r.angle_to_target for r in rows), default=math.nan)
        except (AnalysisError, JointSeparationError, EquilibriumError, ValueError) as exc:
            summary["analysis_error"] = str(exc)
    if res.failure:
        summary.update(status="solver_failure", partial=True, message=res.failure)
    elif not res.feasible:
        summary["status"] = "infeasible"
    summary["wall_time"] = res.wall_time
    (out / "summary.json").write_text(dumps(summary) + "\n")
    if res.failure:
        return EXIT_SOLVER
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_analyze(args) -> int:
    mech = read_mechanism(args.mechanism)
    cfg = _load_config(args)
    grid, params = cfg.grid, cfg.params
    if args.design:
        grid, params, _ = read_design(args.design)
    try:
        rows = _analysis_rows(mech, cfg.case, grid, params)
    except (AnalysisError, JointSeparationError, EquilibriumError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    write_csv(_out_file(args.out, "analysis.csv"), COLUMNS, rows)
    return EXIT_OK


def cmd_extract(args) -> int:
    grid, params, xi = read_design(args.design)
    threshold = 0.5 if args.threshold is None else args.threshold
    if not 0.0 < threshold < 1.0:
        raise cfgmod.ConfigError("--threshold: must lie in (0, 1)")
    try:
        mech = extract_mechanism(grid, xi, params, threshold)
    except DisconnectedMechanismError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    text = dumps(mech.to_dict()) + "\n"
    path = _out_file(args.out, "mechanism.json")
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)
    return EXIT_OK


def cmd_profile(args) -> int:
    if args.step <= 0 or args.stop < args.start:
        raise cfgmod.ConfigError("--step must be positive and --stop at least --start")
    n = int(math.floor((args.stop - args.start) / args.step + 1e-9)) + 1
    x = args.start + args.step * np.arange(n)
    rows = zip(x, torque_profile("right", x), torque_profile("left", x))
    write_csv(_out_file(args.out, "profile.csv"), ("x_gait", "tau_right", "tau_left"), rows)
    return EXIT_OK


def cmd_check_grad(args) -> int:
    cfg = _load_config(args)
    case = cfg.case.truncated(args.steps) if args.steps else cfg.case
    if args.fd_step <= 0:
        raise cfgmod.ConfigError("--fd-step: must be positive")
    if args.design:
        grid, params, xi = read_design(args.design)
    else:
        grid, params = cfg.grid, cfg.params
        xi = np.linspace(0.2, 0.9, grid.n_design)  # fixed, asymmetric test design
    try:
        fwd = evaluate_response(SpringModel(grid, xi, params), case)
        analytic = gradients(fwd, full_chain=cfg.synthesis.full_chain)

        def f(x):
            rep = evaluate_response(SpringModel(grid, x, params), case).report
            return np.concatenate([[rep.zeta_bar], rep.psi.ravel()])

        numeric = fd_oracle(f, xi, args.fd_step)
    except EquilibriumError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    ana = np.vstack([analytic.zeta_bar[None], analytic.psi_flat])
    rows = []
    for i in range(len(xi)):
        a, n = ana[0, i], numeric[0, i]
        rows.append((i, a, n, abs(a - n) / max(abs(n), 1e-8)))
    write_csv(None, ("index", "analytic", "fd", "rel_error"), rows)
    err = np.abs(ana - numeric) / np.maximum(np.abs(numeric), 1e-8)
    sys.stdout.write(f"# max relative error: zeta_bar {fmt(err[0].max())}, psi {fmt(err[1:].max() if err.shape[0] > 1 else 0.0)}\n")
    return EXIT_OK


def _out_file(out, name):
    if out is None:
        return None
    p = Path(out)
    if p.suffix:
        p.parent.mkdir(parents=True, exist_ok=True)
        return p
    p.mkdir(parents=True, exist_ok=True)
    return p / name


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hipsynth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, budget=False, threshold=False):
        p.add_argument("--case", type=int, choices=(1, 2, 3), help="built-in case study")
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (or file)")
        if budget:
            p.add_argument("--budget", type=int, help="MMA iteration budget")
        if threshold:
            p.add_argument("--threshold", type=float, help="binarization threshold")

    p = sub.add_parser("synth", help="run the synthesis and write all artifacts")
    common(p, budget=True, threshold=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="pose-wise output moment of a mechanism")
    p.add_argument("mechanism", help="mechanism.json")
    p.add_argument("--design", help="design.json giving the grid and parameters")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("extract", help="binarize a design and build its linkage")
    p.add_argument("design", help="design.json")
    p.add_argument("--out", help="output directory (or file)")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("profile", help="gait torque profiles as CSV")
    p.add_argument("--start", type=float, default=0.0, help="first gait percentage")
    p.add_argument("--stop", type=float, default=100.0, help="last gait percentage")
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--out", help="output file or directory")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("check-grad", help="compare analytic and finite-difference gradients")
    common(p)
    p.add_argument("--design", help="design.json to check instead of a fixed test design")
    p.add_argument("--fd-step", type=float, default=1e-6)
    p.add_argument("--steps", type=int, help="use only the first N poses")
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
