"""The optimization loop: forward solve, response, sensitivities, MMA update."""
from __future__ import annotations

import dataclasses
import logging
import time
import warnings

import numpy as np

from .equilibrium import EquilibriumError, SpringModel
from .extraction import CrispnessWarning
from .ground_model import DesignVector, SolverParams, SphericalGrid, design_bounds
from .mma import MmaSettings, MmaState, mma_step
from .response import MomentCase, evaluate_response
from .sensitivity import gradients

log = logging.getLogger(__name__)


@dataclasses.dataclass
class HistoryRow:
    iteration: int
    zeta_bar: float
    max_psi_flex: float
    max_psi_abd: float
    max_psi_rot: float
    feasible: bool


@dataclasses.dataclass
class SynthesisResult:
    xi: np.ndarray  # final iterate
    best_xi: np.ndarray | None  # best feasible iterate (highest mean efficiency)
    best_zeta_bar: float
    history: list
    converged: bool
    feasible: bool
    wall_time: float
    failure: str | None = None

    @property
    def design(self) -> np.ndarray:
        """The design to report: the best feasible one when available."""
        return self.best_xi if self.best_xi is not None else self.xi


@dataclasses.dataclass
class SynthesisOptions:
    budget: int = 300
    objective_scale: float = 10.0
    full_chain: bool = True
    stall_window: int = 10
    stall_tol: float = 1e-5
    # the optimizer works against tolerance_factor * eps; the history still
    # reports feasibility against eps itself
    tolerance_factor: float = 1.0
    # weight of the mean greyness 4 (x - xmin)(1 - x) / (1 - xmin)^2 of the
    # stiffness variables, subtracted from the mean efficiency
    grey_penalty: float = 0.0
    mma: MmaSettings = dataclasses.field(default_factory=MmaSettings)


def _row(it, report, eps):
    g = report.group_max()
    return HistoryRow(it, report.zeta_bar, g[0], g[1], g[2], bool(np.all(report.psi <= eps)))


def _on_target(report, tol):
    return bool(np.all(report.psi <= tol))


def greyness(xi, grid: SphericalGrid, params: SolverParams):
    """Mean distance of the stiffness variables from 0/1 and its gradient."""
    n = grid.n_springs
    a, span = params.xi_min, 1.0 - params.xi_min
    x = np.asarray(xi[:n], dtype=float)
    val = 4.0 * (x - a) * (1.0 - x) / span**2
    grad = np.zeros(grid.n_design)
    grad[:n] = 4.0 * (1.0 + a - 2.0 * x) / span**2 / n
    return float(val.mean()), grad


def synthesize(
    case: MomentCase,
    grid: SphericalGrid,
    params: SolverParams,
    options: SynthesisOptions | None = None,
    x0=None,
    callback=None,
    free=None,
) -> SynthesisResult:
    """Maximize the mean efficiency subject to ``psi <= eps`` for every step.

    The constraints enter MMA as ``(psi - eps) / eps``; the objective as
    ``-objective_scale * zeta_bar``. When an iterate makes the equilibrium
    solver fail the step is bisected back towards the last good design.
    ``free`` optionally masks the design entries the optimizer may change;
    the others stay at their ``x0`` values.
    """
    opts = options or SynthesisOptions()
    t_start = time.perf_counter()
    eps = params.eps
    tol = opts.tolerance_factor * eps
    lo, hi = design_bounds(grid, params)
    x_full = DesignVector.initial(grid).to_array() if x0 is None else np.asarray(x0, dtype=float).copy()
    free = np.ones(grid.n_design, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    free = free & (hi > lo)

    def full(xs):
        out = x_full.copy()
        out[free] = xs
        return out

    state = MmaState.start(x_full[free], lo[free], hi[free], opts.mma)
    history = []
    best_xi, best_zeta, best_merit = None, -np.inf, -np.inf
    converged = False
    failure = None
    last_good = None
    on_target = []

    for it in range(opts.budget + 1):
        fwd = None
        for _ in range(6):
            try:
                fwd = evaluate_response(SpringModel(grid, full(state.x), params), case)
                break
            except EquilibriumError as exc:
                if last_good is None:
                    failure = f"initial design: {exc}"
                    break
                log.warning("iteration %d: %s; bisecting back", it, exc)
                state.x = 0.5 * (state.x + last_good)
                state.move *= 0.5
        if fwd is None:
            failure = failure or f"iteration {it}: equilibrium failed after bisection"
            break
        last_good = state.x.copy()
        rep = fwd.report
        row = _row(it, rep, eps)
        history.append(row)
        if callback is not None:
            callback(row)
        on_target.append(_on_target(rep, tol))
        merit = rep.zeta_bar - opts.grey_penalty * greyness(full(state.x), grid, params)[0]
        if on_target[-1] and merit > best_merit:
            best_merit, best_zeta, best_xi = merit, rep.zeta_bar, full(state.x)

        recent = history[-opts.stall_window - 1:]
        if (
            len(recent) == opts.stall_window + 1
            and all(on_target[-len(recent):])
            and max(abs(a.zeta_bar - b.zeta_bar) for a, b in zip(recent[1:], recent[:-1])) <= opts.stall_tol
        ):
            converged = True
            break
        if it == opts.budget:
            break

        grad = gradients(fwd, full_chain=opts.full_chain)
        g_val, g_grad = greyness(full(state.x), grid, params)
        f0 = -opts.objective_scale * (rep.zeta_bar - opts.grey_penalty * g_val)
        df0 = -opts.objective_scale * (grad.zeta_bar - opts.grey_penalty * g_grad)[free]
        fc = (rep.psi.ravel() - tol) / eps
        dfc = grad.psi_flat[:, free] / eps
        mma_step(state, f0, df0, fc, dfc, opts.mma)

    return SynthesisResult(
        xi=full(state.x),
        best_xi=best_xi,
        best_zeta_bar=float(best_zeta) if best_xi is not None else float("nan"),
        history=history,
        converged=converged,
        feasible=best_xi is not None,
        wall_time=time.perf_counter() - t_start,
        failure=failure,
    )


def refine_shape(
    case: MomentCase,
    grid: SphericalGrid,
    params: SolverParams,
    xi,
    options: SynthesisOptions | None = None,
    threshold: float = 0.5,
    callback=None,
) -> SynthesisResult:
    """Re-optimize node positions of a binarized design with its topology frozen.

    Every stiffness variable is snapped to ``xi_min`` or 1 and only the shape
    variables move, so the mechanism type found by :func:`synthesize` is kept.
    """
    from .extraction import binarized_design

    opts = options or SynthesisOptions(tolerance_factor=0.5, budget=100)
    x0 = binarized_design(grid, xi, params, threshold)
    free = np.zeros(grid.n_design, dtype=bool)
    free[grid.n_springs:] = True
    return synthesize(case, grid, params, opts, x0=x0, callback=callback, free=free)


@dataclasses.dataclass
class RoundingCandidate:
    xi: np.ndarray
    dof: int
    topology: str
    zeta_bar: float
    max_psi: float
    added: int | None = None  # spring switched on to remove surplus mobility


def round_design(
    case: MomentCase,
    grid: SphericalGrid,
    params: SolverParams,
    xi,
    grey_band=(0.01, 0.99),
    max_grey: int = 8,
    target_dof: int = 3,
    repair: bool = True,
) -> list:
    """Turn a continuous design into 0/1 stiffness candidates, best first.

    Every 0/1 assignment of the grey stiffness variables is tried; springs
    outside ``grey_band`` snap to their nearest bound. With ``repair``, a
    candidate with more mobility than ``target_dof`` also spawns the variants
    with one more spring switched on, which locks a joint. Candidates that
    extract to a connected mechanism are ranked by: mobility equal to
    ``target_dof``, smallest constraint value, highest mean efficiency.
    """
    from itertools import product

    from .extraction import DisconnectedMechanismError, extract_mechanism

    xi = np.asarray(xi, dtype=float)
    n = grid.n_springs
    k = xi[:n]
    grey = np.flatnonzero((k > grey_band[0]) & (k < grey_band[1]))
    if grey.size > max_grey:
        # keep the ones closest to 0.5 free, snap the rest
        order = np.argsort(np.abs(k[grey] - 0.5))
        grey = np.sort(grey[order[:max_grey]])
    base = xi.copy()
    base[:n] = np.where(k >= 0.5, 1.0, params.xi_min)
    seen = set()
    out = []

    def consider(cand, added=None):
        key = tuple(cand[:n] > 0.5)
        if key in seen:
            return None
        seen.add(key)
        try:
            mech = extract_mechanism(grid, cand, params)
        except DisconnectedMechanismError:
            return None
        if added is not None and mech.dof != target_dof:
            return mech
        try:
            rep = evaluate_response(SpringModel(grid, cand, params), case).report
        except EquilibriumError:
            return mech
        out.append(RoundingCandidate(cand, mech.dof, mech.topology(), rep.zeta_bar, float(rep.psi.max()), added))
        return mech

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CrispnessWarning)
        rounded = []
        for bits in product((params.xi_min, 1.0), repeat=grey.size):
            cand = base.copy()
            cand[grey] = bits
            mech = consider(cand)
            if mech is not None:
                rounded.append((cand, mech.dof))
        if repair:
            for cand, dof in rounded:
                if dof <= target_dof:
                    continue
                for m in np.flatnonzero(cand[:n] < 0.5):
                    alt = cand.copy()
                    alt[m] = 1.0
                    consider(alt, added=int(m))
    out.sort(key=lambda c: (c.dof != target_dof, c.max_psi, -c.zeta_bar))
    return out


@dataclasses.dataclass
class RefineOptions:
    """Second stage: round the stiffness variables and re-optimize the shape only."""

    enabled: bool = True
    budget: int = 100
    tolerance_factor: float = 0.5
    candidates: int = 3  # rounded designs tried, best first


@dataclasses.dataclass
class PipelineResult:
    stage1: SynthesisResult
    stage2: SynthesisResult | None
    rounding: list
    design: np.ndarray
    history: list
    zeta_bar: float
    feasible: bool
    converged: bool
    failure: str | None
    wall_time: float
    # MMA iterations spent in total, discarded refinement attempts included
    mma_iterations: int = 0


def run_pipeline(
    case: MomentCase,
    grid: SphericalGrid,
    params: SolverParams,
    options: SynthesisOptions | None = None,
    refine: RefineOptions | None = None,
    threshold: float = 0.5,
    callback=None,
) -> PipelineResult:
    """Topology and shape search, then rounding and shape refinement.

    The history continues its iteration count through the refinement stage.
    Without refinement (or with a zero budget) the first-stage design is
    reported as is.
    """
    opts = options or SynthesisOptions()
    ref = refine or RefineOptions()
    t0 = time.perf_counter()
    s1 = synthesize(case, grid, params, opts, callback=callback)
    history = list(s1.history)
    design = s1.design
    zeta = s1.best_zeta_bar if s1.feasible else (s1.history[-1].zeta_bar if s1.history else float("nan"))
    result = PipelineResult(s1, None, [], design, history, zeta, s1.feasible, s1.converged, s1.failure, 0.0)
    result.mma_iterations = max(len(s1.history) - 1, 0)
    if s1.failure or not ref.enabled or opts.budget == 0 or ref.budget == 0:
        result.wall_time = time.perf_counter() - t0
        return result

    cands = round_design(case, grid, params, design)
    result.rounding = cands
    r_opts = dataclasses.replace(opts, budget=ref.budget, tolerance_factor=ref.tolerance_factor)
    offset = len(history)

    def shifted(row):
        row = dataclasses.replace(row, iteration=row.iteration + offset)
        if callback is not None:
            callback(row)

    for cand in cands[: ref.candidates]:
        log.info("refining %s candidate (dof %d, max psi %.3e)", cand.topology, cand.dof, cand.max_psi)
        s2 = refine_shape(case, grid, params, cand.xi, r_opts, threshold, callback=shifted)
        result.mma_iterations += max(len(s2.history) - 1, 0)
        if s2.failure or not s2.feasible:
            continue
        rows = [dataclasses.replace(r, iteration=r.iteration + offset) for r in s2.history]
        result.stage2 = s2
        result.history = history + rows
        result.design = s2.design
        result.zeta_bar = s2.best_zeta_bar
        result.feasible = True
        result.converged = s2.converged
        break
    result.wall_time = time.perf_counter() - t0
    return result
