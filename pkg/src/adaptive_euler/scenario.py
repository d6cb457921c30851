"""Transonic bump-channel experiment: configuration, inflow perturbation,
wall-pressure functional and steady-state initialisation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import euler
from . import forward as fw
from . import multiresolution as mr
from .geometry import AdaptiveMesh, Hierarchy, build_bump_mapping

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Perturbation:
    alpha: float
    t_begin: float
    t_end: float
    tau: float

    def weight(self, t):
        t = np.asarray(t, dtype=float)
        tb, te, tau = self.t_begin, self.t_end, self.tau
        w = np.zeros_like(t)
        up = (t > tb) & (t <= tb + tau)
        flat = (t > tb + tau) & (t <= te - tau)
        down = (t > te - tau) & (t <= te)
        w[up] = ((t[up] - tb) / tau) ** 2
        w[flat] = 1.0
        w[down] = ((t[down] - te) / tau) ** 2
        return w


@dataclass(frozen=True)
class PerturbationSpec:
    items: tuple = (Perturbation(0.2, 0.004, 0.005, 5e-5),
                    Perturbation(0.02, 0.022, 0.023, 5e-5))

    def validate(self, T=None):
        last = -math.inf
        for p in sorted(self.items, key=lambda q: q.t_begin):
            if not (p.t_begin < p.t_begin + p.tau <= p.t_end - p.tau < p.t_end):
                raise ValueError(f"inconsistent ramp times in {p}")
            if p.t_begin < last:
                raise ValueError("perturbation windows overlap")
            if p.t_begin < 0 or (T is not None and p.t_end > T):
                raise ValueError(f"perturbation {p} lies outside [0, T]")
            last = p.t_end
        return self

    @classmethod
    def none(cls):
        return cls(())


def inflow_pressure(t, spec: PerturbationSpec, p_inf):
    """``p_inf * (1 + sum_i alpha_i w_i(t))`` with quadratic on/off ramps."""
    t = np.asarray(t, dtype=float)
    w = np.ones_like(t)
    for p in spec.items:
        w = w + p.alpha * p.weight(t)
    out = p_inf * w
    return float(out) if out.ndim == 0 else out


@dataclass
class ChannelConfig:
    length: float = 6.0
    height: float = 2.0
    bump_secant: float = 1.0
    bump_height: float = 0.024
    mach_inflow: float = 0.85
    gamma: float = 1.4
    rho_inf: float = 1.225
    p_inf: float = 101325.0
    nx0: int = 80
    ny0: int = 8
    L_coarse: int = 2
    L_fine: int = 5
    mr_threshold: float = 1e-3
    T: float = 0.029
    coarse_cfl: float = 1.0
    steady_cfl: float = 200.0
    steady_tol: float = 1e-13
    steady_max_steps: int = 5000
    functional_literal: bool = False
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)

    def __post_init__(self):
        for name in ("length", "height", "bump_secant", "T", "rho_inf", "p_inf", "gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.bump_height < 0:
            raise ValueError("bump_height must be non-negative")
        if not 0 < self.mach_inflow:
            raise ValueError("mach_inflow must be positive")

    # free stream
    @property
    def c_inf(self):
        return math.sqrt(self.gamma * self.p_inf / self.rho_inf)

    @property
    def free_stream(self):
        u = self.mach_inflow * self.c_inf
        return euler.primitive_to_conserved(np.array([self.rho_inf, u, 0.0, self.p_inf]), self.gamma)

    @property
    def scale(self):
        """Reference magnitude per conserved component (momentum: rho*|v|)."""
        U = self.free_stream
        m = self.rho_inf * self.mach_inflow * self.c_inf
        return np.array([U[0], m, m, U[3]])

    def hierarchy(self, level):
        return Hierarchy(build_bump_mapping(self), level, self.nx0, self.ny0)

    def inflow_state(self, t):
        p = inflow_pressure(t, self.perturbation, self.p_inf)
        U = self.free_stream
        rho, u = self.rho_inf, self.mach_inflow * self.c_inf
        return euler.primitive_to_conserved(np.array([rho, u, 0.0, p]), self.gamma) if p != self.p_inf else U

    def boundary(self, perturbed=True, walls="slip"):
        return fw.ChannelBoundary(self.free_stream, self.inflow_state if perturbed else None, walls)

    def problem(self, level, perturbed=True, min_tree=None, adapt=True):
        return fw.FlowProblem(self.hierarchy(level), self.boundary(perturbed), self.scale,
                              mr_threshold=self.mr_threshold, adapt=adapt,
                              gamma=self.gamma, min_tree=min_tree)


# --------------------------------------------------------------------------
# config files

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(value: str, kind):
    if kind is bool:
        try:
            return _BOOL[value.lower()]
        except KeyError:
            raise ValueError(f"not a boolean: {value!r}") from None
    return kind(value)


def parse_config(text: str):
    """Parse ``key = value`` lines (``#`` comments, blank lines ignored).

    Returns ``(ChannelConfig, extras)`` where ``extras`` holds the keys not
    known to :class:`ChannelConfig` (controller settings, for instance).
    Perturbations are given as ``perturbation_<k> = alpha t_begin t_end tau``
    or cleared with ``perturbation = none``.
    """
    kinds = {f.name: f.type for f in fields(ChannelConfig)}
    types = {"float": float, "int": int, "bool": bool}
    values, extras, perts = {}, {}, {}
    no_pert = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = parts
        if key == "perturbation":
            if value.lower() != "none":
                raise ValueError(f"line {lineno}: use perturbation_<k> entries")
            no_pert = True
        elif key.startswith("perturbation_"):
            nums = [float(v) for v in value.replace(",", " ").split()]
            if len(nums) != 4:
                raise ValueError(f"line {lineno}: perturbation needs alpha t_begin t_end tau")
            perts[int(key.split("_", 1)[1])] = Perturbation(*nums)
        elif key in kinds:
            values[key] = _coerce(value, types[kinds[key]])
        else:
            extras[key] = value
    cfg = ChannelConfig(**values)
    if no_pert:
        cfg = replace(cfg, perturbation=PerturbationSpec.none())
    elif perts:
        cfg = replace(cfg, perturbation=PerturbationSpec(tuple(perts[k] for k in sorted(perts))))
    cfg.perturbation.validate(cfg.T)
    return cfg, extras


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: ChannelConfig, extras=None):
    lines = []
    for f in fields(ChannelConfig):
        if f.name == "perturbation":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    if not cfg.perturbation.items:
        lines.append("perturbation = none")
    for k, p in enumerate(cfg.perturbation.items, 1):
        lines.append(f"perturbation_{k} = {p.alpha!r} {p.t_begin!r} {p.t_end!r} {p.tau!r}")
    for k, v in (extras or {}).items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# target functional

ANCHORS = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
HALF_WIDTH = 0.25


@dataclass
class BottomPressureFunctional:
    """Windowed wall-pressure average on the bottom wall.

    Anchors are offsets from the bump centre.  ``literal=True`` switches to
    the alternative weight ``(x-a)^2 (x+b)^2 / h^4`` with ``a = x_i - h`` and
    ``b = x_i + h``, which does not vanish at the right window end.
    """

    center: float
    anchors: tuple = ANCHORS
    half_width: float = HALF_WIDTH
    literal: bool = False
    scale: float = 1.0
    x_range: tuple = (-math.inf, math.inf)

    @property
    def label(self):
        return "bottom-wall pressure, {} windows".format(len(self.anchors))

    def windows(self):
        out = []
        for a in self.anchors:
            xc = self.center + a
            lo = max(xc - self.half_width, self.x_range[0])
            hi = min(xc + self.half_width, self.x_range[1])
            if hi > lo:
                out.append((xc, lo, hi))
        return out

    def weight(self, x):
        """Sum of the window weights at wall abscissae ``x``."""
        x = np.asarray(x, dtype=float)
        h = self.half_width
        w = np.zeros_like(x)
        for xc, lo, hi in self.windows():
            inside = (x >= lo) & (x <= hi)
            if self.literal:
                v = (x - (xc - h)) ** 2 * (x + (xc + h)) ** 2 / h ** 4
            else:
                v = (x - (xc - h)) ** 2 * (x - (xc + h)) ** 2 / h ** 4
            w = w + np.where(inside, v, 0.0)
        return self.scale * w

    def face_weights(self, mesh: AdaptiveMesh):
        """``(faces, psi * |face|)`` on bottom-wall faces, midpoint rule."""
        f = mesh.wall_faces(bottom=True)
        return f, self.weight(mesh.midpoint[f, 0]) * mesh.area[f]

    def boundary_weight(self, mesh: AdaptiveMesh):
        """Per boundary face 4-vector ``psi_Gamma = weight * 2 (0, n, 0)``."""
        b = np.nonzero(mesh.boundary)[0]
        psi = np.zeros((b.size, 4))
        f = mesh.wall_faces(bottom=True)
        w = self.weight(mesh.midpoint[f, 0])
        pos = np.searchsorted(b, f)
        psi[pos, 1:3] = 2.0 * w[:, None] * mesh.normal[f]
        return psi

    def scaled(self, s):
        return replace(self, scale=self.scale * s)


def make_functional(cfg: ChannelConfig, hierarchy: Hierarchy | None = None):
    mapping = build_bump_mapping(cfg)
    return BottomPressureFunctional(mapping.bump_center, literal=cfg.functional_literal,
                                    x_range=(0.0, cfg.length))


def evaluate_functional(trajectory, functional: BottomPressureFunctional, gamma=euler.GAMMA):
    """``(J, per_step)`` from the recorded wall-pressure trace.

    Space: midpoint rule over bottom-wall faces; time: right-endpoint
    rectangle rule, one value per step.
    """
    per_step = []
    for m, dt in enumerate(trajectory.dts):
        _, x, p, ds = trajectory.pressure_trace[m + 1]
        per_step.append(dt * float(np.dot(p, functional.weight(x) * ds)))
    return math.fsum(per_step), np.array(per_step)


# --------------------------------------------------------------------------
# steady state


class SteadyStateError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class SteadyResult:
    state: fw.SolverState
    floor: list  # graded tree kept as minimum refinement in later runs
    history: list
    converged: bool
    steps: int


def free_stream_norm(cfg: ChannelConfig, mesh: AdaptiveMesh):
    return float(np.abs(cfg.free_stream).sum() * mesh.volumes.sum())


def _ind(U_new, U_old, mesh):
    return float(np.sum(np.abs(U_new - U_old) * mesh.volumes[:, None]))


def steady_state(cfg: ChannelConfig, level=None, initial: fw.SolverState | None = None,
                 tol=None, max_steps=None, raise_on_failure=False, progress=None):
    """Implicit pseudo-time march from free stream to a steady adapted field.

    Adaptation runs after every step until the per-step variation stalls;
    the mesh is then frozen and the field converged until the ad-hoc
    indicator drops below ``tol`` times the free-stream norm.  If adapting
    the converged field would change the tree, the union of both trees is
    taken and convergence repeated, so the returned tree is reproduced by
    adaptation (it is returned as ``floor`` for the transient runs).
    """
    level = cfg.L_coarse if level is None else level
    tol = cfg.steady_tol if tol is None else tol
    max_steps = cfg.steady_max_steps if max_steps is None else max_steps
    problem = cfg.problem(level, perturbed=False)
    h = problem.hierarchy
    if initial is None:
        from .geometry import AdaptiveMesh as _AM
        mesh = _AM(h, h.full_tree())
        state = fw.SolverState(mesh, np.tile(cfg.free_stream, (mesh.n_cells, 1)))
    else:
        state = fw.SolverState(initial.mesh, initial.field)
    norm = free_stream_norm(cfg, state.mesh)
    history = []
    adaptive = True
    floor = None
    for k in range(1, max_steps + 1):
        dt = cfg.steady_cfl / fw.wave_rate(state.mesh, state.field, cfg.gamma)
        new, rep = fw.implicit_step(state, dt, problem)
        mesh, U = new.mesh, new.field
        if adaptive:
            mesh, U = mr.adapt(mesh, U, cfg.mr_threshold, cfg.scale, problem.mesh_cache)
        rel = _ind(U, mr.adapt_field(state.mesh, state.field, mesh), mesh) / norm
        history.append(rel)
        state = fw.SolverState(mesh, U, new.t, k)
        if progress is not None:
            progress(k, state, rel)
        if adaptive:
            stalled = k > 20 and min(history[-10:]) > 0.5 * min(history[:-10])
            if rel <= tol or rel < 1e-6 or stalled:
                adaptive = False
                floor = [t.copy() for t in mesh.tree]
            continue
        if rel <= tol:
            m2, _ = mr.adapt(state.mesh, state.field, cfg.mr_threshold, cfg.scale,
                             problem.mesh_cache)
            union = [a | b for a, b in zip(floor, m2.tree)]
            if all(np.array_equal(a, b) for a, b in zip(union, floor)):
                state = fw.SolverState(state.mesh, state.field, 0.0, 0)
                return SteadyResult(state, floor, history, True, k)
            floor = union
            new_mesh = mr.mesh_from_tree(h, floor, problem.mesh_cache)
            state = fw.SolverState(new_mesh, mr.adapt_field(state.mesh, state.field, new_mesh),
                                   state.t, k)
    msg = f"steady state not reached in {max_steps} steps (last variation {history[-1]:.2e})"
    if raise_on_failure:
        raise SteadyStateError(msg, history)
    log.warning(msg)
    if floor is None:
        floor = [t.copy() for t in state.mesh.tree]
    state = fw.SolverState(state.mesh, state.field, 0.0, 0)
    return SteadyResult(state, floor, history, False, max_steps)


def prolongate_state(state: fw.SolverState, hierarchy: Hierarchy):
    """Carry a field to a deeper hierarchy on the same root grid.

    The leaves keep their place: the tree gains empty levels, so no cell is
    split and the field is copied unchanged.
    """
    old = state.mesh
    if (hierarchy.nx0, hierarchy.ny0) != (old.hierarchy.nx0, old.hierarchy.ny0):
        raise ValueError("hierarchies do not share the root grid")
    if hierarchy.L < old.hierarchy.L:
        raise ValueError("target hierarchy is shallower than the source")
    tree = hierarchy.empty_tree()
    for lev, t in enumerate(old.tree):
        tree[lev] = t.copy()
    mesh = AdaptiveMesh(hierarchy, tree)
    dest = np.empty(old.n_cells, dtype=int)
    for lev in range(old.hierarchy.L + 1):
        sel = old.level == lev
        dest[sel] = mesh.index[lev][old.i[sel], old.j[sel]]
    U = np.empty_like(state.field)
    U[dest] = state.field
    return fw.SolverState(mesh, U, state.t, 0)


def max_mach(state: fw.SolverState, gamma=euler.GAMMA):
    W = euler.conserved_to_primitive(state.field, gamma)
    return float(np.max(np.hypot(W[:, 1], W[:, 2]) / euler.sound_speed(state.field, gamma)))


# --------------------------------------------------------------------------
# wall-pressure traces


def trace_on_grid(trajectory, x, times=None):
    """Bottom-wall pressure of ``trajectory`` sampled at ``x`` and ``times``.

    Space: linear interpolation between face midpoints; time: linear
    interpolation between recorded time levels.
    """
    ts = np.array([rec[0] for rec in trajectory.pressure_trace])
    rows = np.array([np.interp(x, rec[1], rec[2]) for rec in trajectory.pressure_trace])
    if times is None:
        return ts, rows
    times = np.asarray(times, dtype=float)
    k = np.clip(np.searchsorted(ts, times, side="right") - 1, 0, ts.size - 2)
    w = ((times - ts[k]) / (ts[k + 1] - ts[k]))[:, None]
    return times, (1 - w) * rows[k] + w * rows[k + 1]


def trace_difference(candidate, reference, x=None, n_times=400, baseline=0.0):
    """Relative space-time L2 distance of two wall-pressure traces.

    Both traces are sampled on ``x`` (default: 1000 points spanning the
    reference wall midpoints) and ``n_times`` equispaced times in ``[0, T]``.  ``baseline`` is subtracted
    before normalising, so ``baseline = p_inf`` measures the perturbation.
    """
    if x is None:
        xr = reference.pressure_trace[0][1]
        x = np.linspace(xr[0], xr[-1], 1000)
    t0, t1 = reference.pressure_trace[0][0], reference.pressure_trace[-1][0]
    times = np.linspace(t0, t1, n_times)
    _, a = trace_on_grid(candidate, x, times)
    _, b = trace_on_grid(reference, x, times)
    den = np.sqrt(np.sum((b - baseline) ** 2))
    return float(np.sqrt(np.sum((a - b) ** 2)) / den)


# --------------------------------------------------------------------------
# orchestration


class PipelineError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    config: ChannelConfig
    mode: str
    steady: SteadyResult | None = None
    coarse: fw.Trajectory | None = None
    dual: object = None
    breakdown: object = None
    plan: object = None
    fine_steady: SteadyResult | None = None
    fine: fw.Trajectory | None = None
    J: float = math.nan
    files: dict = field(default_factory=dict)


def coarse_run(cfg: ChannelConfig, steady: SteadyResult, cfl=None, record=True, progress=None):
    """Uniform-CFL implicit run on the coarse level from the steady state."""
    from .controller import uniform_plan_for
    cfl = cfg.coarse_cfl if cfl is None else cfl
    problem = cfg.problem(steady.state.mesh.hierarchy.L, min_tree=steady.floor)
    plan = uniform_plan_for(steady.state.mesh, steady.state.field, cfg.T, cfl, gamma=cfg.gamma)
    return fw.run_forward(problem, steady.state, plan.entries, record=record, progress=progress)


def rate_history(trajectory, level_shift=0):
    from .controller import RateHistory
    return RateHistory(trajectory.times, trajectory.rates, level_shift)


def plan_from_indicators(cfg: ChannelConfig, coarse: fw.Trajectory, breakdown, controller=None,
                         L_fine=None):
    from . import controller as ctl
    c = ctl.ControllerConfig() if controller is None else controller
    L_fine = cfg.L_fine if L_fine is None else L_fine
    shift = L_fine - coarse.meshes[0].hierarchy.L
    rates = rate_history(coarse, shift)
    eta = breakdown.localized
    tol = c.tol if c.tol is not None else ctl.default_tolerance(eta, L_fine, L_fine - shift)
    plan = ctl.equidistribute(eta, np.asarray(coarse.dts), tol, rates, c)
    return ctl.apply_strategy(plan, c, rates)


def fine_initial(cfg: ChannelConfig, coarse_steady: SteadyResult, level=None, progress=None):
    level = cfg.L_fine if level is None else level
    if level == coarse_steady.state.mesh.hierarchy.L:
        return coarse_steady
    start = prolongate_state(coarse_steady.state, cfg.hierarchy(level))
    return steady_state(cfg, level, initial=start, progress=progress)


def write_steps(trajectory, path):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "t", "dt", "kind", "rate", "cells", "newton", "linear"])
        counts = trajectory.cell_counts() if trajectory.recorded else None
        for m, (dt, kind) in enumerate(zip(trajectory.dts, trajectory.kinds), 1):
            rep = trajectory.newton[m - 1]
            cells = counts[m] if counts else ""
            w.writerow([m, repr(float(trajectory.times[m])), repr(float(dt)), kind,
                        repr(float(trajectory.rates[m - 1])), cells,
                        rep.iterations if rep else 0, rep.linear_iterations_total if rep else 0])


def read_steps(path):
    """``(times, dts, kinds, rates)`` from a steps table; ``times`` includes 0."""
    import csv
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    dts = np.array([float(r["dt"]) for r in rows])
    times = np.concatenate([[0.0], [float(r["t"]) for r in rows]])
    return times, dts, [r["kind"] for r in rows], np.array([float(r["rate"]) for r in rows])


def write_trace(trajectory, path):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "p"])
        for t, x, p, _ in trajectory.pressure_trace:
            for xi, pi in zip(x, p):
                w.writerow([repr(float(t)), repr(float(xi)), repr(float(pi))])


def write_field(state: fw.SolverState, path):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "i", "j", "x", "y", "rho", "rho_u", "rho_v", "rho_E"])
        m = state.mesh
        for k in range(m.n_cells):
            w.writerow([int(m.level[k]), int(m.i[k]), int(m.j[k]), repr(float(m.centers[k, 0])),
                        repr(float(m.centers[k, 1]))] + [repr(float(v)) for v in state.field[k]])


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise PipelineError(name, exc) from exc


def run_pipeline(cfg: ChannelConfig, mode="implicit", controller=None, out=None,
                 uniform_cfl=1.0, L_fine=None, progress=None):
    """steady -> coarse run -> dual -> indicators -> plan -> fine run.

    ``mode`` is ``implicit`` or ``eximp`` (controller plans) or ``uniform``
    (constant CFL ``uniform_cfl`` on the fine level, no coarse stages).
    Artifacts go to directory ``out`` when given.
    """
    import os
    from . import controller as ctl
    from .dual import run_dual
    from .indicators import compute_breakdown, write_report

    if mode not in ("implicit", "eximp", "uniform"):
        raise ValueError(f"unknown mode {mode!r}")
    L_fine = cfg.L_fine if L_fine is None else L_fine
    if controller is None:
        controller = ctl.ControllerConfig(mode="eximp" if mode == "eximp" else "implicit")
    elif mode != "uniform":
        controller = replace(controller, mode=mode)
    note = progress or (lambda stage, msg: None)
    res = PipelineResult(cfg, mode)
    if out is not None:
        os.makedirs(out, exist_ok=True)

    def path(name):
        p = os.path.join(out, name)
        res.files[name] = p
        return p

    note("steady", f"level {cfg.L_coarse}")
    res.steady = _stage("steady", steady_state, cfg, cfg.L_coarse, raise_on_failure=True)
    functional = make_functional(cfg)
    if mode != "uniform":
        note("coarse", "uniform CFL run")
        res.coarse = _stage("coarse", coarse_run, cfg, res.steady)
        note("dual", "backward sweep")
        res.dual = _stage("dual", run_dual, res.coarse, functional, cfg.gamma, keep_fields=False)
        note("indicators", "error representation")
        res.breakdown = _stage("indicators", compute_breakdown, res.coarse, res.dual,
                               cfg.boundary(), functional, cfg.gamma)
        note("plan", controller.mode)
        res.plan = _stage("plan", plan_from_indicators, cfg, res.coarse, res.breakdown,
                          controller, L_fine)
    note("fine-steady", f"level {L_fine}")
    res.fine_steady = _stage("fine-steady", fine_initial, cfg, res.steady, L_fine)
    if mode == "uniform":
        st = res.fine_steady.state
        res.plan = _stage("plan", ctl.uniform_plan_for, st.mesh, st.field, cfg.T, uniform_cfl,
                          gamma=cfg.gamma)
    note("fine", f"{len(res.plan)} steps")
    problem = cfg.problem(L_fine, min_tree=res.fine_steady.floor)
    res.fine = _stage("fine", fw.run_forward, problem, res.fine_steady.state, res.plan.entries,
                      record=False)
    res.J, _ = evaluate_functional(res.fine, functional)
    if out is not None:
        if res.coarse is not None:
            write_steps(res.coarse, path("coarse_steps.csv"))
            write_trace(res.coarse, path("coarse_trace.csv"))
            write_report(res.breakdown, path("indicators.csv"))
        res.plan.write(path("plan.csv"))
        write_steps(res.fine, path("fine_steps.csv"))
        write_trace(res.fine, path("fine_trace.csv"))
        with open(path("summary.csv"), "w") as fh:
            fh.write("key,value\n")
            fh.write(f"mode,{mode}\n")
            fh.write(f"plan_steps,{len(res.plan)}\n")
            fh.write(f"explicit_steps,{res.plan.count('explicit')}\n")
            fh.write(f"fine_steps_taken,{res.fine.n_steps}\n")
            fh.write(f"newton_total,{sum(r.iterations for r in res.fine.newton if r)}\n")
            fh.write(f"J,{res.J!r}\n")
            if res.breakdown is not None:
                fh.write(f"eta_k,{res.breakdown.eta_k!r}\n")
                fh.write(f"eta_h,{res.breakdown.eta_h!r}\n")
    return res
