"""Command line entry point: ``python -m adaptive_euler <command> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import controller as ctl
from . import scenario as sc
from . import storage
from .geometry import AdaptiveMesh, dump_mesh

log = logging.getLogger("adaptive_euler")


def _config(args):
    if args.config:
        cfg, extras = sc.load_config(args.config)
    else:
        cfg, extras = sc.ChannelConfig(), {}
    return cfg, extras


def _controller(extras, mode):
    c = ctl.ControllerConfig.from_mapping(extras)
    if mode in ("implicit", "eximp"):
        c = ctl.ControllerConfig(**{**c.__dict__, "mode": mode})
    return c


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _level(args, cfg):
    return cfg.L_coarse if args.level is None else args.level


def _steady(args, cfg, level):
    """Load the steady state of ``level`` from the output directory or compute it."""
    path = _out(args, f"steady_L{level}.npz")
    h = cfg.hierarchy(level)
    if os.path.exists(path):
        state, floor = storage.load_state(path, h)
        return sc.SteadyResult(state, floor, [], True, 0)
    if level == cfg.L_coarse:
        res = sc.steady_state(cfg, level, raise_on_failure=True)
    else:
        res = sc.fine_initial(cfg, _steady(args, cfg, cfg.L_coarse), level)
    storage.save_state(res.state, path, res.floor)
    return res


def cmd_steady(args):
    cfg, _ = _config(args)
    level = _level(args, cfg)
    res = _steady(args, cfg, level)
    sc.write_field(res.state, _out(args, f"steady_L{level}.csv"))
    with open(_out(args, f"steady_L{level}_history.csv"), "w") as fh:
        fh.write("step,variation\n")
        for k, v in enumerate(res.history, 1):
            fh.write(f"{k},{v!r}\n")
    print(f"steady state L={level}: {res.state.mesh.n_cells} cells, "
          f"max Mach {sc.max_mach(res.state, cfg.gamma):.4f}")


def cmd_run_forward(args):
    cfg, extras = _config(args)
    level = _level(args, cfg)
    steady = _steady(args, cfg, level)
    if args.plan:
        plan = ctl.TimestepPlan.read(args.plan)
    else:
        cfl = cfg.coarse_cfl if args.cfl is None else args.cfl
        plan = ctl.uniform_plan_for(steady.state.mesh, steady.state.field, cfg.T, cfl,
                                    gamma=cfg.gamma)
    problem = cfg.problem(level, min_tree=steady.floor)
    from . import forward as fw
    traj = fw.run_forward(problem, steady.state, plan.entries)
    storage.save_trajectory(traj, _out(args, f"run_L{level}.npz"))
    sc.write_steps(traj, _out(args, f"run_L{level}_steps.csv"))
    sc.write_trace(traj, _out(args, f"run_L{level}_trace.csv"))
    J, _ = sc.evaluate_functional(traj, sc.make_functional(cfg))
    print(f"forward run L={level}: {traj.n_steps} steps, J = {J:.8e}")


def _trajectory(args, cfg):
    level = _level(args, cfg)
    path = _out(args, f"run_L{level}.npz")
    if not os.path.exists(path):
        raise SystemExit(f"no forward run at {path}; run 'run-forward' first")
    return storage.load_trajectory(path, cfg.hierarchy(level), cfg.gamma)


def cmd_run_dual(args):
    from .dual import run_dual
    cfg, _ = _config(args)
    traj = _trajectory(args, cfg)
    d = run_dual(traj, sc.make_functional(cfg), cfg.gamma)
    with open(_out(args, "dual.csv"), "w") as fh:
        fh.write("m,t,substeps,max_abs_w\n")
        for m in range(1, traj.n_steps + 1):
            fh.write(f"{m},{traj.times[m]!r},{d.substeps[m - 1]},{float(np.abs(d.W[m]).max())!r}\n")
    print(f"dual solved over {traj.n_steps} intervals")
    return traj, d


def cmd_indicators(args):
    from .indicators import compute_breakdown, write_report
    cfg, _ = _config(args)
    traj, d = cmd_run_dual(args)
    br = compute_breakdown(traj, d, cfg.boundary(), sc.make_functional(cfg), cfg.gamma)
    write_report(br, _out(args, "indicators.csv"))
    print(f"eta_k = {br.eta_k:.6e}, eta_h = {br.eta_h:.6e}")


def cmd_make_plan(args):
    from .indicators import read_report
    cfg, extras = _config(args)
    level = _level(args, cfg)
    mode = args.mode or "implicit"
    if mode == "uniform":
        steady = _steady(args, cfg, cfg.L_fine)
        cfl = 1.0 if args.cfl is None else args.cfl
        plan = ctl.uniform_plan_for(steady.state.mesh, steady.state.field, cfg.T, cfl,
                                    gamma=cfg.gamma)
    else:
        br = read_report(args.indicators or _out(args, "indicators.csv"))
        times, dts, _, rates = sc.read_steps(args.steps or _out(args, f"run_L{level}_steps.csv"))
        c = _controller(extras, mode)
        rh = ctl.RateHistory(times, rates, cfg.L_fine - level)
        tol = c.tol if c.tol is not None else ctl.default_tolerance(br.localized, cfg.L_fine, level)
        plan = ctl.apply_strategy(ctl.equidistribute(br.localized, dts, tol, rh, c), c, rh)
    plan.write(_out(args, "plan.csv"))
    print(f"plan: {len(plan)} steps ({plan.count('explicit')} explicit)")


def cmd_pipeline(args):
    cfg, extras = _config(args)
    mode = args.mode or "implicit"
    c = _controller(extras, mode) if mode != "uniform" else None
    cfl = 1.0 if args.cfl is None else args.cfl
    res = sc.run_pipeline(cfg, mode, c, args.out, uniform_cfl=cfl,
                          progress=lambda stage, msg: log.info("%s: %s", stage, msg))
    print(f"pipeline ({mode}): {len(res.plan)} planned steps, J = {res.J:.8e}")
    for name, path in res.files.items():
        print(f"  {name}: {path}")


def cmd_dump_mesh(args):
    cfg, _ = _config(args)
    level = _level(args, cfg)
    h = cfg.hierarchy(level)
    dump_mesh(AdaptiveMesh(h, h.full_tree()), _out(args, f"mesh_L{level}.csv"))


def build_parser():
    p = argparse.ArgumentParser(prog="adaptive_euler",
                                description="Adaptive implicit/explicit Euler solver for the bump channel")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="flat key = value configuration file")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--level", type=int, help="finest level (default: L_coarse)")
        s.add_argument("--mode", choices=["implicit", "eximp", "uniform"])
        s.add_argument("--cfl", type=float, help="CFL number for uniform steps")
        s.set_defaults(func=fn)
        return s

    add("steady", cmd_steady, "steady state from free stream")
    s = add("run-forward", cmd_run_forward, "forward run along a plan or at uniform CFL")
    s.add_argument("--plan", help="plan file (dt,kind lines)")
    add("run-dual", cmd_run_dual, "dual sweep over a stored forward run")
    add("indicators", cmd_indicators, "dual sweep and error indicators")
    s = add("make-plan", cmd_make_plan, "timestep plan from an indicator report")
    s.add_argument("--indicators", help="indicator report (default: OUT/indicators.csv)")
    s.add_argument("--steps", help="coarse steps table (default: OUT/run_L<level>_steps.csv)")
    add("pipeline", cmd_pipeline, "coarse run, dual, plan and fine run")
    add("dump-mesh", cmd_dump_mesh, "write the full mesh of a level")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except sc.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
