"""Command line front end: ``randeuler {solve,uq,converge,cauchy,diagnose}``.

Exit codes: 0 success, 2 configuration error, 3 solver abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from . import collocation as col
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import (conservation_audit, density_floor_certificate, entropy_minimum,
                          read_records_csv, stability_check, trajectory_distance,
                          trajectory_jump_max, write_records_csv)
from .mesh import MeshError, load_mesh, mesh_constant_M, write_mesh
from .thermo import GasParams
from .vfv import Trajectory, read_field, solve, write_field

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4


class _Abort(Exception):
    pass


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _snapshot_name(t: float) -> str:
    return f"snap_t{t:.6g}.field2d"


def _omega(cfg: RunConfig):
    if cfg.p == 0:
        return ()
    if len(cfg.omega) != cfg.p:
        raise ConfigError(f"[data] omega: solve needs {cfg.p} coordinates for p = {cfg.p}")
    return cfg.omega


def write_trajectory(traj: Trajectory, gas: GasParams, outdir):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(traj.mesh, out / "mesh.mesh2d")
    for s in traj.snapshots:
        write_field(s, gas.gamma, out / _snapshot_name(s.t))
    write_records_csv(traj.records, out / "diagnostics.csv")
    (out / "status.txt").write_text(f"{traj.status}\n{traj.message}\n")


def cmd_solve(cfg: RunConfig) -> int:
    mesh = cfg.mesh()
    f0 = col.initial_field_at(_omega(cfg), cfg.family, mesh, cfg.gas)
    traj = solve(f0, cfg.gas, cfg.scheme)
    write_trajectory(traj, cfg.gas, cfg.outdir)
    print(f"{traj.status}: {traj.n_steps} steps, {len(traj.snapshots)} snapshots -> {cfg.outdir}")
    if not traj.completed:
        print(traj.message, file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def _orders(dist):
    out = []
    for a, b in zip(dist, dist[1:] + [math.nan]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else math.nan)
    return out


def cmd_converge(cfg: RunConfig, levels) -> int:
    """Self-convergence against the finest level; writes ``eoc.csv``."""
    levels = sorted(levels)
    if len(levels) < 3:
        raise ConfigError("converge needs at least three levels")
    if cfg.mesh_file is not None:
        raise ConfigError("[mesh] file: converge builds its own nested meshes")
    fam_mesh = cfg.mesh_family
    omega = _omega(cfg)
    trajs = []
    for n in levels:
        f0 = col.initial_field_at(omega, cfg.family, fam_mesh(n), cfg.gas)
        traj = solve(f0, cfg.gas, cfg.scheme)
        if not traj.completed:
            raise _Abort(f"level {n}: {traj.message}")
        trajs.append(traj)
    ref = trajs[-1]
    dist = [trajectory_distance(t, ref, cfg.norm) for t in trajs[:-1]]
    orders = _orders(dist)
    cfg.outdir.mkdir(parents=True, exist_ok=True)
    with open(cfg.outdir / "eoc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "distance", "order"])
        for n, d, o in zip(levels, dist, orders):
            w.writerow([n, _fmt(d), "nan" if math.isnan(o) else _fmt(o)])
            print(f"n={n:5d}  distance={d:.6e}  order={o:.3f}")
    return EXIT_OK


def _solver(cfg: RunConfig, workers=None) -> col.CollocationSolver:
    if cfg.mesh_file is not None:
        raise ConfigError("[mesh] file: collocation builds its own meshes from n(M)")
    return col.CollocationSolver(cfg.family, cfg.domain, cfg.gas, cfg.scheme, cfg.n_of_M,
                                 cfg.mesh_family, workers, cfg.norm)


def cmd_uq(cfg: RunConfig, workers=None) -> int:
    if cfg.p < 1:
        raise ConfigError("[collocation] p: uq needs p >= 1")
    solver = _solver(cfg, workers)
    r = col.run_collocation(cfg.family, cfg.domain, cfg.M, cfg.gas, cfg.scheme, solver=solver)
    col.write_campaign(r, cfg.outdir, cfg.gas, thresholds=cfg.thresholds)
    for m, msg in sorted(r.failures.items()):
        print(f"node {m} failed: {msg}", file=sys.stderr)
    print(f"{len(r.ok_nodes)}/{r.grid.nu} nodes completed -> {cfg.outdir}")
    return EXIT_OK if r.ok_nodes else EXIT_ABORT


def cmd_cauchy(cfg: RunConfig, levels=None, eps=None, samples=None, seed=None,
               workers=None) -> int:
    """Two-level Cauchy estimates for consecutive pairs of ``levels``; writes ``cauchy.csv``."""
    levels = tuple(levels or cfg.levels)
    if len(levels) < 2:
        raise ConfigError("cauchy needs at least two levels")
    samples = samples or cfg.samples
    seed = cfg.seed if seed is None else seed
    solver = _solver(cfg, workers)
    pairs = list(zip(levels[:-1], levels[1:]))
    eps = eps or cfg.eps or col.median_distance(solver, *pairs[0])
    if not eps > 0:
        raise _Abort("median two-level distance is zero; pass --eps")
    ests = [col.cauchy_in_probability(solver, pair, eps, samples, seed) for pair in pairs]
    if any(not math.isfinite(d) for e in ests for d in e.distances):
        print("some nodes failed; their samples count as exceedances", file=sys.stderr)
    cfg.outdir.mkdir(parents=True, exist_ok=True)
    col.write_cauchy_csv(ests, cfg.outdir / "cauchy.csv")
    for e in ests:
        print(f"({e.M1},{e.M2}) eps={e.epsilon:.6e} p_hat={e.p_hat:.4f} +- {e.stderr:.4f}")
    return EXIT_OK


def load_trajectory(directory) -> tuple[Trajectory, GasParams]:
    d = Path(directory)
    mesh = load_mesh(d / "mesh.mesh2d")
    snaps = []
    gamma = None
    for f in d.glob("snap_t*.field2d"):
        fld, gamma = read_field(f, mesh)
        snaps.append(fld)
    if not snaps:
        raise OSError(f"{d}: no snapshot files")
    snaps.sort(key=lambda s: s.t)
    records = read_records_csv(d / "diagnostics.csv") if (d / "diagnostics.csv").exists() else []
    status = "completed"
    if (d / "status.txt").exists():
        status = (d / "status.txt").read_text().splitlines()[0]
    return Trajectory(snaps, records, status), GasParams(gamma)


def cmd_diagnose(directory) -> int:
    traj, gas = load_trajectory(directory)
    dm, de = conservation_audit(traj)
    s_min, s0 = entropy_minimum(traj, gas)
    rep = stability_check(traj, gas)
    jr, ju, jE = trajectory_jump_max(traj, gas)
    pred, meas = density_floor_certificate(traj, ju, mesh_constant_M(traj.mesh))
    rows = [
        ("status", traj.status),
        ("snapshots", len(traj.snapshots)),
        ("steps", len(traj.records)),
        ("mass_drift", dm), ("energy_drift", de),
        ("min_entropy", s_min), ("initial_min_entropy", s0),
        ("rho_power", rep.rho_power), ("rho_bound", rep.rho_bound),
        ("m_power", rep.m_power), ("m_bound", rep.m_bound),
        ("energy_norm", rep.E_norm), ("initial_energy", rep.E_total0),
        ("stability_ok", rep.all_ok),
        ("jump_rho", jr), ("jump_u", ju), ("jump_E", jE),
        ("floor_predicted", pred), ("floor_measured", meas),
    ]
    for k, v in rows:
        print(f"{k:20s} {_fmt(v) if isinstance(v, float) else v}")
    return EXIT_OK


def _int_list(s):
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="randeuler", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("solve", help="deterministic run at a fixed parameter point")
    p.add_argument("config")
    p = sub.add_parser("uq", help="collocation campaign at level M")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("converge", help="self-convergence study over nested meshes")
    p.add_argument("config")
    p.add_argument("--levels", type=_int_list, default=[16, 32, 64, 128])
    p = sub.add_parser("cauchy", help="two-level Cauchy estimates in probability")
    p.add_argument("config")
    p.add_argument("--levels", type=_int_list, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("diagnose", help="audit a trajectory directory written by solve")
    p.add_argument("directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "diagnose":
            try:
                return cmd_diagnose(args.directory)
            except ValueError as exc:
                raise OSError(str(exc)) from None
        cfg = parse_config(args.config)
        if args.cmd == "solve":
            return cmd_solve(cfg)
        if args.cmd == "uq":
            return cmd_uq(cfg, args.workers)
        if args.cmd == "converge":
            return cmd_converge(cfg, args.levels)
        return cmd_cauchy(cfg, args.levels, args.eps, args.samples, args.seed, args.workers)
    except (ConfigError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _Abort as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
