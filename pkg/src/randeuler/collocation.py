"""Stochastic collocation over a box of random parameters.

The parameter box ``[0, 1]^p`` carries the uniform measure.  Level ``M``
cuts every axis into ``M`` half-open intervals (the last one closed); one
deterministic solve runs at the midpoint of every cell and the random
field is reconstructed as piecewise constant in the parameter.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import NormSpec, trajectory_distance, trajectory_jump_max, write_records_csv
from .mesh import Mesh, build_structured, nested_parent_map
from .thermo import GasParams
from .vfv import ConservedField, SchemeParams, Trajectory, solve, write_field

WORKERS_ENV = "RANDEULER_WORKERS"


class FamilyEvaluationError(ValueError):
    pass


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# random initial data


def _first_axis(omega, default=0.5):
    return float(omega[0]) if len(omega) else default


@dataclass(frozen=True)
class UniformRest:
    """Constant state at rest, independent of the parameter."""

    rho0: float = 1.0
    p0: float = 1.0
    name = "uniform-rest"

    def evaluate(self, x, y, omega):
        rho = np.full_like(x, self.rho0)
        return rho, np.zeros(x.shape + (2,)), np.full_like(x, self.p0)

    def bounds(self, omega, gas):
        E = self.p0 / (gas.gamma - 1.0)
        s = gas.cv * math.log(self.p0 / self.rho0) - math.log(self.rho0)
        return _relaxed(self.rho0, E, s)


@dataclass(frozen=True)
class AmplitudeBump:
    """Gaussian bump at rest with amplitude ``a0 + a1 * omega_1``.

    ``rho = rho0 (1 + A b)`` and ``p = p0 (1 + A b)``, so the temperature is
    uniform and the entropy is lowest at the bump centre.
    """

    rho0: float = 1.0
    p0: float = 1.0
    a0: float = 0.5
    a1: float = 0.5
    width: float = 0.15
    cx: float = 0.5
    cy: float = 0.5
    name = "amplitude-bump"

    def amplitude(self, omega):
        return self.a0 + self.a1 * _first_axis(omega)

    def evaluate(self, x, y, omega):
        b = np.exp(-((x - self.cx) ** 2 + (y - self.cy) ** 2) / self.width ** 2)
        scale = 1.0 + self.amplitude(omega) * b
        return self.rho0 * scale, np.zeros(x.shape + (2,)), self.p0 * scale

    def bounds(self, omega, gas):
        A = self.amplitude(omega)
        E = self.p0 * (1.0 + A) / (gas.gamma - 1.0)
        s = gas.cv * math.log(self.p0 / self.rho0) - math.log(self.rho0 * (1.0 + A))
        return _relaxed(self.rho0, E, s)


@dataclass(frozen=True)
class SodInterface:
    """Shock-tube states separated at ``x = x0 + dx * omega_1``."""

    x0: float = 0.4
    dx: float = 0.2
    rho_left: float = 1.0
    p_left: float = 1.0
    rho_right: float = 0.125
    p_right: float = 0.1
    name = "sod-interface"

    def evaluate(self, x, y, omega):
        left = x < self.x0 + self.dx * _first_axis(omega)
        rho = np.where(left, self.rho_left, self.rho_right)
        p = np.where(left, self.p_left, self.p_right)
        return rho, np.zeros(x.shape + (2,)), p

    def bounds(self, omega, gas):
        rho = min(self.rho_left, self.rho_right)
        E = max(self.p_left, self.p_right) / (gas.gamma - 1.0)
        s = min(gas.cv * math.log(p / r) - math.log(r)
                for r, p in ((self.rho_left, self.p_left), (self.rho_right, self.p_right)))
        return _relaxed(rho, E, s)


@dataclass(frozen=True)
class VacuumRarefaction:
    """Outer gas receding from ``x = 1/2`` at speed ``speed * (1 + omega_1)``.

    The strip ``|x - 1/2| < core_width`` holds gas at density ``core_rho``,
    barely above the solver's admissibility floor, and temperature one.
    The outflow pushes the strip below the floor within a few hundred
    steps, so this family exercises the abort path on purpose.
    """

    rho0: float = 1.0
    p0: float = 0.4
    speed: float = 20.0
    core_rho: float = 1.000000001e-12
    core_width: float = 0.26
    name = "vacuum-rarefaction"

    def _speed(self, omega):
        return self.speed * (1.0 + _first_axis(omega, 0.0))

    def evaluate(self, x, y, omega):
        v = self._speed(omega)
        core = np.abs(x - 0.5) < self.core_width
        u = np.zeros(x.shape + (2,))
        u[..., 0] = np.where(x < 0.5, -v, v)
        rho = np.where(core, self.core_rho, self.rho0)
        return rho, u, np.where(core, self.core_rho, self.p0)

    def bounds(self, omega, gas):
        v = self._speed(omega)
        rho = min(self.rho0, self.core_rho)
        E = max(self.p0, self.core_rho) / (gas.gamma - 1.0) + 0.5 * max(self.rho0, self.core_rho) * v * v
        s = min(gas.cv * math.log(self.p0 / self.rho0) - math.log(self.rho0),
                -math.log(self.core_rho))
        return _relaxed(rho, E, s)


def _relaxed(rho, E, s, margin=1e-9):
    # strict inequalities of the admissibility definition
    return rho * (1.0 - margin), E * (1.0 + margin), s - margin * max(1.0, abs(s))


FAMILIES = {cls.name: cls for cls in (UniformRest, AmplitudeBump, SodInterface, VacuumRarefaction)}


def make_family(name: str, **params):
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown data family {name!r}; choose from {sorted(FAMILIES)}") from None
    return cls(**params)


# degree-5 seven-point rule on the triangle, all weights positive
_R = math.sqrt(15.0)
_r1, _r2 = (6.0 - _R) / 21.0, (6.0 + _R) / 21.0
_w1, _w2 = (155.0 - _R) / 1200.0, (155.0 + _R) / 1200.0
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [1 - 2 * _r1, _r1, _r1], [_r1, 1 - 2 * _r1, _r1], [_r1, _r1, 1 - 2 * _r1],
    [1 - 2 * _r2, _r2, _r2], [_r2, 1 - 2 * _r2, _r2], [_r2, _r2, 1 - 2 * _r2],
])
QUAD_WEIGHTS = np.array([0.225, _w1, _w1, _w1, _w2, _w2, _w2])


def _check_omega(omega, p=None):
    omega = np.atleast_1d(np.asarray(omega, dtype=float)) if np.size(omega) else np.zeros(0)
    if p is not None and len(omega) != p:
        raise FamilyEvaluationError(f"parameter point has {len(omega)} coordinates, expected {p}")
    if np.any((omega < 0.0) | (omega > 1.0)) or not np.all(np.isfinite(omega)):
        raise FamilyEvaluationError(f"parameter point {omega.tolist()} outside the unit box")
    return omega


def initial_field_at(omega, fam, mesh: Mesh, gas: GasParams) -> ConservedField:
    """Cell averages of the family's data at ``omega`` (fixed positive-weight quadrature)."""
    omega = _check_omega(omega)
    pts = np.einsum("qk,ckd->cqd", QUAD_BARY, mesh.vertices[mesh.cells])
    rho, u, p = fam.evaluate(pts[..., 0], pts[..., 1], omega)
    mom = rho[..., None] * u
    E = p / (gas.gamma - 1.0) + 0.5 * rho * (u ** 2).sum(-1)
    U = np.column_stack([rho @ QUAD_WEIGHTS, np.einsum("cqd,q->cd", mom, QUAD_WEIGHTS),
                         E @ QUAD_WEIGHTS])
    return ConservedField(mesh, U, 0.0)


# --------------------------------------------------------------------------
# parameter grids


@dataclass(frozen=True)
class ParamDomain:
    p: int = 1

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("parameter dimension must be >= 0")


@dataclass(frozen=True)
class StructuredFamily:
    """Mesh family ``n -> build_structured(n, ny, Lx, Ly)`` with ``ny = max(1, round(n * Ly/Lx))``."""

    Lx: float = 1.0
    Ly: float = 1.0

    def __call__(self, n: int) -> Mesh:
        ny = max(1, int(round(n * self.Ly / self.Lx)))
        return build_structured(n, ny, self.Lx, self.Ly)


@dataclass(frozen=True)
class LinearLevelMap:
    """``n(M) = factor * M`` cells per axis."""

    factor: int = 8

    def __call__(self, M: int) -> int:
        return self.factor * M


@dataclass(frozen=True)
class CollocationGrid:
    p: int
    M: int
    n: int
    lower: np.ndarray  # (nu, p)
    nodes: np.ndarray  # (nu, p)
    weights: np.ndarray  # (nu,)

    @property
    def nu(self) -> int:
        return len(self.weights)

    @property
    def max_diameter(self) -> float:
        return math.sqrt(self.p) / self.M

    def locate(self, omega) -> int:
        """Index of the cell containing ``omega`` (intervals closed on the left)."""
        omega = _check_omega(omega, self.p)
        idx = 0
        for w in omega:
            k = min(int(math.floor(w * self.M)), self.M - 1)
            if k + 1 < self.M and (k + 1) / self.M <= w:
                k += 1
            idx = idx * self.M + k
        return idx


def build_grid(domain: ParamDomain, M: int, n_of_M=None) -> CollocationGrid:
    if M < 1:
        raise ValueError("level M must be >= 1")
    n_of_M = n_of_M or LinearLevelMap()
    p = domain.p
    idx = np.array(list(itertools.product(range(M), repeat=p)), dtype=float).reshape(M ** p, p)
    lower = idx / M
    nodes = (idx + 0.5) / M
    weights = np.full(len(idx), 1.0 / M ** p)
    return CollocationGrid(p, M, int(n_of_M(M)), lower, nodes, weights)


# --------------------------------------------------------------------------
# node solves


def _node_task(args):
    fam, omega, mesh_family, n, gas, params = args
    mesh = mesh_family(n)
    f0 = initial_field_at(omega, fam, mesh, gas)
    try:
        traj = solve(f0, gas, params)
    except Exception as exc:  # a failing node is reported, never fatal
        return None, f"{type(exc).__name__}: {exc}"
    return ([s.t for s in traj.snapshots], [s.U for s in traj.snapshots], traj.records,
            traj.status, traj.message, traj.n_steps), None


class CollocationSolver:
    """Runs and caches node solves for one family/domain/scheme configuration.

    Results are addressed by ``(M, node index)``, so their values do not
    depend on the order or the worker that produced them.
    """

    def __init__(self, fam, domain: ParamDomain, gas: GasParams, params: SchemeParams,
                 n_of_M=None, mesh_family=None, workers=None, norm: NormSpec | None = None):
        self.fam = fam
        self.domain = domain
        self.gas = gas
        self.params = params
        self.n_of_M = n_of_M or LinearLevelMap()
        self.mesh_family = mesh_family or StructuredFamily()
        self.workers = workers or default_workers()
        self.norm = norm or NormSpec(1.0, gas.gamma)
        self._meshes: dict[int, Mesh] = {}
        self._trajs: dict[tuple, Trajectory | None] = {}
        self.failures: dict[tuple, str] = {}
        self._dist: dict[tuple, float] = {}
        self._lock = threading.Lock()

    def grid(self, M: int) -> CollocationGrid:
        return build_grid(self.domain, M, self.n_of_M)

    def mesh(self, n: int) -> Mesh:
        with self._lock:
            if n not in self._meshes:
                self._meshes[n] = self.mesh_family(n)
            return self._meshes[n]

    def solve_nodes(self, M: int, indices=None):
        grid = self.grid(M)
        indices = range(grid.nu) if indices is None else indices
        todo = [m for m in dict.fromkeys(indices) if (M, m) not in self._trajs]
        if todo:
            tasks = [(self.fam, grid.nodes[m], self.mesh_family, grid.n, self.gas, self.params)
                     for m in todo]
            if self.workers > 1 and len(tasks) > 1:
                with ProcessPoolExecutor(max_workers=min(self.workers, len(tasks))) as ex:
                    results = list(ex.map(_node_task, tasks))
            else:
                results = [_node_task(t) for t in tasks]
            mesh = self.mesh(grid.n)
            for m, (payload, err) in zip(todo, results):
                traj = None
                if payload is not None:
                    times, states, records, status, message, n_steps = payload
                    traj = Trajectory([ConservedField(mesh, U, t) for t, U in zip(times, states)],
                                      records, status, message, n_steps)
                    if not traj.completed:
                        err = message
                with self._lock:
                    self._trajs.setdefault((M, m), traj)
                    if err:
                        self.failures[(M, m)] = err
        return [self._trajs[(M, m)] for m in indices]

    def check_nested(self, M1: int, M2: int):
        """Raise :class:`NonNestedError` unless the space meshes of both levels are nested."""
        n1, n2 = sorted((self.n_of_M(M1), self.n_of_M(M2)))
        if n1 != n2:
            nested_parent_map(self.mesh(n1), self.mesh(n2))

    def trajectory(self, M: int, m: int):
        return self.solve_nodes(M, [m])[0]

    def distance(self, M1: int, m1: int, M2: int, m2: int) -> float:
        key = (M1, m1, M2, m2)
        if key not in self._dist:
            a = self.trajectory(M1, m1)
            b = self.trajectory(M2, m2)
            failed = any(t is None or not t.completed for t in (a, b))
            # a failed node counts as arbitrarily far away
            d = math.inf if failed else trajectory_distance(a, b, self.norm)
            with self._lock:
                self._dist.setdefault(key, d)
        return self._dist[key]


@dataclass
class UQResult:
    grid: CollocationGrid
    trajectories: list
    failures: dict = field(default_factory=dict)

    @property
    def ok_nodes(self):
        return [m for m, t in enumerate(self.trajectories) if t is not None and t.completed]


def run_collocation(fam, domain: ParamDomain, M: int, gas: GasParams, params: SchemeParams,
                    n_of_M=None, mesh_family=None, workers=None, solver=None) -> UQResult:
    """One deterministic solve per collocation node of level ``M``."""
    solver = solver or CollocationSolver(fam, domain, gas, params, n_of_M, mesh_family, workers)
    grid = solver.grid(M)
    trajs = solver.solve_nodes(M)
    fails = {m: msg for (lvl, m), msg in solver.failures.items() if lvl == M}
    return UQResult(grid, trajs, fails)


def evaluate_random_field(r: UQResult, omega, t) -> ConservedField:
    """Snapshot at time ``t`` of the node whose cell contains ``omega``."""
    m = r.grid.locate(omega)
    traj = r.trajectories[m]
    if traj is None:
        raise RuntimeError(f"node {m} failed: {r.failures.get(m, 'no trajectory')}")
    return traj.snapshot_at(t)


def statistics(r: UQResult, t):
    """Probability-weighted mean and variance fields at snapshot time ``t``.

    Failed nodes are left out and the remaining weights renormalised.
    """
    ok = r.ok_nodes
    if not ok:
        raise RuntimeError("no successful node")
    w = r.grid.weights[ok]
    w = w / w.sum()
    states = np.stack([r.trajectories[m].snapshot_at(t).U for m in ok])
    mean = np.einsum("m,mcj->cj", w, states)
    var = np.einsum("m,mcj->cj", w, (states - mean) ** 2)
    mesh = r.trajectories[ok[0]].mesh
    t_exact = r.trajectories[ok[0]].snapshot_at(t).t
    return ConservedField(mesh, mean, t_exact), ConservedField(mesh, var, t_exact)


def node_jump_bounds(r: UQResult, gas: GasParams) -> np.ndarray:
    """Trajectory-wide jump quotient ``C_m`` for every node (``inf`` for failed nodes)."""
    out = np.full(r.grid.nu, math.inf)
    for m, traj in enumerate(r.trajectories):
        if traj is not None and traj.completed:
            out[m] = max(trajectory_jump_max(traj, gas))
    return out


def jump_exceedance(r: UQResult, thresholds, gas: GasParams):
    """``[(N, P(C >= N))]`` with ``P`` the cell-volume weight of the exceeding nodes."""
    C = node_jump_bounds(r, gas)
    return [(float(N), float(np.sum(r.grid.weights[C >= N]))) for N in thresholds]


# --------------------------------------------------------------------------
# two-level Cauchy estimates


@dataclass(frozen=True)
class CauchyEstimate:
    M1: int
    M2: int
    epsilon: float
    J: int
    seed: int
    p_hat: float
    stderr: float
    distances: np.ndarray


def _refinement(solver: CollocationSolver, M1: int, M2: int):
    """Cells of the common refinement of two levels: ``(weight, m1, m2)`` triples."""
    p = solver.domain.p
    g1, g2 = solver.grid(M1), solver.grid(M2)
    axis = []
    cuts = sorted(set([k / M1 for k in range(M1 + 1)] + [k / M2 for k in range(M2 + 1)]))
    cuts = np.unique(np.round(cuts, 15))
    for a, b in zip(cuts[:-1], cuts[1:]):
        axis.append((b - a, 0.5 * (a + b)))
    out = []
    for combo in itertools.product(axis, repeat=p):
        w = float(np.prod([c[0] for c in combo])) if p else 1.0
        mid = np.array([c[1] for c in combo])
        out.append((w, g1.locate(mid), g2.locate(mid)))
    return out


def distance_distribution(solver: CollocationSolver, M1: int, M2: int):
    """Exact distribution of ``d(U_M1(omega), U_M2(omega))``: ``(weights, distances)``."""
    solver.check_nested(M1, M2)
    cells = _refinement(solver, M1, M2)
    solver.solve_nodes(M1, sorted({c[1] for c in cells}))
    solver.solve_nodes(M2, sorted({c[2] for c in cells}))
    w = np.array([c[0] for c in cells])
    d = np.array([solver.distance(M1, c[1], M2, c[2]) for c in cells])
    return w, d


def exact_cauchy_probability(solver: CollocationSolver, M1: int, M2: int, epsilon: float) -> float:
    w, d = distance_distribution(solver, M1, M2)
    return float(np.sum(w[d >= epsilon]))


def median_distance(solver: CollocationSolver, M1: int, M2: int) -> float:
    """Weighted median of the two-level distance under the uniform measure."""
    w, d = distance_distribution(solver, M1, M2)
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(w[order])
    return float(d[order][np.searchsorted(cum, 0.5 - 1e-12)])


def cauchy_in_probability(solver: CollocationSolver, levels, epsilon: float, J, seed: int = 0
                          ) -> CauchyEstimate:
    """Estimate ``P(d(U_M1, U_M2) >= epsilon)``.

    ``J`` uniform samples are drawn with ``seed``.  ``J=None`` enumerates
    the cells of the common refinement of both partitions instead, which
    gives the exact probability (reported with zero standard error).
    """
    M1, M2 = levels
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    solver.check_nested(M1, M2)
    if J is None:
        w, d = distance_distribution(solver, M1, M2)
        p_hat = float(np.sum(w[d >= epsilon]))
        return CauchyEstimate(M1, M2, float(epsilon), len(d), seed, p_hat, 0.0, d)
    if J < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    omegas = rng.random((J, solver.domain.p))
    g1, g2 = solver.grid(M1), solver.grid(M2)
    pairs = [(g1.locate(w), g2.locate(w)) for w in omegas]
    solver.solve_nodes(M1, sorted({a for a, _ in pairs}))
    solver.solve_nodes(M2, sorted({b for _, b in pairs}))
    d = np.array([solver.distance(M1, a, M2, b) for a, b in pairs])
    p_hat = float(np.mean(d >= epsilon))
    stderr = math.sqrt(p_hat * (1.0 - p_hat) / J)
    return CauchyEstimate(M1, M2, float(epsilon), J, seed, p_hat, stderr, d)


# --------------------------------------------------------------------------
# campaign output


def _tag(t: float) -> str:
    return f"{t:.6g}"


def write_campaign(r: UQResult, outdir, gas: GasParams, times=None, thresholds=()):
    """Per-node diagnostics, mean/variance snapshots and the exceedance table."""
    out = Path(outdir)
    (out / "nodes").mkdir(parents=True, exist_ok=True)
    with open(out / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node"] + [f"omega{i + 1}" for i in range(r.grid.p)] + ["weight", "status"])
        for m in range(r.grid.nu):
            traj = r.trajectories[m]
            status = "failed" if traj is None else traj.status
            w.writerow([m] + [f"{v:.17g}" for v in r.grid.nodes[m]]
                       + [f"{r.grid.weights[m]:.17g}", status])
    for m, traj in enumerate(r.trajectories):
        if traj is not None:
            write_records_csv(traj.records,
                              out / "nodes" / f"node_{m}.csv")
    ok = r.ok_nodes
    if ok:
        ref = r.trajectories[ok[0]]
        for t in (ref.times if times is None else times):
            mean, var = statistics(r, t)
            write_field(mean, gas.gamma, out / f"mean_t{_tag(mean.t)}.field2d")
            write_field(var, gas.gamma, out / f"var_t{_tag(var.t)}.field2d")
    with open(out / "exceedance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "probability"])
        for N, prob in jump_exceedance(r, thresholds, gas):
            w.writerow([f"{N:.17g}", f"{prob:.17g}"])


def write_cauchy_csv(estimates, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M1", "M2", "epsilon", "J", "p_hat", "stderr", "seed"])
        for e in estimates:
            w.writerow([e.M1, e.M2, f"{e.epsilon:.17g}", e.J, f"{e.p_hat:.17g}",
                        f"{e.stderr:.17g}", e.seed])
