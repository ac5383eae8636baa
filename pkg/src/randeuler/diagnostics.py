"""Measured counterparts of the scheme's stability and regularity properties."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from functools import lru_cache

import numpy as np

from .mesh import Mesh, NonNestedError, nested_parent_map
from .thermo import GasParams, primitives
from .vfv import ConservedField, Trajectory

CSV_COLUMNS = ("t", "mass", "energy", "min_rho", "min_theta", "min_s",
               "jmp_rho", "jmp_u", "jmp_E", "n_rho", "n_m", "n_E", "dt")


class MisalignedSnapshotsError(ValueError):
    pass


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    min_rho: float
    min_theta: float
    min_s: float
    jmp_rho: float
    jmp_u: float
    jmp_E: float
    n_rho: float
    n_m: float
    n_E: float
    dt: float


def _jumps(fld: ConservedField, u):
    mesh = fld.mesh
    f = mesh.interior
    if len(f) == 0:
        return 0.0, 0.0, 0.0
    L, R = mesh.face_left[f], mesh.face_right[f]
    h = mesh.h
    jr = np.abs(fld.rho[R] - fld.rho[L]).max() / h
    du = u[R] - u[L]
    ju = np.sqrt((du ** 2).sum(1)).max() / h
    jE = np.abs(fld.E[R] - fld.E[L]).max() / h
    return float(jr), float(ju), float(jE)


def jump_monitor(fld: ConservedField, gas: GasParams):
    """Largest ``|[[rho]]|/h``, ``||[[u]]||/h`` and ``|[[E]]|/h`` over interior faces."""
    u = fld.mom / fld.rho[:, None]
    return _jumps(fld, u)


def _norms(fld: ConservedField, gamma: float):
    area = fld.mesh.cell_area
    q_m = 2.0 * gamma / (gamma + 1.0)
    n_rho = float(np.dot(area, np.abs(fld.rho) ** gamma) ** (1.0 / gamma))
    mabs = np.sqrt((fld.mom ** 2).sum(1))
    n_m = float(np.dot(area, mabs ** q_m) ** (1.0 / q_m))
    n_E = float(np.dot(area, np.abs(fld.E)))
    return n_rho, n_m, n_E


def field_record(fld: ConservedField, gas: GasParams, dt: float = 0.0) -> DiagnosticsRecord:
    u, p, theta, e, s = primitives(fld.rho, fld.mom, fld.E, gas)
    jr, ju, jE = _jumps(fld, u)
    n_rho, n_m, n_E = _norms(fld, gas.gamma)
    return DiagnosticsRecord(
        t=fld.t, mass=fld.total_mass(), energy=fld.total_energy(),
        min_rho=float(fld.rho.min()), min_theta=float(theta.min()), min_s=float(s.min()),
        jmp_rho=jr, jmp_u=ju, jmp_E=jE, n_rho=n_rho, n_m=n_m, n_E=n_E, dt=float(dt))


class DiagnosticsRecorder:
    """Solver hook producing one :class:`DiagnosticsRecord` per accepted step."""

    def __init__(self, gas: GasParams):
        self.gas = gas

    def __call__(self, fld, dt):
        return field_record(fld, self.gas, dt)


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([f"{v:.17g}" for v in astuple(r)])


def read_records_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected diagnostics header")
    return [DiagnosticsRecord(*map(float, r)) for r in rows[1:]]


def conservation_audit(traj: Trajectory):
    """Largest relative deviation of total mass and total energy from their initial values."""
    first = traj.snapshots[0]
    m0, e0 = first.total_mass(), first.total_energy()
    masses = [s.total_mass() for s in traj.snapshots] + [r.mass for r in traj.records]
    energies = [s.total_energy() for s in traj.snapshots] + [r.energy for r in traj.records]
    dm = max(abs(m - m0) for m in masses) / abs(m0)
    de = max(abs(e - e0) for e in energies) / abs(e0)
    return dm, de


def entropy_minimum(traj: Trajectory, gas: GasParams):
    """``(min over t and K of s, min over K of s(0))``."""
    def min_s(f):
        return float(primitives(f.rho, f.mom, f.E, gas)[4].min())

    s0 = min_s(traj.snapshots[0])
    overall = min([s0] + [min_s(f) for f in traj.snapshots[1:]] + [r.min_s for r in traj.records])
    return overall, s0


def trajectory_jump_max(traj: Trajectory, gas: GasParams):
    """Per-component maxima of the jump quotients over the whole trajectory."""
    vals = [jump_monitor(f, gas) for f in traj.snapshots]
    vals += [(r.jmp_rho, r.jmp_u, r.jmp_E) for r in traj.records]
    return tuple(float(max(v[k] for v in vals)) for k in range(3))


@dataclass(frozen=True)
class StabilityReport:
    """Measured sup-in-time norms against the energy-entropy bounds.

    ``rho_power`` is ``sup_t int rho^gamma`` and ``m_power`` is
    ``sup_t int |m|^(2 gamma/(gamma+1))``; ``rho_norm``/``m_norm`` are the
    corresponding norms.  The ``*_literal_bound`` fields hold the bounds
    applied directly to the norms; they coincide with the power forms only
    for unit-scale data and are reported, not asserted.
    """

    E_total0: float
    s_min0: float
    rho_norm: float
    rho_power: float
    rho_bound: float
    rho_literal_bound: float
    m_norm: float
    m_power: float
    m_bound: float
    m_literal_bound: float
    E_norm: float
    rho_ok: bool
    m_ok: bool
    E_ok: bool

    @property
    def all_ok(self) -> bool:
        return self.rho_ok and self.m_ok and self.E_ok


def stability_check(traj: Trajectory, gas: GasParams, rtol: float = 1e-12,
                    energy_rtol: float = 1e-11) -> StabilityReport:
    g = gas.gamma
    q_m = 2.0 * g / (g + 1.0)
    first = traj.snapshots[0]
    E0 = first.total_energy()
    s0 = entropy_minimum(Trajectory([first]), gas)[1]
    coeff = (g - 1.0) * math.exp(-(g - 1.0) * s0)
    fields_ = list(traj.snapshots)
    rho_n = m_n = E_n = 0.0
    for f in fields_:
        a, b, c = _norms(f, g)
        rho_n, m_n, E_n = max(rho_n, a), max(m_n, b), max(E_n, c)
    for r in traj.records:
        rho_n, m_n, E_n = max(rho_n, r.n_rho), max(m_n, r.n_m), max(E_n, r.n_E)
    rho_bound = coeff * E0
    m_bound = 2.0 ** (g / (g + 1.0)) * coeff ** (1.0 / (g + 1.0)) * E0
    rho_pow = rho_n ** g
    m_pow = m_n ** q_m
    return StabilityReport(
        E_total0=E0, s_min0=s0,
        rho_norm=rho_n, rho_power=rho_pow, rho_bound=rho_bound, rho_literal_bound=coeff * E0,
        m_norm=m_n, m_power=m_pow, m_bound=m_bound,
        m_literal_bound=coeff ** (1.0 / (g + 1.0)) * E0,
        E_norm=E_n,
        rho_ok=rho_pow <= rho_bound * (1.0 + rtol),
        m_ok=m_pow <= m_bound * (1.0 + rtol),
        E_ok=abs(E_n - E0) <= energy_rtol * abs(E0),
    )


def density_floor_certificate(traj: Trajectory, C_u: float, M: float):
    """``(rho_min(0) exp(-C_u M t_final), measured min rho)`` over the trajectory."""
    first = traj.snapshots[0]
    t_span = traj.snapshots[-1].t - first.t
    if traj.records:
        t_span = max(t_span, traj.records[-1].t - first.t)
    predicted = float(first.rho.min()) * math.exp(-C_u * M * t_span)
    measured = min([float(s.rho.min()) for s in traj.snapshots] + [r.min_rho for r in traj.records])
    return predicted, measured


def lipschitz_in_time(traj: Trajectory) -> float:
    """Largest difference quotient in time of any cell value between adjacent snapshots."""
    snaps = traj.snapshots
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots")
    best = 0.0
    for a, b in zip(snaps[:-1], snaps[1:]):
        dt = b.t - a.t
        if dt <= 0:
            continue
        best = max(best, float(np.abs(b.U - a.U).max() / dt))
    return best


@dataclass(frozen=True)
class P1Field:
    """Continuous piecewise-linear field given by its vertex values."""

    mesh: Mesh
    values: np.ndarray

    def __call__(self, cell: int, bary) -> float:
        return float(np.dot(self.values[self.mesh.cells[cell]], bary))


def lipschitz_reconstruct(mesh: Mesh, values):
    """Vertex values as means of the adjacent cell values; returns ``(P1Field, gap)``.

    ``gap`` is the largest deviation between a cell value and the
    reconstruction at the cell's vertices.
    """
    values = np.asarray(values, dtype=float)
    idx = mesh.cells.ravel()
    vals = np.repeat(values, 3)
    # offset by the local minimum so that equal neighbours average exactly
    ref = np.full(mesh.n_vertices, np.inf)
    np.minimum.at(ref, idx, vals)
    ref[~np.isfinite(ref)] = 0.0
    total = np.bincount(idx, weights=vals - ref[idx], minlength=mesh.n_vertices)
    count = np.bincount(idx, minlength=mesh.n_vertices)
    vert = ref + np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    gap = float(np.abs(vert[mesh.cells] - values[:, None]).max())
    return P1Field(mesh, vert), gap


@dataclass(frozen=True)
class NormSpec:
    q: float = 1.0
    gamma: float = 1.4

    def __post_init__(self):
        if not 1.0 <= self.q < math.inf:
            raise ValueError("time exponent q must lie in [1, inf)")
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")

    @property
    def exponents(self):
        return (self.gamma, 2.0 * self.gamma / (self.gamma + 1.0), 1.0)


@dataclass(frozen=True)
class NormTriple:
    rho: float
    m: float
    E: float

    @property
    def total(self) -> float:
        return self.rho + self.m + self.E


def _trapezoid_weights(times):
    times = np.asarray(times, dtype=float)
    w = np.zeros(len(times))
    if len(times) > 1:
        d = np.diff(times)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
    return w


def _space_norms(area, U, exps):
    p_r, p_m, p_E = exps
    r = np.dot(area, np.abs(U[:, 0]) ** p_r) ** (1.0 / p_r)
    m = np.dot(area, np.sqrt(U[:, 1] ** 2 + U[:, 2] ** 2) ** p_m) ** (1.0 / p_m)
    E = np.dot(area, np.abs(U[:, 3]) ** p_E) ** (1.0 / p_E)
    return np.array([r, m, E])


def _space_time(area, states, times, spec: NormSpec) -> NormTriple:
    w = _trapezoid_weights(times)
    acc = np.zeros(3)
    for wk, U in zip(w, states):
        acc += wk * _space_norms(area, U, spec.exponents) ** spec.q
    out = acc ** (1.0 / spec.q)
    return NormTriple(*map(float, out))


def space_time_norm(traj: Trajectory, spec: NormSpec) -> NormTriple:
    """Discrete ``L^q(0,T; L^gamma x L^(2gamma/(gamma+1)) x L^1)`` norms, trapezoidal in time."""
    return _space_time(traj.mesh.cell_area, [s.U for s in traj.snapshots], traj.times, spec)


@lru_cache(maxsize=32)
def _parent(coarse: Mesh, fine: Mesh):
    return nested_parent_map(coarse, fine)


def _common_times(ta, tb, tol=1e-9):
    common = []
    ia = []
    ib = []
    j = 0
    for i, t in enumerate(ta):
        while j < len(tb) and tb[j] < t - tol * max(1.0, abs(t)):
            j += 1
        if j < len(tb) and abs(tb[j] - t) <= tol * max(1.0, abs(t)):
            common.append(t)
            ia.append(i)
            ib.append(j)
    return np.array(common), ia, ib


def trajectory_distance(a: Trajectory, b: Trajectory, spec: NormSpec) -> float:
    """Sum of the space-time norms of the component differences.

    Fields on different meshes are compared on the finer one, the coarse
    field being injected cellwise; the meshes must be nested.
    """
    ta, tb = a.times, b.times
    if abs(ta[0] - tb[0]) > 1e-9 or abs(ta[-1] - tb[-1]) > 1e-9 * max(1.0, abs(ta[-1])):
        raise MisalignedSnapshotsError("trajectories cover different time intervals")
    times, ia, ib = _common_times(ta, tb)
    if len(times) == 0 or abs(times[-1] - ta[-1]) > 1e-9 * max(1.0, abs(ta[-1])) \
            or (len(times) < 2 and ta[-1] != ta[0]):
        raise MisalignedSnapshotsError("snapshot grids share no common time grid")
    ma, mb = a.mesh, b.mesh
    if ma is mb:
        parent = None
        fine_is_a = True
    elif ma.n_cells >= mb.n_cells:
        parent = _parent(mb, ma)
        fine_is_a = True
    else:
        parent = _parent(ma, mb)
        fine_is_a = False
    fine = ma if fine_is_a else mb
    diffs = []
    for i, j in zip(ia, ib):
        Ua, Ub = a.snapshots[i].U, b.snapshots[j].U
        if parent is not None:
            if fine_is_a:
                Ub = Ub[parent]
            else:
                Ua = Ua[parent]
        diffs.append(Ua - Ub)
    return _space_time(fine.cell_area, diffs, times, spec).total


__all__ = [
    "CSV_COLUMNS", "DiagnosticsRecord", "DiagnosticsRecorder", "MisalignedSnapshotsError",
    "NonNestedError", "NormSpec", "NormTriple", "P1Field", "StabilityReport",
    "conservation_audit", "density_floor_certificate", "entropy_minimum", "field_record",
    "jump_monitor", "lipschitz_in_time", "lipschitz_reconstruct", "read_records_csv",
    "space_time_norm", "stability_check", "trajectory_distance", "trajectory_jump_max",
    "write_records_csv",
]
