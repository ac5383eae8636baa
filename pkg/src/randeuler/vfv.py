"""Viscous finite volume scheme for the 2D Euler system.

The semidiscrete scheme is written in conservative face-flux form.  For an
interior face with stored normal ``n`` leaving cell ``L`` for cell ``R``::

    Phi_rho = F[rho]
    Phi_m   = F[m] - h**(alpha-1) [[u]] + <p> n
    Phi_E   = F[E] - h**(alpha-1) [[|u|^2/2]] + (p_R u_L + p_L u_R)/2 . n
    F[a]    = a_L [<u>.n]^+ + a_R [<u>.n]^- - h**eps [[a]]

with ``[[a]] = a_R - a_L``.  ``L`` loses ``|sigma| Phi`` and ``R`` gains
it.  Walls use a mirror ghost state, which leaves only the pressure force
``p_K n`` on the momentum of the wall cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .mesh import Mesh, mesh_stats
from .thermo import GasParams, NonAdmissibleStateError, internal_energy_density, primitives

ADMISSIBILITY_FLOOR = 1e-12
MAX_HALVINGS = 10


class PositivityError(RuntimeError):
    """A time step kept producing a non-admissible cell after all retries."""

    def __init__(self, cell, quantity, value, t, dt):
        self.cell = cell
        self.quantity = quantity
        self.value = value
        self.t = t
        self.dt = dt
        super().__init__(f"positivity failure at t={t:.6g} (dt={dt:.3g}) in cell {cell}: "
                         f"{quantity} = {value:.6g}")


class _StageFailure(Exception):
    def __init__(self, cell, quantity, value):
        self.cell, self.quantity, self.value = cell, quantity, value


@dataclass(frozen=True)
class SchemeParams:
    alpha: float = 1.0
    epsilon: float = 1.0
    cfl: float = 0.4
    t_final: float = 0.1
    snapshot_interval: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 4.0 / 3.0:
            raise ValueError(f"alpha = {self.alpha} outside the admissible interval (0, 4/3)")
        if not self.epsilon > -1.0:
            raise ValueError(f"epsilon = {self.epsilon} must exceed -1")
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl = {self.cfl} outside (0, 1]")
        if not self.t_final >= 0.0:
            raise ValueError("t_final must be nonnegative")
        if self.snapshot_interval is not None and not self.snapshot_interval > 0.0:
            raise ValueError("snapshot_interval must be positive")

    def snapshot_times(self) -> np.ndarray:
        dt = self.snapshot_interval or self.t_final
        if self.t_final == 0.0:
            return np.array([0.0])
        n = max(1, int(math.floor(self.t_final / dt * (1.0 + 1e-12))))
        times = [k * dt for k in range(n + 1)]
        if self.t_final - times[-1] > 1e-12 * self.t_final:
            times.append(self.t_final)
        times[-1] = self.t_final
        return np.array(times)


@dataclass
class ConservedField:
    """Cell averages ``U[:, 0] = rho``, ``U[:, 1:3] = m``, ``U[:, 3] = E`` at time ``t``."""

    mesh: Mesh
    U: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        if self.U.shape != (self.mesh.n_cells, 4):
            raise ValueError(f"state array must have shape ({self.mesh.n_cells}, 4), got {self.U.shape}")

    @classmethod
    def from_components(cls, mesh, rho, mom, E, t=0.0):
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (mesh.n_cells,))
        mom = np.broadcast_to(np.asarray(mom, dtype=float), (mesh.n_cells, 2))
        E = np.broadcast_to(np.asarray(E, dtype=float), (mesh.n_cells,))
        return cls(mesh, np.column_stack([rho, mom, E]), t)

    @property
    def rho(self):
        return self.U[:, 0]

    @property
    def mom(self):
        return self.U[:, 1:3]

    @property
    def E(self):
        return self.U[:, 3]

    def total_mass(self) -> float:
        return float(np.dot(self.mesh.cell_area, self.rho))

    def total_energy(self) -> float:
        return float(np.dot(self.mesh.cell_area, self.E))

    def copy(self):
        return ConservedField(self.mesh, self.U.copy(), self.t)


@dataclass
class Trajectory:
    snapshots: list
    records: list = field(default_factory=list)
    status: str = "completed"
    message: str = ""
    n_steps: int = 0
    n_retries: int = 0

    @property
    def mesh(self):
        return self.snapshots[0].mesh

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def snapshot_at(self, t, tol=1e-12):
        for s in self.snapshots:
            if abs(s.t - t) <= tol * max(1.0, abs(t)):
                return s
        raise KeyError(f"no snapshot stored at t={t}")


@lru_cache(maxsize=16)
def _geometry(mesh: Mesh):
    f = mesh.interior
    b = mesh.boundary
    stats = mesh_stats(mesh)
    return {
        "L": mesh.face_left[f],
        "R": mesh.face_right[f],
        "n": mesh.face_normal[f],
        "w": mesh.face_length[f],
        "bK": mesh.face_left[b],
        "bn": mesh.face_normal[b],
        "bw": mesh.face_length[b],
        "c1": stats.c1,
        "C2": stats.C2,
    }


def upwind_flux(a_in, a_out, un):
    """``a_in [un]^+ + a_out [un]^-``."""
    un = np.asarray(un, dtype=float)
    pos = np.maximum(un, 0.0)
    neg = np.minimum(un, 0.0)
    if np.ndim(a_in) > np.ndim(un):
        pos = pos[..., None]
        neg = neg[..., None]
    return np.asarray(a_in) * pos + np.asarray(a_out) * neg


def stabilized_flux(a_in, a_out, un, h, epsilon):
    """Upwind flux minus the artificial viscosity ``h**epsilon * (a_out - a_in)``."""
    if not h > 0:
        raise ValueError("h must be positive")
    return upwind_flux(a_in, a_out, un) - h ** epsilon * (np.asarray(a_out) - np.asarray(a_in))


def _primitive_arrays(U, gas):
    u, p, _, _, _ = primitives(U[:, 0], U[:, 1:3], U[:, 3], gas)
    return u, p


def assemble_rhs(fld: ConservedField, gas: GasParams, params: SchemeParams) -> np.ndarray:
    """Time derivative of every cell average, shape ``(n_cells, 4)``."""
    return _rhs(fld.mesh, fld.U, gas, params)


def _rhs(mesh: Mesh, U: np.ndarray, gas: GasParams, params: SchemeParams) -> np.ndarray:
    g = _geometry(mesh)
    h = mesh.h
    u, p = _primitive_arrays(U, gas)
    L, R, n, w = g["L"], g["R"], g["n"], g["w"]
    uL, uR = u[L], u[R]
    pL, pR = p[L], p[R]
    UL, UR = U[L], U[R]

    un = 0.5 * ((uL[:, 0] + uR[:, 0]) * n[:, 0] + (uL[:, 1] + uR[:, 1]) * n[:, 1])
    flux = upwind_flux(UL, UR, un) - h ** params.epsilon * (UR - UL)
    penalty = h ** (params.alpha - 1.0)
    flux[:, 1:3] += -penalty * (uR - uL) + (0.5 * (pL + pR))[:, None] * n
    flux[:, 3] += (-penalty * 0.5 * ((uR ** 2).sum(1) - (uL ** 2).sum(1))
                   + 0.5 * ((pR[:, None] * uL + pL[:, None] * uR) * n).sum(1))
    flux *= w[:, None]

    nc = mesh.n_cells
    dU = np.empty((nc, 4))
    bK, bn, bw = g["bK"], g["bn"], g["bw"]
    for k in range(4):
        dU[:, k] = (np.bincount(R, weights=flux[:, k], minlength=nc)
                    - np.bincount(L, weights=flux[:, k], minlength=nc))
    wall = p[bK] * bw
    dU[:, 1] -= np.bincount(bK, weights=wall * bn[:, 0], minlength=nc)
    dU[:, 2] -= np.bincount(bK, weights=wall * bn[:, 1], minlength=nc)
    dU /= mesh.cell_area[:, None]
    return dU


def stable_dt(fld: ConservedField, gas: GasParams, params: SchemeParams) -> float:
    """``cfl * min(h / lambda_max, h^2 / (2 D))``.

    ``D = C2 max(h^eps, h^(alpha-1) / rho_min) h / c1`` bounds the combined
    face dissipation.
    """
    g = _geometry(fld.mesh)
    h = fld.mesh.h
    u, p = _primitive_arrays(fld.U, gas)
    lam = np.sqrt((u ** 2).sum(1)) + np.sqrt(gas.gamma * p / fld.rho)
    lam_max = float(lam.max())
    # the velocity penalty acts on u = m / rho, so its rate scales with 1 / rho
    D = g["C2"] * max(h ** params.epsilon, h ** (params.alpha - 1.0) / float(fld.rho.min())) * h / g["c1"]
    bounds = [h * h / (2.0 * D)]
    if lam_max > 0.0:
        bounds.append(h / lam_max)
    return params.cfl * min(bounds)


def _first_violation(U):
    rho = U[:, 0]
    if not np.all(np.isfinite(U)):
        k = int(np.flatnonzero(~np.isfinite(U).all(axis=1))[0])
        return k, "nonfinite", float("nan")
    bad = np.flatnonzero(~(rho > ADMISSIBILITY_FLOOR))
    if len(bad):
        return int(bad[0]), "rho", float(rho[bad[0]])
    e = internal_energy_density(rho, U[:, 1:3], U[:, 3]) / rho
    bad = np.flatnonzero(~(e > ADMISSIBILITY_FLOOR))
    if len(bad):
        return int(bad[0]), "e", float(e[bad[0]])
    return None


def check_admissible(fld: ConservedField):
    """Raise :class:`NonAdmissibleStateError` unless every cell is admissible with a finite entropy."""
    bad = _first_violation(fld.U)
    if bad is not None:
        k, q, v = bad
        raise NonAdmissibleStateError(q, v, k)


def _ssprk2(mesh, U, dt, gas, params):
    U1 = U + dt * _rhs(mesh, U, gas, params)
    bad = _first_violation(U1)
    if bad:
        raise _StageFailure(*bad)
    U2 = 0.5 * U + 0.5 * (U1 + dt * _rhs(mesh, U1, gas, params))
    bad = _first_violation(U2)
    if bad:
        raise _StageFailure(*bad)
    return U2


def _attempt(fld, dt, gas, params, max_halvings):
    for attempt in range(max_halvings + 1):
        try:
            return _ssprk2(fld.mesh, fld.U, dt, gas, params), dt, attempt
        except _StageFailure as fail:
            last = fail
            if attempt < max_halvings:
                dt *= 0.5
    raise PositivityError(last.cell, last.quantity, last.value, fld.t, dt)


def step(fld: ConservedField, dt: float, gas: GasParams, params: SchemeParams,
         max_halvings: int = MAX_HALVINGS) -> ConservedField:
    """Advance by one two-stage SSP Runge-Kutta step.

    A stage with a non-admissible cell is retried with half the step, at
    most ``max_halvings`` times; the returned field's ``t`` reflects the
    step actually taken.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    U, taken, _ = _attempt(fld, dt, gas, params, max_halvings)
    return ConservedField(fld.mesh, U, fld.t + taken)


def solve(f0: ConservedField, gas: GasParams, params: SchemeParams, hooks=None,
          max_steps: int = 10_000_000) -> Trajectory:
    """Integrate from ``f0.t`` to ``params.t_final``.

    Snapshots are stored at the snapshot times; each hook is called as
    ``hook(field, dt)`` after every accepted step and its return value, if
    not ``None``, is appended to ``Trajectory.records``.  A positivity
    failure ends the run with ``status == "aborted"`` and keeps the
    recorded prefix plus the last accepted state.
    """
    check_admissible(f0)
    if hooks is None:
        from .diagnostics import DiagnosticsRecorder

        hooks = [DiagnosticsRecorder(gas)]
    times = params.snapshot_times() + f0.t
    traj = Trajectory(snapshots=[f0.copy()])
    cur = f0.copy()
    k_next = 1
    while k_next < len(times):
        if traj.n_steps >= max_steps:
            traj.status = "aborted"
            traj.message = f"step limit {max_steps} reached"
            break
        target = times[k_next]
        dt = stable_dt(cur, gas, params)
        hit = dt >= target - cur.t
        if hit:
            dt = target - cur.t
        try:
            U, taken, retries = _attempt(cur, dt, gas, params, MAX_HALVINGS)
        except PositivityError as exc:
            traj.status = "aborted"
            traj.message = str(exc)
            if cur.t > traj.snapshots[-1].t:
                traj.snapshots.append(cur.copy())
            break
        traj.n_retries += retries
        t_new = target if (hit and retries == 0) else cur.t + taken
        cur = ConservedField(cur.mesh, U, t_new)
        traj.n_steps += 1
        for hook in hooks:
            rec = hook(cur, taken)
            if rec is not None:
                traj.records.append(rec)
        if t_new == target:
            traj.snapshots.append(cur.copy())
            k_next += 1
    return traj


def write_field(fld: ConservedField, gamma: float, path):
    rows = [f"field2d {fld.mesh.n_cells} {gamma:.17g} {fld.t:.17g}"]
    rows += [f"{k} {r:.17g} {mx:.17g} {my:.17g} {E:.17g}"
             for k, (r, mx, my, E) in enumerate(fld.U)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_field(path, mesh: Mesh):
    """Read a ``field2d`` snapshot; returns ``(field, gamma)``."""
    lines = Path(path).read_text().splitlines()
    head = lines[0].split()
    if len(head) != 4 or head[0] != "field2d":
        raise ValueError(f"{path}: missing 'field2d <ncells> <gamma> <t>' header")
    nc, gamma, t = int(head[1]), float(head[2]), float(head[3])
    if nc != mesh.n_cells:
        raise ValueError(f"{path}: {nc} cells, mesh has {mesh.n_cells}")
    data = np.array([[float(x) for x in ln.split()] for ln in lines[1:nc + 1]])
    if data.shape != (nc, 5) or np.any(data[:, 0] != np.arange(nc)):
        raise ValueError(f"{path}: malformed cell records")
    return ConservedField(mesh, data[:, 1:], t), gamma
