"""Ideal-gas closures for the conserved variables (rho, m, E).

All functions accept scalars or arrays; momenta carry a trailing axis of
length 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonAdmissibleStateError(ValueError):
    """A state with non-positive density or internal energy.

    ``quantity`` is ``"rho"`` or ``"e"``; ``index`` is the offending cell
    when the input was an array.
    """

    def __init__(self, quantity, value, index=None):
        self.quantity = quantity
        self.value = float(value)
        self.index = index
        where = "" if index is None else f" in cell {index}"
        super().__init__(f"non-admissible state{where}: {quantity} = {self.value:.6g}")


@dataclass(frozen=True)
class GasParams:
    gamma: float = 1.4

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")

    @property
    def cv(self) -> float:
        return 1.0 / (self.gamma - 1.0)


@dataclass(frozen=True)
class ConservedCell:
    rho: float
    mom: tuple
    E: float


@dataclass(frozen=True)
class PrimitiveCell:
    u: np.ndarray
    p: float
    theta: float
    e: float
    s: float


def _check(rho, rho_e, floor=0.0):
    rho = np.asarray(rho)
    rho_e = np.asarray(rho_e)
    bad = ~(rho > floor)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        raise NonAdmissibleStateError("rho", rho.ravel()[i], i if rho.ndim else None)
    e = rho_e / rho
    bad = ~(e > floor)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        raise NonAdmissibleStateError("e", e.ravel()[i], i if rho.ndim else None)
    return e


def internal_energy_density(rho, mom, E):
    """``rho e = E - |m|^2 / (2 rho)``."""
    mom = np.asarray(mom, dtype=float)
    # non-positive rho is rejected by the callers; keep the division quiet
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.asarray(E) - 0.5 * (mom ** 2).sum(axis=-1) / rho


def primitives(rho, mom, E, gas: GasParams):
    """Vectorised primitive variables ``(u, p, theta, e, s)``."""
    rho = np.asarray(rho, dtype=float)
    mom = np.asarray(mom, dtype=float)
    e = _check(rho, internal_energy_density(rho, mom, E))
    u = mom / rho[..., None]
    p = (gas.gamma - 1.0) * rho * e
    theta = p / rho
    s = gas.cv * np.log(theta) - np.log(rho)
    return u, p, theta, e, s


def primitive_from_conserved(c: ConservedCell, gas: GasParams) -> PrimitiveCell:
    u, p, theta, e, s = primitives(c.rho, c.mom, c.E, gas)
    return PrimitiveCell(u=u, p=float(p), theta=float(theta), e=float(e), s=float(s))


def entropy(c, gas: GasParams):
    """Specific entropy written directly in the conserved variables.

    ``s = log((gamma-1) (E - |m|^2/(2 rho)) / rho) / (gamma-1) - log(rho)``
    """
    if isinstance(c, ConservedCell):
        rho, mom, E = c.rho, c.mom, c.E
    else:
        rho, mom, E = c
    rho = np.asarray(rho, dtype=float)
    rho_e = internal_energy_density(rho, mom, E)
    _check(rho, rho_e)
    g1 = gas.gamma - 1.0
    s = np.log(g1 * rho_e / rho) / g1 - np.log(rho)
    return float(s) if s.ndim == 0 else s


def max_wave_speed(c, gas: GasParams):
    """``|u| + sqrt(gamma p / rho)``."""
    if isinstance(c, ConservedCell):
        rho, mom, E = c.rho, c.mom, c.E
    else:
        rho, mom, E = c
    u, p, _, e, _ = primitives(rho, mom, E, gas)
    # gamma p / rho = gamma (gamma-1) e, which stays finite as rho -> 0
    speed = np.linalg.norm(u, axis=-1) + np.sqrt(gas.gamma * (gas.gamma - 1.0) * e)
    return float(speed) if np.ndim(speed) == 0 else speed


def conserved_from_primitive(rho, u, p, gas: GasParams):
    """``(rho, rho u, p/(gamma-1) + rho |u|^2 / 2)``."""
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    mom = rho[..., None] * u
    E = np.asarray(p, dtype=float) / (gas.gamma - 1.0) + 0.5 * rho * (u ** 2).sum(axis=-1)
    return rho, mom, E
