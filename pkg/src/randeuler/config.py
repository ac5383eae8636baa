"""Run configuration: an INI file with fixed sections and validated keys.

Example::

    [mesh]
    nx = 32
    ny = 32

    [gas]
    gamma = 1.4

    [scheme]
    alpha = 1
    epsilon = 1
    t_final = 0.1

    [data]
    family = amplitude-bump
    a1 = 0.5

    [collocation]
    p = 1
    M = 4

    [output]
    dir = out
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .collocation import FAMILIES, LinearLevelMap, ParamDomain, StructuredFamily, initial_field_at
from .diagnostics import NormSpec
from .mesh import Mesh, build_structured, load_mesh
from .thermo import GasParams, NonAdmissibleStateError
from .vfv import SchemeParams, check_admissible


class ConfigError(ValueError):
    """Invalid configuration; the message names the section, key and constraint."""


_SCHEMA = {
    "mesh": {"nx", "ny", "lx", "ly", "file"},
    "gas": {"gamma"},
    "scheme": {"alpha", "epsilon", "cfl", "t_final", "snapshot_interval"},
    "data": {"family", "omega"},  # plus the family's own parameters
    "collocation": {"p", "m", "levels", "n_factor", "thresholds", "q", "samples", "seed", "eps"},
    "output": {"dir"},
}


@dataclass(frozen=True)
class RunConfig:
    nx: int = 32
    ny: int = 32
    Lx: float = 1.0
    Ly: float = 1.0
    mesh_file: Path | None = None
    gas: GasParams = field(default_factory=GasParams)
    scheme: SchemeParams = field(default_factory=SchemeParams)
    family: object = None
    omega: tuple = ()
    p: int = 0
    M: int = 2
    levels: tuple = (2, 4)
    n_factor: int = 8
    thresholds: tuple = ()
    q: float = 1.0
    samples: int = 64
    seed: int = 0
    eps: float | None = None
    outdir: Path = Path("out")

    @property
    def domain(self) -> ParamDomain:
        return ParamDomain(self.p)

    @property
    def norm(self) -> NormSpec:
        return NormSpec(self.q, self.gas.gamma)

    @property
    def n_of_M(self) -> LinearLevelMap:
        return LinearLevelMap(self.n_factor)

    @property
    def mesh_family(self) -> StructuredFamily:
        return StructuredFamily(self.Lx, self.Ly)

    def mesh(self) -> Mesh:
        if self.mesh_file is not None:
            return load_mesh(self.mesh_file)
        return build_structured(self.nx, self.ny, self.Lx, self.Ly)


def _get(sec, key, conv, what):
    raw = sec[key]
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} = {raw!r}: expected {what}") from None


def _int(s):
    return int(s.strip())


def _float(s):
    v = float(s.strip())
    if not math.isfinite(v):
        raise ValueError
    return v


def _list(conv):
    def parse(s):
        items = [x for x in s.replace(",", " ").split() if x]
        return tuple(conv(x) for x in items)
    return parse


def _require(cond, section, key, msg):
    if not cond:
        raise ConfigError(f"[{section}] {key}: {msg}")


def parse_config(path) -> RunConfig:
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_parser(cp, base=path.parent)


def parse_config_string(text: str, base=".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return config_from_parser(cp, base=Path(base))


def config_from_parser(cp: configparser.ConfigParser, base=Path(".")) -> RunConfig:
    for name in cp.sections():
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]; allowed: {sorted(_SCHEMA)}")
    kw = {}
    sec = cp["mesh"] if cp.has_section("mesh") else None
    if sec is not None:
        _unknown(sec, _SCHEMA["mesh"])
        for key, name in (("nx", "nx"), ("ny", "ny")):
            if key in sec:
                kw[name] = _get(sec, key, _int, "an integer")
                _require(kw[name] >= 1, "mesh", key, "must be >= 1")
        for key, name in (("lx", "Lx"), ("ly", "Ly")):
            if key in sec:
                kw[name] = _get(sec, key, _float, "a number")
                _require(kw[name] > 0, "mesh", key, "must be positive")
        if "file" in sec:
            f = Path(sec["file"].strip())
            kw["mesh_file"] = f if f.is_absolute() else base / f

    gamma = 1.4
    if cp.has_section("gas"):
        sec = cp["gas"]
        _unknown(sec, _SCHEMA["gas"])
        if "gamma" in sec:
            gamma = _get(sec, "gamma", _float, "a number")
            _require(gamma > 1.0, "gas", "gamma", "must exceed 1")
    kw["gas"] = GasParams(gamma)

    sk = {}
    if cp.has_section("scheme"):
        sec = cp["scheme"]
        _unknown(sec, _SCHEMA["scheme"])
        for key in _SCHEMA["scheme"]:
            if key in sec:
                sk[key] = _get(sec, key, _float, "a number")
    try:
        kw["scheme"] = SchemeParams(**sk)
    except ValueError as exc:
        key = str(exc).split()[0]
        raise ConfigError(f"[scheme] {key if key in sk else ''}: {exc}") from None

    if cp.has_section("collocation"):
        sec = cp["collocation"]
        _unknown(sec, _SCHEMA["collocation"])
        if "p" in sec:
            kw["p"] = _get(sec, "p", _int, "an integer")
            _require(kw["p"] >= 0, "collocation", "p", "must be >= 0")
        if "m" in sec:
            kw["M"] = _get(sec, "m", _int, "an integer")
            _require(kw["M"] >= 1, "collocation", "M", "must be >= 1")
        if "levels" in sec:
            kw["levels"] = _get(sec, "levels", _list(_int), "a list of integers")
            _require(len(kw["levels"]) >= 1 and min(kw["levels"]) >= 1, "collocation", "levels",
                     "needs positive integers")
        if "n_factor" in sec:
            kw["n_factor"] = _get(sec, "n_factor", _int, "an integer")
            _require(kw["n_factor"] >= 1, "collocation", "n_factor", "must be >= 1")
        if "thresholds" in sec:
            kw["thresholds"] = _get(sec, "thresholds", _list(_float), "a list of numbers")
        if "q" in sec:
            kw["q"] = _get(sec, "q", _float, "a number")
            _require(kw["q"] >= 1.0, "collocation", "q", "must lie in [1, inf)")
        if "samples" in sec:
            kw["samples"] = _get(sec, "samples", _int, "an integer")
            _require(kw["samples"] >= 1, "collocation", "samples", "must be >= 1")
        if "seed" in sec:
            kw["seed"] = _get(sec, "seed", _int, "an integer")
        if "eps" in sec:
            kw["eps"] = _get(sec, "eps", _float, "a number")
            _require(kw["eps"] > 0, "collocation", "eps", "must be positive")

    fam_name = "uniform-rest"
    fam_kw = {}
    if cp.has_section("data"):
        sec = cp["data"]
        fam_name = sec.get("family", fam_name).strip()
        if fam_name not in FAMILIES:
            raise ConfigError(f"[data] family = {fam_name!r}: choose from {sorted(FAMILIES)}")
        cls = FAMILIES[fam_name]
        allowed = {f.name for f in dataclasses.fields(cls)}
        for key in sec:
            if key in _SCHEMA["data"]:
                continue
            if key not in allowed:
                raise ConfigError(f"[data] unknown key {key!r} for family {fam_name}; "
                                  f"allowed: {sorted(allowed | _SCHEMA['data'])}")
            fam_kw[key] = _get(sec, key, _float, "a number")
        if "omega" in sec:
            kw["omega"] = _get(sec, "omega", _list(_float), "a list of numbers")
            _require(all(0.0 <= w <= 1.0 for w in kw["omega"]), "data", "omega",
                     "coordinates must lie in [0, 1]")
    kw["family"] = FAMILIES[fam_name](**fam_kw)
    _check_family(kw["family"], kw["gas"])

    if cp.has_section("output"):
        sec = cp["output"]
        _unknown(sec, _SCHEMA["output"])
        if "dir" in sec:
            d = Path(sec["dir"].strip())
            kw["outdir"] = d if d.is_absolute() else base / d
    return RunConfig(**kw)


def _unknown(sec, allowed):
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"[{sec.name}] unknown key {key!r}; allowed: {sorted(allowed)}")


def _check_family(fam, gas):
    # the catalog families depend on the first axis only; probe its ends
    mesh = build_structured(4, 4)
    for w in (0.0, 0.5, 1.0):
        try:
            check_admissible(initial_field_at([w], fam, mesh, gas))
        except NonAdmissibleStateError as exc:
            raise ConfigError(f"[data] family {fam.name} gives non-admissible data at "
                              f"omega_1 = {w}: {exc}") from None
