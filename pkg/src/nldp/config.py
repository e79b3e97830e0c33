"""Strict JSON problem configs.

Unknown keys are errors everywhere. Scalar fields are written as
``{"kind": ..., ...}`` objects; see the README for the full schema.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .fields import AbsAffine, BoxIndicator, Constant, PointTable, Polynomial, ScalarField
from .pathsim import ExitRule, HazardRule, SimConfig
from .problem import (
    Atom,
    Ball,
    BoundaryData,
    Box,
    DriftField,
    EllipticField,
    Interval,
    JumpKernel,
    ProblemSpec,
    RedistributionLaw,
    UniformBall,
    default_phi_bound,
)

TOP_KEYS = {"dim", "elliptic", "drift", "jumps", "domain", "phi", "phi_bound", "points", "sim", "verify", "oracle",
            "description"}
VERIFY_KEYS = {"alpha", "f", "f_bound", "phi", "phi_bound", "points", "radii", "center", "alphas", "horizon",
               "kappa_bound", "inner_paths", "threshold", "n_paths"}
SIM_KEYS = {"dt_base", "dt_boundary_factor", "dt_min_ratio", "max_steps", "max_jumps", "hazard_rule", "exit_rule",
            "boundary_tol"}


def _obj(d, where: str, required=(), optional=()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(d) - set(required) - set(optional)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")
    return d


def _vec(v, dim: int, where: str) -> tuple[float, ...]:
    try:
        arr = np.asarray(v, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected a list of numbers") from exc
    if arr.shape[0] != dim or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}: expected {dim} finite numbers")
    return tuple(float(x) for x in arr)


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    return float(v)


def _poly(v, dim: int, where: str) -> Polynomial:
    """A number, or {"terms": [[coef, [powers...]], ...]}."""
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return Polynomial(((float(v), (0,) * dim),))
    _obj(v, where, ("terms",))
    try:
        poly = Polynomial.from_terms(v["terms"])
        poly.params(dim)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return poly


def parse_field(d, dim: int, where: str = "field") -> ScalarField:
    kind = d.get("kind") if isinstance(d, dict) else None
    if kind == "constant":
        _obj(d, where, ("kind", "value"))
        return Constant(_num(d["value"], f"{where}.value"))
    if kind == "coordinate":
        _obj(d, where, ("kind", "index"), ("scale",))
        idx = d["index"]
        if not isinstance(idx, int) or not 1 <= idx <= dim:
            raise ConfigError(f"{where}.index: expected an integer in 1..{dim}")
        return Polynomial.coordinate(idx - 1, dim, _num(d.get("scale", 1.0), f"{where}.scale"))
    if kind == "expr":
        _obj(d, where, ("kind", "terms"))
        return _poly({"terms": d["terms"]}, dim, where)
    if kind == "point_table":
        _obj(d, where, ("kind", "points", "values"), ("default", "tol"))
        pts = tuple(_vec(p, dim, f"{where}.points") for p in d["points"])
        vals = tuple(_num(v, f"{where}.values") for v in d["values"])
        if len(pts) != len(vals):
            raise ConfigError(f"{where}: points and values differ in length")
        return PointTable(pts, vals, _num(d.get("default", 0.0), f"{where}.default"),
                          _num(d.get("tol", 1e-9), f"{where}.tol"))
    if kind == "box_indicator":
        _obj(d, where, ("kind", "lo", "hi"), ("inside", "outside"))
        return BoxIndicator(_vec(d["lo"], dim, f"{where}.lo"), _vec(d["hi"], dim, f"{where}.hi"),
                            _num(d.get("inside", 1.0), f"{where}.inside"),
                            _num(d.get("outside", 0.0), f"{where}.outside"))
    if kind == "abs_affine":
        _obj(d, where, ("kind", "const", "coefs"), ("cap",))
        cap = d.get("cap")
        return AbsAffine(_num(d["const"], f"{where}.const"), _vec(d["coefs"], dim, f"{where}.coefs"),
                         math.inf if cap is None else _num(cap, f"{where}.cap"))
    raise ConfigError(f"{where}: unknown field kind {kind!r}")


def _elliptic(d, dim: int) -> EllipticField:
    kind = d.get("kind") if isinstance(d, dict) else None
    if kind == "identity":
        _obj(d, "elliptic", ("kind",), ("scale",))
        return EllipticField.identity(dim, _num(d.get("scale", 1.0), "elliptic.scale"))
    if kind == "constant_matrix":
        _obj(d, "elliptic", ("kind", "matrix"), ("lambda",))
        m = np.asarray(d["matrix"], dtype=float)
        if m.shape != (dim, dim):
            raise ConfigError(f"elliptic.matrix: expected {dim}x{dim}")
        lam = d.get("lambda")
        return EllipticField.constant(m, None if lam is None else _num(lam, "elliptic.lambda"))
    if kind == "expr":
        _obj(d, "elliptic", ("kind", "entries", "lambda"))
        rows = d["entries"]
        if not isinstance(rows, list) or len(rows) != dim or any(not isinstance(r, list) or len(r) != dim
                                                                 for r in rows):
            raise ConfigError(f"elliptic.entries: expected {dim}x{dim} nested lists")
        entries = tuple(tuple(_poly(v, dim, f"elliptic.entries[{i}][{j}]") for j, v in enumerate(r))
                        for i, r in enumerate(rows))
        return EllipticField(dim, entries, _num(d["lambda"], "elliptic.lambda"))
    raise ConfigError(f"elliptic: unknown kind {kind!r}")


def _drift(d, dim: int) -> DriftField:
    if d is None:
        return DriftField.zero(dim)
    kind = d.get("kind") if isinstance(d, dict) else None
    if kind == "zero":
        _obj(d, "drift", ("kind",))
        return DriftField.zero(dim)
    if kind == "constant":
        _obj(d, "drift", ("kind", "vector"))
        return DriftField.constant(_vec(d["vector"], dim, "drift.vector"))
    if kind == "expr":
        _obj(d, "drift", ("kind", "components"), ("bound",))
        comps = d["components"]
        if not isinstance(comps, list) or len(comps) != dim:
            raise ConfigError(f"drift.components: expected {dim} entries")
        bound = d.get("bound")
        return DriftField(tuple(_poly(c, dim, f"drift.components[{i}]") for i, c in enumerate(comps)),
                          None if bound is None else _num(bound, "drift.bound"))
    raise ConfigError(f"drift: unknown kind {kind!r}")


def _jumps(d, dim: int) -> JumpKernel | None:
    if d is None:
        return None
    _obj(d, "jumps", ("kappa", "nu"))
    kappa = parse_field(d["kappa"], dim, "jumps.kappa")
    nu = _obj(d["nu"], "jumps.nu", (), ("atoms", "density", "relative"))
    rel = bool(nu.get("relative", False))
    atoms = []
    for i, a in enumerate(nu.get("atoms", [])):
        if not isinstance(a, list) or len(a) != 2:
            raise ConfigError(f"jumps.nu.atoms[{i}]: expected [weight, [y...]]")
        atoms.append(Atom(_num(a[0], f"jumps.nu.atoms[{i}]"), _vec(a[1], dim, f"jumps.nu.atoms[{i}]"), rel))
    density = None
    if nu.get("density") is not None:
        dd = _obj(nu["density"], "jumps.nu.density", ("weight", "center", "radius"), ("relative",))
        density = UniformBall(_num(dd["weight"], "density.weight"), _vec(dd["center"], dim, "density.center"),
                              _num(dd["radius"], "density.radius"), bool(dd.get("relative", False)))
    return JumpKernel(kappa, RedistributionLaw(tuple(atoms), density))


def _domain(d, dim: int):
    kind = d.get("kind") if isinstance(d, dict) else None
    if kind == "ball":
        _obj(d, "domain", ("kind", "center", "radius"))
        return Ball(_vec(d["center"], dim, "domain.center"), _num(d["radius"], "domain.radius"))
    if kind == "box":
        _obj(d, "domain", ("kind", "lo", "hi"))
        return Box(_vec(d["lo"], dim, "domain.lo"), _vec(d["hi"], dim, "domain.hi"))
    if kind == "interval":
        _obj(d, "domain", ("kind", "lo", "hi"))
        if dim != 1:
            raise ConfigError("domain: interval requires dim 1")
        return Interval(_num(d["lo"], "domain.lo"), _num(d["hi"], "domain.hi"))
    raise ConfigError(f"domain: unknown kind {kind!r}")


def _sim(d) -> SimConfig:
    d = _obj(d or {}, "sim", (), SIM_KEYS)
    kw = {}
    for k, v in d.items():
        if k in ("hazard_rule", "exit_rule"):
            enum = HazardRule if k == "hazard_rule" else ExitRule
            try:
                kw[k] = enum(v)
            except ValueError as exc:
                raise ConfigError(f"sim.{k}: {exc}") from exc
        elif k in ("max_steps", "max_jumps"):
            if not isinstance(v, int):
                raise ConfigError(f"sim.{k}: expected an integer")
            kw[k] = v
        else:
            kw[k] = _num(v, f"sim.{k}")
    try:
        return SimConfig(**kw)
    except ValidationError as exc:
        raise ConfigError(f"sim: {exc}") from exc


@dataclass
class LoadedConfig:
    spec: ProblemSpec
    sim: SimConfig
    points: np.ndarray | None
    verify: dict
    oracle: dict
    digest: str
    raw: dict = field(repr=False, default_factory=dict)


def parse_config(raw: dict, digest: str = "") -> LoadedConfig:
    _obj(raw, "config", ("dim", "elliptic", "domain", "phi"), TOP_KEYS - {"dim", "elliptic", "domain", "phi"})
    dim = raw["dim"]
    if not isinstance(dim, int) or dim < 1:
        raise ConfigError("dim: expected a positive integer")
    try:
        elliptic = _elliptic(raw["elliptic"], dim)
        drift = _drift(raw.get("drift"), dim)
        jumps = _jumps(raw.get("jumps"), dim)
        domain = _domain(raw["domain"], dim)
        phi = parse_field(raw["phi"], dim, "phi")
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if "phi_bound" in raw:
        bound = _num(raw["phi_bound"], "phi_bound")
    else:
        bound = default_phi_bound(phi, domain, jumps)
    spec = ProblemSpec(elliptic, drift, domain, BoundaryData(phi, bound), jumps)
    points = None
    if raw.get("points") is not None:
        points = np.array([_vec(p, dim, "points") for p in raw["points"]])
    verify = dict(_obj(raw.get("verify", {}), "verify", (), VERIFY_KEYS))
    for key in ("f", "phi"):
        if key in verify:
            verify[key] = parse_field(verify[key], dim, f"verify.{key}")
    oracle = dict(_obj(raw.get("oracle", {}), "oracle", (), {"h", "pad", "box_lo", "box_hi"}))
    return LoadedConfig(spec, _sim(raw.get("sim")), points, verify, oracle, digest, raw)


def load_config(path) -> LoadedConfig:
    data = Path(path).read_bytes()
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(raw, hashlib.sha256(data).hexdigest())
