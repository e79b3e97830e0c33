"""Finite-difference oracle for the full operator in one and two dimensions.

The operator is assembled as ``M = alpha I - L`` over interior lattice nodes,
so that for kappa >= 0 and upwinded drift ``M`` has a positive diagonal and
nonpositive off-diagonals. Exterior data enters the right-hand side.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AtomOffGrid, PreconditionError, SingularSystem, UnsupportedCoefficient
from .fields import Constant, ScalarField
from .problem import Box, ProblemSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice ``lo + i * h`` (per axis) on an axis-aligned box."""

    lo: np.ndarray
    h: np.ndarray
    shape: tuple[int, ...]  # nodes per axis

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.h * (np.asarray(self.shape) - 1)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @classmethod
    def for_box(cls, lo, hi, h: float) -> Grid:
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape[0] not in (1, 2):
            raise PreconditionError("the oracle supports dim 1 and 2")
        n = np.maximum(2, np.round((hi - lo) / h).astype(int))
        return cls(lo, (hi - lo) / n, tuple(int(k) + 1 for k in n))

    @classmethod
    def for_domain(cls, spec: ProblemSpec, h: float, pad: int = 1) -> Grid:
        """Lattice through the domain's bounding box, padded by ``pad`` cells."""
        lo, hi = spec.domain.bounding_box
        g = cls.for_box(lo, hi, h)
        return cls(g.lo - pad * g.h, g.h, tuple(k + 2 * pad for k in g.shape))

    def nodes(self) -> np.ndarray:
        axes = [self.lo[k] + self.h[k] * np.arange(self.shape[k]) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def flat(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def nearest(self, z) -> tuple[int, ...] | None:
        k = np.round((np.asarray(z, float) - self.lo) / self.h).astype(int)
        if np.any(k < 0) or np.any(k >= np.asarray(self.shape)):
            return None
        return tuple(int(v) for v in k)

    def interpolate(self, values: np.ndarray, points) -> np.ndarray:
        """Multilinear interpolation of lattice ``values`` (flat, C order)."""
        v = np.asarray(values, float).reshape(self.shape)
        pts = np.asarray(points, float).reshape(-1, self.dim)
        t = (pts - self.lo) / self.h
        if np.any(t < -1e-9) or np.any(t > np.asarray(self.shape) - 1 + 1e-9):
            raise PreconditionError("interpolation point outside the oracle grid")
        base = np.clip(np.floor(t).astype(int), 0, np.asarray(self.shape) - 2)
        frac = t - base
        out = np.zeros(pts.shape[0])
        for corner in itertools.product((0, 1), repeat=self.dim):
            c = np.asarray(corner)
            w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
            out += w * v[tuple((base + c).T)]
        return out


@dataclass
class GridSystem:
    grid: Grid
    interior: np.ndarray  # bool per lattice node
    operator: sp.csr_matrix
    rhs: np.ndarray
    exterior_values: np.ndarray  # data at exterior lattice nodes (nan at interior)
    exterior_range: tuple[float, float]
    row_diagnostics: dict
    snapped: list = field(default_factory=list)
    solution: np.ndarray | None = None
    residual: float = math.nan
    aux: dict = field(default_factory=dict)

    @property
    def is_m_matrix_candidate(self) -> bool:
        d = self.row_diagnostics
        return bool(np.all(d["diag"] > 0) and np.all(d["offdiag_max"] <= 0) and np.all(d["dominance"] >= -1e-12))

    def lattice_values(self) -> np.ndarray:
        if self.solution is None:
            raise PreconditionError("system has not been solved")
        out = self.exterior_values.copy()
        out[self.interior] = self.solution
        return out


def _axis_coeffs(spec: ProblemSpec, pts: np.ndarray) -> np.ndarray:
    """Diagonal entries a_kk at the given points, shape (n, d)."""
    A = np.asarray(spec.elliptic.eval_A(pts), float).reshape(pts.shape[0], spec.dim, spec.dim)
    return np.stack([A[:, k, k] for k in range(spec.dim)], axis=1)


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def assemble(
    spec: ProblemSpec,
    grid: Grid,
    *,
    alpha: float = 0.0,
    f: ScalarField | Callable | None = None,
    domain="spec",
    exterior: ScalarField | Callable | None = None,
) -> GridSystem:
    """Discretise ``(alpha - L) u = f`` in the domain with u = exterior data outside.

    ``domain="spec"`` uses the problem's domain and boundary data; passing a
    domain (e.g. the grid box) together with ``exterior`` overrides both.
    """
    d = spec.dim
    if d != grid.dim:
        raise PreconditionError("grid and problem dimensions differ")
    ell = spec.elliptic
    dom = spec.domain if domain == "spec" else domain
    ext = spec.boundary.phi if exterior is None else exterior
    if d == 2 and not ell.is_diagonal and not ell.is_constant:
        raise UnsupportedCoefficient("variable non-diagonal A is outside the oracle's scope in 2D")

    nodes = grid.nodes()
    interior = np.asarray(dom.contains(nodes), dtype=bool).reshape(-1)
    # interior nodes must not touch the lattice edge
    edge = np.zeros(grid.shape, dtype=bool)
    for k in range(d):
        sl = [slice(None)] * d
        sl[k] = 0
        edge[tuple(sl)] = True
        sl[k] = -1
        edge[tuple(sl)] = True
    if np.any(interior & edge.ravel()):
        raise PreconditionError("domain touches the grid edge; enlarge the grid")

    ext_vals = np.full(grid.n_nodes, np.nan)
    if np.any(~interior):
        ext_vals[~interior] = np.asarray(ext(nodes[~interior]), float).reshape(-1)
    if not np.all(np.isfinite(ext_vals[~interior])):
        raise PreconditionError("exterior data is not finite on the grid")

    ids = -np.ones(grid.n_nodes, dtype=np.int64)
    ids[interior] = np.arange(int(interior.sum()))
    n = int(interior.sum())
    a_nodes = _axis_coeffs(spec, nodes)
    ip = nodes[interior]
    b = np.asarray(spec.drift.eval_b(ip), float).reshape(n, d)
    kap = np.asarray(spec.kappa(ip), float).reshape(n)
    rhs = np.zeros(n)
    if f is not None:
        rhs += np.asarray(f(ip), float).reshape(n)
    cross = 0.0
    if d == 2 and not ell.is_diagonal:
        cross = float(np.asarray(ell.eval_A(ip[:1]), float).reshape(d, d)[0, 1])

    rows, cols, vals = [], [], []
    ext_used = [ext_vals[~interior]] if np.any(~interior) else []
    snapped = []
    strides = np.array([int(np.prod(grid.shape[k + 1:])) for k in range(d)])
    node_idx = np.flatnonzero(interior)

    def add(row, flat, coef):
        j = ids[flat]
        if j >= 0:
            rows.append(row)
            cols.append(j)
            vals.append(-coef)
        else:
            rhs[row] += coef * ext_vals[flat]

    for row, flat in enumerate(node_idx):
        diag = alpha
        for k in range(d):
            h = grid.h[k]
            up, dn = flat + strides[k], flat - strides[k]
            a_up = _harmonic(a_nodes[flat, k], a_nodes[up, k])
            a_dn = _harmonic(a_nodes[flat, k], a_nodes[dn, k])
            c_up = 0.5 * a_up / h**2
            c_dn = 0.5 * a_dn / h**2
            bk = b[row, k]
            a_loc = a_nodes[flat, k]
            if abs(bk) * h > a_loc:  # cell Peclet |b| h / (a/2) above 2
                if bk > 0:
                    c_up += bk / h
                else:
                    c_dn -= bk / h
            else:
                c_up += 0.5 * bk / h
                c_dn -= 0.5 * bk / h
            add(row, up, c_up)
            add(row, dn, c_dn)
            diag += c_up + c_dn
        if cross != 0.0:
            c = cross / (4.0 * grid.h[0] * grid.h[1])
            for s0, s1, sgn in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                add(row, flat + s0 * strides[0] + s1 * strides[1], sgn * c)
        if kap[row] != 0.0:
            w, targets = spec.jumps.nu.quadrature(ip[row])
            diag += kap[row] * float(np.sum(w))
            for wi, z in zip(w, targets):
                if not bool(np.asarray(dom.contains(z[None, :])).reshape(-1)[0]):
                    val = float(np.asarray(ext(z[None, :]), float).reshape(-1)[0])
                    rhs[row] += kap[row] * wi * val
                    ext_used.append(np.array([val]))
                    continue
                node = _snap_interior(grid, ids, z)
                if node is None:
                    raise AtomOffGrid(f"jump target {z.tolist()} has no interior lattice node within a cell")
                where = nodes[node]
                if np.max(np.abs(where - z)) > 1e-12:
                    snapped.append((z.tolist(), where.tolist()))
                rows.append(row)
                cols.append(ids[node])
                vals.append(-kap[row] * wi)
        rows.append(row)
        cols.append(row)
        vals.append(diag)

    M = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    M.sum_duplicates()
    if snapped:
        log.warning("%d jump targets snapped to lattice nodes", len(snapped))
    diag = M.diagonal()
    off = M - sp.diags(diag)
    off_max = np.full(n, -np.inf)
    if off.nnz:
        coo = off.tocoo()
        np.maximum.at(off_max, coo.row, coo.data)
    absoff = np.asarray(abs(off).sum(axis=1)).ravel()
    diagnostics = {
        "diag": diag,
        "offdiag_max": np.where(np.isfinite(off_max), off_max, 0.0),
        "row_sum": np.asarray(M.sum(axis=1)).ravel(),
        "dominance": diag - absoff,
    }
    used = np.concatenate(ext_used) if ext_used else np.zeros(1)
    return GridSystem(grid, interior, M, rhs, ext_vals, (float(used.min()), float(used.max())), diagnostics, snapped)


def _snap_interior(grid: Grid, ids: np.ndarray, z) -> int | None:
    """Nearest lattice node to z; if it is exterior, the nearest interior cell corner."""
    k = grid.nearest(z)
    if k is not None and ids[grid.flat(k)] >= 0:
        return grid.flat(k)
    t = (np.asarray(z, float) - grid.lo) / grid.h
    base = np.floor(t).astype(int)
    best, dist = None, math.inf
    for corner in itertools.product((0, 1), repeat=grid.dim):
        c = base + np.asarray(corner)
        if np.any(c < 0) or np.any(c >= np.asarray(grid.shape)):
            continue
        flat = grid.flat(c)
        dd = float(np.max(np.abs(t - c)))
        if ids[flat] >= 0 and dd < dist:
            best, dist = flat, dd
    return best


def solve(system: GridSystem, *, tol: float = 1e-10) -> np.ndarray:
    M, rhs = system.operator, system.rhs
    n = rhs.shape[0]
    bad = np.flatnonzero((system.row_diagnostics["diag"] <= 0) | (system.row_diagnostics["dominance"] < -1e-12))
    coo = M.tocoo()
    bandwidth = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
    try:
        if system.grid.dim == 1 and bandwidth <= 1:
            ab = np.zeros((3, n))
            ab[1] = M.diagonal()
            if n > 1:
                ab[0, 1:] = M.diagonal(1)
                ab[2, :-1] = M.diagonal(-1)
            x = scipy.linalg.solve_banded((1, 1), ab, rhs)
        else:
            x = spla.splu(M.tocsc()).solve(rhs)
    except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        raise SingularSystem(f"factorisation failed: {exc}", rows=bad.tolist()) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solution is not finite", rows=bad.tolist())
    res = float(np.max(np.abs(M @ x - rhs))) if n else 0.0
    scale = float(np.max(np.abs(rhs))) if n else 0.0
    system.residual = res
    if res > tol * max(scale, 1.0):
        raise SingularSystem(f"residual {res:.3e} above {tol:g} * |rhs|", rows=bad.tolist())
    system.solution = x
    return x


def solve_dirichlet_fd(spec: ProblemSpec, h: float, pad: int = 1) -> GridSystem:
    system = assemble(spec, Grid.for_domain(spec, h, pad))
    solve(system)
    return system


def resolvent_oracle(spec: ProblemSpec, f: ScalarField, alpha: float, grid: Grid) -> GridSystem:
    """Solve (alpha - L) g = f on the grid box with g = 0 outside it."""
    if not alpha > 0:
        raise PreconditionError("alpha must be positive")
    lo, hi = grid.lo + 0.5 * grid.h, grid.hi - 0.5 * grid.h
    box = Box(tuple(lo), tuple(hi))
    system = assemble(spec, grid, alpha=alpha, f=f, domain=box, exterior=Constant(0.0))
    solve(system)
    # decay of the free resolvent from the box centre to its edge, drift ignored
    lam = spec.elliptic.lam
    margin = float(np.min(0.5 * (grid.hi - grid.lo)))
    sup_f = f.bound(grid.lo, grid.hi) if isinstance(f, ScalarField) else math.nan
    system.aux["far_field_bound"] = 2.0 * sup_f / alpha * math.exp(-math.sqrt(2.0 * alpha / lam) * margin)
    return system


@dataclass(frozen=True)
class ComparisonRow:
    point: tuple
    mc_mean: float
    mc_stderr: float
    oracle: float
    oracle_error: float
    gap: float
    tolerance: float

    @property
    def ratio(self) -> float:
        return self.gap / self.tolerance if self.tolerance > 0 else (0.0 if self.gap == 0 else math.inf)

    @property
    def passed(self) -> bool:
        return self.gap <= self.tolerance


@dataclass(frozen=True)
class ComparisonReport:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def compare(mc, fine: GridSystem, coarse: GridSystem | None = None, *, order: float = 2.0) -> ComparisonReport:
    """Per point: pass when |mc - oracle| <= max(3 stderr, Richardson error estimate).

    ``coarse`` should use twice the mesh width of ``fine``; the error estimate
    is |u_h - u_2h| / (2^order - 1).
    """
    pts = np.array([np.asarray(p, float).ravel() for p, _ in mc])
    u = fine.grid.interpolate(fine.lattice_values(), pts)
    if coarse is not None:
        uc = coarse.grid.interpolate(coarse.lattice_values(), pts)
        err = np.abs(u - uc) / (2.0**order - 1.0)
    else:
        err = np.zeros(len(pts))
    rows = []
    for (p, est), val, e in zip(mc, u, err):
        gap = abs(est.mean - val)
        rows.append(ComparisonRow(tuple(np.asarray(p, float).ravel().tolist()), est.mean, est.stderr, float(val),
                                  float(e), gap, max(3.0 * est.stderr, float(e))))
    return ComparisonReport(rows)


def write_grid_csv(path, system: GridSystem, fmt: Callable[[float], str] = "{:.17g}".format) -> None:
    nodes = system.grid.nodes()
    vals = system.lattice_values()
    d = system.grid.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*(f"x{k + 1}" for k in range(d)), "value", "interior"])
        for x, v, inside in zip(nodes, vals, system.interior):
            w.writerow([*(fmt(c) for c in x), fmt(v), int(inside)])


def write_comparison_csv(path, report: ComparisonReport, fmt: Callable[[float], str] = "{:.17g}".format) -> None:
    d = len(report.rows[0].point) if report.rows else 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point_id", *(f"x{k + 1}" for k in range(d)), "mc_mean", "mc_stderr", "oracle", "oracle_error",
                    "gap", "tolerance", "ratio", "pass"])
        for i, r in enumerate(report.rows):
            w.writerow([i, *(fmt(c) for c in r.point), fmt(r.mc_mean), fmt(r.mc_stderr), fmt(r.oracle),
                        fmt(r.oracle_error), fmt(r.gap), fmt(r.tolerance), fmt(r.ratio), int(r.passed)])
