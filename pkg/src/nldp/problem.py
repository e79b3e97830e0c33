"""Coefficients, jump kernel, domain and exterior data of one Dirichlet problem."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EvaluationFailure, ValidationError
from .fields import Constant, Polynomial, ScalarField


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


# --------------------------------------------------------------------------- A


@dataclass(frozen=True)
class EllipticField:
    """Symmetric, uniformly elliptic matrix field with entries from ``fields``.

    Only constant or polynomial entries are supported; the divergence needed by
    the Ito drift correction is obtained by differentiating the entries.
    """

    dim: int
    entries: tuple[tuple[ScalarField, ...], ...]
    lam: float

    def __post_init__(self):
        if len(self.entries) != self.dim or any(len(r) != self.dim for r in self.entries):
            raise ValidationError("elliptic entries must be a dim x dim table")
        if self.lam < 1:
            raise ValidationError("ellipticity constant lambda must be >= 1")
        for row in self.entries:
            for e in row:
                if not isinstance(e, (Constant, Polynomial)):
                    raise ValidationError("elliptic entries must be constant or polynomial fields")

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> EllipticField:
        return cls.constant(np.eye(dim) * scale)

    @classmethod
    def constant(cls, matrix, lam: float | None = None) -> EllipticField:
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        if lam is None:
            ev = np.linalg.eigvalsh(0.5 * (m + m.T))
            if ev[0] <= 0:
                raise ValidationError("constant matrix is not positive definite")
            lam = float(max(1.0, ev[-1], 1.0 / ev[0]))
        rows = tuple(tuple(Constant(float(v)) for v in row) for row in m)
        return cls(m.shape[0], rows, float(lam))

    @property
    def is_constant(self) -> bool:
        return all(e.is_constant for row in self.entries for e in row)

    @property
    def is_diagonal(self) -> bool:
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                if i != j and not (e.is_constant and e(np.zeros(self.dim)) == 0.0):
                    return False
        return True

    @property
    def isotropic_scale(self) -> float | None:
        """``a`` when A = a*I with constant a, else None."""
        if not (self.is_constant and self.is_diagonal):
            return None
        diag = {self.entries[i][i](np.zeros(self.dim)) for i in range(self.dim)}
        return diag.pop() if len(diag) == 1 else None

    def eval_A(self, x) -> np.ndarray:
        pts = _points(x)
        out = np.empty((pts.shape[0], self.dim, self.dim))
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                out[:, i, j] = e(pts)
        return out[0] if np.ndim(x) == 1 else out

    def div_fields(self) -> tuple[ScalarField, ...] | None:
        """Components ``sum_i d_i a_ij`` as polynomial fields, None if A constant."""
        if self.is_constant:
            return None
        comps = []
        for j in range(self.dim):
            terms = []
            for i in range(self.dim):
                e = self.entries[i][j]
                if isinstance(e, Polynomial):
                    terms.extend(e.derivative(i).terms)
            comps.append(Polynomial(tuple(terms)))
        return tuple(comps)

    def eval_div_A(self, x):
        comps = self.div_fields()
        if comps is None:
            return "constant"
        pts = _points(x)
        out = np.stack([c(pts) for c in comps], axis=-1)
        return out[0] if np.ndim(x) == 1 else out

    def sqrt_A(self, x) -> np.ndarray:
        """Symmetric square root via eigendecomposition."""
        a = self.eval_A(x)
        w, v = np.linalg.eigh(a)
        w = np.sqrt(np.clip(w, 0.0, None))
        return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


# --------------------------------------------------------------------------- b


@dataclass(frozen=True)
class DriftField:
    components: tuple[ScalarField, ...]
    bound_hint: float | None = None

    @classmethod
    def zero(cls, dim: int) -> DriftField:
        return cls(tuple(Constant(0.0) for _ in range(dim)), 0.0)

    @classmethod
    def constant(cls, vector) -> DriftField:
        v = [float(c) for c in np.atleast_1d(vector)]
        return cls(tuple(Constant(c) for c in v), float(np.linalg.norm(v)))

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def is_zero(self) -> bool:
        return all(isinstance(c, Constant) and c.value == 0.0 for c in self.components)

    def eval_b(self, x) -> np.ndarray:
        pts = _points(x)
        out = np.stack([c(pts) for c in self.components], axis=-1)
        return out[0] if np.ndim(x) == 1 else out


# ------------------------------------------------------------------- jumps / nu


@dataclass(frozen=True)
class Atom:
    weight: float
    point: tuple[float, ...]
    relative: bool = False  # point is a displacement from the pre-jump position

    def target(self, x) -> np.ndarray:
        p = np.asarray(self.point, dtype=float)
        return np.asarray(x, float) + p if self.relative else p


@dataclass(frozen=True)
class UniformBall:
    """Absolutely continuous part: uniform law on a ball (an interval in 1D)."""

    weight: float
    center: tuple[float, ...]
    radius: float
    relative: bool = False
    n_radial: int = 8
    n_angular: int = 16

    def center_at(self, x) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return np.asarray(x, float) + c if self.relative else c

    def quadrature(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights (summing to ``self.weight``) of a fixed product rule."""
        c = self.center_at(x)
        d = c.shape[0]
        g, gw = np.polynomial.legendre.leggauss(self.n_radial)
        if d == 1:
            nodes = c + self.radius * g[:, None]
            w = gw / gw.sum()
        elif d == 2:
            s = 0.5 * self.radius * (g + 1.0)
            ws = gw * s
            th = 2.0 * np.pi * (np.arange(self.n_angular) + 0.5) / self.n_angular
            ss, tt = np.meshgrid(s, th, indexing="ij")
            nodes = c + np.stack([ss.ravel() * np.cos(tt.ravel()), ss.ravel() * np.sin(tt.ravel())], axis=1)
            w = np.repeat(ws, self.n_angular)
            w = w / w.sum()
        else:
            raise ValidationError("density quadrature is implemented for dim <= 2")
        return nodes, self.weight * w

    def sample(self, x, normals: np.ndarray, u: float) -> np.ndarray:
        c = self.center_at(x)
        direction = normals / np.linalg.norm(normals)
        return c + self.radius * u ** (1.0 / c.shape[0]) * direction


@dataclass(frozen=True)
class RedistributionLaw:
    atoms: tuple[Atom, ...] = ()
    density: UniformBall | None = None

    def __post_init__(self):
        total = sum(a.weight for a in self.atoms) + (self.density.weight if self.density else 0.0)
        if any(a.weight < 0 for a in self.atoms) or (self.density and self.density.weight < 0):
            raise ValidationError("redistribution weights must be nonnegative")
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"redistribution weights sum to {total!r}, not 1")

    @property
    def is_atomic(self) -> bool:
        return self.density is None or self.density.weight == 0.0

    @property
    def is_homogeneous(self) -> bool:
        """True when the law does not depend on the pre-jump position."""
        return not any(a.relative for a in self.atoms) and not (self.density and self.density.relative)

    def atoms_at(self, x) -> tuple[np.ndarray, np.ndarray]:
        w = np.array([a.weight for a in self.atoms])
        pts = np.array([a.target(x) for a in self.atoms]).reshape(len(self.atoms), -1)
        return w, pts

    def quadrature(self, x) -> tuple[np.ndarray, np.ndarray]:
        """All mass points: atoms followed by density quadrature nodes."""
        w, pts = self.atoms_at(x)
        if self.density is not None and self.density.weight > 0:
            dn, dw = self.density.quadrature(x)
            pts = np.vstack([pts.reshape(-1, dn.shape[1]), dn])
            w = np.concatenate([w, dw])
        return w, pts


@dataclass(frozen=True)
class JumpKernel:
    """J(x, dy) = kappa(x) * nu(x, dy)."""

    kappa: ScalarField
    nu: RedistributionLaw


# ---------------------------------------------------------------------- domain


class Domain:
    dim: int
    regularity_declared: bool = True

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def signed_distance(self, x):
        raise NotImplementedError

    def contains(self, x):
        raise NotImplementedError

    def project_to_boundary(self, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(Domain):
    center: tuple[float, ...]
    radius: float
    regularity_declared: bool = True

    @property
    def dim(self):
        return len(self.center)

    @property
    def bounding_box(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def signed_distance(self, x):
        pts = _points(x)
        out = np.linalg.norm(pts - np.asarray(self.center), axis=1) - self.radius
        return float(out[0]) if np.ndim(x) == 1 else out

    def contains(self, x):
        pts = _points(x)
        r2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=1)
        out = r2 < self.radius**2
        return bool(out[0]) if np.ndim(x) == 1 else out

    def project_to_boundary(self, x):
        c = np.asarray(self.center, float)
        v = np.asarray(x, float) - c
        n = np.linalg.norm(v)
        v = v / n if n > 0 else np.eye(self.dim)[0]
        return c + self.radius * v


@dataclass(frozen=True)
class Box(Domain):
    """Open axis-aligned box; in 1D this is the interval (lo, hi)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    regularity_declared: bool = True

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValidationError("box corners must satisfy lo < hi componentwise")

    @property
    def dim(self):
        return len(self.lo)

    @property
    def bounding_box(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def signed_distance(self, x):
        pts = _points(x)
        lo, hi = self.bounding_box
        q = np.maximum(lo - pts, pts - hi)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        out = outside + inside
        return float(out[0]) if np.ndim(x) == 1 else out

    def contains(self, x):
        pts = _points(x)
        lo, hi = self.bounding_box
        out = np.all((pts > lo) & (pts < hi), axis=1)
        return bool(out[0]) if np.ndim(x) == 1 else out

    def project_to_boundary(self, x):
        lo, hi = self.bounding_box
        p = np.clip(np.asarray(x, float), lo, hi)
        if self.contains(p):
            gaps = np.concatenate([p - lo, hi - p])
            k = int(np.argmin(gaps))
            p[k % self.dim] = lo[k] if k < self.dim else hi[k - self.dim]
        return p


def Interval(lo: float, hi: float, regularity_declared: bool = True) -> Box:
    return Box((float(lo),), (float(hi),), regularity_declared)


# ---------------------------------------------------------------------- data


@dataclass(frozen=True)
class BoundaryData:
    phi: ScalarField
    sup_bound: float

    def eval_phi(self, x):
        return self.phi(x)


@dataclass(frozen=True)
class ProblemSpec:
    elliptic: EllipticField
    drift: DriftField
    domain: Domain
    boundary: BoundaryData
    jumps: JumpKernel | None = None

    def __post_init__(self):
        dims = {self.elliptic.dim, self.drift.dim, self.domain.dim}
        if len(dims) != 1:
            raise ValidationError(f"component dimensions disagree: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.elliptic.dim

    def kappa(self, x):
        if self.jumps is None:
            pts = _points(x)
            return 0.0 if np.ndim(x) == 1 else np.zeros(pts.shape[0])
        return self.jumps.kappa(x)

    def replace(self, **changes) -> ProblemSpec:
        from dataclasses import replace

        return replace(self, **changes)


# ----------------------------------------------------------------- validation


@dataclass
class CheckResult:
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    n_samples: int
    rng_seed: int
    checks: dict[str, CheckResult] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]


def _finite(name, values):
    if not np.all(np.isfinite(values)):
        raise EvaluationFailure(f"{name} evaluated to a non-finite value")
    return values


def validation_halo(domain: Domain) -> tuple[np.ndarray, np.ndarray]:
    """Box on which exterior data is sampled: the bounding box grown by half its span per side."""
    lo, hi = domain.bounding_box
    return lo - 0.5 * (hi - lo), hi + 0.5 * (hi - lo)


def default_phi_bound(phi: ScalarField, domain: Domain, jumps: JumpKernel | None = None) -> float:
    """Bound of |phi| on the validation halo and on the atoms of a homogeneous nu."""
    bound = float(phi.bound(*validation_halo(domain)))
    if jumps is not None and jumps.nu.atoms and jumps.nu.is_homogeneous:
        _, targets = jumps.nu.atoms_at(np.zeros(domain.dim))
        bound = max(bound, float(np.max(np.abs(np.asarray(phi(targets), float)))))
    return bound


def validate_problem(spec: ProblemSpec, n_samples: int = 256, rng_seed: int = 0) -> ValidationReport:
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    lo, hi = spec.domain.bounding_box
    pts = rng.uniform(lo, hi, size=(n_samples, spec.dim))
    report = ValidationReport(n_samples, rng_seed)

    a = _finite("A", spec.elliptic.eval_A(pts))
    asym = float(np.max(np.abs(a - np.swapaxes(a, 1, 2))))
    report.checks["A_symmetric"] = CheckResult(asym <= 1e-12, f"max asymmetry {asym:.3e}")

    ev = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, 1, 2)))
    lam = spec.elliptic.lam
    ok = bool(ev.min() >= 1.0 / lam - 1e-12 and ev.max() <= lam + 1e-12)
    report.checks["A_eigen_bounds"] = CheckResult(
        ok, f"eigenvalues in [{ev.min():.6g}, {ev.max():.6g}] vs [{1 / lam:.6g}, {lam:.6g}]"
    )

    s = spec.elliptic.sqrt_A(pts)
    err = float(np.max(np.linalg.norm(s @ np.swapaxes(s, 1, 2) - a, axis=(1, 2))))
    report.checks["sqrt_A"] = CheckResult(err <= 1e-10, f"max Frobenius error {err:.3e}")

    if not isinstance(spec.elliptic.eval_div_A(pts), str):
        _finite("div A", spec.elliptic.eval_div_A(pts))
    _finite("b", spec.drift.eval_b(pts))

    ext_lo, ext_hi = validation_halo(spec.domain)
    ext = rng.uniform(ext_lo, ext_hi, size=(4 * n_samples, spec.dim))
    ext = ext[~spec.domain.contains(ext)]

    if spec.jumps is not None:
        k = _finite("kappa", spec.jumps.kappa(pts))
        report.checks["kappa_nonnegative"] = CheckResult(bool(np.all(k >= 0)), f"min kappa {k.min():.6g}")
        nu = spec.jumps.nu
        worst_mass = 0.0
        self_atom = False
        targets = []
        for x in pts:
            w, q = nu.quadrature(x)
            worst_mass = max(worst_mass, abs(float(w.sum()) - 1.0))
            aw, ap = nu.atoms_at(x)
            if len(aw) and np.any(np.all(ap == x, axis=1) & (aw > 0)):
                self_atom = True
            targets.append(q)
        report.checks["nu_normalized"] = CheckResult(worst_mass <= 1e-10, f"max |mass - 1| {worst_mass:.3e}")
        report.checks["nu_no_self_atom"] = CheckResult(not self_atom, "atom located at the pre-jump point" if self_atom else "")
        tq = np.vstack(targets)
        ext = np.vstack([ext, tq[~spec.domain.contains(tq)]])

    if ext.shape[0]:
        phi = _finite("phi", np.asarray(spec.boundary.phi(ext), dtype=float))
        worst = float(np.max(np.abs(phi)))
        report.checks["phi_bound"] = CheckResult(
            worst <= spec.boundary.sup_bound + 1e-12, f"max |phi| {worst:.6g} vs bound {spec.boundary.sup_bound:.6g}"
        )
    return report


def require_valid(spec: ProblemSpec, n_samples: int = 64, rng_seed: int = 0) -> ValidationReport:
    report = validate_problem(spec, n_samples, rng_seed)
    if not report.passed:
        details = "; ".join(f"{k}: {report.checks[k].detail}" for k in report.failures())
        raise ValidationError(f"problem failed validation ({details})")
    return report


def as_points(points: Sequence, dim: int) -> np.ndarray:
    arr = np.asarray(points, dtype=float).reshape(-1, dim)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("points must be finite")
    return arr
