"""Built-in scalar field kinds.

Each field is evaluable from numpy (``field(x)`` with ``x`` of shape ``(..., d)``)
and packable into a flat ``FieldBank`` that the compiled path kernel reads
through :func:`eval_field`. Keeping both views on one object is what lets the
simulator and the finite-difference oracle see identical coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

CONSTANT = 0
POLYNOMIAL = 1
BOX_INDICATOR = 2
ABS_AFFINE = 3
POINT_TABLE = 4


class ScalarField:
    code: int = -1

    def __call__(self, x):
        raise NotImplementedError

    def params(self, dim: int) -> list[float]:
        raise NotImplementedError

    def bound(self, lo, hi) -> float:
        """Upper bound of |f| on the box [lo, hi]."""
        raise NotImplementedError

    @property
    def is_constant(self) -> bool:
        return False


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def _squeeze(x, values):
    return float(values[0]) if np.ndim(x) == 1 else values


@dataclass(frozen=True)
class Constant(ScalarField):
    value: float
    code = CONSTANT

    def __call__(self, x):
        pts = _as_points(x)
        return _squeeze(x, np.full(pts.shape[0], float(self.value)))

    def params(self, dim):
        return [float(self.value)]

    def bound(self, lo, hi):
        return abs(float(self.value))

    @property
    def is_constant(self):
        return True


@dataclass(frozen=True)
class Polynomial(ScalarField):
    """Sum of monomials ``coef * prod(x_j ** powers[j])``."""

    terms: tuple[tuple[float, tuple[int, ...]], ...]
    code = POLYNOMIAL

    @classmethod
    def from_terms(cls, terms: Sequence) -> Polynomial:
        out = []
        for coef, powers in terms:
            powers = tuple(int(p) for p in powers)
            if any(p < 0 for p in powers):
                raise ValueError("polynomial powers must be nonnegative")
            out.append((float(coef), powers))
        return cls(tuple(out))

    @classmethod
    def coordinate(cls, index: int, dim: int, scale: float = 1.0) -> Polynomial:
        powers = [0] * dim
        powers[index] = 1
        return cls(((float(scale), tuple(powers)),))

    def _check_dim(self, dim):
        for _, powers in self.terms:
            if len(powers) != dim:
                raise ValueError(f"monomial {powers} does not match dim {dim}")

    def __call__(self, x):
        pts = _as_points(x)
        self._check_dim(pts.shape[1])
        out = np.zeros(pts.shape[0])
        for coef, powers in self.terms:
            out += coef * np.prod(pts ** np.asarray(powers), axis=1)
        return _squeeze(x, out)

    def derivative(self, axis: int) -> Polynomial:
        terms = []
        for coef, powers in self.terms:
            if powers[axis] == 0:
                continue
            p = list(powers)
            p[axis] -= 1
            terms.append((coef * powers[axis], tuple(p)))
        return Polynomial(tuple(terms))

    @property
    def is_constant(self):
        return all(sum(p) == 0 for _, p in self.terms)

    def params(self, dim):
        self._check_dim(dim)
        out = [float(len(self.terms))]
        for coef, powers in self.terms:
            out.append(coef)
            out.extend(float(p) for p in powers)
        return out

    def bound(self, lo, hi):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        m = np.maximum(np.abs(lo), np.abs(hi))
        return float(sum(abs(c) * np.prod(m ** np.asarray(p)) for c, p in self.terms))


@dataclass(frozen=True)
class BoxIndicator(ScalarField):
    """``inside`` on the closed box [lo, hi], ``outside`` elsewhere."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    inside: float = 1.0
    outside: float = 0.0
    code = BOX_INDICATOR

    def __call__(self, x):
        pts = _as_points(x)
        mask = np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=1)
        return _squeeze(x, np.where(mask, float(self.inside), float(self.outside)))

    def params(self, dim):
        if len(self.lo) != dim or len(self.hi) != dim:
            raise ValueError("box indicator corners do not match dim")
        return [*map(float, self.lo), *map(float, self.hi), float(self.inside), float(self.outside)]

    def bound(self, lo, hi):
        return max(abs(self.inside), abs(self.outside))


@dataclass(frozen=True)
class AbsAffine(ScalarField):
    """``min(cap, const + sum_j coefs[j] * |x_j|)``; cap may be infinite."""

    const: float
    coefs: tuple[float, ...]
    cap: float = math.inf
    code = ABS_AFFINE

    def __call__(self, x):
        pts = _as_points(x)
        vals = self.const + np.abs(pts) @ np.asarray(self.coefs, float)
        return _squeeze(x, np.minimum(vals, self.cap))

    def params(self, dim):
        if len(self.coefs) != dim:
            raise ValueError("abs_affine coefficients do not match dim")
        return [float(self.const), float(self.cap), *map(float, self.coefs)]

    def bound(self, lo, hi):
        m = np.maximum(np.abs(np.asarray(lo, float)), np.abs(np.asarray(hi, float)))
        top = abs(self.const) + float(np.abs(self.coefs) @ m)
        return float(min(top, abs(self.cap))) if math.isfinite(self.cap) else top


@dataclass(frozen=True)
class PointTable(ScalarField):
    """Tabulated values at isolated points (sup-norm tolerance), else ``default``."""

    points: tuple[tuple[float, ...], ...]
    values: tuple[float, ...]
    default: float = 0.0
    tol: float = 1e-9
    code = POINT_TABLE

    def __call__(self, x):
        pts = _as_points(x)
        out = np.full(pts.shape[0], float(self.default))
        taken = np.zeros(pts.shape[0], dtype=bool)
        for p, v in zip(self.points, self.values):
            hit = (np.max(np.abs(pts - np.asarray(p)), axis=1) <= self.tol) & ~taken
            out[hit] = v
            taken |= hit
        return _squeeze(x, out)

    def params(self, dim):
        out = [float(len(self.points)), float(self.tol), float(self.default)]
        for p, v in zip(self.points, self.values):
            if len(p) != dim:
                raise ValueError("point table entry does not match dim")
            out.append(float(v))
            out.extend(map(float, p))
        return out

    def bound(self, lo, hi):
        return max([abs(self.default), *map(abs, self.values)])


@dataclass(frozen=True)
class Product(ScalarField):
    """Pointwise product of two leaf fields (e.g. kappa * phi)."""

    left: ScalarField
    right: ScalarField

    def __call__(self, x):
        return self.left(x) * self.right(x)

    def bound(self, lo, hi):
        return self.left.bound(lo, hi) * self.right.bound(lo, hi)


@dataclass
class FieldBank:
    """Flat packing of scalar fields for the compiled kernel."""

    dim: int
    _params: list = field(default_factory=list)
    _index: list = field(default_factory=list)

    def add(self, f: ScalarField | None) -> int:
        if f is None:
            return -1
        if isinstance(f, Product):
            if isinstance(f.left, Product) or isinstance(f.right, Product):
                raise TypeError("only products of two leaf fields can be packed")
            left, right = self.add(f.left), self.add(f.right)
            offset = len(self._params)
            self._params.extend([float(left), float(right)])
            self._index.append((-2, offset))
            return len(self._index) - 1
        if f.code < 0:
            raise TypeError(f"field {f!r} has no compiled form")
        offset = len(self._params)
        self._params.extend(f.params(self.dim))
        self._index.append((f.code, offset))
        return len(self._index) - 1

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        params = np.asarray(self._params if self._params else [0.0], dtype=np.float64)
        index = np.asarray(self._index if self._index else [(0, 0)], dtype=np.int64).reshape(-1, 2)
        return params, index


@nb.njit(cache=True)
def _eval_leaf(code, p, off, x):
    d = x.shape[0]
    if code == CONSTANT:
        return p[off]
    if code == POLYNOMIAL:
        n = int(p[off])
        k = off + 1
        total = 0.0
        for _ in range(n):
            term = p[k]
            for j in range(d):
                e = int(p[k + 1 + j])
                for _ in range(e):
                    term *= x[j]
            total += term
            k += 1 + d
        return total
    if code == BOX_INDICATOR:
        for j in range(d):
            if x[j] < p[off + j] or x[j] > p[off + d + j]:
                return p[off + 2 * d + 1]
        return p[off + 2 * d]
    if code == ABS_AFFINE:
        v = p[off]
        for j in range(d):
            v += p[off + 2 + j] * abs(x[j])
        return min(v, p[off + 1])
    if code == POINT_TABLE:
        n = int(p[off])
        tol = p[off + 1]
        k = off + 3
        for _ in range(n):
            hit = True
            for j in range(d):
                if abs(x[j] - p[k + 1 + j]) > tol:
                    hit = False
                    break
            if hit:
                return p[k]
            k += 1 + d
        return p[off + 2]
    return np.nan


@nb.njit(cache=True)
def eval_field(p, index, fid, x):
    code = index[fid, 0]
    if code == -2:
        off = index[fid, 1]
        left = int(p[off])
        right = int(p[off + 1])
        return _eval_leaf(index[left, 0], p, index[left, 1], x) * _eval_leaf(
            index[right, 0], p, index[right, 1], x
        )
    return _eval_leaf(code, p, index[fid, 1], x)


def eval_packed(bank: FieldBank, fid: int, points) -> np.ndarray:
    """Evaluate a packed field through the compiled path (testing aid)."""
    p, idx = bank.arrays()
    pts = _as_points(points)
    return np.array([eval_field(p, idx, fid, np.ascontiguousarray(row)) for row in pts])
