"""Small-ball Kato integrals of a scalar field.

The integral of |f| against the dimension's potential kernel over B(x, r) is
computed in polar coordinates centred at x, so the kernel singularity at x is
absorbed by the radial Jacobian. It is a diagnostic: a profile that decreases
to zero as r -> 0 is consistent with Kato membership, nothing more.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import PreconditionError, QuadratureFailure


def _radial_weight(s: np.ndarray, dim: int) -> np.ndarray:
    """Kernel times the radial Jacobian s^(d-1)."""
    if dim == 1:
        return np.ones_like(s)
    if dim == 2:
        return s * np.log(1.0 / s)
    return s  # s^(2-d) * s^(d-1)


def _directions(dim: int, n_angular: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions and surface weights summing to the sphere area."""
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if dim == 2:
        th = 2.0 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n_angular, 2.0 * np.pi / n_angular)
    if dim == 3:
        ct, wt = np.polynomial.legendre.leggauss(n_angular // 2)
        ph = 2.0 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
        c, p = np.meshgrid(ct, ph, indexing="ij")
        st = np.sqrt(1.0 - c**2)
        dirs = np.stack([(st * np.cos(p)).ravel(), (st * np.sin(p)).ravel(), c.ravel()], axis=1)
        w = np.repeat(wt, n_angular) * (2.0 * np.pi / n_angular)
        return dirs, w
    raise PreconditionError("kato_profile supports dim 1, 2 and 3")


def kato_integral(f: Callable, x, r: float, *, n_radial: int = 24, n_angular: int = 32) -> float:
    x = np.asarray(x, dtype=float).ravel()
    dim = x.shape[0]
    g, gw = np.polynomial.legendre.leggauss(n_radial)
    s = 0.5 * r * (g + 1.0)
    ws = 0.5 * r * gw * _radial_weight(s, dim)
    dirs, wd = _directions(dim, n_angular)
    nodes = x + (s[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    vals = np.abs(np.asarray(f(nodes), dtype=float).reshape(-1))
    if not np.all(np.isfinite(vals)):
        raise QuadratureFailure(f"integrand is not finite at a node of B({x.tolist()}, {r}); offset the probe")
    w = (ws[:, None] * wd[None, :]).ravel()
    return math.fsum(w * vals)


def kato_profile(
    f: Callable,
    dim: int,
    radii: Sequence[float],
    probe_points,
    *,
    n_radial: int = 24,
    n_angular: int = 32,
) -> list[tuple[float, float]]:
    """For each radius, the max over probes of the Kato integral of |f| on B(x, r).

    d = 1 uses the plain integral over B(x, r); the d = 1 condition only asks
    for a finite bound, and the shrinking ball keeps the profile comparable
    across dimensions.
    """
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii) or any(b >= a for a, b in zip(radii, radii[1:])):
        raise PreconditionError("radii must be positive and strictly decreasing")
    pts = np.asarray(probe_points, dtype=float).reshape(-1, dim)
    if not np.all(np.isfinite(pts)):
        raise PreconditionError("probe points must be finite")
    out = []
    for r in radii:
        vals = [kato_integral(f, p, r, n_radial=n_radial, n_angular=n_angular) for p in pts]
        out.append((r, max(vals)))
    return out
