"""Canned problems with known answers, used by the tests, demos and configs/."""
from __future__ import annotations

import math

import numpy as np

from .fields import AbsAffine, BoxIndicator, Constant, PointTable, Polynomial, ScalarField
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
    default_phi_bound,
)


def closed_form_sinh(x) -> np.ndarray:
    """Solution of u''/2 + (1 - u) = 0 on (0, 1) with u(0) = u(1) = 0."""
    x = np.asarray(x, dtype=float)
    s = math.sqrt(2.0)
    return 1.0 - (np.sinh(s * x) + np.sinh(s * (1.0 - x))) / math.sinh(s)


def disk_harmonic(phi: ScalarField | None = None) -> ProblemSpec:
    """Brownian motion in the unit disk, phi = x1 (its own harmonic extension)."""
    phi = phi if phi is not None else Polynomial.coordinate(0, 2)
    domain = Ball((0.0, 0.0), 1.0)
    return ProblemSpec(EllipticField.identity(2), DriftField.zero(2), domain,
                       BoundaryData(phi, default_phi_bound(phi, domain)))


def sinh_jump() -> ProblemSpec:
    """D = (0, 1), kappa = 1, every jump lands on 2 where phi = 1; phi = 0 elsewhere."""
    return ProblemSpec(
        EllipticField.identity(1),
        DriftField.zero(1),
        Interval(0.0, 1.0),
        BoundaryData(PointTable(((2.0,),), (1.0,)), 1.0),
        JumpKernel(Constant(1.0), RedistributionLaw((Atom(1.0, (2.0,)),))),
    )


def ramp_1d() -> ProblemSpec:
    return ProblemSpec(
        EllipticField.identity(1), DriftField.zero(1), Interval(0.0, 1.0),
        BoundaryData(Polynomial.coordinate(0, 1), 1.0),
    )


def constant_kill(rate: float = 1.0, dim: int = 2, target=None, domain=None, phi: ScalarField | None = None
                  ) -> ProblemSpec:
    """kappa = rate, all mass of nu on ``target`` (default: far outside the unit ball)."""
    target = tuple(target) if target is not None else (3.0,) + (0.0,) * (dim - 1)
    domain = domain if domain is not None else Ball((0.0,) * dim, 1.0)
    phi = phi if phi is not None else Constant(1.0)
    return ProblemSpec(
        EllipticField.identity(dim), DriftField.zero(dim), domain, BoundaryData(phi, 1.0),
        JumpKernel(Constant(float(rate)), RedistributionLaw((Atom(1.0, target),))),
    )


def abs_kill(dim: int = 2, cap: float = math.inf) -> ProblemSpec:
    """kappa(x) = 1 + |x1| (optionally capped)."""
    coefs = (1.0,) + (0.0,) * (dim - 1)
    return ProblemSpec(
        EllipticField.identity(dim), DriftField.zero(dim), Ball((0.0,) * dim, 1.0), BoundaryData(Constant(1.0), 1.0),
        JumpKernel(AbsAffine(1.0, coefs, cap), RedistributionLaw((Atom(1.0, (3.0,) + (0.0,) * (dim - 1)),))),
    )


def two_atom_kill(dim: int = 2) -> ProblemSpec:
    """kappa = 2 inside the unit box, 1 outside; two interior atoms, so the walk re-enters often."""
    lo, hi = (-0.5,) * dim, (0.5,) * dim
    return ProblemSpec(
        EllipticField.identity(dim), DriftField.zero(dim), Box((-1.0,) * dim, (1.0,) * dim),
        BoundaryData(Constant(1.0), 1.0),
        JumpKernel(BoxIndicator(lo, hi, 2.0, 1.0),
                   RedistributionLaw((Atom(0.5, (0.25,) + (0.0,) * (dim - 1)),
                                      Atom(0.5, (-2.0,) + (0.0,) * (dim - 1))))),
    )


def resolvent_box_scenario() -> tuple[ProblemSpec, ScalarField]:
    """kappa = 1, nu = delta at y* = (1.5, 0) (outside the unit disk), f = indicator of [-0.5, 0.5]^2."""
    spec = constant_kill(1.0, 2, target=(1.5, 0.0))
    return spec, BoxIndicator((-0.5, -0.5), (0.5, 0.5))
