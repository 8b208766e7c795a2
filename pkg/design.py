"""
Regressors on the N x N lattice, the design matrix X, Grenander coefficients
and the analytic jump sets of the regression spectral measure M.

Row ordering of X is t1-major: (1,1), (1,2), ..., (1,N), (2,1), ..., (N,N),
i.e. row (t1 - 1) * N + (t2 - 1) in zero-based indexing. Every Kronecker
identity in estimators.py and sampler.py relies on this.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from errors import ConfigError, LagRangeError, ParameterDomainError

HALF_PI = math.pi / 2.0


class RegressorKind(str, Enum):
    POLYNOMIAL = "poly"
    HARMONIC = "harmonic"
    POLY_PLUS_HARMONIC = "polyharmonic"

    @classmethod
    def parse(cls, value: "str | RegressorKind") -> "RegressorKind":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown regressor {value!r}; choose from {[k.value for k in cls]}") from None


# cos(pi t / 2) for t mod 4, exact at integers
_QUARTER_COS = np.array([1.0, 0.0, -1.0, 0.0])


def _quarter_cos(t):
    return _QUARTER_COS[np.mod(np.asarray(t, dtype=np.int64), 4)]


def regressor_value(kind: RegressorKind, t1, t2):
    kind = RegressorKind.parse(kind)
    if kind is RegressorKind.POLYNOMIAL:
        value = np.asarray(t1, dtype=float) * np.asarray(t2, dtype=float)
    elif kind is RegressorKind.HARMONIC:
        value = _quarter_cos(t1) * _quarter_cos(t2)
    else:
        value = 1.0 + _quarter_cos(t1) * _quarter_cos(t2)
    if np.ndim(value) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class LatticeDesign:
    N: int
    kinds: tuple[RegressorKind, ...]
    X: np.ndarray
    norms: np.ndarray

    @classmethod
    def build(cls, N: int, kinds: "RegressorKind | str | Sequence[RegressorKind | str]") -> "LatticeDesign":
        if N < 2:
            raise ParameterDomainError(f"grid side must be >= 2, got {N}")
        if isinstance(kinds, (str, RegressorKind)):
            kinds = (kinds,)
        kinds = tuple(RegressorKind.parse(k) for k in kinds)
        t1, t2 = np.meshgrid(np.arange(1, N + 1), np.arange(1, N + 1), indexing="ij")
        X = np.column_stack([np.ravel(regressor_value(k, t1, t2)) for k in kinds])
        return cls.from_matrix(N, X, kinds)

    @classmethod
    def from_matrix(cls, N: int, X: np.ndarray, kinds: tuple = ()) -> "LatticeDesign":
        X = np.array(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != N * N:
            raise ParameterDomainError(f"X has {X.shape[0]} rows, expected N^2 = {N * N}")
        norms = np.sqrt(np.sum(X ** 2, axis=0))
        if np.any(norms <= 0):
            raise ParameterDomainError("every regressor column needs a positive norm")
        X.setflags(write=False)
        norms.setflags(write=False)
        return cls(N=N, kinds=tuple(kinds), X=X, norms=norms)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def column_grid(self, i: int) -> np.ndarray:
        """Column i as an N x N array indexed [t1 - 1, t2 - 1]."""
        return self.X[:, i].reshape(self.N, self.N)


def row_index(N: int, t1: int, t2: int) -> int:
    return (t1 - 1) * N + (t2 - 1)


def lag_slices(N: int, h1: int, h2: int) -> tuple[tuple[slice, slice], tuple[slice, slice]]:
    """Slices (shifted, base) so that grid[shifted] pairs t + h with grid[base] at t, both on the lattice."""
    if abs(h1) >= N or abs(h2) >= N:
        raise LagRangeError(f"lag ({h1}, {h2}) does not fit on a {N} x {N} lattice")
    shifted = (slice(max(h1, 0), N + min(h1, 0)), slice(max(h2, 0), N + min(h2, 0)))
    base = (slice(max(-h1, 0), N - max(h1, 0)), slice(max(-h2, 0), N - max(h2, 0)))
    return shifted, base


def grenander_coeff(design: LatticeDesign, i: int, j: int, h1: int, h2: int) -> float:
    """a_ij(h1, h2) = sum_t x_(t+h),i x_t,j over the t with both points on the lattice."""
    shifted, base = lag_slices(design.N, h1, h2)
    return float(np.sum(design.column_grid(i)[shifted] * design.column_grid(j)[base]))


def grenander_correlation(design: LatticeDesign, i: int, j: int, h1: int, h2: int) -> float:
    """gamma_ij(h1, h2) = a_ij(h) / sqrt(a_ii(0) a_jj(0)), converging to rho_ij(h)."""
    denom = math.sqrt(grenander_coeff(design, i, i, 0, 0) * grenander_coeff(design, j, j, 0, 0))
    return grenander_coeff(design, i, j, h1, h2) / denom


# ---------------------------- Regression spectral measure ---------------------------- #

class Atom(NamedTuple):
    """A jump of M: a p x p Hermitian mass at one frequency; `weight` keeps the exact value when p = 1."""

    point: tuple[float, float]
    mass: np.ndarray
    weight: Fraction | None = None

    @classmethod
    def scalar(cls, point: tuple[float, float], weight: Fraction) -> "Atom":
        return cls(point, np.array([[float(weight)]]), Fraction(weight))


@dataclass(frozen=True, eq=False)
class JumpMeasure:
    """Purely atomic M; p is read off the mass matrices."""

    atoms: tuple[Atom, ...]

    def __post_init__(self):
        if not self.atoms:
            raise ParameterDomainError("a jump measure needs at least one atom")
        shapes = {np.shape(a.mass) for a in self.atoms}
        if len(shapes) != 1:
            raise ParameterDomainError(f"atom masses disagree in shape: {sorted(shapes)}")
        shape = shapes.pop()
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ParameterDomainError(f"atom masses must be square, got {shape}")

    @property
    def p(self) -> int:
        return self.atoms[0].mass.shape[0]

    def total_weight(self) -> Fraction:
        if self.p != 1 or any(a.weight is None for a in self.atoms):
            raise ParameterDomainError("exact total weight needs p = 1 atoms with rational weights")
        return sum((a.weight for a in self.atoms), Fraction(0))

    def r_matrix(self, h1: int, h2: int) -> np.ndarray:
        """R(h1, h2) = sum over atoms of exp(i (h1 l1 + h2 l2)) * mass; real for symmetric atom sets."""
        value = sum((complex(math.cos(h1 * a.point[0] + h2 * a.point[1]),
                             math.sin(h1 * a.point[0] + h2 * a.point[1])) * a.mass for a in self.atoms),
                    np.zeros((self.p, self.p), dtype=complex))
        return value.real

    def r00(self) -> np.ndarray:
        """R(0, 0), the total mass; exact when the weights are rational."""
        if self.p == 1 and all(a.weight is not None for a in self.atoms):
            return np.array([[float(self.total_weight())]])
        return self.r_matrix(0, 0)

    def characteristic(self, h1: int, h2: int) -> float:
        """R(h1, h2) of a single regressor."""
        if self.p != 1:
            raise ParameterDomainError(f"scalar R(h) needs p = 1, got p = {self.p}")
        return float(self.r_matrix(h1, h2)[0, 0])

    def folded_points(self) -> set[tuple[float, float]]:
        """Atom locations folded into [0, pi]^2."""
        return {(abs(a.point[0]), abs(a.point[1])) for a in self.atoms}

    def folded_masses(self) -> dict[tuple[float, float], np.ndarray]:
        out: dict[tuple[float, float], np.ndarray] = {}
        for a in self.atoms:
            key = (abs(a.point[0]), abs(a.point[1]))
            out[key] = out.get(key, np.zeros((self.p, self.p))) + a.mass
        return out


def _symmetric_atoms(weight: Fraction) -> list[Atom]:
    return [Atom.scalar((s1 * HALF_PI, s2 * HALF_PI), weight) for s1 in (1, -1) for s2 in (1, -1)]


def _single_jump_measure(kind: RegressorKind) -> JumpMeasure:
    if kind is RegressorKind.POLYNOMIAL:
        atoms = [Atom.scalar((0.0, 0.0), Fraction(1))]
    elif kind is RegressorKind.HARMONIC:
        atoms = _symmetric_atoms(Fraction(1, 4))
    elif kind is RegressorKind.POLY_PLUS_HARMONIC:
        atoms = [Atom.scalar((0.0, 0.0), Fraction(4, 5))] + _symmetric_atoms(Fraction(1, 20))
    else:
        raise NotImplementedError(f"no analytic jump set for {kind!r}")
    return JumpMeasure(tuple(atoms))


def jump_measure(kinds: "RegressorKind | str | Sequence[RegressorKind | str]") -> JumpMeasure:
    """
    M for one regressor, or for several whose folded jump sets are disjoint.

    Disjoint jump sets make the regressors asymptotically orthogonal at every
    lag, so the cross masses vanish and each atom carries e_k e_k' times its
    single-regressor weight.
    """
    if isinstance(kinds, (str, RegressorKind)):
        return _single_jump_measure(RegressorKind.parse(kinds))
    kinds = tuple(RegressorKind.parse(k) for k in kinds)
    if len(kinds) == 1:
        return _single_jump_measure(kinds[0])
    singles = [_single_jump_measure(k) for k in kinds]
    seen: set[tuple[float, float]] = set()
    for kind, single in zip(kinds, singles):
        if seen & single.folded_points():
            raise ParameterDomainError(f"{kind.value} shares a jump with another regressor; "
                                       "cross masses are only tabulated for disjoint jump sets")
        seen |= single.folded_points()
    p = len(kinds)
    atoms = []
    for k, single in enumerate(singles):
        for a in single.atoms:
            mass = np.zeros((p, p))
            mass[k, k] = float(a.weight)
            atoms.append(Atom(a.point, mass))
    return JumpMeasure(tuple(atoms))
