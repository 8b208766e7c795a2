"""
Limit covariances of the D-scaled GLSE, LSE and PBE over a purely atomic
regression spectral measure M.

    GLSE  (2 pi)^2 (int 1/f dM)^-1
    LSE   (2 pi)^2 R(0,0)^-1 (int f dM) R(0,0)^-1
    PBE   (2 pi)^2 A^-1 C A^-1,  A = int 1/g dM,  C = int f/g^2 dM

Integrals against M are finite sums over its atoms.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from design import JumpMeasure
from errors import ParameterDomainError, SingularDesignError, SingularSpectrumError
from estimators import Estimator

LOGGER = logging.getLogger(__name__)

FOUR_PI_SQ = (2.0 * np.pi) ** 2

Spectrum = Callable[[float, float], float]


@dataclass(frozen=True)
class AsymptoticResult:
    estimator: Estimator
    cov: np.ndarray
    f_values: np.ndarray
    g_values: np.ndarray | None = None

    @property
    def value(self) -> float:
        if self.cov.shape != (1, 1):
            raise ParameterDomainError(f"scalar value needs p = 1, got {self.cov.shape}")
        return float(self.cov[0, 0])


class EfficiencyRatios(NamedTuple):
    lse_ratio: float
    pbe_ratio: float


def _atom_values(spectrum: Spectrum, jumps: JumpMeasure, name: str) -> np.ndarray:
    values = np.array([float(spectrum(*atom.point)) for atom in jumps.atoms])
    bad = ~(np.isfinite(values) & (values > 0))
    if np.any(bad):
        where = [jumps.atoms[k].point for k in np.nonzero(bad)[0]]
        raise SingularSpectrumError(f"{name} is not strictly positive at the atoms {where}")
    return values


def _weighted_mass(jumps: JumpMeasure, weights: np.ndarray) -> np.ndarray:
    return sum((w * atom.mass for atom, w in zip(jumps.atoms, weights)), np.zeros((jumps.p, jumps.p)))


def _inverse(M: np.ndarray, what: str, error=SingularSpectrumError) -> np.ndarray:
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError as e:
        raise error(f"{what} is singular") from e


def asym_cov_glse(f: Spectrum, jumps: JumpMeasure) -> np.ndarray:
    fv = _atom_values(f, jumps, "f")
    return FOUR_PI_SQ * _inverse(_weighted_mass(jumps, 1.0 / fv), "int 1/f dM")


def asym_cov_lse(f: Spectrum, jumps: JumpMeasure, R00: np.ndarray | None = None) -> np.ndarray:
    fv = _atom_values(f, jumps, "f")
    R00 = jumps.r00() if R00 is None else np.atleast_2d(np.asarray(R00, dtype=float))
    Rinv = _inverse(R00, "R(0, 0)", SingularDesignError)
    return FOUR_PI_SQ * Rinv @ _weighted_mass(jumps, fv) @ Rinv


def asym_cov_pbe(f: Spectrum, g: Spectrum, jumps: JumpMeasure) -> np.ndarray:
    fv = _atom_values(f, jumps, "f")
    gv = _atom_values(g, jumps, "g")
    Ainv = _inverse(_weighted_mass(jumps, 1.0 / gv), "int 1/g dM")
    return FOUR_PI_SQ * Ainv @ _weighted_mass(jumps, fv / gv ** 2) @ Ainv


def evaluate(f: Spectrum, g: Spectrum | None, jumps: JumpMeasure) -> dict[Estimator, AsymptoticResult]:
    """All three limits, keeping the spectral values used at the atoms."""
    fv = _atom_values(f, jumps, "f")
    out = {
        Estimator.GLSE: AsymptoticResult(Estimator.GLSE, asym_cov_glse(f, jumps), fv),
        Estimator.LSE: AsymptoticResult(Estimator.LSE, asym_cov_lse(f, jumps), fv),
    }
    if g is not None:
        out[Estimator.PBE] = AsymptoticResult(Estimator.PBE, asym_cov_pbe(f, g, jumps), fv,
                                              _atom_values(g, jumps, "g"))
    return out


def theoretical_ratios(f: Spectrum, g: Spectrum, jumps: JumpMeasure,
                       R00: np.ndarray | None = None) -> EfficiencyRatios:
    if jumps.p != 1:
        raise ParameterDomainError(f"scalar ratios need p = 1, got p = {jumps.p}")
    glse_value = float(asym_cov_glse(f, jumps)[0, 0])
    return EfficiencyRatios(
        lse_ratio=float(asym_cov_lse(f, jumps, R00)[0, 0]) / glse_value,
        pbe_ratio=float(asym_cov_pbe(f, g, jumps)[0, 0]) / glse_value,
    )


def lse_is_efficient(jumps: JumpMeasure, tol: float = 1e-10) -> bool:
    # f is even, so +-lambda is one jump; LSE attains the GLSE limit for every f
    # iff the ranks of the folded jumps add up to p
    ranks = [np.linalg.matrix_rank(mass, tol=tol) for mass in jumps.folded_masses().values()]
    return sum(ranks) == jumps.p
