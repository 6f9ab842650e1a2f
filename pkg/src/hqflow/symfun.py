"""Normalized elementary symmetric functions and the Hessian quotient.

All functions accept principal curvatures as an array of shape ``(..., n)``
and broadcast over the leading axes, so the same code serves a single
curvature vector and a whole grid of them.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np


class ConeError(ValueError):
    """Curvature vector outside the Garding cone required by an operation."""


@dataclass(frozen=True)
class SymmetricValues:
    E: np.ndarray
    sigma: np.ndarray
    F: np.ndarray | float
    gradF: np.ndarray
    k: int


@dataclass(frozen=True)
class ConeReport:
    member_of: int
    positive_cone: bool
    in_cone: bool


def _binomials(n: int) -> np.ndarray:
    return np.array([comb(n, j) for j in range(n + 1)], dtype=float)


def sigma_all(kappa) -> np.ndarray:
    """Unnormalized sigma_0..sigma_n by the one-pass polynomial recurrence."""
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    out = np.zeros(kappa.shape[:-1] + (n + 1,))
    out[..., 0] = 1.0
    for i in range(n):
        ki = kappa[..., i]
        for j in range(i + 1, 0, -1):
            out[..., j] += ki * out[..., j - 1]
    return out


def elementary_all(kappa) -> np.ndarray:
    """Normalized E_0..E_n, with E_j = sigma_j / C(n, j)."""
    kappa = np.asarray(kappa, dtype=float)
    return sigma_all(kappa) / _binomials(kappa.shape[-1])


def reduced_sigma(kappa) -> np.ndarray:
    """sigma_j of kappa with entry i removed; shape ``(..., n, n)`` indexed [i, j]."""
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    out = np.empty(kappa.shape[:-1] + (n, n))
    for i in range(n):
        out[..., i, :] = sigma_all(kappa[..., _others(n, i)])
    return out


_OTHERS: dict[tuple[int, int], list[int]] = {}


def _others(n: int, i: int) -> list[int]:
    key = (n, i)
    if key not in _OTHERS:
        _OTHERS[key] = [j for j in range(n) if j != i]
    return _OTHERS[key]


def partial_E(kappa, m: int) -> np.ndarray:
    """dE_m/dkappa_i for every i, using sigma_{m-1} of the reduced vector."""
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    if m == 0:
        return np.zeros_like(kappa)
    red = reduced_sigma(kappa)
    return red[..., m - 1] / comb(n, m)


def cone_level(kappa) -> np.ndarray:
    """Largest l with E_1..E_l all positive (0 if E_1 <= 0), per curvature vector."""
    E = elementary_all(kappa)
    positive = E[..., 1:] > 0.0
    return np.cumprod(positive, axis=-1).sum(axis=-1)


def cone_membership(kappa, k: int) -> ConeReport:
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    level = int(cone_level(kappa))
    return ConeReport(
        member_of=level,
        positive_cone=bool(np.all(kappa > 0.0)),
        in_cone=level >= k,
    )


def _check_cone(E: np.ndarray, k: int) -> None:
    bad = np.any(E[..., 1 : k + 1] <= 0.0, axis=-1)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise ConeError(f"curvature vector outside Gamma_{k}^+ (first offender at {tuple(idx)})")


def quotient_F(kappa, k: int = 2):
    """F = E_k / E_{k-1}; raises ConeError outside Gamma_k^+."""
    E = elementary_all(kappa)
    _check_cone(E, k)
    F = E[..., k] / E[..., k - 1]
    return F if np.ndim(F) else float(F)


def gradient_F(kappa, k: int = 2) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=float)
    E = elementary_all(kappa)
    _check_cone(E, k)
    return _grad_from(kappa, E, k)


def _grad_from(kappa: np.ndarray, E: np.ndarray, k: int) -> np.ndarray:
    # sigma_k = kappa_i sigma_{k-1}(kappa|i) + sigma_k(kappa|i) cancels kappa_i from the
    # quotient-rule numerator, leaving sigma_{k-1}(kappa|i)^2 - sigma_k(kappa|i) sigma_{k-2}(kappa|i)
    n = kappa.shape[-1]
    red = reduced_sigma(kappa)
    zero = np.zeros(kappa.shape)
    r1 = red[..., k - 1]
    r0 = red[..., k] if k < n else zero
    r2 = red[..., k - 2] if k >= 2 else zero
    sigma_km1 = E[..., k - 1, None] * comb(n, k - 1)
    return (comb(n, k - 1) / comb(n, k)) * (r1 * r1 - r0 * r2) / sigma_km1**2


def symmetric_values(kappa, k: int = 2) -> SymmetricValues:
    kappa = np.asarray(kappa, dtype=float)
    sigma = sigma_all(kappa)
    E = sigma / _binomials(kappa.shape[-1])
    _check_cone(E, k)
    F = E[..., k] / E[..., k - 1]
    return SymmetricValues(E=E, sigma=sigma, F=F, gradF=_grad_from(kappa, E, k), k=k)


def newton_residuals(kappa, k: int = 2) -> tuple[float, float]:
    """(E_k/E_{k-1} - E_{k-1}/E_{k-2}, E_{k+1}/E_k - E_k/E_{k-1}).

    A residual whose quotients need an index outside 0..n or a nonpositive
    denominator is reported as NaN.
    """
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    E = elementary_all(kappa)

    def q(j):
        if j < 1 or j > n or E[j - 1] <= 0.0:
            return np.nan
        return E[j] / E[j - 1]

    return q(k) - q(k - 1), q(k + 1) - q(k)

