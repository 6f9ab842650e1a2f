"""Quermassintegrals of graphs in de Sitter space and the Alexandrov-Fenchel check.

A_{-1} = (n+1) vol(region between the graph and {0} x S^n),
A_0    = area,
A_l    = int E_l dmu - l/(n+2-l) A_{l-2}   for l >= 1.

On the coordinate slice {rho} x S^n every principal curvature equals
tanh(rho) and dmu = cosh(rho)^n dsigma, which gives the closed-form slice
functions phi_l(rho) used as the comparison profile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryFields
from .grids import integrate, sphere_area


@dataclass(frozen=True)
class QuermassVector:
    """A_{-1}, A_0, ..., A_{k_max}; index with the quermass label, ``Q[-1]``."""

    values: np.ndarray
    n: int

    @property
    def k_max(self) -> int:
        return len(self.values) - 2

    def __getitem__(self, l: int) -> float:
        if not -1 <= l <= self.k_max:
            raise IndexError(l)
        return float(self.values[l + 1])

    def as_dict(self) -> dict[int, float]:
        return {l: self[l] for l in range(-1, self.k_max + 1)}


@dataclass(frozen=True)
class AFReport:
    A1: float
    A2: float
    rho_star: float
    bound: float
    slack: float


def cosh_power_integral(rho, n: int):
    """int_0^rho cosh^n(s) ds, exact reduction formula for every n."""
    rho = np.asarray(rho, dtype=float)
    if n == 0:
        return rho.copy()
    if n == 1:
        return np.sinh(rho)
    return np.cosh(rho) ** (n - 1) * np.sinh(rho) / n + (n - 1) / n * cosh_power_integral(rho, n - 2)


def _sinh_minus_id(x: float) -> float:
    """sinh(x) - x without cancellation near 0."""
    if abs(x) >= 1.0:
        return math.sinh(x) - x
    x2 = x * x
    term = x * x2 / 6.0
    acc = term
    for j in range(2, 12):
        term *= x2 / ((2 * j) * (2 * j + 1))
        acc += term
    return acc


def _phi1_reduced(rho: float, n: int) -> float:
    """cosh^{n-1} sinh - int_0^rho cosh^n, evaluated without cancellation.

    J_n = (n-1)/n (cosh^{n-3} sinh^3 + J_{n-2}), J_1 = 0, J_2 = (sinh 2rho - 2rho)/4.
    """
    if n == 1:
        return 0.0
    if n == 2:
        return _sinh_minus_id(2.0 * rho) / 4.0
    return (n - 1) / n * (math.cosh(rho) ** (n - 3) * math.sinh(rho) ** 3 + _phi1_reduced(rho, n - 2))


def slice_phi(rho, l: int, n: int):
    """A_l of the coordinate slice {rho} x S^n."""
    if not -1 <= l <= n:
        raise ValueError(f"l must lie in -1..{n}")
    w = sphere_area(n)
    rho = np.asarray(rho, dtype=float)
    if l == -1:
        out = (n + 1) * w * cosh_power_integral(rho, n)
    elif l == 0:
        out = w * np.cosh(rho) ** n
    elif l == 1:
        out = w * np.vectorize(_phi1_reduced, otypes=[float])(rho, n)
    else:
        int_El = w * np.cosh(rho) ** (n - l) * np.sinh(rho) ** l
        out = int_El - l / (n + 2 - l) * slice_phi(rho, l - 2, n)
    return out if np.ndim(out) else float(out)


def dphi1_drho(rho, n: int):
    return sphere_area(n) * (n - 1) * np.cosh(rho) ** (n - 2) * np.sinh(rho) ** 2


def invert_phi1(target: float, n: int) -> float:
    """rho > 0 with phi_1(rho) = target: bracketing bisection, then Newton polish."""
    target = float(target)
    if not target > 0.0 or not math.isfinite(target):
        raise ValueError(f"phi_1 is only invertible on (0, inf); got {target}")
    w = sphere_area(n)
    f = lambda x: w * _phi1_reduced(x, n) - target  # noqa: E731
    lo, hi = 0.0, 1.0
    while f(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e3:
            raise ValueError("phi_1 target out of range")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * hi:
            break
    x = 0.5 * (lo + hi)
    for _ in range(50):
        step = f(x) / (w * (n - 1) * math.cosh(x) ** (n - 2) * math.sinh(x) ** 2)
        x_new = min(max(x - step, lo), hi)
        if abs(x_new - x) <= 1e-16 * x:
            x = x_new
            break
        x = x_new
    return x


def enclosed_volume_density(r, n: int):
    """(n+1) int_0^r cosh^n ds per node."""
    return (n + 1) * cosh_power_integral(r, n)


def curvature_integral(fields: GeometryFields, l: int) -> float:
    """int E_l dmu, with E_l = 0 for l > n."""
    if l > fields.grid.n:
        return 0.0
    return integrate(fields.E[..., l] * fields.area_density, fields.grid)


def quermassintegrals(fields: GeometryFields, k_max: int = 2) -> QuermassVector:
    grid, n = fields.grid, fields.grid.n
    k_max = min(k_max, n)
    vals = np.empty(k_max + 2)
    vals[0] = integrate(enclosed_volume_density(fields.r, n), grid)
    vals[1] = integrate(fields.area_density, grid)
    for l in range(1, k_max + 1):
        vals[l + 1] = curvature_integral(fields, l) - l / (n + 2 - l) * vals[l - 1]
    return QuermassVector(vals, n)


def af_check(Q: QuermassVector, n: int | None = None) -> AFReport:
    n = Q.n if n is None else n
    A1, A2 = Q[1], Q[2]
    rho = invert_phi1(A1, n)
    bound = slice_phi(rho, 2, n)
    return AFReport(A1=A1, A2=A2, rho_star=rho, bound=bound, slack=bound - A2)


def minkowski_residual(fields: GeometryFields, k: int) -> float:
    """int u E_k dmu - int lam' E_{k-1} dmu."""
    if not 1 <= k <= fields.grid.n:
        raise ValueError(f"k must lie in 1..{fields.grid.n}")
    w = fields.area_density
    return integrate(fields.u * fields.E[..., k] * w, fields.grid) - integrate(
        fields.dlam * fields.E[..., k - 1] * w, fields.grid
    )


def variation_rate(fields: GeometryFields, l: int) -> float:
    """(n - l) int E_{l+1} * speed dmu: the flow derivative of A_l."""
    n = fields.grid.n
    if l + 1 > n:
        return 0.0
    return (n - l) * integrate(fields.E[..., l + 1] * fields.speed * fields.area_density, fields.grid)


def gauss_bonnet_defect(fields: GeometryFields) -> float:
    """n = 2 only: int E_2 dmu - area + 4 pi, which vanishes in the continuum."""
    if fields.grid.n != 2:
        raise ValueError("the Gauss-Bonnet defect is defined for n = 2")
    return curvature_integral(fields, 2) - integrate(fields.area_density, fields.grid) + 4.0 * math.pi


@dataclass(frozen=True)
class VariationSeries:
    """Central-difference dA_l/dt against the flow rate at interior output times."""

    l: int
    times: np.ndarray
    finite_difference: np.ndarray
    rate: np.ndarray

    @property
    def mismatch(self) -> np.ndarray:
        return np.abs(self.finite_difference - self.rate)

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.rate))) if self.rate.size else 0.0

    @property
    def relative(self) -> float:
        """max mismatch over max |rate|; absolute when the rate vanishes identically."""
        worst = float(self.mismatch.max()) if self.rate.size else 0.0
        return worst / self.scale if self.scale > 0.0 else worst


def central_difference(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second-order derivative at interior points of a nonuniform series."""
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    return (h0**2 * y[2:] - h1**2 * y[:-2] + (h1**2 - h0**2) * y[1:-1]) / (h0 * h1 * (h0 + h1))


def variation_check(trajectory, l: int) -> VariationSeries:
    """Compare dA_l/dt from the recorded A_l series with (n - l) int E_{l+1} F dmu.

    ``trajectory`` needs ``times``, ``A(l)`` and ``rate(l)`` as in flow.Trajectory.
    """
    t = np.asarray(trajectory.times, dtype=float)
    if t.size < 3:
        raise ValueError("variation_check needs at least 3 recorded states")
    A = np.asarray(trajectory.A(l), dtype=float)
    rate = np.asarray(trajectory.rate(l), dtype=float)
    return VariationSeries(l, t[1:-1], central_difference(t, A), rate[1:-1])
