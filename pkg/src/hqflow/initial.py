"""Initial radial functions: slices plus sums of spherical-harmonic modes.

Axisymmetric grids accept zonal modes only (order 0), built from the
Gegenbauer polynomial C_l^{(n-1)/2}(cos theta) normalized to 1 at the
north pole. On latlong grids (n = 2) a mode (l, m) is
P_l^|m|(cos theta) cos(m phi), or sin(|m| phi) for m < 0, scaled to unit
sup norm. A negative amplitude simply flips the sign of the mode.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_gegenbauer, lpmv

from .flow import GraphState
from .geometry import GeometryError, assemble
from .grids import Grid
from .symfun import ConeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mode:
    degree: int
    order: int
    amplitude: float

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("mode degree must be >= 0")
        if abs(self.order) > self.degree:
            raise ValueError(f"mode order {self.order} exceeds degree {self.degree}")


def zonal_harmonic(theta, degree: int, n: int) -> np.ndarray:
    """Degree-l zonal harmonic on S^n, equal to 1 at theta = 0."""
    x = np.cos(np.asarray(theta, dtype=float))
    if n == 1:
        return np.cos(degree * np.arccos(x))
    alpha = 0.5 * (n - 1)
    return eval_gegenbauer(degree, alpha, x) / eval_gegenbauer(degree, alpha, 1.0)


def _latlong_harmonic(grid: Grid, degree: int, order: int) -> np.ndarray:
    m = abs(order)
    th, ph = grid.theta[:, None], grid.phi[None, :]
    radial = lpmv(m, degree, np.cos(th))
    angular = np.cos(m * ph) if order >= 0 else np.sin(m * ph)
    # sup of |P_l^m| over a fine sample; keeps the scale grid-independent
    fine = np.abs(lpmv(m, degree, np.cos(np.linspace(0.0, np.pi, 4097)))).max()
    return radial * angular / fine


def mode_field(grid: Grid, mode: Mode) -> np.ndarray:
    if grid.kind == "axisymmetric":
        if mode.order != 0:
            raise ValueError("axisymmetric grids support only order-0 (zonal) modes")
        return zonal_harmonic(grid.theta, mode.degree, grid.n)
    return _latlong_harmonic(grid, mode.degree, mode.order)


def radial_function(grid: Grid, rho0: float, modes=(), scale: float = 1.0) -> np.ndarray:
    r = np.full(grid.shape, float(rho0))
    for mode in modes:
        r = r + scale * mode.amplitude * mode_field(grid, mode)
    return r


def random_modes(rng: np.random.Generator, grid: Grid, max_degree: int, amplitude: float) -> list[Mode]:
    """One mode per admissible (degree, order) with uniform amplitudes in [-a, a]."""
    out = []
    for l in range(1, max_degree + 1):
        orders = [0] if grid.kind == "axisymmetric" else range(-l, l + 1)
        for m in orders:
            out.append(Mode(l, m, float(rng.uniform(-amplitude, amplitude))))
    return out


@dataclass(frozen=True)
class InitialData:
    state: GraphState
    scale: float
    halvings: int


def make_initial(
    grid: Grid,
    rho0: float,
    modes=(),
    k: int = 2,
    *,
    upsilon_min: float = 1e-3,
    max_halvings: int = 30,
    shrink: bool = True,
) -> InitialData:
    """Build r = rho0 + sum of modes, halving all amplitudes until the graph is spacelike and k-convex."""
    if not rho0 > 0:
        raise ValueError("rho0 must be positive")
    modes = list(modes)
    scale = 1.0
    for halvings in range(max_halvings + 1):
        r = radial_function(grid, rho0, modes, scale)
        try:
            if r.min() <= 0.0:
                raise GeometryError("radial function is not positive")
            state = GraphState(grid, r, 0.0, k)
            assemble(grid, r, k, upsilon_min=upsilon_min)
            if halvings:
                log.info("initial amplitudes scaled by %g after %d halvings", scale, halvings)
            return InitialData(state, scale, halvings)
        except (GeometryError, ConeError) as exc:
            if not shrink or not modes:
                raise
            log.debug("initial data rejected at scale %g: %s", scale, exc)
            scale *= 0.5
    raise GeometryError(f"no valid initial data after {max_halvings} amplitude halvings")
