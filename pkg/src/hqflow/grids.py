"""Spherical grids, covariant derivatives for the round metric, and quadrature.

Two grid kinds are supported:

* ``axisymmetric``: fields depend on the polar angle only, for any n >= 2.
  Tensors are stored in the coordinate basis (theta, psi_2, ..., psi_n)
  evaluated on the equator of the azimuthal (n-1)-sphere, where the round
  metric is ``diag(1, sin^2, ..., sin^2)``.
* ``latlong``: the 2-sphere on a (theta, phi) grid.

Polar nodes are staggered, theta_j = (j + 1/2) h, and the smoothness of a
field across a pole is imposed through ghost values (even in theta; for the
lat-long grid the ghost row is the first row shifted by half a turn).

Quadrature weights are exact cell measures, so the weights sum to the area
of the sphere up to rounding, and the theta part of the Laplacian is
written in flux form so that its weighted sum telescopes to zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

KINDS = ("axisymmetric", "latlong")
MIN_RESOLUTION = 16


def sphere_area(m: int) -> float:
    """Area of the unit m-sphere in R^{m+1}."""
    return 2.0 * math.pi ** ((m + 1) / 2) / math.gamma((m + 1) / 2)


def sin_power_integral(theta, m: int):
    """int_0^theta sin^m(s) ds by the standard reduction formula."""
    theta = np.asarray(theta, dtype=float)
    if m == 0:
        return theta.copy()
    if m == 1:
        return 1.0 - np.cos(theta)
    s, c = np.sin(theta), np.cos(theta)
    return -(s ** (m - 1)) * c / m + (m - 1) / m * sin_power_integral(theta, m - 2)


@dataclass(frozen=True, eq=False)
class Grid:
    kind: str
    n: int
    resolution: tuple[int, ...]
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray | None = field(repr=False)
    h_theta: float
    h_phi: float | None
    weights: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.weights.shape

    @property
    def size(self) -> int:
        return self.weights.size

    @cached_property
    def theta_field(self) -> np.ndarray:
        """Polar angle broadcast to the field shape."""
        if self.kind == "axisymmetric":
            return self.theta
        return np.broadcast_to(self.theta[:, None], self.shape)

    @cached_property
    def _flux(self):
        # face areas (without the h and azimuthal factors) at theta_{j -+ 1/2}
        # and the cell measure they are divided by
        m = self.n - 1
        edges = np.arange(self.theta.size + 1) * self.h_theta
        edges[-1] = math.pi
        face = np.sin(edges) ** m
        face[0] = face[-1] = 0.0
        cell = np.diff(sin_power_integral(edges, m))
        return face[:-1], face[1:], cell

    @cached_property
    def sigma(self) -> np.ndarray:
        """Round metric sigma_ij per node, shape ``(*shape, n, n)``."""
        s2 = np.sin(self.theta_field) ** 2
        out = np.zeros(self.shape + (self.n, self.n))
        out[..., 0, 0] = 1.0
        for a in range(1, self.n):
            out[..., a, a] = s2
        return out

    @cached_property
    def sigma_inv(self) -> np.ndarray:
        s2 = np.sin(self.theta_field) ** 2
        out = np.zeros(self.shape + (self.n, self.n))
        out[..., 0, 0] = 1.0
        for a in range(1, self.n):
            out[..., a, a] = 1.0 / s2
        return out

    @cached_property
    def det_sigma(self) -> np.ndarray:
        return np.sin(self.theta_field) ** (2 * (self.n - 1))

    @cached_property
    def christoffel(self) -> np.ndarray:
        """Gamma^k_ij of sigma, stored as ``[..., k, i, j]``."""
        th = self.theta_field
        sc = np.sin(th) * np.cos(th)
        cot = np.cos(th) / np.sin(th)
        out = np.zeros(self.shape + (self.n,) * 3)
        for a in range(1, self.n):
            out[..., 0, a, a] = -sc
            out[..., a, 0, a] = cot
            out[..., a, a, 0] = cot
        return out

    @cached_property
    def polar_cutoff(self) -> np.ndarray | None:
        """Largest zonal wavenumber kept in each lat-long row.

        Rows near the poles keep only the wavenumbers whose azimuthal
        wavelength is resolved at least as finely as the polar spacing, so
        the explicit time step is set by h_theta rather than sin(theta) h_phi.
        """
        if self.kind != "latlong":
            return None
        nphi = self.resolution[1]
        cut = np.floor(np.sin(self.theta) / self.h_theta).astype(int)
        return np.clip(cut, 1, nphi // 2)

    @cached_property
    def spacing(self) -> np.ndarray:
        """Smallest effective grid spacing at each node (used for the CFL bound)."""
        if self.kind == "axisymmetric":
            return np.full(self.shape, self.h_theta)
        s = np.sin(self.theta)
        nphi = self.resolution[1]
        cut = self.polar_cutoff
        eff = np.where(cut < nphi // 2, s / cut, s * self.h_phi)
        row = np.minimum(self.h_theta, eff)
        return np.broadcast_to(row[:, None], self.shape)

    def nodes(self) -> np.ndarray:
        if self.kind == "axisymmetric":
            return self.theta[:, None]
        th, ph = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.stack([th.ravel(), ph.ravel()], axis=1)


def build_grid(kind: str, n: int, resolution) -> Grid:
    if kind not in KINDS:
        raise ValueError(f"unknown grid kind {kind!r}")
    if n < 2:
        raise ValueError("sphere dimension n must be >= 2")
    res = (int(resolution),) if np.isscalar(resolution) else tuple(int(x) for x in resolution)
    if kind == "axisymmetric":
        if len(res) != 1:
            raise ValueError("axisymmetric grids take a single resolution")
        (N,) = res
        if N < MIN_RESOLUTION:
            raise ValueError(f"resolution must be >= {MIN_RESOLUTION}")
        h = math.pi / N
        theta = (np.arange(N) + 0.5) * h
        edges = np.arange(N + 1) * h
        edges[-1] = math.pi
        weights = sphere_area(n - 1) * np.diff(sin_power_integral(edges, n - 1))
        return Grid(kind, n, res, theta, None, h, None, weights)

    if n != 2:
        raise ValueError("latlong grids require n = 2")
    if len(res) == 1:
        res = (res[0], 2 * res[0])
    ntheta, nphi = res
    if min(res) < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION} per coordinate")
    if nphi % 2:
        raise ValueError("latlong azimuth count must be even (pole reflection)")
    h = math.pi / ntheta
    hp = 2 * math.pi / nphi
    theta = (np.arange(ntheta) + 0.5) * h
    phi = np.arange(nphi) * hp
    edges = np.arange(ntheta + 1) * h
    edges[-1] = math.pi
    band = -np.diff(np.cos(edges))
    weights = np.repeat((band * hp)[:, None], nphi, axis=1)
    return Grid(kind, n, res, theta, phi, h, hp, weights)


# -- finite differences ------------------------------------------------------

def _ghosts(f: np.ndarray, grid: Grid):
    """Values one node beyond each pole, for a field smooth on the sphere."""
    if grid.kind == "axisymmetric":
        return f[:1], f[-1:]
    half = grid.resolution[1] // 2
    return np.roll(f[:1], half, axis=1), np.roll(f[-1:], half, axis=1)


def d_theta(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Central difference in theta with pole parity."""
    lo, hi = _ghosts(f, grid)
    ext = np.concatenate([lo, f, hi], axis=0)
    return (ext[2:] - ext[:-2]) / (2.0 * grid.h_theta)


def d_phi(f: np.ndarray, grid: Grid) -> np.ndarray:
    return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * grid.h_phi)


def d_phiphi(f: np.ndarray, grid: Grid) -> np.ndarray:
    return (np.roll(f, -1, axis=1) - 2.0 * f + np.roll(f, 1, axis=1)) / grid.h_phi**2


def theta_laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Flux-form sin^{1-m} d/dtheta (sin^m df/dtheta), m = n - 1."""
    lo_face, hi_face, cell = grid._flux
    if f.ndim == 2:
        lo_face, hi_face, cell = lo_face[:, None], hi_face[:, None], cell[:, None]
    df = np.diff(f, axis=0) / grid.h_theta
    pad = np.zeros_like(f[:1])
    up = np.concatenate([df, pad], axis=0)
    down = np.concatenate([pad, df], axis=0)
    return (hi_face * up - lo_face * down) / cell


@dataclass(frozen=True)
class DerivativeBundle:
    grad: np.ndarray
    hess: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray
    christoffel: np.ndarray
    det_sigma: np.ndarray | None = None


def covariant_gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """D_i f in coordinate components, shape ``(*shape, n)``."""
    out = np.zeros(grid.shape + (grid.n,))
    out[..., 0] = d_theta(f, grid)
    if grid.kind == "latlong":
        out[..., 1] = d_phi(f, grid)
    return out


def covariant_hessian(f: np.ndarray, grid: Grid, grad: np.ndarray | None = None) -> np.ndarray:
    """Hessian f_{,ij} with respect to sigma, shape ``(*shape, n, n)``.

    The theta-theta entry is taken as the flux-form Laplacian minus the
    azimuthal contributions, which keeps it a second-order approximation of
    d^2 f/d theta^2 while making the sigma-trace exactly conservative.
    """
    if grad is None:
        grad = covariant_gradient(f, grid)
    th = grid.theta_field
    sc = np.sin(th) * np.cos(th)
    cot = np.cos(th) / np.sin(th)
    ft = grad[..., 0]
    out = np.zeros(grid.shape + (grid.n, grid.n))
    out[..., 0, 0] = theta_laplacian(f, grid) - (grid.n - 1) * cot * ft
    for a in range(1, grid.n):
        out[..., a, a] = sc * ft
    if grid.kind == "latlong":
        fp = grad[..., 1]
        out[..., 1, 1] += d_phiphi(f, grid)
        mixed = d_theta(fp, grid) - cot * fp
        out[..., 0, 1] = mixed
        out[..., 1, 0] = mixed
    return out


def derivatives(f: np.ndarray, grid: Grid) -> DerivativeBundle:
    grad = covariant_gradient(f, grid)
    return DerivativeBundle(
        grad=grad,
        hess=covariant_hessian(f, grid, grad),
        sigma=grid.sigma,
        sigma_inv=grid.sigma_inv,
        christoffel=grid.christoffel,
        det_sigma=grid.det_sigma,
    )


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """sigma^{ij} f_{,ij}."""
    lap = theta_laplacian(f, grid)
    if grid.kind == "latlong":
        lap = lap + d_phiphi(f, grid) / np.sin(grid.theta_field) ** 2
    return lap


def polar_filter(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Drop unresolved zonal wavenumbers in the polar rows of a lat-long field."""
    if grid.kind != "latlong":
        return f
    cut = grid.polar_cutoff
    rows = np.nonzero(cut < grid.resolution[1] // 2)[0]
    if rows.size == 0:
        return f
    spec = np.fft.rfft(f[rows], axis=1)
    m = np.arange(spec.shape[1])
    spec[m[None, :] > cut[rows, None]] = 0.0
    out = f.copy()
    out[rows] = np.fft.irfft(spec, n=grid.resolution[1], axis=1)
    return out


# -- quadrature ---------------------------------------------------------------

def integrate(f, grid: Grid, weight=None) -> float:
    """Exactly rounded sum of f * weight * cell measure (math.fsum)."""
    vals = np.asarray(f, dtype=float) * grid.weights
    if weight is not None:
        vals = vals * weight
    return math.fsum(np.ravel(vals).tolist())


# -- snapshot export ----------------------------------------------------------

def format_snapshot(grid: Grid, r: np.ndarray, t: float | None = None) -> str:
    res = "x".join(str(x) for x in grid.resolution)
    head = [f"# kind={grid.kind} n={grid.n} resolution={res}"]
    if t is not None:
        head.append(f"# t={t!r}")
    if grid.kind == "axisymmetric":
        head.append("# theta r")
        rows = [f"{th!r} {v!r}" for th, v in zip(grid.theta.tolist(), np.asarray(r).tolist())]
    else:
        head.append("# theta phi r")
        nodes = grid.nodes()
        rows = [
            f"{th!r} {ph!r} {v!r}"
            for (th, ph), v in zip(nodes.tolist(), np.ravel(r).tolist())
        ]
    return "\n".join(head + rows) + "\n"


def write_snapshot(path, grid: Grid, r: np.ndarray, t: float | None = None) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_snapshot(grid, r, t))


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`: returns (grid, r, t)."""
    meta, t = {}, None
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    meta[key] = val
        elif line.strip():
            body.append([float(x) for x in line.split()])
    if "t" in meta:
        t = float(meta["t"])
    res = tuple(int(x) for x in meta["resolution"].split("x"))
    grid = build_grid(meta["kind"], int(meta["n"]), res)
    data = np.array(body)
    r = data[:, -1].reshape(grid.shape)
    return grid, r, t
