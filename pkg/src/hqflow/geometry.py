"""Extrinsic geometry of a spacelike graph r over S^n in de Sitter space.

The ambient metric is -dr^2 + cosh(r)^2 sigma. For a graph theta -> (r(theta), theta)
the induced metric, gradient function, support function and second
fundamental form are pointwise algebraic in r, Dr and the sigma-Hessian of r.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import grids
from .grids import DerivativeBundle, Grid
from .symfun import ConeError, _grad_from, elementary_all

WORKERS_ENV = "HQFLOW_WORKERS"


class GeometryError(ValueError):
    pass


class NullDegenerationError(GeometryError):
    """Graph is not spacelike: |Dr|_sigma >= lambda somewhere."""


class NearNullError(NullDegenerationError):
    """Gradient function dropped below the configured floor."""


class KConvexityLost(ConeError):
    pass


@dataclass(frozen=True)
class WarpProfile:
    lam: Callable = np.cosh
    dlam: Callable = np.sinh


DE_SITTER = WarpProfile()


@dataclass(frozen=True)
class GeometryFields:
    grid: Grid
    k: int
    r: np.ndarray
    lam: np.ndarray
    dlam: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    detg: np.ndarray
    upsilon: np.ndarray
    u: np.ndarray
    h: np.ndarray
    shape: np.ndarray
    kappa: np.ndarray
    E: np.ndarray
    F: np.ndarray
    gradF: np.ndarray
    speed: np.ndarray
    area_density: np.ndarray


def _node_label(grid: Grid, flat_index: int) -> str:
    idx = np.unravel_index(flat_index, grid.shape)
    th = grid.theta[idx[0]]
    if grid.kind == "axisymmetric":
        return f"node {idx[0]} (theta={th:.6g})"
    return f"node {idx} (theta={th:.6g}, phi={grid.phi[idx[1]]:.6g})"


def induced_metric(r, bundle: DerivativeBundle, warp: WarpProfile = DE_SITTER):
    """g_ij = lam^2 sigma_ij - r_i r_j, its closed-form inverse and determinant."""
    lam = warp.lam(r)
    ri = bundle.grad
    rup = np.einsum("...ij,...j->...i", bundle.sigma_inv, ri)
    dr2 = np.einsum("...i,...i->...", ri, rup)
    bad = dr2 >= lam**2
    if np.any(bad):
        raise NullDegenerationError(f"null degeneration: |Dr| >= lambda at flat index {int(np.flatnonzero(bad)[0])}")
    l2 = (lam**2)[..., None, None]
    g = l2 * bundle.sigma - ri[..., :, None] * ri[..., None, :]
    ups2 = 1.0 - dr2 / lam**2
    ginv = (bundle.sigma_inv + rup[..., :, None] * rup[..., None, :] / (l2 * ups2[..., None, None])) / l2
    n = ri.shape[-1]
    det_sigma = bundle.det_sigma if bundle.det_sigma is not None else np.linalg.det(bundle.sigma)
    detg = lam ** (2 * n) * ups2 * det_sigma
    return g, ginv, detg


def gradient_and_support(r, bundle: DerivativeBundle, warp: WarpProfile = DE_SITTER, upsilon_min: float = 1e-3):
    lam = warp.lam(r)
    ri = bundle.grad
    dr2 = np.einsum("...i,...ij,...j->...", ri, bundle.sigma_inv, ri)
    ups2 = 1.0 - dr2 / lam**2
    if np.any(ups2 <= 0.0):
        raise NullDegenerationError("null degeneration: gradient function vanished")
    upsilon = np.sqrt(ups2)
    if np.any(upsilon <= upsilon_min):
        raise NearNullError(f"null degeneration (near-null hypersurface): min upsilon {upsilon.min():.3e} <= {upsilon_min:g}")
    return upsilon, lam / upsilon


def second_fundamental_form(r, bundle: DerivativeBundle, upsilon, warp: WarpProfile = DE_SITTER):
    """h_ij = (r_{,ij} + lam lam' sigma_ij - 2 lam'/lam r_i r_j) / upsilon."""
    lam, dlam = warp.lam(r), warp.dlam(r)
    ri = bundle.grad
    h = (
        bundle.hess
        + (lam * dlam)[..., None, None] * bundle.sigma
        - (2.0 * dlam / lam)[..., None, None] * (ri[..., :, None] * ri[..., None, :])
    )
    return h / upsilon[..., None, None]


def curvatures_diagonal(g, h):
    return np.sort(np.einsum("...ii->...i", h) / np.einsum("...ii->...i", g), axis=-1)


def curvatures_quadratic(g, ginv, h):
    """n = 2: roots of the characteristic polynomial of W = g^{-1} h."""
    W = ginv @ h
    half_tr = 0.5 * (W[..., 0, 0] + W[..., 1, 1])
    half_diff = 0.5 * (W[..., 0, 0] - W[..., 1, 1])
    disc = np.maximum(half_diff**2 + W[..., 0, 1] * W[..., 1, 0], 0.0)
    root = np.sqrt(disc)
    return np.stack([half_tr - root, half_tr + root], axis=-1)


def curvatures_cholesky(g, h):
    """Eigenvalues of L^{-1} h L^{-T} with g = L L^T; real by construction."""
    L = np.linalg.cholesky(g)
    Linv = np.linalg.inv(L)
    A = Linv @ h @ np.swapaxes(Linv, -1, -2)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    return np.linalg.eigvalsh(A)


def shape_and_curvatures(g, ginv, h, method: str = "auto"):
    """Weingarten map g^{-1} h and its eigenvalues in ascending order."""
    shape = ginv @ h
    n = g.shape[-1]
    if method == "auto":
        method = "quadratic" if n == 2 else "cholesky"
    if method == "diagonal":
        kappa = curvatures_diagonal(g, h)
    elif method == "quadratic":
        kappa = curvatures_quadratic(g, ginv, h)
    elif method == "cholesky":
        try:
            kappa = curvatures_cholesky(g, h)
        except np.linalg.LinAlgError as exc:
            raise GeometryError(f"eigen-solver failure: {exc}") from exc
    else:
        raise ValueError(f"unknown eigenvalue method {method!r}")
    if not np.all(np.isfinite(kappa)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(kappa), axis=-1))[0])
        raise GeometryError(f"eigen-solver produced non-finite curvatures at flat index {bad}")
    return shape, kappa


def reconstruction_error(g, h, kappa) -> float:
    """max || g^{-1} h - V diag(kappa) V^{-1} || with V from the symmetric route."""
    L = np.linalg.cholesky(g)
    Linv = np.linalg.inv(L)
    A = Linv @ h @ np.swapaxes(Linv, -1, -2)
    _, Q = np.linalg.eigh(0.5 * (A + np.swapaxes(A, -1, -2)))
    V = np.swapaxes(Linv, -1, -2) @ Q
    W = np.linalg.solve(g, h)
    rebuilt = V @ (kappa[..., :, None] * np.linalg.inv(V))
    return float(np.max(np.abs(W - rebuilt)))


def _workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, workers)


def _curvature_functions(kappa, k, r, u, upsilon, warp):
    E = elementary_all(kappa)
    lam, dlam = warp.lam(r), warp.dlam(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        F = E[:, k] / E[:, k - 1]
        gradF = _grad_from(kappa, E, k)
        speed = u - dlam / F
    n = kappa.shape[-1]
    return dict(E=E, F=F, gradF=gradF, speed=speed, lam=lam, dlam=dlam, area_density=lam**n * upsilon)


def _pointwise(r, grad, hess, sigma, sigma_inv, det_sigma, k, method, upsilon_min, warp):
    bundle = DerivativeBundle(grad, hess, sigma, sigma_inv, None, det_sigma)
    g, ginv, detg = induced_metric(r, bundle, warp)
    upsilon, u = gradient_and_support(r, bundle, warp, upsilon_min)
    h = second_fundamental_form(r, bundle, upsilon, warp)
    shape, kappa = shape_and_curvatures(g, ginv, h, method)
    out = dict(g=g, ginv=ginv, detg=detg, upsilon=upsilon, u=u, h=h, shape=shape, kappa=kappa)
    out.update(_curvature_functions(kappa, k, r, u, upsilon, warp))
    return out


def _diag_matrix(d):
    out = np.zeros(d.shape + (d.shape[-1],))
    idx = np.arange(d.shape[-1])
    out[..., idx, idx] = d
    return out


def _pointwise_diagonal(r, grad, hess, sigma, sigma_inv, det_sigma, k, method, upsilon_min, warp):
    """Same formulas as :func:`_pointwise` when sigma, Dr r_j and the Hessian are diagonal.

    This holds on axisymmetric grids, where only the theta component of Dr
    is nonzero; every matrix is then diagonal and kappa_i = h_ii / g_ii.
    """
    lam, dlam = warp.lam(r), warp.dlam(r)
    l2 = lam * lam
    rt = grad[:, 0]
    sig = np.einsum("...ii->...i", sigma)
    dr2 = rt * rt
    bad = dr2 >= l2
    if np.any(bad):
        raise NullDegenerationError(f"null degeneration: |Dr| >= lambda at flat index {int(np.flatnonzero(bad)[0])}")
    ups2 = 1.0 - dr2 / l2
    upsilon = np.sqrt(ups2)
    if np.any(upsilon <= upsilon_min):
        raise NearNullError(f"null degeneration (near-null hypersurface): min upsilon {upsilon.min():.3e} <= {upsilon_min:g}")
    u = lam / upsilon
    g = l2[:, None] * sig
    g[:, 0] -= dr2
    ginv = 1.0 / g
    h = np.einsum("...ii->...i", hess) + (lam * dlam)[:, None] * sig
    h[:, 0] -= 2.0 * dlam / lam * dr2
    h /= upsilon[:, None]
    w = h / g
    kappa = np.sort(w, axis=-1)
    n = sig.shape[-1]
    out = dict(
        g=_diag_matrix(g),
        ginv=_diag_matrix(ginv),
        detg=lam ** (2 * n) * ups2 * det_sigma,
        upsilon=upsilon,
        u=u,
        h=_diag_matrix(h),
        shape=_diag_matrix(w),
        kappa=kappa,
    )
    out.update(_curvature_functions(kappa, k, r, u, upsilon, warp))
    return out


def assemble(
    grid: Grid,
    r: np.ndarray,
    k: int = 2,
    *,
    bundle: DerivativeBundle | None = None,
    upsilon_min: float = 1e-3,
    workers: int | None = None,
    warp: WarpProfile = DE_SITTER,
) -> GeometryFields:
    """All extrinsic fields of the graph of r, with speed u - lam'/F, F = E_k/E_{k-1}."""
    r = np.asarray(r, dtype=float)
    if bundle is None:
        bundle = grids.derivatives(r, grid)
    n = grid.n
    kernel = _pointwise_diagonal if grid.kind == "axisymmetric" else _pointwise

    m = r.size
    flat = (
        r.reshape(m),
        bundle.grad.reshape(m, n),
        bundle.hess.reshape(m, n, n),
        bundle.sigma.reshape(m, n, n),
        bundle.sigma_inv.reshape(m, n, n),
        (np.linalg.det(bundle.sigma) if bundle.det_sigma is None else bundle.det_sigma).reshape(m),
    )
    nw = min(_workers(workers), m)
    try:
        if nw == 1:
            out = kernel(*flat, k, "auto", upsilon_min, warp)
        else:
            bounds = np.linspace(0, m, nw + 1).astype(int)
            chunks = [tuple(a[lo:hi] for a in flat) for lo, hi in zip(bounds[:-1], bounds[1:])]
            with ThreadPoolExecutor(max_workers=nw) as pool:
                parts = list(pool.map(lambda c: kernel(*c, k, "auto", upsilon_min, warp), chunks))
            out = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    except NullDegenerationError as exc:
        idx = int(np.argmax(_gradient_ratio(r, bundle, warp).reshape(m)))
        raise type(exc)(f"{exc}; worst {_node_label(grid, idx)}") from None

    E, kappa = out["E"], out["kappa"]
    bad = np.any(E[:, 1 : k + 1] <= 0.0, axis=-1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise KConvexityLost(
            f"k-convexity lost (k={k}) at {_node_label(grid, i)}: kappa={kappa[i].tolist()}"
        )
    shp = grid.shape
    mat = shp + (n, n)
    return GeometryFields(
        grid=grid,
        k=k,
        r=r,
        lam=out["lam"].reshape(shp),
        dlam=out["dlam"].reshape(shp),
        g=out["g"].reshape(mat),
        ginv=out["ginv"].reshape(mat),
        detg=out["detg"].reshape(shp),
        upsilon=out["upsilon"].reshape(shp),
        u=out["u"].reshape(shp),
        h=out["h"].reshape(mat),
        shape=out["shape"].reshape(mat),
        kappa=kappa.reshape(shp + (n,)),
        E=E.reshape(shp + (n + 1,)),
        F=out["F"].reshape(shp),
        gradF=out["gradF"].reshape(shp + (n,)),
        speed=out["speed"].reshape(shp),
        area_density=out["area_density"].reshape(shp),
    )


def _gradient_ratio(r, bundle, warp):
    dr2 = np.einsum("...i,...ij,...j->...", bundle.grad, bundle.sigma_inv, bundle.grad)
    return dr2 / warp.lam(r) ** 2


def hessian_identity_residuals(fields: GeometryFields, bundle: DerivativeBundle | None = None):
    """Max-norm residuals of Hess(lam') = u h - lam' g and of the Hessian identity for u.

    Both are measured on the mixed tensors (one index raised with g). The
    second identity needs third derivatives of r and is evaluated on
    axisymmetric grids only; elsewhere it is returned as NaN.
    """
    grid, r = fields.grid, fields.r
    if bundle is None:
        bundle = grids.derivatives(r, grid)
    ri, rij, sig = bundle.grad, bundle.hess, bundle.sigma
    ll = (fields.lam * fields.dlam)[..., None, None, None]
    # T_lij = lam lam' (r_i sigma_jl + r_j sigma_il - r_l sigma_ij) - r_{,ij} r_l
    T = ll * (
        np.einsum("...i,...jl->...lij", ri, sig)
        + np.einsum("...j,...il->...lij", ri, sig)
        - np.einsum("...l,...ij->...lij", ri, sig)
    ) - np.einsum("...ij,...l->...lij", rij, ri)
    C = np.einsum("...kl,...lij->...kij", fields.ginv, T)

    lp = fields.dlam
    lp_b = grids.derivatives(lp, grid)
    hess_g = lp_b.hess - np.einsum("...kij,...k->...ij", C, lp_b.grad)
    diff = hess_g - (fields.u[..., None, None] * fields.h - lp[..., None, None] * fields.g)
    res_hol = float(np.max(np.abs(fields.ginv @ diff)))

    if grid.kind != "axisymmetric":
        return res_hol, float("nan")

    d = lambda f: grids.d_theta(f, grid)  # noqa: E731
    h = grid.h_theta
    u = fields.u
    ext = np.concatenate([u[:1], u, u[-1:]])
    u2 = (ext[2:] - 2.0 * u + ext[:-2]) / h**2
    u1 = d(u)
    a = fields.g[:, 0, 0]
    b = fields.lam**2 * np.sin(grid.theta) ** 2
    k1 = fields.h[:, 0, 0] / a
    k2 = fields.h[:, 1, 1] / fields.g[:, 1, 1]
    dlp = d(lp)
    prof = (u2 - d(a) * u1 / (2 * a)) / a - (-lp * k1 + dlp * d(k1) / a + u * k1**2)
    azim = d(b) * u1 / (2 * a * b) - (-lp * k2 + dlp * d(k2) / a + u * k2**2)
    res_hos = float(max(np.max(np.abs(prof)), np.max(np.abs(azim))))
    return res_hol, res_hos
