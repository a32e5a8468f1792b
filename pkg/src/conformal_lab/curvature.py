"""Christoffel symbols, Riemann and Ricci tensors, scalar curvature.

Index conventions (all arrays carry a leading batch axis)::

    Γ^k_ij             christoffel[k, i, j]
    R^a_bcd  = d_c Γ^a_db - d_d Γ^a_cb + Γ^a_ce Γ^e_db - Γ^a_de Γ^e_cb
    R_ijkl   = g_ia R^a_jkl                 (riemann_lowered[i, j, k, l])
    Ric_jl   = g^ik R_ijkl
    s        = g^jl Ric_jl

With these, a space of constant sectional curvature K has
``R_ijkl = K (g_ik g_jl - g_il g_jk)`` and ``s = n(n-1)K``.

d Γ is assembled from exact second derivatives of the metric entries;
nothing here differentiates numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _parallel
from .geometry import Grid, ManifoldModel, inverse_and_density, metric_jets


@dataclass(frozen=True)
class CurvatureSample:
    point: np.ndarray
    christoffel: np.ndarray
    riemann_lowered: np.ndarray
    ricci: np.ndarray
    scalar: float


@dataclass
class CurvatureBatch:
    points: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    christoffel: np.ndarray | None
    riemann_lowered: np.ndarray | None
    ricci: np.ndarray
    scalar: np.ndarray

    def sample(self, k: int) -> CurvatureSample:
        return CurvatureSample(
            self.points[k], self.christoffel[k], self.riemann_lowered[k], self.ricci[k], float(self.scalar[k])
        )


def _bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Contract the last axis of a with the first non-batch axis of b."""
    n_pts = a.shape[0]
    left = a.reshape(n_pts, -1, a.shape[-1])
    right = b.reshape(n_pts, b.shape[1], -1)
    return (left @ right).reshape(a.shape[:-1] + b.shape[2:])


def curvature_from_jets(g: np.ndarray, dg: np.ndarray, ddg: np.ndarray, full: bool = True) -> dict:
    ginv, _ = inverse_and_density(g)
    # first-kind symbols Γ_l,ij = ½(d_i g_jl + d_j g_il - d_l g_ij)
    gamma1 = 0.5 * (dg.transpose(0, 3, 1, 2) + dg.transpose(0, 3, 2, 1) - dg)
    gamma = _bmm(ginv, gamma1)  # Γ^k_ij
    # d_m Γ_l,ij with ddg[m, k, i, j] = d_m d_k g_ij
    dgamma1 = 0.5 * (ddg.transpose(0, 1, 4, 2, 3) + ddg.transpose(0, 1, 4, 3, 2) - ddg)
    # d_m g^{kl} = -g^{ka} d_m g_ab g^{bl}
    n_pts, n = g.shape[:2]
    ginv_b = ginv[:, None]
    dginv = -(ginv_b @ (dg @ ginv_b))
    # d_m Γ^k_ij = d_m g^{kl} Γ_l,ij + g^{kl} d_m Γ_l,ij
    flat1 = gamma1.reshape(n_pts, 1, n, n * n)
    dgamma = (dginv @ flat1 + ginv_b @ dgamma1.reshape(n_pts, n, n, n * n)).reshape(n_pts, n, n, n, n)
    # R^a_bcd: dgamma[m, a, i, j] = d_m Γ^a_ij
    term_d = dgamma.transpose(0, 2, 4, 1, 3) - dgamma.transpose(0, 2, 4, 3, 1)
    # Γ^a_ce Γ^e_db  -> indexed [a, c, d, b]
    gg = _bmm(gamma, gamma)
    riemann_up = term_d + gg.transpose(0, 1, 4, 2, 3) - gg.transpose(0, 1, 4, 3, 2)
    riemann = _bmm(g, riemann_up)
    ricci = (riemann.transpose(0, 2, 4, 1, 3).reshape(n_pts, n * n, n * n) @ ginv.reshape(n_pts, n * n, 1))
    ricci = ricci.reshape(n_pts, n, n)
    scalar = np.einsum("njl,njl->n", ginv, ricci)
    out = {"ginv": ginv, "ricci": ricci, "scalar": scalar}
    if full:
        out.update(christoffel=gamma, riemann_lowered=riemann)
    return out


def _chunk(model: ManifoldModel, pts: np.ndarray, full: bool):
    mj = metric_jets(model, pts, order=2)
    res = curvature_from_jets(mj.g, mj.dg, mj.ddg, full)
    parts = (mj.g, res["ginv"], res["ricci"], res["scalar"])
    if full:
        parts += (res["christoffel"], res["riemann_lowered"])
    return parts


def curvature_batch(model: ManifoldModel, points, full: bool = True) -> CurvatureBatch:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    parts = _parallel.concat(lambda p: _chunk(model, p, full), pts, chunk=1024)
    g, ginv, ricci, scalar = parts[:4]
    christoffel, riemann = (parts[4], parts[5]) if full else (None, None)
    return CurvatureBatch(pts, g, ginv, christoffel, riemann, ricci, scalar)


def curvature_at(model: ManifoldModel, x) -> CurvatureSample:
    return curvature_batch(model, np.asarray(x, dtype=float)[None, :]).sample(0)


def scalar_curvature(model: ManifoldModel, points) -> np.ndarray:
    """Scalar curvature only, at an (N, n) batch."""
    return curvature_batch(model, points, full=False).scalar


def ricci_eigenvalues(g: np.ndarray, ricci: np.ndarray) -> np.ndarray:
    """Generalized eigenvalues of Ric relative to g, ascending, via Cholesky reduction."""
    chol = np.linalg.cholesky(g)
    linv = np.linalg.inv(chol)
    sym = linv @ ricci @ np.swapaxes(linv, -1, -2)
    sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
    return np.linalg.eigvalsh(sym)


def ricci_lower_bound(model: ManifoldModel, grid: Grid) -> float:
    if len(grid) == 0:
        raise ValueError("grid is empty")
    batch = curvature_batch(model, grid.points, full=False)
    try:
        eig = ricci_eigenvalues(batch.g, batch.ricci)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(f"Ricci eigen-solve failed: {err}") from err
    bad = np.flatnonzero(~np.isfinite(eig).all(axis=1))
    if bad.size:
        raise np.linalg.LinAlgError(f"Ricci eigen-solve failed at node {int(bad[0])}")
    return float(eig[:, 0].min())
