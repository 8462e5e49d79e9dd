"""Finite-difference operator and least-squares integrability projection.

A gradient field is projected onto the integrable (curl-free) subspace by
solving the regularized normal equations of the forward-difference
operator P. Small grids use a cached dense Cholesky factorization; large
grids fall back to Jacobi-preconditioned conjugate gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve

from .core import ValidationError

__all__ = [
    "DiffOperator",
    "GradientField",
    "SurfaceField",
    "build_diff_operator",
    "IntegrabilityProjector",
    "integrability_project",
    "grad_of_surface",
]

DENSE_LIMIT = 32  # grids strictly larger than this (either side) use CG
DEFAULT_LAMBDA = 1e-6
CG_TOL = 1e-12


@dataclass(frozen=True)
class DiffOperator:
    """Sparse forward-difference operator P of shape (2*H*W, H*W).

    Row layout: the first H*W rows are x-derivatives (last column rows are
    all-zero), the next H*W rows are y-derivatives (last row rows are
    all-zero). All entries lie in {-1, 0, +1} and each row sums to zero,
    so constants are annihilated exactly.
    """

    matrix: sp.csr_matrix
    height: int
    width: int

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Apply P to a (H, W) field, returning stacked (2, H, W) x/y derivatives."""
        hw = self.height * self.width
        out = self.matrix @ z.reshape(hw)
        return out.reshape(2, self.height, self.width)


def build_diff_operator(height: int, width: int) -> DiffOperator:
    """Construct P for an H x W grid (H, W >= 2)."""
    if height < 2 or width < 2:
        raise ValidationError("grid must be at least 2x2")
    hw = height * width
    rows, cols, vals = [], [], []

    def pid(i, j):
        return i * width + j

    for i in range(height):
        for j in range(width):
            if j < width - 1:  # x-derivative rows
                r = pid(i, j)
                rows += [r, r]
                cols += [pid(i, j), pid(i, j + 1)]
                vals += [-1.0, 1.0]
            if i < height - 1:  # y-derivative rows
                r = hw + pid(i, j)
                rows += [r, r]
                cols += [pid(i, j), pid(i + 1, j)]
                vals += [-1.0, 1.0]
    m = sp.csr_matrix((vals, (rows, cols)), shape=(2 * hw, hw))
    return DiffOperator(m, height, width)


class IntegrabilityProjector:
    """Solves (P^T P + lambda I) z = P^T gamma for one grid size.

    The normal matrix is factorized (or assembled for CG) once and reused,
    which makes the per-step cost of the solver loop negligible. The same
    solve serves as the exact adjoint for backpropagation because the
    system matrix is symmetric.
    """

    def __init__(self, height: int, width: int, lambda_reg: float = DEFAULT_LAMBDA,
                 backend: str | None = None):
        if lambda_reg < 0:
            raise ValidationError("lambda_reg must be nonnegative")
        self.op = build_diff_operator(height, width)
        self.height, self.width = height, width
        self.lambda_reg = float(lambda_reg)
        hw = height * width
        p = self.op.matrix
        self.normal = (p.T @ p + lambda_reg * sp.identity(hw, format="csr")).tocsr()
        if backend is None:
            backend = "dense" if max(height, width) <= DENSE_LIMIT else "cg"
        if backend not in ("dense", "cg"):
            raise ValidationError(f"unknown backend: {backend}")
        self.backend = backend
        if backend == "dense":
            a = self.normal.toarray()
            if lambda_reg == 0.0:
                # P^T P is singular (constant nullspace); fall back to pinv.
                self._pinv = np.linalg.pinv(a)
                self._chol = None
            else:
                self._chol = cho_factor(a)
                self._pinv = None
        else:
            diag = self.normal.diagonal()
            diag[diag == 0] = 1.0
            self._precond = spla.LinearOperator(
                (hw, hw), matvec=lambda v: v / diag)

    def solve_normal(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (P^T P + lambda I) z = rhs; rhs may hold multiple columns."""
        if self.backend == "dense":
            if self._chol is not None:
                return cho_solve(self._chol, rhs)
            return self._pinv @ rhs
        if rhs.ndim == 1:
            return self._cg_solve(rhs)
        return np.stack([self._cg_solve(rhs[:, k]) for k in range(rhs.shape[1])], axis=1)

    def _cg_solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = spla.cg(self.normal, rhs, rtol=CG_TOL, atol=0.0,
                          maxiter=10 * rhs.size, M=self._precond)
        if info != 0:
            raise RuntimeError(f"conjugate gradient failed to converge (info={info})")
        return x

    def project(self, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
        """Least-squares surface for one (H, W) gradient pair, mean-subtracted."""
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            raise ValidationError("gradient field must be finite")
        p = self.op.matrix
        rhs = p.T @ np.concatenate([gx.ravel(), gy.ravel()])
        z = self.solve_normal(rhs)
        z = z - z.mean()  # gauge fixing; numerically a no-op since P1 = 0
        return z.reshape(self.height, self.width)

    def backward(self, grad_z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Adjoint of `project`: map d(loss)/dz to d(loss)/d(gx, gy).

        Implicit differentiation of the normal equations: one extra solve
        with the same (symmetric) matrix, then an application of P.
        """
        g = grad_z.reshape(-1)
        g = g - g.mean()  # adjoint of the mean subtraction
        w = self.solve_normal(g)
        out = self.op.matrix @ w
        hw = self.height * self.width
        return (out[:hw].reshape(self.height, self.width),
                out[hw:].reshape(self.height, self.width))


@dataclass(frozen=True)
class GradientField:
    """Per-plane, per-channel x/y gradient components, shape (H, W, C2, N)."""

    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        gx = np.asarray(self.gx, dtype=np.float64)
        gy = np.asarray(self.gy, dtype=np.float64)
        if gx.shape != gy.shape or gx.ndim != 4:
            raise ValidationError("gx and gy must both be (H, W, C2, N)")
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            raise ValidationError("gradient field must be finite")
        object.__setattr__(self, "gx", gx)
        object.__setattr__(self, "gy", gy)

    @property
    def shape(self):
        return self.gx.shape


@dataclass(frozen=True)
class SurfaceField:
    """Reconstructed per-plane, per-channel surfaces, shape (H, W, C2, N).

    Each (channel, plane) slice is zero-mean (gauge fixed).
    """

    z: np.ndarray

    @property
    def shape(self):
        return self.z.shape


_projector_cache: dict = {}


def get_projector(height: int, width: int, lambda_reg: float = DEFAULT_LAMBDA,
                  backend: str | None = None) -> IntegrabilityProjector:
    key = (height, width, float(lambda_reg), backend)
    proj = _projector_cache.get(key)
    if proj is None:
        proj = IntegrabilityProjector(height, width, lambda_reg, backend)
        _projector_cache[key] = proj
    return proj


def integrability_project(gamma: GradientField, lambda_reg: float = DEFAULT_LAMBDA,
                          backend: str | None = None) -> SurfaceField:
    """Project every (plane, channel) gradient slice onto the integrable subspace."""
    h, w, c2, n = gamma.shape
    proj = get_projector(h, w, lambda_reg, backend)
    hw = h * w
    # One batched solve for all (channel, plane) slices.
    g = np.concatenate([gamma.gx.reshape(hw, c2 * n),
                        gamma.gy.reshape(hw, c2 * n)], axis=0)
    rhs = proj.op.matrix.T @ g
    z = proj.solve_normal(rhs)
    z = z - z.mean(axis=0, keepdims=True)
    return SurfaceField(z.reshape(h, w, c2, n))


def project_backward(grad_z: np.ndarray, lambda_reg: float = DEFAULT_LAMBDA,
                     backend: str | None = None) -> GradientField:
    """Adjoint of integrability_project for a full (H, W, C2, N) upstream gradient."""
    h, w, c2, n = grad_z.shape
    proj = get_projector(h, w, lambda_reg, backend)
    hw = h * w
    g = grad_z.reshape(hw, c2 * n)
    g = g - g.mean(axis=0, keepdims=True)  # adjoint of the mean subtraction
    sol = proj.solve_normal(g)
    out = proj.op.matrix @ sol
    gx = out[:hw].reshape(h, w, c2, n)
    gy = out[hw:].reshape(h, w, c2, n)
    return GradientField(gx, gy)


def grad_of_surface(z: SurfaceField) -> GradientField:
    """Apply the forward-difference operator P to every surface slice."""
    h, w, c2, n = z.shape
    op = build_diff_operator(h, w)
    hw = h * w
    out = op.matrix @ z.z.reshape(hw, c2 * n)
    return GradientField(out[:hw].reshape(h, w, c2, n),
                         out[hw:].reshape(h, w, c2, n))
