"""Periodic slab grid and its conservative discrete operators.

The domain is ``[0, Lx) x [0, Ly]``, periodic in x, with the two lines
``y = 0`` (Gamma0) and ``y = Ly`` (Gamma1) forming the boundary. Nodes sit at
``x_i = i*hx`` (``i < nx``) and ``y_j = j*hy`` (``j < ny``); a bulk field is an
``(nx, ny)`` array and a boundary field is a ``(2, nx)`` array whose rows are
the traces on Gamma0 and Gamma1. Flattened vectors use C order, so node
``(i, j)`` has index ``i*ny + j``.

Quadrature is uniform in x and trapezoidal in y. The bulk Dirichlet form

    a(z, v) = sum_x-edges  w  Dx z Dx v  +  sum_y-edges  hx*hy  Dy z Dy v

is assembled as the stiffness matrix ``A``; every other bulk operator is
built so that summation by parts against ``A`` is exact:

* ``laplacian_neumann`` is ``-W^{-1} A`` (mirror ghost closure),
* ``laplacian`` uses one-sided second differences on the boundary rows,
* ``normal_derivative`` is the boundary residual of the Green identity
  between the two, so ``W lap z . v = -a(z, v) + sum_Gamma hx (d_nu z) v``
  holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MeanError, SolverError

__all__ = [
    "SlabGrid",
    "trace",
    "mean",
    "laplacian",
    "laplacian_neumann",
    "normal_derivative",
    "laplace_beltrami",
    "inverse_neumann",
    "l2_bulk",
    "h1_seminorm",
    "h1_norm",
    "l2_boundary",
    "h1_boundary_seminorm",
    "h1_boundary_norm",
    "vstar_norm",
    "vstar_boundary_norm",
    "poincare_constant",
    "write_field",
    "read_field",
]


def _periodic_second_difference(n, h):
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    d = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    d[0, n - 1] = 1.0
    d[n - 1, 0] = 1.0
    return (d / (h * h)).tocsr()


def _neumann_stiffness_1d(n, h):
    main = 2.0 * np.ones(n)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return (sp.diags([off, main, off], [-1, 0, 1], shape=(n, n)) / h).tocsr()


@dataclass(frozen=True)
class SlabGrid:
    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("SlabGrid needs nx >= 4 and ny >= 4")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("SlabGrid lengths must be positive")

    @property
    def hx(self):
        return self.Lx / self.nx

    @property
    def hy(self):
        return self.Ly / (self.ny - 1)

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def x(self):
        return self.hx * np.arange(self.nx)

    @property
    def y(self):
        return self.hy * np.arange(self.ny)

    @cached_property
    def mesh(self):
        """``(X, Y)`` node coordinates, each of shape ``(nx, ny)``."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def area(self):
        return self.Lx * self.Ly

    @property
    def perimeter(self):
        return 2.0 * self.Lx

    @cached_property
    def weights(self):
        """Bulk quadrature weights, shape ``(nx, ny)``."""
        wy = np.full(self.ny, self.hy)
        wy[0] = wy[-1] = 0.5 * self.hy
        return np.broadcast_to(self.hx * wy, self.shape).copy()

    @cached_property
    def boundary_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        m[:, 0] = m[:, -1] = True
        return m

    @cached_property
    def stiffness(self):
        """Bulk stiffness matrix ``A`` of the discrete Dirichlet form."""
        wy = self.weights[0] / self.hx
        kx = -self.hx * _periodic_second_difference(self.nx, self.hx)
        ky = _neumann_stiffness_1d(self.ny, self.hy)
        return (sp.kron(kx, sp.diags(wy)) + sp.kron(self.hx * sp.identity(self.nx), ky)).tocsr()

    @cached_property
    def neumann_matrix(self):
        return (-sp.diags(1.0 / self.weights.ravel()) @ self.stiffness).tocsr()

    @cached_property
    def laplacian_matrix(self):
        # swap the mirror closure 2(z1 - z0)/hy^2 for the one-sided (2, -5, 4, -1)/hy^2
        corr = sp.lil_matrix((self.ny, self.ny))
        corr[0, :4] = [4.0, -7.0, 4.0, -1.0]
        corr[self.ny - 1, self.ny - 4:] = [-1.0, 4.0, -7.0, 4.0]
        corr = corr.tocsr() / self.hy**2
        return (self.neumann_matrix + sp.kron(sp.identity(self.nx), corr)).tocsr()

    @cached_property
    def boundary_stiffness(self):
        """Periodic 1-D stiffness on one boundary line (``-hx * d_xx``)."""
        return (-self.hx * _periodic_second_difference(self.nx, self.hx)).tocsr()

    @cached_property
    def _boundary_dual_lu(self):
        m = self.hx * sp.identity(self.nx)
        return spla.splu((self.boundary_stiffness + m).tocsc())


def trace(grid: SlabGrid, z):
    """Boundary rows of a bulk field as a ``(2, nx)`` boundary field."""
    z = np.asarray(z)
    return np.stack([z[:, 0], z[:, -1]])


def mean(grid: SlabGrid, z):
    return float(np.sum(grid.weights * z) / grid.area)


def laplacian_neumann(grid: SlabGrid, z):
    """5-point Laplacian, periodic in x, mirror (homogeneous Neumann) closure in y."""
    return (grid.neumann_matrix @ np.ravel(z)).reshape(grid.shape)


def laplacian(grid: SlabGrid, z):
    """5-point Laplacian with one-sided second differences in y on the boundary rows."""
    return (grid.laplacian_matrix @ np.ravel(z)).reshape(grid.shape)


def normal_derivative(grid: SlabGrid, z):
    """Outward normal derivative on Gamma0 and Gamma1, shape ``(2, nx)``.

    Defined as the boundary residual of summation by parts, which works out
    to ``-(z1 - z0)/hy + (hy/2) z_yy`` on Gamma0 (mirrored on Gamma1) with a
    second-order one-sided ``z_yy``.
    """
    zf = np.ravel(z)
    res = grid.weights.ravel() * (grid.laplacian_matrix @ zf) + grid.stiffness @ zf
    return trace(grid, res.reshape(grid.shape)) / grid.hx


def laplace_beltrami(grid: SlabGrid, b):
    """Periodic 3-point second difference along each boundary line."""
    b = np.asarray(b, dtype=float)
    return (np.roll(b, -1, axis=-1) - 2.0 * b + np.roll(b, 1, axis=-1)) / grid.hx**2


def inverse_neumann(grid: SlabGrid, z, mean_tol=1e-10, rtol=1e-10, maxiter=None):
    """Solve ``-laplacian_neumann(w) = z`` with ``mean(w) = 0``.

    Conjugate gradients on ``A w = W z``; the right-hand side is orthogonal to
    the constants, which span the kernel of ``A``.
    """
    z = np.asarray(z, dtype=float)
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    m = mean(grid, z)
    if abs(m) > mean_tol * scale:
        raise MeanError(f"inverse_neumann needs a mean-free field, got mean {m:.3e}")
    rhs = (grid.weights * z).ravel()
    rhs -= rhs.mean()
    if not np.any(rhs):
        return np.zeros(grid.shape)
    w, info = spla.cg(grid.stiffness, rhs, rtol=rtol, atol=0.0, maxiter=maxiter or 10 * grid.size)
    if info != 0:
        raise SolverError(f"CG did not converge in inverse_neumann (info={info})")
    w = w.reshape(grid.shape)
    return w - mean(grid, w)


def l2_bulk(grid: SlabGrid, z):
    return float(np.sqrt(np.sum(grid.weights * np.asarray(z) ** 2)))


def h1_seminorm(grid: SlabGrid, z):
    zf = np.ravel(z)
    return float(np.sqrt(max(zf @ (grid.stiffness @ zf), 0.0)))


def h1_norm(grid: SlabGrid, z):
    return float(np.hypot(l2_bulk(grid, z), h1_seminorm(grid, z)))


def l2_boundary(grid: SlabGrid, b):
    return float(np.sqrt(grid.hx * np.sum(np.asarray(b) ** 2)))


def h1_boundary_seminorm(grid: SlabGrid, b):
    b = np.asarray(b, dtype=float)
    return float(np.sqrt(np.sum((np.roll(b, -1, axis=-1) - b) ** 2) / grid.hx))


def h1_boundary_norm(grid: SlabGrid, b):
    return float(np.hypot(l2_boundary(grid, b), h1_boundary_seminorm(grid, b)))


def vstar_norm(grid: SlabGrid, z, **kwargs):
    """Dual norm ``|grad N z|`` of a mean-free field."""
    return h1_seminorm(grid, inverse_neumann(grid, z, **kwargs))


def vstar_boundary_norm(grid: SlabGrid, b):
    """Norm of a boundary field in the dual of the discrete H^1 of each line."""
    b = np.atleast_2d(np.asarray(b, dtype=float))
    lu = grid._boundary_dual_lu
    total = 0.0
    for row in b:
        rhs = grid.hx * row
        total += rhs @ lu.solve(rhs)
    return float(np.sqrt(total))


def poincare_constant(grid: SlabGrid):
    """Smallest ``C`` with ``l2_bulk(z) <= C h1_seminorm(z)`` for mean-free ``z``."""
    w = sp.diags(grid.weights.ravel())
    vals = spla.eigsh(grid.stiffness, k=2, M=w, sigma=-1.0, which="LM", return_eigenvectors=False)
    return float(1.0 / np.sqrt(np.max(vals)))


def write_field(path, grid: SlabGrid, z, t=0.0):
    """Write a ``.field`` snapshot: header ``nx ny Lx Ly time`` then values, y outermost."""
    z = np.asarray(z, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{grid.nx} {grid.ny} {grid.Lx:.17g} {grid.Ly:.17g} {t:.17g}\n")
        np.savetxt(fh, z.T, fmt="%.17g")


def read_field(path):
    """Inverse of :func:`write_field`; returns ``(grid, z, t)``."""
    path = Path(path)
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 5:
            raise ValueError(f"{path}: malformed .field header")
        nx, ny = int(head[0]), int(head[1])
        Lx, Ly, t = (float(v) for v in head[2:])
        vals = np.array(fh.read().split(), dtype=float)
    if vals.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {vals.size}")
    return SlabGrid(nx, ny, Lx, Ly), vals.reshape(ny, nx).T.copy(), t
