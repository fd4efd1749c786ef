"""Q1 finite-element assembly on uniform rectangular meshes.

Nodes are numbered row-major with the x index running fastest:
``index(i, j) = j * n_x + i``.  All assembled operators are returned as
complex CSR matrices even though their entries are real, so they combine
directly with the complex time-stepping operators.

Volume integrands that involve a nodally interpolated coefficient are
integrated with 2x2 Gauss quadrature per cell (2-point per edge for boundary
operators), which is exact for products of three bilinear factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DimensionError
from .linalg import as_complex_csr

LEFT = "left"
RIGHT = "right"
BOTH_SIDES = (LEFT, RIGHT)

# 1D reference element matrices on [0, 1] (scale by h and 1/h respectively).
_M1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
_K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])

# 2-point Gauss rule on [0, 1]: exact through cubic polynomials.
_GAUSS_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS_WEIGHTS = np.array([0.5, 0.5])


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular mesh over ``(x_left, x_right) x (y_bottom, y_top)``.

    ``n_x`` and ``n_y`` are node counts; cell sizes are derived from the
    bounds, never stored independently.
    """

    x_left: float
    x_right: float
    y_bottom: float
    y_top: float
    n_x: int
    n_y: int

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ConfigError("grid needs at least 2 nodes per direction")
        if not (self.x_left < self.x_right and self.y_bottom < self.y_top):
            raise ConfigError("grid bounds must be ordered")

    @property
    def dx(self) -> float:
        return (self.x_right - self.x_left) / (self.n_x - 1)

    @property
    def dy(self) -> float:
        return (self.y_top - self.y_bottom) / (self.n_y - 1)

    @property
    def n_nodes(self) -> int:
        return self.n_x * self.n_y

    def index(self, i: int, j: int) -> int:
        return j * self.n_x + i

    def node_x(self) -> np.ndarray:
        return np.linspace(self.x_left, self.x_right, self.n_x)

    def node_y(self) -> np.ndarray:
        return np.linspace(self.y_bottom, self.y_top, self.n_y)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened node coordinates ``(x, y)`` in node-index order."""
        xx, yy = np.meshgrid(self.node_x(), self.node_y(), indexing="xy")
        return xx.ravel(), yy.ravel()

    def evaluate(self, func: Callable) -> np.ndarray:
        """Evaluate ``func(x, y)`` at every node, returning a flat array."""
        x, y = self.coordinates()
        return np.asarray(func(x, y))

    def edge_indices(self, side: str) -> np.ndarray:
        """Node indices of a vertical boundary line, ordered bottom to top."""
        if side == LEFT:
            i = 0
        elif side == RIGHT:
            i = self.n_x - 1
        else:
            raise ConfigError(f"unknown side {side!r}")
        return np.arange(self.n_y) * self.n_x + i


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise nonlinearity ``f(v)`` multiplying the field in the equation.

    ``cubic`` means ``f(v) = beta * |v|^2``; ``callback`` delegates to a
    user function returning real nodal values.
    """

    kind: str = "none"
    beta: float = 0.0
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @staticmethod
    def none() -> "Nonlinearity":
        return Nonlinearity("none")

    @staticmethod
    def cubic(beta: float) -> "Nonlinearity":
        return Nonlinearity("cubic", beta=beta)

    @staticmethod
    def callback(func: Callable[[np.ndarray], np.ndarray]) -> "Nonlinearity":
        return Nonlinearity("callback", func=func)

    @property
    def is_none(self) -> bool:
        return self.kind == "none" or (self.kind == "cubic" and self.beta == 0.0)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(len(v))
        if self.kind == "cubic":
            return self.beta * np.abs(v) ** 2
        return np.asarray(self.func(v))


@dataclass(frozen=True)
class PotentialField:
    """Nodal values of the linear potential plus the nonlinearity tag."""

    values: np.ndarray
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity.none)

    @staticmethod
    def zero(grid: Grid, nonlinearity: Nonlinearity | None = None) -> "PotentialField":
        return PotentialField(
            np.zeros(grid.n_nodes), nonlinearity or Nonlinearity.none()
        )


def _check_nodal(grid: Grid, values) -> np.ndarray:
    values = np.asarray(values)
    if values.shape != (grid.n_nodes,):
        raise DimensionError(
            f"nodal array has shape {values.shape}, expected ({grid.n_nodes},)"
        )
    return values


def _cell_connectivity(grid: Grid) -> np.ndarray:
    """Corner node indices of every cell, shape ``(n_cells, 4)``.

    Local corner order is ``[(0,0), (1,0), (0,1), (1,1)]`` in cell-relative
    (x, y) offsets, matching the tensor-product ordering of the element
    matrices below.
    """
    i = np.arange(grid.n_x - 1)
    j = np.arange(grid.n_y - 1)
    ii, jj = np.meshgrid(i, j, indexing="xy")
    base = (jj * grid.n_x + ii).ravel()
    return np.stack([base, base + 1, base + grid.n_x, base + grid.n_x + 1], axis=1)


def _scatter(grid: Grid, conn: np.ndarray, elem: np.ndarray) -> sp.csr_matrix:
    """Sum per-element matrices into the global operator."""
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    out = sp.coo_matrix(
        (elem.reshape(len(conn), -1).ravel(), (rows, cols)),
        shape=(grid.n_nodes, grid.n_nodes),
    )
    return as_complex_csr(out)


def _element_mass(grid: Grid) -> np.ndarray:
    return np.kron(grid.dy * _M1, grid.dx * _M1)


def _element_stiffness(grid: Grid) -> np.ndarray:
    return np.kron(grid.dy * _M1, _K1 / grid.dx) + np.kron(_K1 / grid.dy, grid.dx * _M1)


def _triple_product_tensor(dx: float, dy: float) -> np.ndarray:
    """``T[a, b, c] = integral over one cell of N_a N_b N_c`` (exact)."""
    s = np.stack([1.0 - _GAUSS_POINTS, _GAUSS_POINTS])  # (2 basis, 2 points)
    shapes = []
    weights = []
    for qy in range(2):
        for qx in range(2):
            vals = np.empty(4)
            for ay in range(2):
                for ax in range(2):
                    vals[2 * ay + ax] = s[ax, qx] * s[ay, qy]
            shapes.append(vals)
            weights.append(_GAUSS_WEIGHTS[qx] * _GAUSS_WEIGHTS[qy])
    shapes = np.array(shapes)  # (4 points, 4 basis)
    weights = np.array(weights)
    return dx * dy * np.einsum("q,qa,qb,qc->abc", weights, shapes, shapes, shapes)


def _triple_product_tensor_1d(h: float) -> np.ndarray:
    s = np.stack([1.0 - _GAUSS_POINTS, _GAUSS_POINTS])  # (2 basis, 2 points)
    return h * np.einsum("q,aq,bq,cq->abc", _GAUSS_WEIGHTS, s, s, s)


def assemble_mass(grid: Grid) -> sp.csr_matrix:
    """Mass matrix: 9-point Q1 stencil, entries summing to the domain area."""
    conn = _cell_connectivity(grid)
    elem = np.broadcast_to(_element_mass(grid), (len(conn), 4, 4))
    return _scatter(grid, conn, elem)


def assemble_stiffness(grid: Grid) -> sp.csr_matrix:
    """Stiffness matrix of the (positive) Dirichlet form; constants in kernel."""
    conn = _cell_connectivity(grid)
    elem = np.broadcast_to(_element_stiffness(grid), (len(conn), 4, 4))
    return _scatter(grid, conn, elem)


def assemble_generalized_mass(grid: Grid, values) -> sp.csr_matrix:
    """Mass matrix weighted by a nodally interpolated coefficient.

    Reduces to :func:`assemble_mass` when the coefficient is identically one.
    """
    values = _check_nodal(grid, values)
    conn = _cell_connectivity(grid)
    tensor = _triple_product_tensor(grid.dx, grid.dy)
    elem = np.einsum("abc,ec->eab", tensor, values[conn])
    return _scatter(grid, conn, elem)


def _validate_sides(sides) -> tuple[str, ...]:
    sides = tuple(sides)
    if not sides:
        raise ConfigError("side set must not be empty")
    for side in sides:
        if side not in BOTH_SIDES:
            raise ConfigError(f"unknown side {side!r}")
    return sides


def _edge_connectivity(grid: Grid, side: str) -> np.ndarray:
    idx = grid.edge_indices(side)
    return np.stack([idx[:-1], idx[1:]], axis=1)


def assemble_boundary_mass(grid: Grid, sides=BOTH_SIDES) -> sp.csr_matrix:
    """1D mass stencil along the selected vertical boundary lines."""
    elem1 = grid.dy * _M1
    blocks = []
    for side in _validate_sides(sides):
        conn = _edge_connectivity(grid, side)
        elem = np.broadcast_to(elem1, (len(conn), 2, 2))
        blocks.append(_scatter(grid, conn, elem))
    return as_complex_csr(sum(blocks))


def assemble_boundary_stiffness(grid: Grid, sides=BOTH_SIDES) -> sp.csr_matrix:
    """1D stiffness stencil (tangential second derivative) on boundary lines."""
    elem1 = _K1 / grid.dy
    blocks = []
    for side in _validate_sides(sides):
        conn = _edge_connectivity(grid, side)
        elem = np.broadcast_to(elem1, (len(conn), 2, 2))
        blocks.append(_scatter(grid, conn, elem))
    return as_complex_csr(sum(blocks))


def assemble_generalized_boundary_mass(grid: Grid, values, sides=BOTH_SIDES) -> sp.csr_matrix:
    """Boundary mass weighted by a nodal coefficient restricted to the edges.

    ``values`` is a full-length nodal array; only its boundary entries enter
    the integrals.  Reduces to :func:`assemble_boundary_mass` for values one.
    """
    values = _check_nodal(grid, values)
    tensor = _triple_product_tensor_1d(grid.dy)
    blocks = []
    for side in _validate_sides(sides):
        conn = _edge_connectivity(grid, side)
        elem = np.einsum("abc,ec->eab", tensor, values[conn])
        blocks.append(_scatter(grid, conn, elem))
    return as_complex_csr(sum(blocks))


def restriction(grid: Grid, side: str) -> sp.csr_matrix:
    """Boolean restriction operator from the volume to one boundary line.

    Shape ``(n_y, n_nodes)``; row ``j`` picks the boundary node at height
    ``j``, so ``Q Q^T`` is the identity on the trace space.
    """
    idx = grid.edge_indices(side)
    rows = np.arange(grid.n_y)
    data = np.ones(grid.n_y)
    out = sp.coo_matrix((data, (rows, idx)), shape=(grid.n_y, grid.n_nodes))
    return as_complex_csr(out)
