import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
import sympy

from nlschwarz.errors import ConfigError, DimensionError
from nlschwarz.fem import (
    Grid,
    assemble_boundary_mass,
    assemble_boundary_stiffness,
    assemble_generalized_boundary_mass,
    assemble_generalized_mass,
    assemble_mass,
    assemble_stiffness,
    restriction,
)


def tensor_mass(grid):
    """Independent construction: Q1 operators as tensor products of the 1D
    hat-function matrices."""
    return sp.kron(_mass1d(grid.n_y, grid.dy), _mass1d(grid.n_x, grid.dx)).toarray()


def tensor_stiffness(grid):
    mx, my = _mass1d(grid.n_x, grid.dx), _mass1d(grid.n_y, grid.dy)
    kx, ky = _stiff1d(grid.n_x, grid.dx), _stiff1d(grid.n_y, grid.dy)
    return (sp.kron(my, kx) + sp.kron(ky, mx)).toarray()


def _mass1d(n, h):
    main = np.full(n, 2 * h / 3)
    main[0] = main[-1] = h / 3
    return sp.diags([np.full(n - 1, h / 6), main, np.full(n - 1, h / 6)], [-1, 0, 1])


def _stiff1d(n, h):
    main = np.full(n, 2 / h)
    main[0] = main[-1] = 1 / h
    return sp.diags([np.full(n - 1, -1 / h), main, np.full(n - 1, -1 / h)], [-1, 0, 1])


UNIT_CELL = Grid(0.0, 1.0, 0.0, 1.0, 2, 2)


class TestGrid:
    def test_cell_sizes(self):
        g = Grid(-4.0, 4.0, -2.0, 2.0, 129, 33)
        assert g.dx == 8.0 / 128 and g.dy == 4.0 / 32

    def test_indexing_row_major(self):
        g = Grid(0, 1, 0, 1, 5, 3)
        assert g.index(2, 1) == 1 * 5 + 2
        x, y = g.coordinates()
        assert x[g.index(2, 1)] == g.node_x()[2]
        assert y[g.index(2, 1)] == g.node_y()[1]

    def test_too_small(self):
        with pytest.raises(ConfigError):
            Grid(0, 1, 0, 1, 1, 3)


class TestMass:
    def test_single_cell_element_matrix(self):
        g = Grid(0.0, 0.5, 0.0, 0.25, 2, 2)
        expected = (g.dx * g.dy / 36.0) * np.array(
            [[4, 2, 2, 1], [2, 4, 1, 2], [2, 1, 4, 2], [1, 2, 2, 4]], dtype=float
        )
        assert np.allclose(assemble_mass(g).toarray(), expected, atol=1e-16)

    def test_partition_of_unity(self):
        g = Grid(-3.0, 5.0, -1.0, 2.0, 9, 7)
        assert np.isclose(assemble_mass(g).sum(), 8.0 * 3.0)

    def test_positive_definite(self):
        g = Grid(0, 1, 0, 1, 5, 5)
        eigenvalues = scipy.linalg.eigvalsh(assemble_mass(g).toarray().real)
        assert eigenvalues[0] > 0

    def test_matches_tensor_construction(self):
        g = Grid(-1.0, 2.0, 0.5, 3.0, 7, 5)
        assert np.allclose(assemble_mass(g).toarray(), tensor_mass(g), atol=1e-15)


class TestStiffness:
    def test_constant_in_kernel(self):
        g = Grid(0, 2, 0, 1, 6, 4)
        c = np.full(g.n_nodes, 3.7 + 0j)
        assert np.linalg.norm(assemble_stiffness(g) @ c) <= 1e-13

    def test_square_cell_diagonal(self):
        g = Grid(0.0, 1.0, 0.0, 1.0, 2, 2)
        assert np.allclose(assemble_stiffness(g).diagonal(), 2.0 / 3.0)

    def test_semidefinite(self):
        g = Grid(0, 1, 0, 2, 6, 5)
        s = assemble_stiffness(g).toarray().real
        rng = np.random.default_rng(0)
        for _ in range(5):
            v = rng.standard_normal(g.n_nodes)
            assert v @ s @ v >= -1e-12

    def test_matches_tensor_construction(self):
        g = Grid(-1.0, 2.0, 0.5, 3.0, 7, 5)
        assert np.allclose(assemble_stiffness(g).toarray(), tensor_stiffness(g), atol=1e-13)


class TestGeneralizedMass:
    def test_unit_coefficient_reduces_to_mass(self):
        g = Grid(0, 1, 0, 1, 4, 4)
        gm = assemble_generalized_mass(g, np.ones(g.n_nodes))
        assert np.allclose(gm.toarray(), assemble_mass(g).toarray(), atol=1e-14)

    def test_zero_coefficient(self):
        g = Grid(0, 1, 0, 1, 4, 4)
        gm = assemble_generalized_mass(g, np.zeros(g.n_nodes))
        assert np.all(gm.toarray() == 0)

    def test_linear_coefficient_symbolic_oracle(self):
        # W(x, y) = x on the unit cell: nodal interpolation is exact, so the
        # entries must equal the symbolic integrals of N_a N_b x.
        x, y = sympy.symbols("x y")
        shapes = [(1 - x) * (1 - y), x * (1 - y), (1 - x) * y, x * y]
        expected = np.array(
            [
                [
                    float(sympy.integrate(na * nb * x, (x, 0, 1), (y, 0, 1)))
                    for nb in shapes
                ]
                for na in shapes
            ]
        )
        w = UNIT_CELL.evaluate(lambda xx, yy: xx)
        gm = assemble_generalized_mass(UNIT_CELL, w)
        assert np.allclose(gm.toarray(), expected, atol=1e-15)

    def test_wrong_length(self):
        g = Grid(0, 1, 0, 1, 4, 4)
        with pytest.raises(DimensionError):
            assemble_generalized_mass(g, np.ones(5))


class TestBoundaryOperators:
    def test_interior_rows_zero(self):
        g = Grid(0, 1, 0, 1, 5, 4)
        bm = assemble_boundary_mass(g).toarray()
        interior = [g.index(i, j) for j in range(4) for i in range(1, 4)]
        assert np.all(bm[interior, :] == 0) and np.all(bm[:, interior] == 0)

    def test_partition_of_unity_on_edge(self):
        g = Grid(0, 1, -2.0, 1.0, 5, 7)
        bm = assemble_boundary_mass(g, sides=("left",))
        assert np.isclose(bm.sum(), 3.0)

    def test_three_node_edge_values(self):
        g = Grid(0, 1, 0, 2, 3, 3)  # dy = 1
        bm = assemble_boundary_mass(g, sides=("left",)).toarray()
        edge = g.edge_indices("left")
        sub = bm[np.ix_(edge, edge)]
        assert np.allclose(np.diag(sub), [1 / 3, 2 / 3, 1 / 3])
        assert np.isclose(sub[0, 1], 1 / 6) and np.isclose(sub[1, 2], 1 / 6)

    def test_boundary_stiffness_kernel_and_values(self):
        g = Grid(0, 1, 0, 2, 3, 3)  # dy = 1
        bs = assemble_boundary_stiffness(g, sides=("right",)).toarray()
        edge = g.edge_indices("right")
        trace = np.zeros(g.n_nodes, dtype=complex)
        trace[edge] = 5.0
        assert np.linalg.norm(bs @ trace) <= 1e-14
        sub = bs[np.ix_(edge, edge)]
        assert np.allclose(sub, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])

    def test_boundary_matrices_symmetric(self):
        g = Grid(0, 3, 0, 2, 4, 6)
        for mat in (assemble_boundary_mass(g), assemble_boundary_stiffness(g)):
            assert np.allclose(mat.toarray(), mat.toarray().T, atol=1e-15)

    def test_generalized_boundary_mass_reductions(self):
        g = Grid(0, 1, 0, 1, 4, 5)
        ones = np.ones(g.n_nodes)
        gm = assemble_generalized_boundary_mass(g, ones)
        assert np.allclose(gm.toarray(), assemble_boundary_mass(g).toarray(), atol=1e-15)
        assert np.all(assemble_generalized_boundary_mass(g, 0 * ones).toarray() == 0)

    def test_generalized_boundary_mass_symbolic_oracle(self):
        # w(y) = y on a single left-edge element of height 1.
        g = Grid(0, 1, 0, 1, 2, 2)
        y = sympy.Symbol("y")
        shapes = [1 - y, y]
        expected = np.array(
            [
                [float(sympy.integrate(na * nb * y, (y, 0, 1))) for nb in shapes]
                for na in shapes
            ]
        )
        w = g.evaluate(lambda xx, yy: yy)
        gm = assemble_generalized_boundary_mass(g, w, sides=("left",)).toarray()
        edge = g.edge_indices("left")
        assert np.allclose(gm[np.ix_(edge, edge)], expected, atol=1e-15)

    def test_empty_sides_rejected(self):
        g = Grid(0, 1, 0, 1, 3, 3)
        with pytest.raises(ConfigError):
            assemble_boundary_mass(g, sides=())


class TestRestriction:
    def test_left_picks_first_column(self):
        g = Grid(0, 1, 0, 1, 4, 3)
        q = restriction(g, "left").toarray()
        for j in range(3):
            expected = np.zeros(g.n_nodes)
            expected[g.index(0, j)] = 1.0
            assert np.array_equal(q[j].real, expected)

    def test_orthogonality(self):
        g = Grid(0, 1, 0, 1, 5, 4)
        for side in ("left", "right"):
            q = restriction(g, side)
            assert np.allclose((q @ q.T).toarray(), np.eye(g.n_y))
            qtq = (q.T @ q).toarray()
            indicator = np.zeros(g.n_nodes)
            indicator[g.edge_indices(side)] = 1.0
            assert np.allclose(qtq, np.diag(indicator))


class TestInvariants:
    @pytest.mark.parametrize(
        "assemble",
        [
            assemble_mass,
            assemble_stiffness,
            lambda g: assemble_generalized_mass(g, g.evaluate(lambda x, y: x * y)),
        ],
    )
    def test_symmetry(self, assemble):
        g = Grid(-1, 1, -1, 1, 6, 5)
        a = assemble(g).toarray()
        assert np.abs(a - a.T).max() <= 1e-14

    def test_translation_invariance(self):
        g1 = Grid(0.0, 2.0, 0.0, 1.0, 9, 5)
        g2 = Grid(10.0, 12.0, -4.0, -3.0, 9, 5)
        for assemble in (assemble_mass, assemble_stiffness, assemble_boundary_mass):
            a1, a2 = assemble(g1), assemble(g2)
            assert np.allclose(a1.toarray(), a2.toarray(), atol=1e-15)

    def test_neumann_patch_test(self):
        # A spatially constant state is reproduced exactly by one implicit
        # step with natural boundary conditions everywhere.
        g = Grid(0, 1, 0, 1, 8, 6)
        dt = 0.01
        m = assemble_mass(g)
        s = assemble_stiffness(g)
        h = np.full(g.n_nodes, 2.0 - 1.0j)
        a = ((2j / dt) * m - s).tocsc()
        v = sp.linalg.spsolve(a, (2j / dt) * (m @ h))
        assert np.abs(v - h).max() <= 1e-10
