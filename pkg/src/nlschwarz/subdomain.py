"""Local solves on one strip: the midpoint-in-time Schrodinger step.

Each time step reduces to the stationary problem

    (2i/dt) v + c Lap(v) + W v + f(v) v = (2i/dt) h,

with ``h`` the previous time level, homogeneous Neumann conditions on top and
bottom, and the transmission condition ``d_n v + S v = l`` / ``= r`` on the
left / right boundary lines (``S`` Robin or Pade; ``spec=None`` drops the
boundary operator entirely and yields a pure Neumann problem for monodomain
reference runs).  ``c`` is the coefficient in front of the Laplacian (1 for
the plain equation, 1/2 for the condensate pipeline); it scales the stiffness
term and the weak-form boundary flux uniformly.

Nonlinear problems are solved by freezing ``f`` at the previous iterate.  The
frozen volume term can be placed either inside the system matrix acting on
the new iterate (``"matrix"``, the default), or on the right-hand side acting
on the previous one (``"source"``, which keeps the matrix constant so one
factorization serves the whole iteration).  Both placements share the same
fixed point.  ``"printed"`` reproduces a published variant that, for Robin,
replaces the volume term by a boundary-only one; it solves a different
problem and exists for comparison only.

The time variable advances by ``u_n = 2 v_n - u_{n-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import ConfigError, DimensionError, DivergedError, NotConvergedError
from .linalg import LUFactorization, as_complex_csr, lu_factorize
from .transmission import AuxiliaryTraces, TransmissionSpec

NONLINEARITY_MODES = ("matrix", "source", "printed")
PADE_FORMULATIONS = ("block", "condensed")


@dataclass(frozen=True)
class FixedPointConfig:
    """Stopping rule for the frozen-coefficient iteration (max-norm)."""

    tolerance: float = 1e-12
    max_iterations: int = 100

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigError("fixed-point tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("fixed-point max_iterations must be at least 1")


@dataclass
class LocalSolution:
    """Solution of one local solve: the half-step field ``v``, the auxiliary
    boundary traces (order zero for Robin), and the number of frozen-
    coefficient iterations performed (0 for a purely linear solve)."""

    v: np.ndarray
    aux: AuxiliaryTraces
    fixed_point_iterations: int = 0


class _Geometry:
    """Potential-independent assemblies, shareable between time levels."""

    def __init__(self, grid: fem.Grid):
        self.mass = fem.assemble_mass(grid)
        self.stiffness = fem.assemble_stiffness(grid)
        self.boundary_mass = fem.assemble_boundary_mass(grid)
        self.q_left = fem.restriction(grid, fem.LEFT)
        self.q_right = fem.restriction(grid, fem.RIGHT)
        self.q = as_complex_csr(sp.vstack([self.q_left, self.q_right]))
        self.boundary_indices = np.concatenate(
            [grid.edge_indices(fem.LEFT), grid.edge_indices(fem.RIGHT)]
        )


class LocalProblem:
    """One strip subdomain with its assembled operators and cached factors.

    Owned by a single worker; the geometry assemblies may be shared
    read-only across problems built via :meth:`with_potential`.
    """

    def __init__(
        self,
        grid: fem.Grid,
        *,
        dt: float,
        spec: Optional[TransmissionSpec],
        potential: Optional[fem.PotentialField] = None,
        laplace_coefficient: float = 1.0,
        pade_formulation: str = "block",
        nonlinearity_mode: str = "matrix",
        _geometry: Optional[_Geometry] = None,
    ):
        if dt <= 0:
            raise ConfigError("time step must be positive")
        if pade_formulation not in PADE_FORMULATIONS:
            raise ConfigError(f"unknown Pade formulation {pade_formulation!r}")
        if nonlinearity_mode not in NONLINEARITY_MODES:
            raise ConfigError(f"unknown nonlinearity mode {nonlinearity_mode!r}")
        self.grid = grid
        self.dt = dt
        self.spec = spec
        self.laplace_coefficient = laplace_coefficient
        self.pade_formulation = pade_formulation
        self.nonlinearity_mode = nonlinearity_mode
        self.potential = potential or fem.PotentialField.zero(grid)
        if self.potential.values.shape != (grid.n_nodes,):
            raise DimensionError("potential nodal values do not match the grid")
        self.geometry = _geometry or _Geometry(grid)

        g = self.geometry
        w = np.asarray(self.potential.values)
        self.has_potential = bool(np.any(w != 0.0))
        self.m_w = fem.assemble_generalized_mass(grid, w) if self.has_potential else None
        self.a0 = as_complex_csr(
            (2j / dt) * g.mass - laplace_coefficient * g.stiffness
            + (self.m_w if self.m_w is not None else 0.0)
        )
        if spec is not None and not spec.is_robin:
            from .transmission import build_pade_blocks

            self.b_blocks, self.c_block, self.d_blocks = build_pade_blocks(
                grid, spec, w, dt, laplace_coefficient
            )
            self._d_factors = None
        else:
            self.b_blocks = self.c_block = self.d_blocks = None
            self._d_factors = None
        self._linear_matrix = None
        self._linear_factorization = None

    # -- construction helpers -------------------------------------------------

    def with_potential(self, values) -> "LocalProblem":
        """New problem with updated potential values, reusing the geometry."""
        return LocalProblem(
            self.grid,
            dt=self.dt,
            spec=self.spec,
            potential=fem.PotentialField(np.asarray(values), self.potential.nonlinearity),
            laplace_coefficient=self.laplace_coefficient,
            pade_formulation=self.pade_formulation,
            nonlinearity_mode=self.nonlinearity_mode,
            _geometry=self.geometry,
        )

    @property
    def is_linear(self) -> bool:
        return self.potential.nonlinearity.is_none

    @property
    def n_y(self) -> int:
        return self.grid.n_y

    def trace(self, v: np.ndarray, side: str) -> np.ndarray:
        op = self.geometry.q_left if side == fem.LEFT else self.geometry.q_right
        return op @ v

    def _d_lus(self):
        if self._d_factors is None:
            self._d_factors = [lu_factorize(d) for d in self.d_blocks]
        return self._d_factors

    # -- system assembly ------------------------------------------------------

    def _k00(self) -> sp.csr_matrix:
        """Volume block of the linear operator including the trace term."""
        c = self.laplace_coefficient
        if self.spec is None:
            return self.a0
        if self.spec.is_robin:
            return as_complex_csr(
                self.a0 + (1j * self.spec.p * c) * self.geometry.boundary_mass
            )
        return as_complex_csr(
            self.a0 + (1j * self.spec.a_sum() * c) * self.geometry.boundary_mass
        )

    def _block_matrix(self, extra_volume=None) -> sp.csr_matrix:
        """Coupled system over (v, aux_1, .., aux_m) for the Pade condition."""
        c = self.laplace_coefficient
        m = self.spec.order
        k00 = self._k00()
        if extra_volume is not None:
            k00 = as_complex_csr(k00 + extra_volume)
        rows = [[k00] + [c * b for b in self.b_blocks]]
        for s in range(m):
            row = [self.c_block] + [None] * m
            row[1 + s] = self.d_blocks[s]
            rows.append(row)
        return as_complex_csr(sp.bmat(rows, format="csr"))

    def _condensed_matrix(self, extra_volume=None) -> sp.csr_matrix:
        """Schur complement of the coupled system onto the volume unknowns."""
        c = self.laplace_coefficient
        bidx = self.geometry.boundary_indices
        nb = len(bidx)
        correction = np.zeros((nb, nb), dtype=np.complex128)
        c_compact = self.c_block[:, bidx].toarray()
        for s, lu in enumerate(self._d_lus()):
            b_compact = self.b_blocks[s][bidx, :].toarray()
            correction += c * (b_compact @ lu.solve_many(c_compact))
        scatter = sp.coo_matrix(
            (correction.ravel(), (np.repeat(bidx, nb), np.tile(bidx, nb))),
            shape=(self.grid.n_nodes, self.grid.n_nodes),
        )
        k = self._k00() - as_complex_csr(scatter)
        if extra_volume is not None:
            k = k + extra_volume
        return as_complex_csr(k)

    def linear_system_matrix(self) -> sp.csr_matrix:
        """Matrix of the local solve with the nonlinearity absent or frozen
        on the right-hand side."""
        if self._linear_matrix is None:
            if self.spec is None or self.spec.is_robin:
                self._linear_matrix = self._k00()
            elif self.pade_formulation == "block":
                self._linear_matrix = self._block_matrix()
            else:
                self._linear_matrix = self._condensed_matrix()
        return self._linear_matrix

    def linear_factorization(self) -> LUFactorization:
        if self._linear_factorization is None:
            self._linear_factorization = lu_factorize(self.linear_system_matrix())
        return self._linear_factorization

    def base_rhs(self, h, l=None, r=None) -> np.ndarray:
        """Volume right-hand side ``(2i/dt) M h`` minus the trace data terms."""
        g = self.geometry
        rhs = (2j / self.dt) * (g.mass @ np.asarray(h, dtype=np.complex128))
        c = self.laplace_coefficient
        if l is not None and np.any(l):
            rhs = rhs - c * (g.boundary_mass @ (g.q_left.T @ np.asarray(l, complex)))
        if r is not None and np.any(r):
            rhs = rhs - c * (g.boundary_mass @ (g.q_right.T @ np.asarray(r, complex)))
        return rhs

    def _split_aux(self, stacked: np.ndarray) -> AuxiliaryTraces:
        """Unstack per-order trace vectors laid out as (left; right)."""
        m = self.spec.order
        n_y = self.n_y
        left = np.empty((m, n_y), dtype=np.complex128)
        right = np.empty((m, n_y), dtype=np.complex128)
        for s in range(m):
            block = stacked[s]
            left[s] = block[:n_y]
            right[s] = block[n_y:]
        return AuxiliaryTraces(left, right)

    def _empty_aux(self) -> AuxiliaryTraces:
        order = 0 if (self.spec is None or self.spec.is_robin) else self.spec.order
        return AuxiliaryTraces.zeros(order, self.n_y)


def solve_local_linear(
    prob: LocalProblem, h, l=None, r=None, *, factorization=None
) -> LocalSolution:
    """Direct solve of the local problem without nonlinearity.

    ``l`` and ``r`` are the incoming boundary data (default zero).  For the
    Pade condition the auxiliary traces are returned alongside the field; the
    block and condensed formulations give the same result.
    """
    if not prob.is_linear:
        raise ConfigError("problem carries a nonlinearity; use solve_local_nonlinear")
    v, aux = _solve_frozen(prob, h, l, r, f_values=None, zeta_prev=None, aux_prev=None,
                           factorization=factorization)
    return LocalSolution(v=v, aux=aux, fixed_point_iterations=0)


def solve_local_nonlinear(
    prob: LocalProblem, h, l=None, r=None, fp: FixedPointConfig = FixedPointConfig()
) -> LocalSolution:
    """Frozen-coefficient iteration for the nonlinear local problem.

    Starts from the previous time level (``zeta = h``, auxiliary traces
    zero) and repeats linear solves with ``f`` frozen at the last iterate
    until the max-norm update drops below the tolerance.  Stops early if the
    frozen data itself is exactly stationary, in which case the next solve
    could not change the iterate.
    """
    nonlinearity = prob.potential.nonlinearity
    if nonlinearity.is_none and nonlinearity.kind == "none":
        raise ConfigError("problem has no nonlinearity; use solve_local_linear")
    zeta = np.asarray(h, dtype=np.complex128).copy()
    aux = prob._empty_aux()
    f_vals = np.asarray(nonlinearity(zeta), dtype=float)
    delta = np.inf
    for iteration in range(1, fp.max_iterations + 1):
        if not np.all(np.isfinite(f_vals)):
            raise DivergedError(
                f"frozen coefficient became non-finite at iteration {iteration}"
            )
        zeta_new, aux_new = _solve_frozen(
            prob, h, l, r, f_values=f_vals, zeta_prev=zeta, aux_prev=aux
        )
        if not np.all(np.isfinite(zeta_new)):
            raise DivergedError(
                f"fixed point produced non-finite values at iteration {iteration}"
            )
        delta = float(np.max(np.abs(zeta_new - zeta)))
        f_new = np.asarray(nonlinearity(zeta_new), dtype=float)
        # With f identically zero the solve just performed had no frozen term
        # and was already exact; no second pass can change the iterate.
        frozen_stationary = not np.any(f_vals) and not np.any(f_new)
        zeta, aux, f_vals = zeta_new, aux_new, f_new
        if delta <= fp.tolerance or frozen_stationary:
            return LocalSolution(v=zeta, aux=aux, fixed_point_iterations=iteration)
    raise NotConvergedError(
        f"fixed point did not reach {fp.tolerance:g} in {fp.max_iterations} "
        f"iterations (last update {delta:.3e})",
        best=zeta,
        residual=delta,
        iterations=fp.max_iterations,
    )


def _solve_frozen(prob, h, l, r, *, f_values, zeta_prev, aux_prev, factorization=None):
    """One linear solve with the nonlinearity frozen (or absent).

    Returns ``(v, aux)``.  Dispatches on transmission condition, Pade
    formulation, and nonlinearity placement mode.
    """
    g = prob.geometry
    rhs0 = prob.base_rhs(h, l, r)
    mode = prob.nonlinearity_mode
    spec = prob.spec
    frozen = f_values is not None and np.any(f_values)

    extra_volume = None
    if frozen:
        if mode == "matrix":
            extra_volume = fem.assemble_generalized_mass(prob.grid, f_values)
        elif mode == "source":
            m_f = fem.assemble_generalized_mass(prob.grid, f_values)
            rhs0 = rhs0 - m_f @ zeta_prev
        elif mode == "printed":
            if spec is None:
                raise ConfigError("printed nonlinearity mode requires a transmission condition")
            if spec.is_robin:
                extra_volume = fem.assemble_generalized_boundary_mass(prob.grid, f_values)
            else:
                m_f = fem.assemble_generalized_mass(prob.grid, f_values)
                rhs0 = rhs0 - m_f @ zeta_prev

    if spec is None or spec.is_robin:
        if extra_volume is None:
            lu = factorization or prob.linear_factorization()
        else:
            lu = lu_factorize(prob.linear_system_matrix() + extra_volume)
        return lu.solve(rhs0), prob._empty_aux()

    # Pade condition: lagged coupling of the frozen f with the previous
    # auxiliary traces enters the right-hand side of the trace problems.
    m = spec.order
    n_y = prob.n_y
    lag = [np.zeros(2 * n_y, dtype=np.complex128) for _ in range(m)]
    if frozen and aux_prev is not None and aux_prev.order == m:
        mg_f = fem.assemble_generalized_boundary_mass(prob.grid, f_values)
        for s in range(m):
            stacked = np.concatenate([aux_prev.left[s], aux_prev.right[s]])
            lag[s] = -(g.q @ (mg_f @ (g.q.T @ stacked)))

    if prob.pade_formulation == "block":
        if extra_volume is None:
            lu = factorization or prob.linear_factorization()
        else:
            lu = lu_factorize(prob._block_matrix(extra_volume))
        rhs = np.concatenate([rhs0] + lag)
        x = lu.solve(rhs)
        v = x[: prob.grid.n_nodes]
        stacked = [
            x[prob.grid.n_nodes + s * 2 * n_y : prob.grid.n_nodes + (s + 1) * 2 * n_y]
            for s in range(m)
        ]
        return v, prob._split_aux(stacked)

    # Condensed formulation: eliminate the auxiliary traces, then recover them.
    c = prob.laplace_coefficient
    d_lus = prob._d_lus()
    rhs = rhs0.copy()
    for s in range(m):
        if np.any(lag[s]):
            rhs = rhs - c * (prob.b_blocks[s] @ d_lus[s].solve(lag[s]))
    if extra_volume is None:
        lu = factorization or prob.linear_factorization()
    else:
        lu = lu_factorize(prob._condensed_matrix(extra_volume))
    v = lu.solve(rhs)
    stacked = [
        d_lus[s].solve(lag[s] - prob.c_block @ v) for s in range(m)
    ]
    return v, prob._split_aux(stacked)


def advance_time(u_prev: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Advance the time variable through the midpoint identity
    ``u_n = 2 v_n - u_{n-1}``."""
    u_prev = np.asarray(u_prev)
    v = np.asarray(v)
    if u_prev.shape != v.shape:
        raise DimensionError(
            f"field shapes differ: {u_prev.shape} vs {v.shape}"
        )
    return 2.0 * v - u_prev
