"""Strip decomposition, interface iteration and the outer time loop.

The domain splits into ``N`` vertical strips that share interface node lines
(no overlap).  Adjacent strips exchange boundary fluxes; the collection of
incoming fluxes forms the interface vector

    g = (r_1, l_2, r_2, l_3, ..., l_N),

one trace of length ``n_y`` per interface side, with the extreme traces
``l_1`` and ``r_N`` identically zero (they carry the physical boundary data).
One sweep of local solves plus flux exchange is a fixed-point map on ``g``;
a time step iterates it until the update norm falls below the tolerance, then
advances the time variable on every strip.  Converged interface vectors warm-
start the next time step.

Each Schwarz iteration is a superstep: all strips solve locally (optionally
on a worker pool), then traces are exchanged, then a global reduction gives
the update norm.  The serial schedule and the worker schedule perform the
same operations in the same order, so their results are bit-identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import fem
from .errors import ConfigError, DimensionError, NotConvergedError
from .linalg import KrylovConfig
from .subdomain import (
    FixedPointConfig,
    LocalProblem,
    LocalSolution,
    advance_time,
    solve_local_linear,
    solve_local_nonlinear,
)
from .transmission import TransmissionSpec, apply_discrete_tc


@dataclass(frozen=True)
class SchwarzConfig:
    """Outer iteration controls: stopping tolerance on the interface update
    norm, iteration budget, initial-vector mode and algorithm choice."""

    tolerance: float = 1e-10
    max_iterations: int = 1000
    init: str = "zero"  # "zero" | "random"
    seed: int = 0
    algorithm: str = "classical"  # "classical" | "preconditioned"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigError("Schwarz tolerance must be positive")
        if self.init not in ("zero", "random"):
            raise ConfigError(f"unknown init mode {self.init!r}")
        if self.algorithm not in ("classical", "preconditioned"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")


@dataclass(frozen=True)
class Decomposition:
    """Global grid split into vertical strips sharing interface node lines."""

    global_grid: fem.Grid
    subgrids: tuple[fem.Grid, ...]
    offsets: tuple[int, ...]  # global i-index where each strip starts

    @property
    def n_subdomains(self) -> int:
        return len(self.subgrids)

    @property
    def n_y(self) -> int:
        return self.global_grid.n_y

    @property
    def equal_subdomains(self) -> bool:
        nx = {g.n_x for g in self.subgrids}
        if len(nx) != 1:
            return False
        dxs = [g.dx for g in self.subgrids]
        return max(dxs) - min(dxs) <= 1e-12 * max(dxs)

    def restrict(self, global_field: np.ndarray, j: int) -> np.ndarray:
        """Slice a global nodal field onto strip ``j`` (0-based)."""
        grid = self.global_grid
        sub = self.subgrids[j]
        arr = np.asarray(global_field).reshape(grid.n_y, grid.n_x)
        return arr[:, self.offsets[j] : self.offsets[j] + sub.n_x].reshape(-1).copy()

    def glue(self, fields: Sequence[np.ndarray]) -> np.ndarray:
        """Assemble per-strip fields into one global field.

        Interface nodes are present in both neighbors; the left strip's
        value wins (the two agree up to the Schwarz tolerance).
        """
        grid = self.global_grid
        out = np.zeros((grid.n_y, grid.n_x), dtype=np.complex128)
        for j in reversed(range(self.n_subdomains)):
            sub = self.subgrids[j]
            out[:, self.offsets[j] : self.offsets[j] + sub.n_x] = np.asarray(
                fields[j]
            ).reshape(sub.n_y, sub.n_x)
        return out.reshape(-1)


def decompose(global_grid: fem.Grid, n_subdomains: int) -> Decomposition:
    """Split the global grid into ``n`` equal strips.

    The cell count ``n_x - 1`` must be divisible by ``n``; otherwise the
    error suggests the nearest admissible subdomain count.
    """
    if n_subdomains < 1:
        raise ConfigError("subdomain count must be at least 1")
    cells = global_grid.n_x - 1
    if cells % n_subdomains != 0:
        divisors = [d for d in range(1, cells + 1) if cells % d == 0]
        nearest = min(divisors, key=lambda d: (abs(d - n_subdomains), d))
        raise ConfigError(
            f"{cells} cells cannot be split into {n_subdomains} equal strips; "
            f"nearest valid count is {nearest}"
        )
    sub_cells = cells // n_subdomains
    dx = global_grid.dx
    subgrids = []
    offsets = []
    for j in range(n_subdomains):
        a = global_grid.x_left + (j * sub_cells) * dx
        b = (
            global_grid.x_right
            if j == n_subdomains - 1
            else global_grid.x_left + ((j + 1) * sub_cells) * dx
        )
        subgrids.append(
            fem.Grid(
                x_left=a,
                x_right=b,
                y_bottom=global_grid.y_bottom,
                y_top=global_grid.y_top,
                n_x=sub_cells + 1,
                n_y=global_grid.n_y,
            )
        )
        offsets.append(j * sub_cells)
    return Decomposition(global_grid, tuple(subgrids), tuple(offsets))


class InterfaceVector:
    """Distributed unknown of the interface problem.

    Stores the stacked traces ``(r_1, l_2, r_2, ..., l_N)`` as one complex
    array of length ``2 (N - 1) n_y``.  Subdomain indices are 0-based in
    code; the absent extreme traces ``l`` of the first and ``r`` of the last
    strip read as zeros.
    """

    __slots__ = ("n_subdomains", "n_y", "data")

    def __init__(self, n_subdomains: int, n_y: int, data: Optional[np.ndarray] = None):
        self.n_subdomains = n_subdomains
        self.n_y = n_y
        size = 2 * (n_subdomains - 1) * n_y
        if data is None:
            self.data = np.zeros(size, dtype=np.complex128)
        else:
            data = np.asarray(data, dtype=np.complex128)
            if data.shape != (size,):
                raise DimensionError(
                    f"interface data has shape {data.shape}, expected ({size},)"
                )
            self.data = data

    @classmethod
    def zeros(cls, n_subdomains: int, n_y: int) -> "InterfaceVector":
        return cls(n_subdomains, n_y)

    @classmethod
    def random(cls, n_subdomains: int, n_y: int, seed: int) -> "InterfaceVector":
        rng = np.random.default_rng(seed)
        size = 2 * (n_subdomains - 1) * n_y
        data = rng.uniform(-1.0, 1.0, size) + 1j * rng.uniform(-1.0, 1.0, size)
        return cls(n_subdomains, n_y, data)

    def copy(self) -> "InterfaceVector":
        return InterfaceVector(self.n_subdomains, self.n_y, self.data.copy())

    @property
    def size(self) -> int:
        return self.data.shape[0]

    def _block(self, b: int) -> np.ndarray:
        return self.data[b * self.n_y : (b + 1) * self.n_y]

    def left_of(self, j: int) -> np.ndarray:
        """Incoming left trace of strip ``j``; zeros for the first strip."""
        if j == 0:
            return np.zeros(self.n_y, dtype=np.complex128)
        return self._block(2 * j - 1)

    def right_of(self, j: int) -> np.ndarray:
        """Incoming right trace of strip ``j``; zeros for the last strip."""
        if j == self.n_subdomains - 1:
            return np.zeros(self.n_y, dtype=np.complex128)
        return self._block(2 * j)

    def incoming(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        return self.left_of(j), self.right_of(j)

    def set_left(self, j: int, values: np.ndarray) -> None:
        if j == 0:
            raise ConfigError("the first strip has no stored left trace")
        self._block(2 * j - 1)[:] = values

    def set_right(self, j: int, values: np.ndarray) -> None:
        if j == self.n_subdomains - 1:
            raise ConfigError("the last strip has no stored right trace")
        self._block(2 * j)[:] = values

    def dump(self, path) -> None:
        """Write as text rows ``side,subdomain,node,re,im`` (1-based strip)."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write("side,subdomain,node,re,im\n")
            for j in range(self.n_subdomains):
                if j > 0:
                    block = self.left_of(j)
                    for node, v in enumerate(block):
                        fh.write(f"l,{j + 1},{node},{v.real:.17g},{v.imag:.17g}\n")
                if j < self.n_subdomains - 1:
                    block = self.right_of(j)
                    for node, v in enumerate(block):
                        fh.write(f"r,{j + 1},{node},{v.real:.17g},{v.imag:.17g}\n")


def compute_outgoing_fluxes(
    prob: LocalProblem,
    sol: LocalSolution,
    l_in: np.ndarray,
    r_in: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Fluxes a strip sends to its neighbors after a local solve.

    Each outgoing trace is minus the incoming flux of this sweep plus twice
    the transmission operator applied to the solution trace on that side.
    """
    spec = prob.spec
    aux_l = sol.aux.left if sol.aux.order else None
    aux_r = sol.aux.right if sol.aux.order else None
    out_left = -l_in + 2.0 * apply_discrete_tc(spec, prob.trace(sol.v, fem.LEFT), aux_l)
    out_right = -r_in + 2.0 * apply_discrete_tc(spec, prob.trace(sol.v, fem.RIGHT), aux_r)
    return out_left, out_right


@dataclass
class TimeStepResult:
    fields: list[np.ndarray]
    interface: InterfaceVector
    history: list[float]
    solutions: list[LocalSolution]


@dataclass
class SimulationResult:
    fields: list[np.ndarray]
    interface: InterfaceVector
    histories: list[list[float]] = field(default_factory=list)
    masses: list[float] = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    times: list[float] = field(default_factory=list)


class SchwarzSolver:
    """Driver owning the per-strip local problems and the iteration loops.

    Parameters
    ----------
    decomposition : Decomposition
        Strip layout; a single strip degenerates to a monodomain solve.
    dt : float
        Time step of the midpoint scheme.
    spec : TransmissionSpec or None
        Interface/outer boundary operator.  ``None`` (pure Neumann sides)
        is only admissible for a single strip.
    laplace_coefficient : float
        Coefficient in front of the Laplacian (1/2 for the condensate runs).
    potential : array or callable, optional
        Static potential: global nodal values or ``V(x, y)``.
    time_potential : callable, optional
        Time-dependent potential ``V(t, x, y)``; each step uses the average
        of the two adjacent time levels and reassembles the weighted mass.
    nonlinearity : Nonlinearity, optional
    fixed_point : FixedPointConfig
    n_workers : int
        Local solves per sweep run on a thread pool when > 1; results are
        gathered in strip order, so counts and fields match the serial mode
        bit for bit.
    """

    def __init__(
        self,
        decomposition: Decomposition,
        *,
        dt: float,
        spec: Optional[TransmissionSpec],
        laplace_coefficient: float = 1.0,
        potential=None,
        time_potential: Optional[Callable] = None,
        nonlinearity: Optional[fem.Nonlinearity] = None,
        fixed_point: FixedPointConfig = FixedPointConfig(),
        pade_formulation: str = "block",
        nonlinearity_mode: str = "matrix",
        n_workers: int = 1,
    ):
        if spec is None and decomposition.n_subdomains > 1:
            raise ConfigError("multi-strip runs need a transmission condition")
        if potential is not None and time_potential is not None:
            raise ConfigError("give either a static or a time-dependent potential")
        self.decomposition = decomposition
        self.dt = dt
        self.spec = spec
        self.laplace_coefficient = laplace_coefficient
        self.fixed_point = fixed_point
        self.nonlinearity = nonlinearity or fem.Nonlinearity.none()
        self.time_potential = time_potential
        self.n_workers = n_workers
        self._executor = None
        self._global_mass = None
        self._time_level = None

        self._static_w = []
        for j, sub in enumerate(decomposition.subgrids):
            if potential is None:
                self._static_w.append(np.zeros(sub.n_nodes))
            elif callable(potential):
                self._static_w.append(np.asarray(sub.evaluate(potential), dtype=float))
            else:
                self._static_w.append(
                    np.real(decomposition.restrict(np.asarray(potential), j))
                )
        self.problems: list[LocalProblem] = []
        for j, sub in enumerate(decomposition.subgrids):
            w0 = self._static_w[j] if time_potential is None else self._w_at_level(j, 1)
            self.problems.append(
                LocalProblem(
                    sub,
                    dt=dt,
                    spec=spec,
                    potential=fem.PotentialField(w0, self.nonlinearity),
                    laplace_coefficient=laplace_coefficient,
                    pade_formulation=pade_formulation,
                    nonlinearity_mode=nonlinearity_mode,
                )
            )
        self._time_level = 1

    # -- helpers ---------------------------------------------------------------

    @property
    def n_subdomains(self) -> int:
        return self.decomposition.n_subdomains

    @property
    def n_y(self) -> int:
        return self.decomposition.n_y

    def _w_at_level(self, j: int, n: int) -> np.ndarray:
        """Averaged potential for time level ``n`` on strip ``j``."""
        sub = self.decomposition.subgrids[j]
        x, y = sub.coordinates()
        t_n, t_prev = n * self.dt, (n - 1) * self.dt
        return 0.5 * (
            np.asarray(self.time_potential(t_n, x, y), dtype=float)
            + np.asarray(self.time_potential(t_prev, x, y), dtype=float)
        )

    def set_time_level(self, n: int) -> None:
        """Rebuild the level-dependent operators when the potential moves."""
        if self.time_potential is None or n == self._time_level:
            return
        self.problems = [
            prob.with_potential(self._w_at_level(j, n))
            for j, prob in enumerate(self.problems)
        ]
        self._time_level = n

    def restrict(self, global_field) -> list[np.ndarray]:
        return [
            self.decomposition.restrict(np.asarray(global_field, dtype=np.complex128), j)
            for j in range(self.n_subdomains)
        ]

    def glue(self, fields: Sequence[np.ndarray]) -> np.ndarray:
        return self.decomposition.glue(fields)

    def interface_initial(self, cfg: SchwarzConfig) -> InterfaceVector:
        if cfg.init == "random":
            return InterfaceVector.random(self.n_subdomains, self.n_y, cfg.seed)
        return InterfaceVector.zeros(self.n_subdomains, self.n_y)

    def mass_norm(self, global_field: np.ndarray) -> float:
        """M-weighted norm of a global nodal field."""
        if self._global_mass is None:
            self._global_mass = fem.assemble_mass(self.decomposition.global_grid)
        u = np.asarray(global_field, dtype=np.complex128)
        return float(np.sqrt(np.real(np.vdot(u, self._global_mass @ u))))

    def _map_subdomains(self, func):
        if self.n_workers > 1:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(max_workers=self.n_workers)
            return list(self._executor.map(func, range(self.n_subdomains)))
        return [func(j) for j in range(self.n_subdomains)]

    def _solve_subdomain(self, j: int, h: np.ndarray, l: np.ndarray, r: np.ndarray):
        prob = self.problems[j]
        try:
            if prob.is_linear:
                return solve_local_linear(prob, h, l, r)
            return solve_local_nonlinear(prob, h, l, r, self.fixed_point)
        except Exception as exc:
            exc.subdomain = j
            raise

    # -- iteration -------------------------------------------------------------

    def classical_step(
        self, g: InterfaceVector, u_prev: Sequence[np.ndarray]
    ) -> tuple[InterfaceVector, list[LocalSolution]]:
        """One sweep of the interface fixed-point map: local solves with the
        current incoming traces, then neighbor flux exchange."""
        sols = self._map_subdomains(
            lambda j: self._solve_subdomain(j, u_prev[j], *g.incoming(j))
        )
        g_next = InterfaceVector.zeros(self.n_subdomains, self.n_y)
        for j in range(self.n_subdomains):
            l_in, r_in = g.incoming(j)
            out_left, out_right = compute_outgoing_fluxes(
                self.problems[j], sols[j], l_in, r_in
            )
            if j > 0:
                g_next.set_right(j - 1, out_left)
            if j < self.n_subdomains - 1:
                g_next.set_left(j + 1, out_right)
        return g_next, sols

    def run_time_step(
        self,
        u_prev: Sequence[np.ndarray],
        g: InterfaceVector,
        cfg: SchwarzConfig,
        step: Optional[Callable] = None,
    ) -> TimeStepResult:
        """Iterate the interface map until the update norm drops below the
        tolerance, then advance the time variable on every strip.

        ``step`` defaults to :meth:`classical_step`; the preconditioned
        variant is passed in by the driver.  Returns the new fields, the
        converged interface vector (warm start for the next step) and the
        per-iteration update norms.
        """
        if self.n_subdomains == 1:
            zeros = np.zeros(self.n_y, dtype=np.complex128)
            sol = self._solve_subdomain(0, u_prev[0], zeros, zeros)
            return TimeStepResult(
                fields=[advance_time(u_prev[0], sol.v)],
                interface=g,
                history=[],
                solutions=[sol],
            )
        step = step or self.classical_step
        history: list[float] = []
        sols = None
        for _ in range(cfg.max_iterations):
            g_next, sols = step(g, u_prev)
            update = float(np.linalg.norm(g_next.data - g.data))
            history.append(update)
            g = g_next
            if update < cfg.tolerance:
                break
        else:
            raise NotConvergedError(
                f"interface iteration did not reach {cfg.tolerance:g} in "
                f"{cfg.max_iterations} iterations (last update {history[-1]:.3e})",
                best=g,
                residual=history[-1],
                iterations=cfg.max_iterations,
                history=history,
            )
        fields = [advance_time(u_prev[j], sols[j].v) for j in range(self.n_subdomains)]
        return TimeStepResult(fields=fields, interface=g, history=history, solutions=sols)

    def _make_step(self, cfg: SchwarzConfig, krylov: Optional[KrylovConfig]):
        if cfg.algorithm == "classical":
            return self.classical_step
        from .precond import build_blocks, assemble_P, preconditioned_step

        blocks = build_blocks(
            self.reference_free_problem(),
            self.n_subdomains,
            n_workers=self.n_workers,
        )
        operator = assemble_P(blocks)
        kcfg = krylov or KrylovConfig()

        def step(g, u_prev):
            return preconditioned_step(self, operator, g, u_prev, kcfg)

        return step

    def reference_free_problem(self) -> LocalProblem:
        """Zero-potential, linear copy of a strip problem, used to build the
        interface preconditioner (identical across equal strips)."""
        sub = self.decomposition.subgrids[0]
        return LocalProblem(
            sub,
            dt=self.dt,
            spec=self.spec,
            potential=fem.PotentialField.zero(sub),
            laplace_coefficient=self.laplace_coefficient,
            pade_formulation=self.problems[0].pade_formulation,
        )

    def run_simulation(
        self,
        u0,
        cfg: SchwarzConfig,
        n_steps: int,
        *,
        krylov: Optional[KrylovConfig] = None,
        snapshot_steps: Sequence[int] = (),
        collect_mass: bool = False,
        g_init: Optional[InterfaceVector] = None,
    ) -> SimulationResult:
        """Run ``n_steps`` of the midpoint scheme.

        The interface vector is initialized from ``cfg`` (or ``g_init`` when
        restarting) for the first step and warm-started from the converged
        vector afterwards.  Snapshots of the glued field are collected at the
        requested step indices (0 means the initial datum).

        ``u0`` is a global nodal field, or a list of per-strip fields for an
        exact restart (a glued snapshot duplicates the interface lines of the
        left strips, so restarting from it reproduces the continuation only
        up to the interface tolerance).
        """
        if isinstance(u0, (list, tuple)):
            fields = [np.asarray(f, dtype=np.complex128) for f in u0]
        else:
            fields = self.restrict(u0)
        g = g_init if g_init is not None else self.interface_initial(cfg)
        step = self._make_step(cfg, krylov)
        snapshot_steps = set(snapshot_steps)
        result = SimulationResult(fields=fields, interface=g)
        if collect_mass:
            result.masses.append(self.mass_norm(self.glue(fields)))
        if 0 in snapshot_steps:
            result.snapshots[0] = self.glue(fields)
        for n in range(1, n_steps + 1):
            self.set_time_level(n)
            try:
                out = self.run_time_step(fields, g, cfg, step=step)
            except NotConvergedError as exc:
                exc.time_step = n
                raise
            fields, g = out.fields, out.interface
            result.histories.append(out.history)
            result.times.append(n * self.dt)
            if collect_mass:
                result.masses.append(self.mass_norm(self.glue(fields)))
            if n in snapshot_steps:
                result.snapshots[n] = self.glue(fields)
        result.fields = fields
        result.interface = g
        return result
