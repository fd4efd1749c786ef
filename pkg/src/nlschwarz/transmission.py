"""Robin and Pade-absorbing transmission conditions.

The Robin condition applies ``-i p`` to a boundary trace.  The Pade condition
approximates the square-root absorbing operator through rational coefficients
``a_s = exp(i theta / 2) / (m cos^2((2s-1) pi / 4m))`` and
``d_s = exp(i theta) tan^2((2s-1) pi / 4m)``, plus auxiliary boundary fields
that satisfy small tangential problems along each interface line.

The rational coefficients are defined for ``s = 0..m``; the standard form of
the operator sums the ``a``-terms from ``s = 0`` and the coupled ``a d``-terms
from ``s = 1``.  A switch allows starting the ``a``-sum at ``s = 1`` instead
(both variants appear in practice); the same convention is then used
consistently in the discrete operator and in the assembled local systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DimensionError
from . import fem
from .linalg import as_complex_csr


@dataclass(frozen=True)
class PadeCoefficients:
    """Rational coefficients of the absorbing condition of a given order."""

    order: int
    theta: float
    a: np.ndarray  # (order + 1,) complex
    d: np.ndarray  # (order + 1,) complex; d[0] is stored but unused in sums


def pade_coefficients(order: int, theta: float = math.pi / 4) -> PadeCoefficients:
    """Evaluate the closed-form coefficients for a given order and angle."""
    if order < 1:
        raise ConfigError("Pade order must be at least 1")
    s = np.arange(order + 1)
    angle = (2 * s - 1) * math.pi / (4 * order)
    a = np.exp(1j * theta / 2) / (order * np.cos(angle) ** 2)
    d = np.exp(1j * theta) * np.tan(angle) ** 2
    return PadeCoefficients(order=order, theta=theta, a=a, d=d)


@dataclass(frozen=True)
class TransmissionSpec:
    """Either a Robin condition with parameter ``p`` or a Pade condition.

    ``include_zeroth`` selects whether the plain trace term sums the ``a``
    coefficients from ``s = 0`` (default) or from ``s = 1``.
    """

    kind: str
    p: float = 0.0
    coefficients: Optional[PadeCoefficients] = None
    include_zeroth: bool = True

    @staticmethod
    def robin(p: float) -> "TransmissionSpec":
        if p <= 0:
            raise ConfigError("Robin parameter p must be positive")
        return TransmissionSpec(kind="robin", p=p)

    @staticmethod
    def pade(
        order: int, theta: float = math.pi / 4, include_zeroth: bool = True
    ) -> "TransmissionSpec":
        return TransmissionSpec(
            kind="pade",
            coefficients=pade_coefficients(order, theta),
            include_zeroth=include_zeroth,
        )

    @property
    def is_robin(self) -> bool:
        return self.kind == "robin"

    @property
    def order(self) -> int:
        return 0 if self.is_robin else self.coefficients.order

    def a_sum(self) -> complex:
        """Sum of the ``a`` coefficients entering the plain trace term."""
        start = 0 if self.include_zeroth else 1
        return complex(np.sum(self.coefficients.a[start:]))


@dataclass(frozen=True)
class AuxiliaryTraces:
    """Auxiliary boundary fields of the Pade condition, one stack per side.

    ``left`` and ``right`` have shape ``(order, n_y)``; Robin solves carry
    the empty (order zero) instance.
    """

    left: np.ndarray
    right: np.ndarray

    @staticmethod
    def zeros(order: int, n_y: int) -> "AuxiliaryTraces":
        return AuxiliaryTraces(
            np.zeros((order, n_y), dtype=np.complex128),
            np.zeros((order, n_y), dtype=np.complex128),
        )

    @property
    def order(self) -> int:
        return self.left.shape[0]

    def side(self, which: str) -> np.ndarray:
        return self.left if which == fem.LEFT else self.right


def apply_discrete_tc(
    spec: TransmissionSpec, trace: np.ndarray, aux: Optional[np.ndarray] = None
) -> np.ndarray:
    """Apply the discrete transmission operator to one boundary trace.

    For Robin this is ``-i p * trace`` and ``aux`` is ignored.  For Pade,
    ``aux`` must hold the auxiliary traces of that side, shape
    ``(order, len(trace))``, and the result is
    ``-i (sum a_s) trace + i sum_{s>=1} a_s d_s aux[s-1]``.
    """
    trace = np.asarray(trace, dtype=np.complex128)
    if spec.is_robin:
        return -1j * spec.p * trace
    coeffs = spec.coefficients
    if aux is None or np.shape(aux) != (coeffs.order, trace.shape[0]):
        raise DimensionError(
            f"Pade operator needs {coeffs.order} auxiliary traces of length "
            f"{trace.shape[0]}"
        )
    out = -1j * spec.a_sum() * trace
    weights = coeffs.a[1:] * coeffs.d[1:]
    out = out + 1j * (weights @ aux)
    return out


def build_pade_blocks(
    grid: fem.Grid,
    spec: TransmissionSpec,
    w_values,
    dt: float,
    laplace_coefficient: float = 1.0,
):
    """Assemble the auxiliary-block matrices of the coupled Pade system.

    Returns ``(b_blocks, c_block, d_blocks)`` where, with ``Mg`` the boundary
    mass, ``Sg`` the boundary stiffness, ``Mg_W`` the W-weighted boundary mass
    and ``Q`` the stacked left/right restriction,

    - ``b_blocks[s-1] = -i a_s d_s Mg Q^T``  (volume x trace coupling),
    - ``c_block = -Q Mg``                    (trace x volume coupling),
    - ``d_blocks[s-1] = Q ((2i/dt) Mg - c Sg + Mg_W + d_s Mg) Q^T``

    with ``c`` the coefficient in front of the Laplacian, which also scales
    the tangential operator in the auxiliary problems.
    """
    if spec.is_robin:
        raise ConfigError("auxiliary blocks only exist for the Pade condition")
    w_values = np.asarray(w_values)
    mg = fem.assemble_boundary_mass(grid)
    sg = fem.assemble_boundary_stiffness(grid)
    mg_w = fem.assemble_generalized_boundary_mass(grid, w_values)
    q = as_complex_csr(
        sp.vstack([fem.restriction(grid, fem.LEFT), fem.restriction(grid, fem.RIGHT)])
    )
    qt = as_complex_csr(q.T)
    coeffs = spec.coefficients
    mg_qt = as_complex_csr(mg @ qt)
    core = (2j / dt) * mg - laplace_coefficient * sg + mg_w
    b_blocks = [
        as_complex_csr(-1j * coeffs.a[s] * coeffs.d[s] * mg_qt)
        for s in range(1, coeffs.order + 1)
    ]
    c_block = as_complex_csr(-(q @ mg))
    d_blocks = [
        as_complex_csr(q @ (core + coeffs.d[s] * mg) @ qt)
        for s in range(1, coeffs.order + 1)
    ]
    return b_blocks, c_block, d_blocks
