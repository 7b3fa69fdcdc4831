"""Legendre basis machinery on Gauss-Lobatto-Legendre (GLL) points.

Provides GLL nodes/weights, Legendre polynomial evaluation, nodal/modal
Vandermonde matrices and forward/inverse Discrete Legendre Transforms (DLT)
in 1D and 3D tensor-product form. Everything here is a pure function over
immutable inputs; a Basis1D can be shared freely across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_ORDER = 32

_NEWTON_TOL = 1e-14
_NEWTON_MAXIT = 100


class InvalidOrderError(ValueError):
    """Polynomial order outside the supported range."""


class DimensionError(ValueError):
    """Operand orders/shapes do not match."""


def legendre_eval(n: int, x: float) -> float:
    """Evaluate the Legendre polynomial P_n(x) by the Bonnet recurrence.

    Stable three-term recurrence; works for scalars and numpy arrays.
    """
    if n < 0:
        raise InvalidOrderError(f"negative Legendre degree: {n}")
    p_prev = np.ones_like(np.asarray(x, dtype=float))
    if n == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    p = np.asarray(x, dtype=float)
    for k in range(1, n):
        p, p_prev = ((2 * k + 1) * x * p - k * p_prev) / (k + 1), p
    return p if np.ndim(p) else float(p)


def legendre_table(p: int, x: np.ndarray) -> np.ndarray:
    """Return the (len(x), p+1) table with column j = P_j evaluated at x."""
    x = np.asarray(x, dtype=float)
    table = np.empty((x.size, p + 1))
    table[:, 0] = 1.0
    if p >= 1:
        table[:, 1] = x
    for k in range(1, p):
        table[:, k + 1] = ((2 * k + 1) * x * table[:, k] - k * table[:, k - 1]) / (k + 1)
    return table


@dataclass(frozen=True)
class Basis1D:
    """GLL nodal basis of order p: nodes, weights and DLT matrices.

    vandermonde V has V[i, j] = P_j(node_i); inverse_vandermonde is its
    exact inverse built from discrete orthogonality, with the usual GLL
    modification gamma_p = 2/p for the highest mode.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray
    vandermonde: np.ndarray
    inverse_vandermonde: np.ndarray
    mode_norms: np.ndarray  # gamma_n: discrete norm of P_n under GLL quadrature
    diff_matrix: np.ndarray = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return self.order + 1


def gll_basis(p: int) -> Basis1D:
    """Construct the order-p GLL basis.

    Nodes are the roots of (1-x^2) P'_p(x), found by Newton iteration from
    Chebyshev-Gauss-Lobatto initial guesses; weights are 2/(p(p+1)P_p(x)^2).
    Deterministic for a given p.
    """
    if not (1 <= p <= MAX_ORDER):
        raise InvalidOrderError(f"order must be in [1, {MAX_ORDER}], got {p}")
    n = p + 1
    x = -np.cos(np.pi * np.arange(n) / p)
    x_old = np.full(n, 2.0)
    it = 0
    table = np.empty((n, n))
    while np.max(np.abs(x - x_old)) > _NEWTON_TOL and it < _NEWTON_MAXIT:
        table = legendre_table(p, x)
        x_old = x
        # Newton step for the interior equation x P_p - P_{p-1} = 0,
        # which shares roots with (1-x^2) P'_p; endpoints are fixed points.
        x = x_old - (x_old * table[:, p] - table[:, p - 1]) / (n * table[:, p])
        it += 1
    table = legendre_table(p, x)
    x[0], x[-1] = -1.0, 1.0
    w = 2.0 / (p * n * table[:, p] ** 2)

    vand = table
    gamma = 2.0 / (2.0 * np.arange(n) + 1.0)
    gamma[p] = 2.0 / p
    # Discrete orthogonality: V^{-1}[j, i] = w_i P_j(x_i) / gamma_j.
    inv_vand = (w[None, :] * vand.T) / gamma[:, None]

    diff = _diff_matrix(p, x, table[:, p])

    for a in (x, w, vand, inv_vand, gamma, diff):
        a.setflags(write=False)
    return Basis1D(order=p, nodes=x, weights=w, vandermonde=vand,
                   inverse_vandermonde=inv_vand, mode_norms=gamma,
                   diff_matrix=diff)


def _diff_matrix(p: int, x: np.ndarray, lp: np.ndarray) -> np.ndarray:
    """Standard GLL differentiation matrix D[i, j] = l'_j(x_i)."""
    n = p + 1
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                d[i, j] = (lp[i] / lp[j]) / (x[i] - x[j])
    d[0, 0] = -p * n / 4.0
    d[-1, -1] = p * n / 4.0
    return d


@dataclass
class ElementField:
    """Nodal values of one field on one element's (p+1)^3 GLL grid.

    values[iz, iy, ix]: the fastest-varying (last, C-order) index runs in x.
    """

    order: int
    values: np.ndarray
    element_id: int = 0

    def __post_init__(self):
        n = self.order + 1
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n, n, n):
            raise DimensionError(
                f"values shape {self.values.shape} != {(n, n, n)} for order {self.order}")


@dataclass
class SpectralBlock:
    """Legendre coefficients of one element plus the truncation mask."""

    order: int
    coeffs: np.ndarray
    kept_mask: np.ndarray
    element_id: int = 0

    def __post_init__(self):
        n = self.order + 1
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.kept_mask = np.asarray(self.kept_mask, dtype=bool)
        if self.coeffs.shape != (n, n, n) or self.kept_mask.shape != (n, n, n):
            raise DimensionError(
                f"block shapes {self.coeffs.shape}/{self.kept_mask.shape} "
                f"inconsistent with order {self.order}")


def apply_along_axes(mat: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    """Apply the same matrix along all three axes of a rank-3 tensor."""
    out = tensor
    for ax in range(3):
        out = np.moveaxis(np.tensordot(mat, out, axes=(1, ax)), 0, ax)
    return out


def dlt_forward(fld: ElementField, basis: Basis1D) -> SpectralBlock:
    """Nodal values -> Legendre coefficients (tensor-product DLT)."""
    if fld.order != basis.order:
        raise DimensionError(f"field order {fld.order} != basis order {basis.order}")
    coeffs = apply_along_axes(basis.inverse_vandermonde, fld.values)
    return SpectralBlock(order=fld.order, coeffs=coeffs,
                         kept_mask=np.ones_like(coeffs, dtype=bool),
                         element_id=fld.element_id)


def dlt_inverse(block: SpectralBlock, basis: Basis1D) -> ElementField:
    """Legendre coefficients (masked) -> nodal values."""
    if block.order != basis.order:
        raise DimensionError(f"block order {block.order} != basis order {basis.order}")
    masked = np.where(block.kept_mask, block.coeffs, 0.0)
    values = apply_along_axes(basis.vandermonde, masked)
    return ElementField(order=block.order, values=values, element_id=block.element_id)
