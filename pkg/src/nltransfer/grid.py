"""Finite-dimensional model of L^2(-k, k) and C^2 (x) L^2(-k, k).

A :class:`MomentumGrid` holds quadrature nodes strictly inside (-k, k) together
with positive weights. Grid functions are sampled values at the nodes; the
inner product carries the weights. Operators are stored in the Nystrom
convention: ``A[i, j] = kernel(p_i, p_j) * w_j``, so application is a plain
matrix-vector product and the weighted inner product gives the L^2 norm.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

RULES = ("gauss-legendre-theta", "gauss-legendre-p")

POWER_RTOL = 1e-10
POWER_MAXITER = 500


class InvalidArgument(ValueError):
    """Raised on malformed inputs (bad sizes, mismatched grids, bad tags)."""


@dataclass(frozen=True, eq=False)
class MomentumGrid:
    """Quadrature grid on the open interval (-k, k).

    ``theta`` are the angles with ``p = k sin(theta)``; ``varpi = sqrt(k^2 - p^2)``
    is the longitudinal wavenumber of the oscillating channel at each node.
    """

    k: float
    theta: np.ndarray
    p: np.ndarray
    weights: np.ndarray
    varpi: np.ndarray
    rule: str

    @property
    def n(self) -> int:
        return self.p.size

    @property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.weights)

    @property
    def theta_weights(self) -> np.ndarray:
        """Weights for the measure d(theta), i.e. ``w_j / varpi_j``."""
        return self.weights / self.varpi

    def phase(self, x: float, sign: int = 1) -> np.ndarray:
        """Diagonal of ``exp(i*sign*x*varpi)``."""
        return np.exp(1j * sign * x * self.varpi)

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        return complex(np.sum(self.weights * np.conj(f) * g))

    def norm(self, f: np.ndarray) -> float:
        """Weighted L^2 norm; ``f`` may be an N-vector or a stacked 2N-vector."""
        f = np.asarray(f)
        w = self.weights if f.shape[0] == self.n else np.tile(self.weights, f.shape[0] // self.n)
        return float(np.sqrt(np.sum(w * np.abs(f) ** 2)))

    def nearest_node(self, p0: float) -> int:
        return int(np.argmin(np.abs(self.p - p0)))

    def __repr__(self) -> str:
        return f"MomentumGrid(k={self.k!r}, n={self.n}, rule={self.rule!r})"


def build_grid(k: float, n: int, rule: str = "gauss-legendre-theta") -> MomentumGrid:
    """Build a Gauss-Legendre grid on (-k, k).

    With ``gauss-legendre-theta`` the rule is Gauss-Legendre in theta on
    (-pi/2, pi/2), mapped by p = k sin(theta) with weights
    ``w_theta * k cos(theta)``. The measure dp/varpi = d(theta) then absorbs the
    endpoint singularity of varpi^{-1}. ``gauss-legendre-p`` is the plain rule
    in p.
    """
    if not np.isfinite(k) or k <= 0:
        raise InvalidArgument(f"wavenumber must be positive, got k={k!r}")
    if int(n) != n or n < 2:
        raise InvalidArgument(f"need at least 2 nodes, got n={n!r}")
    if rule not in RULES:
        raise InvalidArgument(f"unknown quadrature rule {rule!r}; expected one of {RULES}")
    n = int(n)
    x, wx = np.polynomial.legendre.leggauss(n)
    # leggauss is symmetric only to rounding; enforce exact mirror symmetry
    x = 0.5 * (x - x[::-1])
    wx = 0.5 * (wx + wx[::-1])
    if rule == "gauss-legendre-theta":
        theta = 0.5 * np.pi * x
        p = k * np.sin(theta)
        varpi = k * np.cos(theta)
        weights = 0.5 * np.pi * wx * varpi
    else:
        p = k * x
        theta = np.arcsin(x)
        varpi = np.sqrt((k - p) * (k + p))
        weights = k * wx
    for arr in (theta, p, weights, varpi):
        arr.setflags(write=False)
    return MomentumGrid(k=float(k), theta=theta, p=p, weights=weights, varpi=varpi, rule=rule)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of an element of L^2(-k, k) at the grid nodes."""

    grid: MomentumGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != (self.grid.n,):
            raise InvalidArgument(f"expected {self.grid.n} samples, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def __add__(self, other: GridFunction) -> GridFunction:
        _same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: GridFunction) -> GridFunction:
        _same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c) -> GridFunction:
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__


def _same_grid(a, b) -> None:
    if a.grid is not b.grid:
        raise InvalidArgument("grid functions live on different grids")


def inner_product(f: GridFunction, g: GridFunction) -> complex:
    """<f, g> = sum_j w_j conj(f_j) g_j."""
    _same_grid(f, g)
    return f.grid.inner(f.values, g.values)


def apply_varpi(f: GridFunction, power: int) -> GridFunction:
    """Multiply pointwise by varpi^power, power in {-1, 1, 2}."""
    if power not in (-1, 1, 2):
        raise InvalidArgument(f"power must be -1, 1 or 2, got {power!r}")
    return GridFunction(f.grid, f.values * f.grid.varpi ** power)


def phase_operator(grid: MomentumGrid, x: float, sign: int = 1) -> np.ndarray:
    """Diagonal of exp(i*sign*x*varpi); multiply a grid function by it to apply."""
    if sign not in (1, -1):
        raise InvalidArgument(f"sign must be +1 or -1, got {sign!r}")
    if not np.isfinite(x):
        raise InvalidArgument(f"position must be finite, got {x!r}")
    return grid.phase(x, sign)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Discretized element [phi_plus; phi_minus] of C^2 (x) L^2(-k, k)."""

    grid: MomentumGrid
    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        for name in ("plus", "minus"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != (self.grid.n,):
                raise InvalidArgument(f"{name} component has shape {arr.shape}, expected ({self.grid.n},)")
            object.__setattr__(self, name, arr)

    @classmethod
    def from_stacked(cls, grid: MomentumGrid, vec: np.ndarray) -> StateVector:
        vec = np.asarray(vec)
        return cls(grid, vec[: grid.n], vec[grid.n :])

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.plus, self.minus])

    def norm(self) -> float:
        return self.grid.norm(self.stacked())

    def __add__(self, other: StateVector) -> StateVector:
        _same_grid(self, other)
        return StateVector(self.grid, self.plus + other.plus, self.minus + other.minus)

    def __sub__(self, other: StateVector) -> StateVector:
        _same_grid(self, other)
        return StateVector(self.grid, self.plus - other.plus, self.minus - other.minus)

    def __mul__(self, c) -> StateVector:
        return StateVector(self.grid, self.plus * c, self.minus * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """2x2 block operator acting on C^2 (x) L^2(-k, k), stored as a 2N x 2N array."""

    grid: MomentumGrid
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n2 = 2 * self.grid.n
        if m.shape != (n2, n2):
            raise InvalidArgument(f"block operator must be {n2}x{n2}, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_blocks(cls, grid, b11, b12, b21, b22) -> BlockOperator:
        return cls(grid, np.block([[b11, b12], [b21, b22]]))

    @classmethod
    def identity(cls, grid) -> BlockOperator:
        return cls(grid, np.eye(2 * grid.n, dtype=complex))

    @classmethod
    def zeros(cls, grid) -> BlockOperator:
        return cls(grid, np.zeros((2 * grid.n, 2 * grid.n), dtype=complex))

    def block(self, i: int, j: int) -> np.ndarray:
        """Block (i, j) with 1-based indices as in M_11, M_12, M_21, M_22."""
        n = self.grid.n
        return self.matrix[(i - 1) * n : i * n, (j - 1) * n : j * n]

    def apply(self, state: StateVector) -> StateVector:
        _same_grid(self, state)
        return StateVector.from_stacked(self.grid, self.matrix @ state.stacked())

    def __matmul__(self, other):
        if isinstance(other, BlockOperator):
            _same_grid(self, other)
            return BlockOperator(self.grid, self.matrix @ other.matrix)
        if isinstance(other, StateVector):
            return self.apply(other)
        return NotImplemented

    def __add__(self, other: BlockOperator) -> BlockOperator:
        _same_grid(self, other)
        return BlockOperator(self.grid, self.matrix + other.matrix)

    def __sub__(self, other: BlockOperator) -> BlockOperator:
        _same_grid(self, other)
        return BlockOperator(self.grid, self.matrix - other.matrix)

    def __mul__(self, c) -> BlockOperator:
        return BlockOperator(self.grid, self.matrix * c)

    __rmul__ = __mul__

    def norm(self, method: str = "dense-svd") -> float:
        return operator_norm(self, method=method)


class NormEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def symmetrized(matrix: np.ndarray, grid: MomentumGrid) -> np.ndarray:
    """Similarity transform D^{1/2} A D^{-1/2}; its 2-norm is the weighted operator norm."""
    reps = matrix.shape[0] // grid.n
    s = np.tile(grid.sqrt_weights, reps)
    return s[:, None] * matrix / s[None, :]


def power_norm(S: np.ndarray, rtol: float = POWER_RTOL, maxiter: int = POWER_MAXITER) -> NormEstimate:
    """Largest singular value of ``S`` by power iteration on S^H S."""
    if not np.any(S):
        return NormEstimate(0.0, True, 0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(S.shape[1]) + 1j * rng.standard_normal(S.shape[1])
    x /= np.linalg.norm(x)
    sigma = np.linalg.norm(S @ x)
    for it in range(1, maxiter + 1):
        z = S.conj().T @ (S @ x)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return NormEstimate(0.0, True, it)
        x = z / nz
        new = np.linalg.norm(S @ x)
        if abs(new - sigma) <= rtol * new:
            return NormEstimate(float(new), True, it)
        sigma = new
    return NormEstimate(float(sigma), False, maxiter)


def operator_norm(A, grid: MomentumGrid | None = None, method: str = "dense-svd") -> float:
    """Operator norm sup ||A f|| / ||f|| in the weighted norm.

    ``A`` is a :class:`BlockOperator` or a raw N x N / 2N x 2N array in the
    Nystrom convention (then ``grid`` is required). ``dense-svd`` is exact up
    to rounding; ``power-iteration`` stops at relative change below 1e-10 or
    after 500 iterations and warns if it did not converge.
    """
    if isinstance(A, BlockOperator):
        grid, matrix = A.grid, A.matrix
    else:
        if grid is None:
            raise InvalidArgument("a grid is needed to weight a raw matrix")
        matrix = np.asarray(A)
    if matrix.shape[0] % grid.n or matrix.shape[0] != matrix.shape[1]:
        raise InvalidArgument(f"matrix shape {matrix.shape} does not fit a grid with n={grid.n}")
    S = symmetrized(matrix, grid)
    if method == "dense-svd":
        if not np.any(S):
            return 0.0
        return float(np.linalg.svd(S, compute_uv=False)[0])
    if method == "power-iteration":
        est = power_norm(S)
        if not est.converged:
            warnings.warn(f"power iteration unconverged after {est.iterations} iterations", RuntimeWarning)
        return est.value
    raise InvalidArgument(f"unknown norm method {method!r}")


def min_singular_value(matrix: np.ndarray, grid: MomentumGrid) -> float:
    return float(np.linalg.svd(symmetrized(matrix, grid), compute_uv=False)[-1])
