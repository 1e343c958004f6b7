"""Effective Hamiltonian H(x), its Dyson series and the evolution operator U(x, x0).

Conventions: E(x) = exp(i x varpi) is diagonal on the grid, W(x) = V(x) varpi^{-1}.
The Hamiltonian factors as

    H(x) = 1/2 [E*; -E] W(x) [E, E*]

(a 2N x N column, an N x N core and an N x 2N row), which is how it is applied
throughout; the dense 2N x 2N form is only built on request.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gammainc

from .grid import BlockOperator, InvalidArgument, MomentumGrid, StateVector, operator_norm
from .potential import NormProfile, PotentialModel, assemble_vhat, vhat_stack

SCHEMES = ("dyson", "product", "rk4")
MAX_ORDER = 40
STEPS_PER_UNIT = 256
MIN_STEPS_PER_UNIT = 4
MEMORY_BUDGET = 2 * 1024**3


class ResourceError(MemoryError):
    """A requested computation would exceed the configured memory budget."""


# -- Hamiltonian and its pieces --------------------------------------------------------


def _core_stack(model, grid, xs) -> np.ndarray:
    """W(x) = V(x) varpi^{-1} for each x; shape (len(xs), N, N)."""
    return vhat_stack(model, grid, xs) / grid.varpi[None, None, :]


def _apply_h(core: np.ndarray, e: np.ndarray, y: np.ndarray) -> np.ndarray:
    """H y for a single x; ``core`` is W(x), ``e`` = E(x), ``y`` is (2N, m)."""
    n = e.size
    z = core @ (e[:, None] * y[:n] + e.conj()[:, None] * y[n:])
    return 0.5 * np.concatenate([e.conj()[:, None] * z, -e[:, None] * z])


def _apply_h_batch(cores: np.ndarray, es: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """H(x_q) y_q for a batch; cores (Q, N, N), es (Q, N), ys (Q, 2N, m)."""
    n = es.shape[1]
    z = cores @ (es[:, :, None] * ys[:, :n] + es.conj()[:, :, None] * ys[:, n:])
    return 0.5 * np.concatenate([es.conj()[:, :, None] * z, -es[:, :, None] * z], axis=1)


def _sandwich(grid: MomentumGrid, core: np.ndarray, x_left: float, x_right: float) -> np.ndarray:
    """Dense 1/2 exp(-i x_l sigma3 varpi) (core (x) K) exp(i x_r sigma3 varpi)."""
    el, er = grid.phase(x_left), grid.phase(x_right)
    top = el.conj()[:, None] * core
    bot = -el[:, None] * core
    return 0.5 * np.block([[top * er[None, :], top * er.conj()[None, :]], [bot * er[None, :], bot * er.conj()[None, :]]])


def assemble_H(model: PotentialModel, grid: MomentumGrid, x: float) -> BlockOperator:
    """Dense H(x) = 1/2 exp(-i x sigma3 varpi) V(x) varpi^{-1} K exp(i x sigma3 varpi), K = [[1, 1], [-1, -1]]."""
    core = _core_stack(model, grid, [x])[0]
    return BlockOperator(grid, _sandwich(grid, core, x, x))


def assemble_B(model: PotentialModel, grid: MomentumGrid, xs) -> BlockOperator:
    """The operator B(x_n, ..., x_1) with ``xs = [x_1, ..., x_n]`` nondecreasing.

    n = 1: 1/2 exp(-i x1 sigma3 varpi) V(x1) K exp(i x1 sigma3 varpi) (= H(x1) varpi).
    n >= 2: 1/2 exp(-i x_n sigma3 varpi) V(x_n) s_{n-1} ... s_1 K exp(i x_1 sigma3 varpi),
    with s_m = i varpi^{-1} sin((x_{m+1} - x_m) varpi) V(x_m).
    """
    xs = [float(x) for x in np.atleast_1d(xs)]
    if not xs:
        raise InvalidArgument("assemble_B needs at least one position")
    if any(b < a for a, b in zip(xs, xs[1:])):
        raise InvalidArgument(f"positions must be nondecreasing, got {xs}")
    vs = vhat_stack(model, grid, xs)
    core = vs[-1]
    if len(xs) > 1:
        prod = np.eye(grid.n, dtype=complex)
        for m in range(len(xs) - 2, -1, -1):
            s = 1j * (np.sin((xs[m + 1] - xs[m]) * grid.varpi) / grid.varpi)[:, None] * vs[m]
            prod = prod @ s
        core = core @ prod
    return BlockOperator(grid, _sandwich(grid, core, xs[-1], xs[0]))


def assemble_L(grid: MomentumGrid, x: float) -> BlockOperator:
    """L(x) = [[0, 0], [exp(2 i x varpi), 1]]."""
    n = grid.n
    z = np.zeros((n, n), dtype=complex)
    return BlockOperator.from_blocks(grid, z, z, np.diag(grid.phase(2 * x)), np.eye(n))


def inverse_varpi_block(grid: MomentumGrid) -> BlockOperator:
    d = np.diag(1.0 / grid.varpi).astype(complex)
    z = np.zeros_like(d)
    return BlockOperator.from_blocks(grid, d, z, z, d)


# -- domain decomposition --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DomainSplit:
    """Phi = [0; varpi zeta(x)] + exp(-i x sigma3 varpi) [xi(x); -xi(x)]."""

    grid: MomentumGrid
    x: float
    zeta: np.ndarray
    xi: np.ndarray
    zeta0: np.ndarray
    xi0: np.ndarray

    def reconstruct(self) -> StateVector:
        e = self.grid.phase(self.x)
        return StateVector(self.grid, e.conj() * self.xi, self.grid.varpi * self.zeta - e * self.xi)

    @property
    def a(self) -> float:
        """Offset of the linear bound ||zeta(x)|| <= a + b |x|."""
        return self.grid.norm(self.zeta0)

    @property
    def b(self) -> float:
        return 2 * self.grid.norm(self.xi0)


def _as_state(grid: MomentumGrid, phi) -> StateVector:
    if isinstance(phi, StateVector):
        return phi
    return StateVector.from_stacked(grid, np.asarray(phi, dtype=complex))


def decompose_domain(phi: StateVector, x: float) -> DomainSplit:
    """xi(x) = E phi_+, zeta(x) = varpi^{-1} (phi_- + E^2 phi_+)."""
    g = phi.grid
    e = g.phase(x)
    xi = e * phi.plus
    zeta = (phi.minus + e * e * phi.plus) / g.varpi
    return DomainSplit(g, float(x), zeta, xi, (phi.minus + phi.plus) / g.varpi, phi.plus.copy())


def zeta_norms(grid: MomentumGrid, y0: np.ndarray, xs) -> np.ndarray:
    """||zeta(x)|| for every x (rows) and every column of ``y0`` (2N x m)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    n = grid.n
    plus, minus = y0[:n], y0[n:]
    e2 = np.exp(2j * xs[:, None] * grid.varpi[None, :])
    zeta = (minus[None, :, :] + e2[:, :, None] * plus[None, :, :]) / grid.varpi[None, :, None]
    return np.sqrt(np.einsum("j,qjm->qm", grid.weights, np.abs(zeta) ** 2))


# -- x-quadrature: Gauss-Legendre panels ---------------------------------------------


def _cumulative_matrix(order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes/weights on [-1, 1] and Q with (Q f)_i = int_{-1}^{t_i} of the interpolant of f."""
    t, w = np.polynomial.legendre.leggauss(order)
    vand = np.polynomial.legendre.legvander(t, order - 1)
    coef = np.linalg.inv(vand)
    q = np.empty((order, order))
    for j in range(order):
        integ = np.polynomial.legendre.legint(coef[:, j], lbnd=-1)
        q[:, j] = np.polynomial.legendre.legval(t, integ)
    return t, w, q


@dataclass(frozen=True, eq=False)
class PanelMesh:
    edges: np.ndarray
    nodes: np.ndarray  # (P, m)
    weights: np.ndarray  # (P, m)
    cumulative: np.ndarray  # (P, m, m), per panel, already scaled

    @property
    def flat_nodes(self) -> np.ndarray:
        return self.nodes.ravel()


def panel_mesh(x0: float, x1: float, order: int = 16, panel_length: float = 0.5) -> PanelMesh:
    if x1 <= x0:
        raise InvalidArgument("panel mesh needs x1 > x0")
    npan = max(1, int(math.ceil((x1 - x0) / panel_length - 1e-12)))
    edges = np.linspace(x0, x1, npan + 1)
    t, w, q = _cumulative_matrix(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = mid[:, None] + half[:, None] * t[None, :]
    return PanelMesh(edges, nodes, half[:, None] * w[None, :], half[:, None, None] * q[None, :, :])


# -- results -----------------------------------------------------------------------------


@dataclass
class EvolutionResult:
    """Output of :func:`evolve`.

    ``U`` is the evolution operator when no initial state was given, otherwise
    ``state`` holds U(x, x0) Phi0. ``term_norms[n]`` is ||Phi_n|| (operator norm
    of the order-n term for matrix runs). ``F_plus`` and ``G`` are the
    convergence-certificate integrals over (x0, x).
    """

    scheme: str
    x_range: tuple[float, float]
    grid: MomentumGrid | None = None
    U: BlockOperator | None = None
    state: StateVector | None = None
    phi0: StateVector | None = None
    term_norms: list = field(default_factory=list)
    F_plus: float | None = None
    G: float | None = None
    tail_bound: float | None = None
    converged: bool = True
    steps: int = 0
    error_estimate: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def is_matrix(self) -> bool:
        return self.U is not None


# -- schemes ------------------------------------------------------------------------------


def _initial(grid: MomentumGrid, phi0) -> tuple[np.ndarray, StateVector | None]:
    if phi0 is None:
        return np.eye(2 * grid.n, dtype=complex), None
    state = _as_state(grid, phi0)
    return state.stacked()[:, None].copy(), state


def _column_norms(grid: MomentumGrid, y: np.ndarray) -> np.ndarray:
    w2 = np.tile(grid.weights, 2)
    return np.sqrt(np.einsum("i,im->m", w2, np.abs(y) ** 2))


def _term_norm(grid: MomentumGrid, y: np.ndarray, matrix: bool) -> float:
    if matrix:
        return operator_norm(y, grid)
    return float(_column_norms(grid, y)[0])


def operator_zeta_sup(grid: MomentumGrid) -> float:
    """sup of ||zeta(x)|| over unit states: ||varpi^{-1} [E^2, 1]|| = sqrt(2) / min(varpi), for every x."""
    return math.sqrt(2.0) / float(np.min(grid.varpi))


def _zfun(grid: MomentumGrid, y0: np.ndarray, matrix: bool) -> Callable:
    if matrix:
        zmax = operator_zeta_sup(grid)
        return lambda xs: np.full(np.shape(xs), zmax)
    return lambda xs: zeta_norms(grid, y0, xs)[:, 0]


def _dyson(model, grid, x0, x, y0, tol, max_order, order, panel_length, profile, matrix):
    mesh = panel_mesh(x0, x, order, panel_length)
    P, m = mesh.nodes.shape
    nbytes = P * m * (grid.n**2 + 3 * 2 * grid.n * y0.shape[1]) * 16
    if nbytes > MEMORY_BUDGET:
        raise ResourceError(f"Dyson recursion needs ~{nbytes / 2**30:.1f} GiB")
    xs = mesh.flat_nodes
    cores = _core_stack(model, grid, xs)
    es = np.exp(1j * xs[:, None] * grid.varpi[None, :])

    z = _zfun(grid, y0, matrix)
    F = profile.F_plus(x, x0, z)
    G = profile.G(x, x0)
    scale = max(float(np.max(_column_norms(grid, y0))), np.finfo(float).tiny)

    total = y0.copy()
    norms = [_term_norm(grid, y0, matrix)]
    prev = np.broadcast_to(y0, (xs.size,) + y0.shape)
    converged = False
    tail = F * math.exp(G)
    for n in range(1, max_order + 1):
        f = _apply_h_batch(cores, es, prev).reshape(P, m, *y0.shape)
        panel_tot = np.einsum("pi,pi...->p...", mesh.weights, f)
        carry = np.cumsum(panel_tot, axis=0) - panel_tot
        cur = carry[:, None] + np.einsum("pij,pj...->pi...", mesh.cumulative, f)
        term = (-1j) ** n * panel_tot.sum(axis=0)
        total = total + term
        norms.append(_term_norm(grid, term, matrix))
        prev = cur.reshape(xs.size, *y0.shape)
        tail = F * math.exp(G) * float(gammainc(n, G)) if G > 0 else 0.0
        if tail <= tol * scale or not np.any(term):
            converged = True
            break
    return total, norms, F, G, tail, converged, xs.size


def _step_mesh(model, grid, x0, x, steps_per_unit, order=2) -> np.ndarray:
    """Step edges: full density where ||V|| is near its peak, sparser in the tails.

    A method of order p has local error ~ dt^p ||V|| per unit length, so the
    density on each unit panel is scaled by (||V||_panel / ||V||_peak)^(1/p).
    """
    length = x - x0
    npan = max(1, int(math.ceil(length - 1e-12)))
    edges = np.linspace(x0, x, npan + 1)
    probe = np.linspace(0, 1, 5)
    pts = edges[:-1, None] + np.diff(edges)[:, None] * probe[None, :]
    s = grid.sqrt_weights
    stack = vhat_stack(model, grid, pts.ravel())
    hs = np.linalg.norm(s[None, :, None] * stack / s[None, None, :], axis=(1, 2)).reshape(pts.shape).max(axis=1)
    peak = hs.max()
    out = [np.array([x0])]
    for i in range(npan):
        L = edges[i + 1] - edges[i]
        if peak == 0.0 or hs[i] == 0.0:
            count = 1
        else:
            count = max(
                int(math.ceil(MIN_STEPS_PER_UNIT * L)),
                int(math.ceil(steps_per_unit * L * (hs[i] / peak) ** (1.0 / order))),
            )
        out.append(np.linspace(edges[i], edges[i + 1], count + 1)[1:])
    return np.concatenate(out)


def _product(model, grid, edges, y0, chunk=512):
    y = y0.copy()
    mids = 0.5 * (edges[1:] + edges[:-1])
    dts = np.diff(edges)
    for start in range(0, mids.size, chunk):
        xm = mids[start : start + chunk]
        cores = _core_stack(model, grid, xm)
        es = np.exp(1j * xm[:, None] * grid.varpi[None, :])
        for c, e, dt in zip(cores, es, dts[start : start + chunk]):
            y = y - 1j * dt * _apply_h(c, e, y)
    return y


def _rk4(model, grid, edges, y0, chunk=512):
    y = y0.copy()
    for start in range(0, edges.size - 1, chunk):
        ed = edges[start : start + chunk + 1]
        h = np.diff(ed)
        pts = np.empty(2 * h.size + 1)
        pts[0::2] = ed
        pts[1::2] = ed[:-1] + 0.5 * h
        cores = _core_stack(model, grid, pts)
        es = np.exp(1j * pts[:, None] * grid.varpi[None, :])
        for i, dt in enumerate(h):
            a, b, c = 2 * i, 2 * i + 1, 2 * i + 2
            k1 = -1j * _apply_h(cores[a], es[a], y)
            k2 = -1j * _apply_h(cores[b], es[b], y + 0.5 * dt * k1)
            k3 = -1j * _apply_h(cores[b], es[b], y + 0.5 * dt * k2)
            k4 = -1j * _apply_h(cores[c], es[c], y + dt * k3)
            y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


SCHEME_ORDER = {"product": 2, "rk4": 4}


def evolve(
    model: PotentialModel,
    grid: MomentumGrid,
    x0: float,
    x: float,
    scheme: str = "product",
    tol: float | None = None,
    phi0=None,
    *,
    steps_per_unit: int = STEPS_PER_UNIT,
    max_steps: int = 2**20,
    max_order: int = MAX_ORDER,
    quad_order: int = 16,
    panel_length: float = 0.5,
    profile: NormProfile | None = None,
) -> EvolutionResult:
    """Evolution operator U(x, x0) solving i dU/dx = H(x) U, U(x0, x0) = I.

    ``dyson`` sums the Dyson series (iterated integrals by a Volterra recursion
    on Gauss-Legendre panels) until the remaining-terms bound
    F_+ sum_{m > n} G^{m-1}/(m-1)! drops below ``tol`` (default 1e-9), relative
    to ||Phi0||. ``product`` multiplies the exact step exponentials
    I - i dt H(x_mid) (exact because H(x)^2 = 0). ``rk4`` is classical
    Runge-Kutta. For ``product``/``rk4`` a ``tol`` turns on step doubling until
    the Richardson error estimate is below it.

    With ``phi0`` the state U(x, x0) Phi0 is returned instead of the operator.
    """
    if scheme not in SCHEMES:
        raise InvalidArgument(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not (np.isfinite(x0) and np.isfinite(x)):
        raise InvalidArgument("evolution endpoints must be finite")
    if x < x0:
        raise InvalidArgument(f"evolution needs x0 <= x, got x0={x0}, x={x}")
    matrix = phi0 is None
    y0, state0 = _initial(grid, phi0)
    result = EvolutionResult(scheme=scheme, x_range=(float(x0), float(x)), grid=grid, phi0=state0)

    if x == x0:
        y = y0
        result.term_norms = [_term_norm(grid, y0, matrix)]
        result.F_plus, result.G, result.tail_bound = 0.0, 0.0, 0.0
    elif scheme == "dyson":
        profile = profile or NormProfile(model, grid)
        y, norms, F, G, tail, conv, nodes = _dyson(
            model, grid, x0, x, y0, 1e-9 if tol is None else tol, max_order, quad_order, panel_length, profile, matrix
        )
        result.term_norms, result.F_plus, result.G, result.tail_bound = norms, F, G, tail
        result.converged = conv
        result.steps = nodes
        result.diagnostics = {"orders": len(norms) - 1, "quad_nodes": nodes}
    else:
        stepper = _product if scheme == "product" else _rk4
        p = SCHEME_ORDER[scheme]
        density = steps_per_unit
        edges = _step_mesh(model, grid, x0, x, density, p)
        y = stepper(model, grid, edges, y0)
        if tol is not None:
            result.converged = False
            while True:
                if 2 * (edges.size - 1) > max_steps:
                    break
                density *= 2
                edges = _step_mesh(model, grid, x0, x, density, p)
                fine = stepper(model, grid, edges, y0)
                err = _term_norm(grid, fine - y, matrix) / (2**p - 1)
                y = fine
                result.error_estimate = err
                if err <= tol * max(_term_norm(grid, y0, matrix), 1e-300):
                    result.converged = True
                    break
        result.steps = edges.size - 1
        result.diagnostics = {"steps_per_unit": density, "steps": edges.size - 1}

    if matrix:
        result.U = BlockOperator(grid, y)
    else:
        result.state = StateVector.from_stacked(grid, y[:, 0])
    return result


def dyson_term(
    model: PotentialModel,
    grid: MomentumGrid,
    n: int,
    x0: float,
    x: float,
    phi0,
    quad_order: int = 16,
    panel_length: float = 0.5,
) -> tuple[StateVector, float]:
    """Phi_n(x, x0) = (-i)^n int_{x0 <= x_1 <= ... <= x_n <= x} H(x_n) ... H(x_1) Phi0.

    Computed by the recursion I_m(x') = int_{x0}^{x'} H(s) I_{m-1}(s) ds on
    Gauss-Legendre panels with ``quad_order`` nodes each.
    """
    if n < 1:
        raise InvalidArgument(f"order must be >= 1, got {n}")
    if x < x0:
        raise InvalidArgument(f"need x0 <= x, got x0={x0}, x={x}")
    state = _as_state(grid, phi0)
    if x == x0:
        return StateVector.from_stacked(grid, np.zeros(2 * grid.n, dtype=complex)), 0.0
    mesh = panel_mesh(x0, x, quad_order, panel_length)
    P, m = mesh.nodes.shape
    nbytes = P * m * (grid.n**2 + 6 * grid.n) * 16
    if nbytes > MEMORY_BUDGET or n > 10_000:
        raise ResourceError(f"order {n} on {P * m} nodes exceeds the budget")
    xs = mesh.flat_nodes
    cores = _core_stack(model, grid, xs)
    es = np.exp(1j * xs[:, None] * grid.varpi[None, :])
    y0 = state.stacked()[:, None]
    prev = np.broadcast_to(y0, (xs.size,) + y0.shape)
    for _ in range(n):
        f = _apply_h_batch(cores, es, prev).reshape(P, m, *y0.shape)
        panel_tot = np.einsum("pi,pi...->p...", mesh.weights, f)
        carry = np.cumsum(panel_tot, axis=0) - panel_tot
        prev = (carry[:, None] + np.einsum("pij,pj...->pi...", mesh.cumulative, f)).reshape(xs.size, *y0.shape)
        last = panel_tot.sum(axis=0)
    out = StateVector.from_stacked(grid, ((-1j) ** n * last)[:, 0])
    return out, out.norm()


def composition_check(
    model: PotentialModel,
    grid: MomentumGrid,
    x1: float,
    x2: float,
    x3: float,
    scheme: str = "dyson",
    tol: float = 1e-9,
    **kw,
) -> float:
    """||U(x3, x2) U(x2, x1) - U(x3, x1)||_0 / ||U(x3, x1)||_0."""
    if not x1 <= x2 <= x3:
        raise InvalidArgument(f"need x1 <= x2 <= x3, got {x1}, {x2}, {x3}")
    profile = kw.pop("profile", None) or (NormProfile(model, grid) if scheme == "dyson" else None)
    u21 = evolve(model, grid, x1, x2, scheme, tol, profile=profile, **kw).U
    u32 = evolve(model, grid, x2, x3, scheme, tol, profile=profile, **kw).U
    u31 = evolve(model, grid, x1, x3, scheme, tol, profile=profile, **kw).U
    return operator_norm(u32 @ u21 - u31) / operator_norm(u31)


# -- independent oracle: the second-order equation in L^2(-k, k) --------------------------


def state_to_wave(grid: MomentumGrid, phi: np.ndarray, x: float) -> tuple[np.ndarray, np.ndarray]:
    """Invert Psi = pi [E*(varpi psi - i psi'); E(varpi psi + i psi')] at x.

    psi = varpi^{-1} (E Psi_+ + E* Psi_-) / (2 pi),
    psi' = i (E Psi_+ - E* Psi_-) / (2 pi).
    """
    n = grid.n
    e = grid.phase(x)[:, None]
    a = e * phi[:n]
    b = e.conj() * phi[n:]
    psi = (a + b) / (2 * np.pi * grid.varpi[:, None])
    dpsi = 1j * (a - b) / (2 * np.pi)
    return psi, dpsi


def wave_to_state(grid: MomentumGrid, psi: np.ndarray, dpsi: np.ndarray, x: float) -> np.ndarray:
    e = grid.phase(x)[:, None]
    w = grid.varpi[:, None]
    return np.pi * np.concatenate([e.conj() * (w * psi - 1j * dpsi), e * (w * psi + 1j * dpsi)])


class OracleFailure(RuntimeError):
    pass


def schrodinger_oracle(
    model: PotentialModel,
    grid: MomentumGrid,
    x0: float,
    x: float,
    phi0,
    rtol: float = 1e-12,
    atol_scale: float = 1e-14,
) -> StateVector:
    """Propagate Phi0 by integrating [-d^2/dx^2 + V(x)] psi = varpi^2 psi directly.

    Phi0 is converted to (psi, psi') at x0, the second-order system is solved
    with an adaptive 8th-order Runge-Kutta method, and the result is mapped
    back at x. Independent of the H(x) machinery; used to check ``evolve``.
    ``phi0`` may be a StateVector, a 2N vector or a 2N x m array of columns.
    """
    if x < x0:
        raise InvalidArgument(f"need x0 <= x, got x0={x0}, x={x}")
    single = isinstance(phi0, StateVector) or np.ndim(phi0) == 1
    y0 = _as_state(grid, phi0).stacked()[:, None] if single else np.asarray(phi0, dtype=complex)
    if x == x0:
        out = y0.copy()
    else:
        n = grid.n
        psi, dpsi = state_to_wave(grid, y0, x0)
        m = y0.shape[1]
        w2 = grid.varpi**2

        def rhs(t, y):
            y = y.reshape(2, n, m)
            V = vhat_stack(model, grid, [t])[0]
            return np.concatenate([y[1], V @ y[0] - w2[:, None] * y[0]]).ravel()

        start = np.concatenate([psi, dpsi]).ravel()
        atol = atol_scale * max(float(np.max(np.abs(start))), 1e-300)
        sol = solve_ivp(rhs, (x0, x), start, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise OracleFailure(f"ODE integration failed: {sol.message}")
        yend = sol.y[:, -1].reshape(2, n, m)
        out = wave_to_state(grid, yend[0], yend[1], x)
    if single:
        return StateVector.from_stacked(grid, out[:, 0])
    return out
