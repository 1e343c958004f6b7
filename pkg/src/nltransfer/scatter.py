"""Transfer matrix M = lim U(x+, x-) with certified truncation, and scattering amplitudes."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .grid import BlockOperator, InvalidArgument, MomentumGrid, min_singular_value, operator_norm
from .potential import PotentialModel
from .evolution import _core_stack, _sandwich, evolve, operator_zeta_sup, panel_mesh

SMIN_THRESHOLD = 1e-8


class IllPosedScattering(RuntimeError):
    """The M22 block is numerically singular, so the scattering problem is not well posed."""


# -- truncation ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Truncation:
    x_minus: float
    x_plus: float
    tail_estimate: float
    eps: float
    gamma: float | None = None
    delta: float | None = None
    a: float | None = None
    b: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def envelope_tail(model: PotentialModel, X: float) -> float:
    """int_{|x| > X} (1 + |x|) 2 pi beta (1 + |x|)^(-sigma) dx, both sides."""
    s = model.sigma
    return 4 * math.pi * model.beta * (1 + X) ** (2 - s) / (s - 2)


def transfer_constants(model: PotentialModel, a: float, b: float) -> tuple[float, float]:
    """gamma = 2 pi beta (a + b alpha) / ((sigma-2) alpha^(sigma-1)), delta = 2 pi beta / ((sigma-2) alpha^(sigma-2))."""
    s, al, be = model.sigma, model.alpha, model.beta
    gamma = 2 * math.pi * be * (a + b * al) / ((s - 2) * al ** (s - 1))
    delta = 2 * math.pi * be / ((s - 2) * al ** (s - 2))
    return gamma, delta


def operator_zeta_constants(grid: MomentumGrid) -> tuple[float, float]:
    """(a, b) valid for every unit state: ||zeta(x)|| <= sqrt(2)/min(varpi) for all x."""
    return operator_zeta_sup(grid), 0.0


def truncation_bounds(model: PotentialModel, eps: float, grid: MomentumGrid | None = None, a=None, b=None) -> Truncation:
    """Symmetric truncation X with envelope tail ``envelope_tail(X) < eps``.

    X = max(alpha, (4 pi beta / ((sigma - 2) eps))^(1/(sigma-2)) - 1). The
    constants gamma and delta are reported for the given (a, b), or for the
    operator-level constants of ``grid`` when only a grid is given.
    """
    if not model.sigma > 3:
        raise InvalidArgument(f"transfer matrix needs sigma > 3, model has sigma={model.sigma}")
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    if model.beta == 0:
        X = model.alpha
        tail = 0.0
    else:
        s = model.sigma
        X = max(model.alpha, (4 * math.pi * model.beta / ((s - 2) * eps)) ** (1 / (s - 2)) - 1)
        tail = envelope_tail(model, X)
    if a is None and grid is not None:
        a, b = operator_zeta_constants(grid)
    gamma = delta = None
    if a is not None:
        gamma, delta = transfer_constants(model, a, b)
    return Truncation(-X, X, tail, eps, gamma, delta, a, b)


# -- transfer matrix ----------------------------------------------------------------------


@dataclass(eq=False)
class TransferMatrix:
    """M = I + T on the grid; the identity is kept implicit."""

    grid: MomentumGrid
    T: BlockOperator
    x_minus: float
    x_plus: float
    tail_estimate: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def M(self) -> BlockOperator:
        return BlockOperator.identity(self.grid) + self.T

    def block(self, i: int, j: int) -> np.ndarray:
        """Block ij of T (1-based)."""
        return self.T.block(i, j)

    def theta_kernel(self, i: int, j: int) -> np.ndarray:
        """Kernel of block ij of T against the angular measure d(theta)."""
        return self.block(i, j) / self.grid.theta_weights[None, :]

    def block_norms(self) -> dict:
        out = {}
        for i in (1, 2):
            for j in (1, 2):
                n = self.grid.n
                full = np.zeros((2 * n, 2 * n), dtype=complex)
                full[(i - 1) * n : i * n, (j - 1) * n : j * n] = self.block(i, j)
                out[f"T{i}{j}"] = operator_norm(full, self.grid)
        out["T"] = operator_norm(self.T)
        return out


def _segments(x_minus: float, x_plus: float, alpha: float) -> list[tuple[float, float]]:
    if x_minus < -alpha and x_plus > alpha:
        return [(x_minus, -alpha), (-alpha, alpha), (alpha, x_plus)]
    return [(x_minus, x_plus)]


def transfer_between(
    model: PotentialModel,
    grid: MomentumGrid,
    x_minus: float,
    x_plus: float,
    *,
    scheme: str = "rk4",
    tol: float | None = 1e-9,
    tail_estimate: float = float("nan"),
    **evolve_kw,
) -> TransferMatrix:
    """U(x+, x-) composed from the segments (x-, -alpha), (-alpha, alpha), (alpha, x+)."""
    if not x_minus < x_plus:
        raise InvalidArgument(f"need x_minus < x_plus, got {x_minus}, {x_plus}")
    u = None
    diag = {"segments": [], "scheme": scheme, "tol": tol}
    for a, b in _segments(x_minus, x_plus, model.alpha):
        res = evolve(model, grid, a, b, scheme, tol, **evolve_kw)
        diag["segments"].append({"range": [a, b], "steps": res.steps, "converged": res.converged, "error_estimate": res.error_estimate})
        u = res.U if u is None else res.U @ u
    t = u - BlockOperator.identity(grid)
    diag["converged"] = all(s["converged"] for s in diag["segments"])
    return TransferMatrix(grid, t, float(x_minus), float(x_plus), tail_estimate, diag)


def assemble_transfer(model: PotentialModel, grid: MomentumGrid, eps: float = 1e-3, **kw) -> TransferMatrix:
    """Transfer matrix truncated where the envelope tail drops below ``eps``."""
    tr = truncation_bounds(model, eps, grid)
    tm = transfer_between(model, grid, tr.x_minus, tr.x_plus, tail_estimate=tr.tail_estimate, **kw)
    tm.diagnostics["truncation"] = tr.to_dict()
    return tm


def born_transfer(model: PotentialModel, grid: MomentumGrid, x_minus: float, x_plus: float, quad_order: int = 16, panel_length: float = 0.5) -> TransferMatrix:
    """First Dyson term only: T1 = -i int H(x) dx over (x-, x+)."""
    mesh = panel_mesh(x_minus, x_plus, quad_order, panel_length)
    xs, ws = mesh.flat_nodes, mesh.weights.ravel()
    acc = np.zeros((2 * grid.n, 2 * grid.n), dtype=complex)
    for start in range(0, xs.size, 256):
        cores = _core_stack(model, grid, xs[start : start + 256])
        for c, x, w in zip(cores, xs[start : start + 256], ws[start : start + 256]):
            acc += w * _sandwich(grid, c, x, x)
    return TransferMatrix(grid, BlockOperator(grid, -1j * acc), float(x_minus), float(x_plus), float("nan"), {"scheme": "born"})


def kernel_refinement_gap(coarse: TransferMatrix, fine: TransferMatrix) -> float:
    """sup |K_fine - K_coarse| over all blocks at the coarse nodes.

    K is the angular-measure kernel; the fine kernel is carried to the coarse
    nodes by Legendre interpolation in theta (both grids are Gauss-Legendre in theta).
    """
    gc, gf = coarse.grid, fine.grid
    if gc.rule != "gauss-legendre-theta" or gf.rule != "gauss-legendre-theta":
        raise InvalidArgument("kernel comparison needs theta-rule grids")
    tf = gf.theta * 2 / np.pi
    tc = gc.theta * 2 / np.pi
    wf = gf.theta_weights * 2 / np.pi
    deg = np.arange(gf.n)
    vf = np.polynomial.legendre.legvander(tf, gf.n - 1)
    analysis = (vf * wf[:, None]).T * ((2 * deg + 1) / 2)[:, None]  # coefficients = analysis @ values
    interp = np.polynomial.legendre.legvander(tc, gf.n - 1) @ analysis
    gap = 0.0
    for i in (1, 2):
        for j in (1, 2):
            kf = interp @ fine.theta_kernel(i, j) @ interp.T
            gap = max(gap, float(np.max(np.abs(kf - coarse.theta_kernel(i, j)))))
    return gap


# -- scattering --------------------------------------------------------------------------


@dataclass(eq=False)
class ScatteringResult:
    """Amplitude samples for one incidence angle.

    ``f_forward[j]`` is f(theta0, theta_j) for theta_j in (-pi/2, pi/2) and
    ``f_backward[j]`` is f(theta0, pi - theta_j); both are sampled at the
    grid momenta p_j = k sin(theta).
    """

    theta0: float
    theta0_snapped: float
    snap_distance: float
    p0: float
    node: int
    case: int
    B_minus: np.ndarray
    A_plus_smooth: np.ndarray
    B_minus_smooth: np.ndarray
    f_forward: np.ndarray
    f_backward: np.ndarray
    theta_forward: np.ndarray
    theta_backward: np.ndarray
    m22_smin: float
    m22_norm: float
    residual: float
    tail_estimate: float
    truncation: tuple

    @property
    def dcs_forward(self) -> np.ndarray:
        return np.abs(self.f_forward) ** 2

    @property
    def dcs_backward(self) -> np.ndarray:
        return np.abs(self.f_backward) ** 2

    def table(self) -> list[tuple[float, complex]]:
        """(theta, f) over both branches, theta increasing."""
        fwd = list(zip(self.theta_forward, self.f_forward))
        order = np.argsort(self.theta_backward)
        bwd = list(zip(self.theta_backward[order], self.f_backward[order]))
        return [(float(t), complex(f)) for t, f in fwd + bwd]

    def to_dict(self) -> dict:
        return {
            "theta0": self.theta0,
            "theta0_snapped": self.theta0_snapped,
            "snap_distance": self.snap_distance,
            "p0": self.p0,
            "node": self.node,
            "case": self.case,
            "m22_smin": self.m22_smin,
            "m22_norm": self.m22_norm,
            "residual": self.residual,
            "tail_estimate": self.tail_estimate,
            "truncation": list(self.truncation),
            "theta_forward": self.theta_forward.tolist(),
            "f_forward": [[z.real, z.imag] for z in self.f_forward.tolist()],
            "theta_backward": self.theta_backward.tolist(),
            "f_backward": [[z.real, z.imag] for z in self.f_backward.tolist()],
        }


def _snap(grid: MomentumGrid, theta0: float) -> tuple[int, int, float]:
    """Return (case, node, snapped angle) for an incidence angle."""
    t = float(theta0)
    if not np.isfinite(t):
        raise InvalidArgument("incidence angle must be finite")
    half = np.pi / 2
    if -half < t < half:
        j = int(np.argmin(np.abs(grid.theta - t)))
        return 1, j, float(grid.theta[j])
    if half < t < 3 * half:
        j = int(np.argmin(np.abs((np.pi - grid.theta) - t)))
        return 2, j, float(np.pi - grid.theta[j])
    raise InvalidArgument(f"incidence angle {t} outside (-pi/2, pi/2) and (pi/2, 3pi/2) (grazing or out of range)")


def _solve_refined(a: np.ndarray, rhs: np.ndarray, sweeps: int = 2) -> np.ndarray:
    lu = scipy.linalg.lu_factor(a)
    x = scipy.linalg.lu_solve(lu, rhs)
    for _ in range(sweeps):
        x = x + scipy.linalg.lu_solve(lu, rhs - a @ x)
    return x


def _scatter(transfer: TransferMatrix, theta0: float, threshold: float, want_case: int | None) -> ScatteringResult:
    grid = transfer.grid
    case, j0, snapped = _snap(grid, theta0)
    if want_case is not None and case != want_case:
        side = "(-pi/2, pi/2)" if want_case == 1 else "(pi/2, 3pi/2)"
        raise InvalidArgument(f"incidence angle {theta0} not in {side}")
    n = grid.n
    t11, t12, t21, t22 = (transfer.block(i, j) for i, j in ((1, 1), (1, 2), (2, 1), (2, 2)))
    m22 = np.eye(n) + t22
    m22_norm = operator_norm(np.block([[np.zeros((n, n)), np.zeros((n, n))], [np.zeros((n, n)), m22]]), grid)
    smin = min_singular_value(m22, grid)
    if not smin > threshold * m22_norm:
        raise IllPosedScattering(f"M22 smallest singular value {smin:.3e} below {threshold:.1e} * ||M22|| = {threshold * m22_norm:.3e}")
    amp = 2 * np.pi * grid.varpi[j0] / grid.weights[j0]  # 2 pi varpi(p0) delta_{p0}, applied to a kernel column

    if case == 1:
        rhs = -amp * t21[:, j0]
        b_smooth = _solve_refined(m22, rhs)
        b_minus = b_smooth
        a_smooth = amp * t11[:, j0] + t12 @ b_minus
        f_fwd = -1j / math.sqrt(2 * np.pi) * a_smooth
        f_bwd = -1j / math.sqrt(2 * np.pi) * b_minus
        resid_vec = m22 @ b_minus - rhs
    else:
        rhs = -amp * t22[:, j0]
        b_smooth = _solve_refined(m22, rhs)
        b_minus = b_smooth.copy()
        b_minus[j0] += amp
        a_smooth = amp * t12[:, j0] + t12 @ b_smooth
        f_fwd = 1j / math.sqrt(2 * np.pi) * a_smooth
        f_bwd = 1j / math.sqrt(2 * np.pi) * b_smooth
        resid_vec = m22 @ b_smooth - rhs
    rnorm = grid.norm(rhs)
    residual = grid.norm(resid_vec) / rnorm if rnorm > 0 else grid.norm(resid_vec)
    return ScatteringResult(
        theta0=float(theta0),
        theta0_snapped=snapped,
        snap_distance=abs(snapped - float(theta0)),
        p0=float(grid.p[j0]),
        node=j0,
        case=case,
        B_minus=b_minus,
        A_plus_smooth=a_smooth,
        B_minus_smooth=b_smooth,
        f_forward=f_fwd,
        f_backward=f_bwd,
        theta_forward=np.array(grid.theta, dtype=float),
        theta_backward=np.pi - np.array(grid.theta, dtype=float),
        m22_smin=smin,
        m22_norm=m22_norm,
        residual=residual,
        tail_estimate=transfer.tail_estimate,
        truncation=(transfer.x_minus, transfer.x_plus),
    )


def scatter_left(
    model: PotentialModel,
    grid: MomentumGrid,
    theta0: float,
    eps: float = 1e-3,
    *,
    transfer: TransferMatrix | None = None,
    threshold: float = SMIN_THRESHOLD,
    **kw,
) -> ScatteringResult:
    """Incidence from the left, theta0 in (-pi/2, pi/2).

    Solves M22 B- = -2 pi varpi(p0) M21 delta_{p0}; A+ minus its forward delta
    is 2 pi varpi(p0) T11 delta_{p0} + T12 B-.
    """
    transfer = transfer or assemble_transfer(model, grid, eps, **kw)
    return _scatter(transfer, theta0, threshold, 1)


def scatter_right(
    model: PotentialModel,
    grid: MomentumGrid,
    theta0: float,
    eps: float = 1e-3,
    *,
    transfer: TransferMatrix | None = None,
    threshold: float = SMIN_THRESHOLD,
    **kw,
) -> ScatteringResult:
    """Incidence from the right, theta0 in (pi/2, 3pi/2).

    Solves M22 B- = 2 pi varpi(p0) delta_{p0} by writing B- as the incident
    impulse plus a smooth part; A+ = T12 B-.
    """
    transfer = transfer or assemble_transfer(model, grid, eps, **kw)
    return _scatter(transfer, theta0, threshold, 2)


def scatter(transfer: TransferMatrix, theta0: float, threshold: float = SMIN_THRESHOLD) -> ScatteringResult:
    """Dispatch on the incidence side of ``theta0``."""
    return _scatter(transfer, theta0, threshold, None)


def born_amplitudes(transfer: TransferMatrix, theta0: float) -> tuple[np.ndarray, np.ndarray]:
    """(forward, backward) amplitudes to first order in T, i.e. with M22 replaced by I.

    Pair with :func:`born_transfer` for the single-Dyson-term amplitude.
    """
    grid = transfer.grid
    case, j0, _ = _snap(grid, theta0)
    amp = 2 * np.pi * grid.varpi[j0] / grid.weights[j0]
    c = 1 / math.sqrt(2 * np.pi)
    if case == 1:
        return -1j * c * amp * transfer.block(1, 1)[:, j0], 1j * c * amp * transfer.block(2, 1)[:, j0]
    return 1j * c * amp * transfer.block(1, 2)[:, j0], -1j * c * amp * transfer.block(2, 2)[:, j0]


CSV_COLUMNS = ("theta", "re_f", "im_f", "dcs")


def cross_section_rows(result: ScatteringResult) -> list[tuple[float, float, float, float]]:
    return [(t, f.real, f.imag, abs(f) ** 2) for t, f in result.table()]


def emit_cross_section(result: ScatteringResult, comments: dict | None = None) -> str:
    """CSV text with columns theta, re_f, im_f, dcs over both branches (2N rows).

    Floats use the shortest round-trip representation; ``comments`` become
    leading ``# key=value`` lines.
    """
    buf = io.StringIO()
    for key, val in (comments or {}).items():
        buf.write(f"# {key}={val}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in cross_section_rows(result):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()
