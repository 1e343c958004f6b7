"""Potential families and the Hilbert-Schmidt operators they induce on the grid.

Potentials are given through their partial Fourier transform in y,
``vtilde(x, p) = int dy exp(-i p y) v(x, y)``, in closed form. For every x the
operator ``(V(x) xi)(p) = (1/2pi) int_{-k}^{k} dq vtilde(x, p - q) xi(q)`` is
discretized as ``V[i, j] = vtilde(x, p_i - p_j) w_j / (2 pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, NamedTuple

import numpy as np

from .certificate import BoundCertificate
from .grid import InvalidArgument, MomentumGrid, operator_norm, symmetrized

FAMILIES = ("gauss-gauss", "gauss-box", "powerlaw-gauss", "one-sided")

SQRT_PI = math.sqrt(math.pi)
BOX_SERIES_CUTOFF = 1e-4


class ModelEvaluationError(RuntimeError):
    """vtilde returned a non-finite value."""


# -- closed-form transforms ---------------------------------------------------------


def _gauss_gauss(x, p, v0):
    return v0 * SQRT_PI * np.exp(-np.square(x)) * np.exp(-0.25 * np.square(p))


def _gauss_box(x, p, v0, a):
    p = np.asarray(p, dtype=float)
    ap = a * p
    small = np.abs(ap) < BOX_SERIES_CUTOFF
    safe = np.where(small, 1.0, p)
    sinc = np.where(small, 2 * a * (1 - ap * ap / 6), 2 * np.sin(ap) / safe)
    return v0 * np.exp(-np.square(x)) * sinc


def _powerlaw_gauss(x, p, v0, decay):
    return v0 * SQRT_PI * (1 + np.square(x)) ** (-0.5 * decay) * np.exp(-0.25 * np.square(p))


def _one_sided(x, p, v0):
    p = np.asarray(p, dtype=float)
    pos = np.maximum(p, 0.0)
    return v0 * np.exp(-np.square(x)) * np.where(p > 0, pos * np.exp(-pos), 0.0)


# sup_y |v(x, y)| for each family
def _gauss_profile(x, scale):
    return scale * np.exp(-np.square(x))


def _powerlaw_profile(x, scale, decay):
    return scale * (1 + np.square(x)) ** (-0.5 * decay)


@dataclass(frozen=True)
class PotentialModel:
    """A potential in closed form plus its declared envelope constants.

    ``alpha``, ``beta``, ``sigma`` are the constants of the power-law envelope
    ``|v(x, y)| <= beta / (1 + |x|)^sigma`` for ``|x| >= alpha``. They are
    declared, and verified separately; nothing here infers them.
    """

    name: str
    vtilde: Callable
    alpha: float
    beta: float
    sigma: float
    profile_sup: Callable = field(repr=False)
    kernel_sup: Callable = field(repr=False)
    params: dict = field(default_factory=dict)

    @property
    def transfer_ready(self) -> bool:
        return self.sigma > 3

    def kernel_bound(self, k: float) -> float:
        """mu >= sup_{|p| <= 2k} |vtilde(x, p)| over all x."""
        return float(self.kernel_sup(k))

    def envelope(self, x) -> np.ndarray:
        """Operator-norm envelope 2 pi beta / (1 + |x|)^sigma."""
        return 2 * np.pi * self.beta / (1 + np.abs(x)) ** self.sigma


def gaussian_envelope_beta(scale: float, alpha: float, sigma: float) -> float:
    """Smallest beta with scale*exp(-x^2) <= beta/(1+|x|)^sigma on |x| >= alpha.

    (1+x)^sigma exp(-x^2) peaks where 2x(1+x) = sigma.
    """
    x_star = max(alpha, 0.5 * (math.sqrt(1 + 2 * sigma) - 1))
    return scale * (1 + x_star) ** sigma * math.exp(-x_star * x_star)


def powerlaw_envelope_beta(scale: float, decay: float, alpha: float, sigma: float) -> float:
    """Smallest beta with scale*(1+x^2)^(-decay/2) <= beta/(1+|x|)^sigma on |x| >= alpha."""
    if sigma > decay:
        raise InvalidArgument(f"declared sigma={sigma} exceeds the decay exponent {decay}; no finite beta")
    if sigma == decay:
        x_star = 1.0
    else:
        d = decay - sigma
        x_star = (-decay + math.sqrt(decay * decay + 4 * d * sigma)) / (2 * d)
    x_star = max(alpha, x_star)
    return scale * (1 + x_star) ** sigma * (1 + x_star * x_star) ** (-0.5 * decay)


def builtin_model(
    family: str,
    v0: complex = 1.0,
    *,
    a: float = 1.0,
    decay: float = 4.0,
    alpha: float = 1.0,
    sigma: float | None = None,
    beta: float | None = None,
    transfer_ready: bool = True,
) -> PotentialModel:
    """Construct one of the built-in potential families.

    ``gauss-gauss``    v = v0 exp(-x^2 - y^2)
    ``gauss-box``      v = v0 exp(-x^2) 1{|y| < a}
    ``powerlaw-gauss`` v = v0 (1 + x^2)^(-decay/2) exp(-y^2)
    ``one-sided``      vtilde = v0 exp(-x^2) p exp(-p) 1{p > 0}

    ``sigma`` defaults to ``decay`` for the power-law family and to 4 otherwise.
    ``beta`` defaults to the smallest admissible value for the given
    ``(alpha, sigma)``.
    """
    if family not in FAMILIES:
        raise InvalidArgument(f"unknown potential family {family!r}; expected one of {FAMILIES}")
    if alpha <= 0:
        raise InvalidArgument(f"alpha must be positive, got {alpha!r}")
    if sigma is None:
        sigma = decay if family == "powerlaw-gauss" else 4.0
    if sigma <= 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma!r}")
    if transfer_ready and sigma <= 3:
        raise InvalidArgument(f"sigma={sigma} <= 3: not admissible for a transfer-matrix model")
    amp = abs(v0)

    if family == "gauss-gauss":
        vt = partial(_gauss_gauss, v0=v0)
        scale = amp
        kernel_sup = lambda k, amp=amp: amp * SQRT_PI  # noqa: E731
    elif family == "gauss-box":
        if a <= 0:
            raise InvalidArgument(f"box half-width must be positive, got {a!r}")
        vt = partial(_gauss_box, v0=v0, a=a)
        scale = amp
        kernel_sup = lambda k, amp=amp, a=a: 2 * a * amp  # noqa: E731
    elif family == "powerlaw-gauss":
        if decay <= 0:
            raise InvalidArgument(f"decay exponent must be positive, got {decay!r}")
        vt = partial(_powerlaw_gauss, v0=v0, decay=decay)
        scale = amp
        kernel_sup = lambda k, amp=amp: amp * SQRT_PI  # noqa: E731
    else:
        vt = partial(_one_sided, v0=v0)
        # y-profile is (2 pi)^-1 (1 - i y)^-2, largest at y = 0
        scale = amp / (2 * math.pi)
        kernel_sup = lambda k, amp=amp: amp * (math.exp(-1.0) if 2 * k >= 1 else 2 * k * math.exp(-2 * k))  # noqa: E731

    if family == "powerlaw-gauss":
        profile = partial(_powerlaw_profile, scale=scale, decay=decay)
        if beta is None:
            beta = powerlaw_envelope_beta(scale, decay, alpha, sigma)
    else:
        profile = partial(_gauss_profile, scale=scale)
        if beta is None:
            beta = gaussian_envelope_beta(scale, alpha, sigma)
    if beta < 0:
        raise InvalidArgument(f"beta must be nonnegative, got {beta!r}")

    params = {"family": family, "v0": v0, "alpha": alpha, "beta": beta, "sigma": sigma}
    if family == "gauss-box":
        params["a"] = a
    if family == "powerlaw-gauss":
        params["decay"] = decay
    return PotentialModel(
        name=family,
        vtilde=vt,
        alpha=float(alpha),
        beta=float(beta),
        sigma=float(sigma),
        profile_sup=profile,
        kernel_sup=kernel_sup,
        params=params,
    )


# -- discretized operator -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VhatMatrix:
    grid: MomentumGrid
    x: float
    entries: np.ndarray

    def norm(self, method: str = "dense-svd") -> float:
        return operator_norm(self.entries, self.grid, method=method)

    def hs_norm(self) -> float:
        """Hilbert-Schmidt norm of the underlying kernel."""
        return float(np.linalg.norm(symmetrized(self.entries, self.grid)))


def _difference_matrix(grid: MomentumGrid) -> np.ndarray:
    return grid.p[:, None] - grid.p[None, :]


def vhat_stack(model: PotentialModel, grid: MomentumGrid, xs) -> np.ndarray:
    """Entries of V(x) for every x in ``xs``; shape (len(xs), N, N)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    dp = _difference_matrix(grid)
    vals = np.asarray(model.vtilde(xs[:, None, None], dp[None, :, :]), dtype=complex)
    vals = np.broadcast_to(vals, (xs.size,) + dp.shape)
    if not np.all(np.isfinite(vals)):
        m, i, j = np.argwhere(~np.isfinite(vals))[0]
        raise ModelEvaluationError(
            f"{model.name}: non-finite vtilde at x={xs[m]!r}, p={dp[i, j]!r}"
        )
    return vals * (grid.weights / (2 * np.pi))[None, None, :]


def assemble_vhat(model: PotentialModel, grid: MomentumGrid, x: float) -> VhatMatrix:
    return VhatMatrix(grid, float(x), vhat_stack(model, grid, [x])[0])


def vhat_norms(model: PotentialModel, grid: MomentumGrid, xs, chunk: int = 256) -> np.ndarray:
    """||V(x)||_0 for each x (dense SVD of the symmetrized matrices)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    out = np.empty(xs.size)
    s = grid.sqrt_weights
    for start in range(0, xs.size, chunk):
        stack = vhat_stack(model, grid, xs[start : start + chunk])
        sym = s[None, :, None] * stack / s[None, None, :]
        out[start : start + chunk] = np.linalg.svd(sym, compute_uv=False)[:, 0]
    return out


class Spectrum(NamedTuple):
    eigenvalues: np.ndarray
    spectral_radius: float
    norm: float
    normal: bool
    consistent: bool
    eig_failed: bool


def vhat_spectrum(V: VhatMatrix, rtol: float = 1e-6) -> Spectrum:
    """Eigenvalues of V (via the symmetrized matrix) and its operator norm.

    For a normal matrix the norm equals the largest |eigenvalue|;
    ``consistent`` records whether that holds to ``rtol``. If the eigen-solver
    fails the norm still comes from the SVD.
    """
    S = symmetrized(V.entries, V.grid)
    norm = float(np.linalg.svd(S, compute_uv=False)[0]) if np.any(S) else 0.0
    try:
        eig = np.linalg.eigvals(S)
        failed = not np.all(np.isfinite(eig))
    except np.linalg.LinAlgError:
        eig, failed = np.full(S.shape[0], np.nan + 0j), True
    radius = float(np.max(np.abs(eig))) if not failed else float("nan")
    comm = S @ S.conj().T - S.conj().T @ S
    normal = bool(np.linalg.norm(comm) <= 1e-10 * max(norm * norm, np.finfo(float).tiny))
    consistent = (not failed) and abs(radius - norm) <= rtol * max(norm, np.finfo(float).tiny)
    return Spectrum(eig, radius, norm, normal, bool(consistent) or norm == 0.0, failed)


# -- envelope and continuity checks ---------------------------------------------------


def envelope_check(model: PotentialModel, grid: MomentumGrid, x_samples, name: str = "envelope") -> BoundCertificate:
    """Check ||V(x)||_0 <= 2 pi beta / (1 + |x|)^sigma at every sample |x| >= alpha.

    Failures are recorded in the certificate, never raised.
    """
    xs = np.asarray(x_samples, dtype=float)
    if np.any(np.abs(xs) < model.alpha):
        raise InvalidArgument(f"envelope samples must satisfy |x| >= alpha={model.alpha}")
    lhs = vhat_norms(model, grid, xs)
    rhs = model.envelope(xs)
    return BoundCertificate(
        name,
        lhs,
        rhs,
        inputs={"model": model.params, "k": grid.k, "n": grid.n, "x": xs},
        provenance="||V(x)||_0 <= 2 pi beta/(1+|x|)^sigma for |x| >= alpha",
        values={"alpha": model.alpha, "beta": model.beta, "sigma": model.sigma},
    )


class ContinuityTable(NamedTuple):
    dx: np.ndarray
    diff_norm: np.ndarray
    bound: np.ndarray
    monotone: bool


def continuity_probe(model: PotentialModel, grid: MomentumGrid, x: float, dx_sequence, noise: float = 1e-13) -> ContinuityTable:
    """Tabulate ||V(x+dx) - V(x)||_0 against dx.

    ``bound`` is (k/pi) sup_p |vtilde(x+dx, p) - vtilde(x, p)|, the sup taken
    over the grid differences and a dense sample of (-2k, 2k). ``monotone``
    reports whether the norms decrease with |dx| up to ``noise``.
    """
    dxs = np.asarray(dx_sequence, dtype=float)
    base = assemble_vhat(model, grid, x).entries
    p_dense = np.concatenate([np.linspace(-2 * grid.k, 2 * grid.k, 2001), _difference_matrix(grid).ravel()])
    v_base = model.vtilde(x, p_dense)
    diff = np.empty(dxs.size)
    bound = np.empty(dxs.size)
    for i, dx in enumerate(dxs):
        diff[i] = operator_norm(assemble_vhat(model, grid, x + dx).entries - base, grid)
        bound[i] = grid.k / np.pi * float(np.max(np.abs(model.vtilde(x + dx, p_dense) - v_base)))
    order = np.argsort(-np.abs(dxs))
    d = diff[order]
    scale = max(float(np.max(diff)) if diff.size else 0.0, 1.0)
    monotone = bool(np.all(np.diff(d) <= noise * scale))
    return ContinuityTable(dxs, diff, bound, monotone)


# -- cached norm profile for F/G-type integrals ---------------------------------------


class NormProfile:
    """Cache of x -> ||V(x)||_0 with adaptive trapezoid integration.

    Integrals of ``weight(x) * ||V(x)||_0`` are computed on uniform meshes that
    double until the value changes by less than ``rtol`` (piecewise-linear
    interpolation of the integrand between mesh points).
    """

    def __init__(self, model: PotentialModel, grid: MomentumGrid, rtol: float = 1e-6, min_points: int = 65, max_points: int = 2**16 + 1):
        self.model = model
        self.grid = grid
        self.rtol = rtol
        self.min_points = min_points
        self.max_points = max_points
        self._cache: dict[float, float] = {}

    def __call__(self, xs) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        missing = np.array([x for x in np.unique(xs) if x not in self._cache])
        if missing.size:
            for x, v in zip(missing, vhat_norms(self.model, self.grid, missing)):
                self._cache[float(x)] = float(v)
        return np.array([self._cache[float(x)] for x in xs])

    def integrate(self, weight: Callable, a: float, b: float, atol: float = 0.0) -> float:
        """int_a^b weight(x) ||V(x)||_0 dx (oriented: negative if b < a).

        Stops when successive values differ by at most max(rtol |value|, atol).
        Mesh points are lo + (hi - lo) i/(n - 1), so a doubled mesh contains the
        previous one bit for bit and reuses its cached norms.
        """
        if a == b:
            return 0.0
        lo, hi = min(a, b), max(a, b)
        sign = 1.0 if b > a else -1.0
        npts = self.min_points
        prev = None
        while True:
            xs = lo + (hi - lo) * (np.arange(npts) / (npts - 1))
            val = float(np.trapezoid(weight(xs) * self(xs), xs))
            if prev is not None and abs(val - prev) <= max(self.rtol * abs(val), atol, 1e-300):
                return sign * val
            if npts >= self.max_points:
                return sign * val
            prev = val
            npts = 2 * npts - 1

    def f_ell(self, ell: int, x: float, x0: float) -> float:
        """f_ell(x, x0) = int_{x0}^{x} |x'|^ell ||V(x')||_0 dx'."""
        return self.integrate(lambda t: np.abs(t) ** ell, x0, x)

    def G(self, u: float, u0: float) -> float:
        """G(u, u0) = int_{u0}^{u} |x' - u0| ||V(x')||_0 dx'."""
        return self.integrate(lambda t: np.abs(t - u0), u0, u)

    def F_plus(self, u: float, u0: float, zfun: Callable) -> float:
        """F_+(u, u0) = int_{u0}^{u} ||V(x')||_0 Z(x') dx'."""
        return self.integrate(zfun, u0, u)

    def F_minus(self, u: float, u0: float, zfun: Callable) -> float:
        """F_-(u, u0) = int_{u0}^{u} |u - x'| ||V(x')||_0 Z(x') dx'."""
        return self.integrate(lambda t: np.abs(u - t) * zfun(t), u0, u)
