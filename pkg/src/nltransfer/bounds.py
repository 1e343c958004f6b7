"""Numerical certificates for the norm and convergence inequalities.

Every function returns a :class:`BoundCertificate`; failures are recorded,
never raised. The integrals F_+, F_-, G and f_ell all go through one
:class:`NormProfile`, the same backend the Dyson evolution uses for its
stopping rule.
"""

from __future__ import annotations

import math

import numpy as np

from .certificate import BoundCertificate, combine
from .evolution import (
    EvolutionResult,
    assemble_B,
    assemble_H,
    decompose_domain,
    operator_zeta_sup,
    zeta_norms,
)
from .grid import InvalidArgument, MomentumGrid, StateVector, operator_norm
from .potential import NormProfile, PotentialModel, envelope_check, vhat_norms
from .scatter import transfer_constants

NILPOTENCY_RTOL = 1e-12
ID_RTOL = 1e-12


def default_envelope_samples(model: PotentialModel, count: int = 20, x_max: float = 1e3) -> np.ndarray:
    return np.logspace(math.log10(model.alpha), math.log10(x_max), count)


def certify_lemma2(model: PotentialModel, grid: MomentumGrid, x_samples=None) -> BoundCertificate:
    """||V(x)||_0 <= 2 pi beta / (1 + |x|)^sigma at samples with |x| >= alpha."""
    xs = default_envelope_samples(model) if x_samples is None else np.asarray(x_samples, dtype=float)
    return envelope_check(model, grid, xs, name="norm-envelope")


def product_bound(norms: np.ndarray, xs: np.ndarray) -> float:
    """||V(x_n)|| prod_{m<n} |x_{m+1} - x_m| ||V(x_m)|| (just ||V(x_1)|| for n = 1)."""
    return float(np.prod(norms) * np.prod(np.abs(np.diff(xs))))


def certify_lemma5(model: PotentialModel, grid: MomentumGrid, xs_tuples) -> BoundCertificate:
    """||B(x_n, ..., x_1)||_0 (dense SVD) against the product bound, n in {1, 2, 3}."""
    lhs, rhs, tuples = [], [], []
    for tup in xs_tuples:
        xs = np.asarray(tup, dtype=float)
        if xs.size not in (1, 2, 3):
            raise InvalidArgument(f"tuples must have 1 to 3 points, got {xs.size}")
        if np.any(np.diff(xs) < 0):
            raise InvalidArgument(f"tuple {xs.tolist()} is not ordered")
        lhs.append(operator_norm(assemble_B(model, grid, xs)))
        rhs.append(product_bound(vhat_norms(model, grid, xs), xs))
        tuples.append(xs.tolist())
    return BoundCertificate(
        "product-norm",
        lhs,
        rhs,
        inputs={"tuples": tuples, "k": grid.k, "n": grid.n},
        provenance="||B(x1)|| <= ||V(x1)||; ||B(xn..x1)|| <= ||V(xn)|| prod |x_{m+1}-x_m| ||V(x_m)||",
    )


def certify_nilpotency(model: PotentialModel, grid: MomentumGrid, x_samples) -> BoundCertificate:
    """||H(x)^2||_0 <= 1e-12 ||H(x)||_0^2."""
    xs = np.atleast_1d(np.asarray(x_samples, dtype=float))
    lhs, rhs = [], []
    for x in xs:
        h = assemble_H(model, grid, x)
        lhs.append(operator_norm(h @ h))
        rhs.append(NILPOTENCY_RTOL * operator_norm(h) ** 2)
    return BoundCertificate(
        "nilpotency",
        lhs,
        rhs,
        inputs={"x": xs, "k": grid.k, "n": grid.n},
        provenance="H(x)^2 = 0 because K^2 = 0",
        slack=0.0,
    )


def certify_lemma3(phi0: StateVector, x_samples) -> BoundCertificate:
    """||zeta(x)|| <= a + b |x| and |Z(x1) - Z(x2)| <= b |x1 - x2| at the samples."""
    grid = phi0.grid
    xs = np.sort(np.atleast_1d(np.asarray(x_samples, dtype=float)))
    split = decompose_domain(phi0, 0.0)
    a, b = split.a, split.b
    z = zeta_norms(grid, phi0.stacked()[:, None], xs)[:, 0]
    growth = BoundCertificate("zeta-growth", z, a + b * np.abs(xs))
    lip = BoundCertificate("zeta-lipschitz", np.abs(np.diff(z)), b * np.diff(xs))
    cert = combine("zeta-bounds", [growth, lip], provenance="||zeta(x)|| <= a + b|x|, a = ||zeta0||, b = 2||xi0||")
    cert.inputs.update({"x": xs, "k": grid.k, "n": grid.n})
    cert.values.update({"a": a, "b": b})
    return cert


def _zfun(result: EvolutionResult):
    grid = result.grid
    if result.phi0 is None:
        z = operator_zeta_sup(grid)
        return lambda xs: np.full(np.shape(xs), z)
    y0 = result.phi0.stacked()[:, None]
    return lambda xs: zeta_norms(grid, y0, xs)[:, 0]


def _require_dyson(result: EvolutionResult) -> None:
    if result.scheme != "dyson" and not (result.x_range[0] == result.x_range[1]):
        raise InvalidArgument(f"certificate needs per-order norms from a dyson evolution, got scheme {result.scheme!r}")
    if result.F_plus is None or result.G is None:
        raise InvalidArgument("evolution result carries no F_plus/G values")


def certify_theorem3(result: EvolutionResult) -> BoundCertificate:
    """Partial sums sum_{n<=N} ||Phi_n|| against ||Phi0|| + F_+ sum_{n=1}^{N} G^(n-1)/(n-1)!.

    One sample per recorded order N >= 1. The closed forms with exp(G) - 1 and
    exp(G) are stored in ``values`` for reference; only the partial-sum
    form follows term by term from ||Phi_n|| <= F_+ G^(n-1)/(n-1)!.
    """
    _require_dyson(result)
    norms = np.asarray(result.term_norms, dtype=float)
    F, G = float(result.F_plus), float(result.G)
    lhs = np.cumsum(norms)[1:]
    series = np.cumsum([G**j / math.factorial(j) for j in range(norms.size - 1)])
    rhs = norms[0] + F * series
    return BoundCertificate(
        "dyson-partial-sums",
        lhs,
        rhs,
        inputs={"x_range": list(result.x_range), "orders": norms.size - 1, "matrix": result.is_matrix},
        provenance="sum_{n<=N} ||Phi_n|| <= ||Phi0|| + F_+ sum_{n=1}^N G^(n-1)/(n-1)!",
        values={
            "F_plus": F,
            "G": G,
            "term_norms": norms,
            "closed_form_exp": norms[0] + F * math.exp(G),
            "closed_form_expm1": norms[0] + F * math.expm1(G),
            "total": float(np.sum(norms)),
        },
    )


def certify_term_bounds(result: EvolutionResult, profile: NormProfile) -> BoundCertificate:
    """Per-order bounds ||Phi_n|| <= F_+ G^(n-1)/(n-1)! (n >= 1) and the refined
    ||Phi_n|| <= f_0 F_- (-G(x0, x))^(n-2)/(n-2)! (n >= 2)."""
    _require_dyson(result)
    x0, x = result.x_range
    norms = np.asarray(result.term_norms, dtype=float)
    F, G = float(result.F_plus), float(result.G)
    z = _zfun(result)
    f0 = profile.f_ell(0, x, x0)
    Fm = profile.F_minus(x, x0, z)
    Gm = -profile.G(x0, x)
    orders = np.arange(1, norms.size)
    plain = np.array([F * G ** (n - 1) / math.factorial(n - 1) for n in orders])
    parts = [BoundCertificate("term-bound", norms[1:], plain)]
    if norms.size > 2:
        refined = np.array([f0 * Fm * Gm ** (n - 2) / math.factorial(n - 2) for n in orders[1:]])
        parts.append(BoundCertificate("refined-term-bound", norms[2:], refined))
    cert = combine("dyson-term-bounds", parts, provenance="||Phi_n|| <= F_+ G^(n-1)/(n-1)!; ||Phi_n|| <= f0 F_- (-G(x0,x))^(n-2)/(n-2)!")
    cert.inputs.update({"x_range": [x0, x]})
    cert.values.update({"F_plus": F, "G": G, "f0": f0, "F_minus": Fm, "minus_G_swapped": Gm})
    return cert


def certify_g_identity(profile: NormProfile, x0: float, x: float) -> BoundCertificate:
    """int_{x0}^{x} (x - x') ||V|| dx' = -G(x0, x) to 1e-12 relative, and
    G(x, x0) + (-G(x0, x)) = (x - x0) f_0(x, x0) to the quadrature tolerance.

    The first pair is the same integral on the same mesh; the second mixes
    integrals whose adaptive meshes can stop at different refinement levels.
    """
    direct = profile.integrate(lambda t: x - t, x0, x)
    swapped = -profile.G(x0, x)
    forward = profile.G(x, x0)
    f0 = profile.f_ell(0, x, x0)
    lhs = [abs(direct - swapped), abs(forward + swapped - (x - x0) * f0)]
    scale = max(1.0, abs(direct), abs(forward))
    return BoundCertificate(
        "g-identity",
        lhs,
        [ID_RTOL * scale, 10 * profile.rtol * scale],
        inputs={"x0": x0, "x": x},
        provenance="int (x - x') ||V|| = -G(x0, x); G(x, x0) + (-G(x0, x)) = (x - x0) f0(x, x0)",
        values={"direct": direct, "minus_G_swapped": swapped, "G": forward, "f0": f0},
        slack=0.0,
    )


def widening_sequence(alpha: float, top: float = 1e3) -> np.ndarray:
    """x_+ = alpha 2^m for m = 0, 1, ... up to and including the first point >= top * alpha."""
    m = int(math.ceil(math.log2(top))) if top > 1 else 0
    return alpha * 2.0 ** np.arange(m + 1)


def certify_theorem4(
    model: PotentialModel,
    grid: MomentumGrid,
    widening=None,
    phi0: StateVector | None = None,
    profile: NormProfile | None = None,
) -> BoundCertificate:
    """Tail constants over a widening sequence x_+ = alpha 2^m.

    Checks F_+(x_+, alpha) <= gamma, G(x_+, alpha) <= delta, the mirrored
    F_-(-alpha, x_-) <= 2 pi beta (a + b alpha)/((sigma - 3) alpha^(sigma-2)) and
    -G(x_-, -alpha) <= 2 pi beta/((sigma - 2) alpha^(sigma-2)) with x_- = -x_+,
    and that F_+(x_+, alpha) does not decrease as x_+ grows. With ``phi0``
    the zeta-norm of that state is used; otherwise the operator-level sup.
    """
    if not model.sigma > 3:
        raise InvalidArgument(f"tail certificate needs sigma > 3, model has sigma={model.sigma}")
    al = model.alpha
    xp = widening_sequence(al) if widening is None else np.asarray(widening, dtype=float)
    if xp.size == 0 or np.any(xp < al) or np.any(np.diff(xp) <= 0):
        raise InvalidArgument("widening sequence must be increasing and >= alpha")
    profile = profile or NormProfile(model, grid)
    if phi0 is None:
        zsup = operator_zeta_sup(grid)
        a, b = zsup, 0.0
        z = lambda xs: np.full(np.shape(xs), zsup)  # noqa: E731
    else:
        split = decompose_domain(phi0, 0.0)
        a, b = split.a, split.b
        y0 = phi0.stacked()[:, None]
        z = lambda xs: zeta_norms(grid, y0, xs)[:, 0]  # noqa: E731
    gamma, delta = transfer_constants(model, a, b)
    s, be = model.sigma, model.beta
    fm_bound = 2 * math.pi * be * (a + b * al) / ((s - 3) * al ** (s - 2))
    gm_bound = 2 * math.pi * be / ((s - 2) * al ** (s - 2))

    # Cumulative integrals piece by piece between consecutive breakpoints, so
    # each piece is resolved on its own scale.
    edges = np.concatenate([[al], xp])
    Fp, Gp, Fm, Gm = [], [], [], []
    acc = np.zeros(4)
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            # a piece only needs to be resolved relative to the running total
            tol = profile.rtol * acc
            acc = acc + [
                profile.integrate(z, lo, hi, tol[0]),
                profile.integrate(lambda t: t - al, lo, hi, tol[1]),
                profile.integrate(lambda t: (-t - al) * z(t), -hi, -lo, tol[2]),
                profile.integrate(lambda t: -t - al, -hi, -lo, tol[3]),
            ]
        Fp.append(acc[0])
        Gp.append(acc[1])
        Fm.append(acc[2])
        Gm.append(acc[3])
    Fp, Gp, Fm, Gm = map(np.asarray, (Fp, Gp, Fm, Gm))
    parts = [
        BoundCertificate("F_plus<=gamma", Fp, np.full(xp.size, gamma)),
        BoundCertificate("G<=delta", Gp, np.full(xp.size, delta)),
        BoundCertificate("F_minus<=bound", Fm, np.full(xp.size, fm_bound)),
        BoundCertificate("-G_minus<=bound", Gm, np.full(xp.size, gm_bound)),
        BoundCertificate("F_plus-monotone", Fp[:-1], Fp[1:]),
    ]
    cert = combine("tail-constants", parts, provenance="F_+ <= gamma, G <= delta, minus-side analogs, monotone F_+")
    cert.inputs.update({"x_plus": xp, "k": grid.k, "n": grid.n})
    cert.values.update(
        {
            "gamma": gamma,
            "delta": delta,
            "F_minus_bound": fm_bound,
            "G_minus_bound": gm_bound,
            "a": a,
            "b": b,
            "F_plus": Fp,
            "G": Gp,
            "F_minus": Fm,
            "minus_G_minus": Gm,
        }
    )
    return cert
