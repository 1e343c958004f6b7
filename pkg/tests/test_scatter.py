import csv
import io
import math

import numpy as np
import pytest

from nltransfer.grid import BlockOperator, InvalidArgument, build_grid, operator_norm
from nltransfer.potential import builtin_model
from nltransfer.scatter import (
    IllPosedScattering,
    TransferMatrix,
    assemble_transfer,
    born_amplitudes,
    born_transfer,
    emit_cross_section,
    envelope_tail,
    kernel_refinement_gap,
    scatter,
    scatter_left,
    scatter_right,
    transfer_between,
    transfer_constants,
    truncation_bounds,
)


@pytest.fixture(scope="module")
def tm16():
    return assemble_transfer(builtin_model("gauss-gauss", 1.0), build_grid(1.0, 16), 1e-3)


@pytest.fixture(scope="module")
def tm_free():
    return assemble_transfer(builtin_model("gauss-gauss", 0.0), build_grid(1.0, 16), 1e-3)


# -- truncation -------------------------------------------------------------------------


def test_truncation_free_model():
    tr = truncation_bounds(builtin_model("gauss-gauss", 0.0), 1e-6)
    assert math.isfinite(tr.x_plus) and tr.tail_estimate == 0.0


def test_tail_constants_closed_form():
    m = builtin_model("powerlaw-gauss", 1.0, decay=4.0, alpha=1.0, beta=1.0)
    gamma, delta = transfer_constants(m, 1.0, 0.0)
    assert delta == pytest.approx(math.pi, rel=1e-15)
    assert gamma == pytest.approx(math.pi, rel=1e-15)


@pytest.mark.parametrize("sigma", [3.5, 4.0, 6.0])
def test_halving_eps_scales_truncation(sigma):
    m = builtin_model("powerlaw-gauss", 1.0, decay=sigma)
    t1, t2 = truncation_bounds(m, 1e-4), truncation_bounds(m, 5e-5)
    predicted = 2 ** (1 / (sigma - 2))
    assert (1 + t2.x_plus) / (1 + t1.x_plus) == pytest.approx(predicted, rel=1e-12)
    assert abs(t2.x_plus / t1.x_plus / predicted - 1) <= 0.1
    assert t1.tail_estimate <= 1e-4 * (1 + 1e-12)
    assert envelope_tail(m, t2.x_plus) < envelope_tail(m, t1.x_plus)


def test_truncation_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        truncation_bounds(builtin_model("gauss-gauss", sigma=3.0, transfer_ready=False), 1e-3)
    with pytest.raises(InvalidArgument):
        truncation_bounds(builtin_model("gauss-gauss"), 0.0)


# -- transfer matrix ----------------------------------------------------------------------


def test_free_transfer_is_identity(tm_free):
    assert not np.any(tm_free.T.matrix)
    assert np.array_equal(tm_free.M.matrix, np.eye(32))


def test_widening_is_within_tail_estimate(tm16):
    m = builtin_model("gauss-gauss", 1.0)
    X = tm16.x_plus
    wide = transfer_between(m, tm16.grid, -2 * X, 2 * X)
    assert operator_norm(wide.T - tm16.T) <= 10 * tm16.tail_estimate


def test_refinement_gap_small():
    m = builtin_model("gauss-gauss", 1.0)
    coarse = transfer_between(m, build_grid(1.0, 12), -8, 8)
    fine = transfer_between(m, build_grid(1.0, 24), -8, 8)
    assert kernel_refinement_gap(coarse, fine) <= 1e-4


def test_segments_compose_to_single_run():
    m = builtin_model("gauss-box", 0.6, a=0.8)
    g = build_grid(1.0, 10)
    split = transfer_between(m, g, -5, 5)
    from nltransfer.evolution import evolve

    whole = evolve(m, g, -5, 5, "dyson", 1e-12).U - BlockOperator.identity(g)
    assert operator_norm(split.T - whole) <= 1e-8 * operator_norm(whole)


# -- scattering --------------------------------------------------------------------------


def test_free_scattering_left(tm_free):
    r = scatter(tm_free, 0.3)
    assert r.case == 1
    assert not np.any(r.B_minus) and not np.any(r.f_forward) and not np.any(r.f_backward)


def test_free_scattering_right(tm_free):
    r = scatter(tm_free, math.pi - 0.3)
    assert r.case == 2
    impulse = np.zeros(16, dtype=complex)
    g = tm_free.grid
    impulse[r.node] = 2 * np.pi * g.varpi[r.node] / g.weights[r.node]
    assert np.array_equal(r.B_minus, impulse)
    assert not np.any(r.f_forward) and not np.any(r.f_backward)


@pytest.mark.parametrize("theta0", [0.0, 0.4, -1.2, math.pi - 0.2, math.pi + 1.0])
def test_linear_solve_residual(tm16, theta0):
    r = scatter(tm16, theta0)
    assert r.residual <= 1e-10
    m22 = np.eye(16) + tm16.block(2, 2)
    g = tm16.grid
    amp = 2 * np.pi * g.varpi[r.node] / g.weights[r.node]
    if r.case == 1:
        resid = m22 @ r.B_minus + amp * tm16.block(2, 1)[:, r.node]
        rhs = amp * tm16.block(2, 1)[:, r.node]
    else:
        resid = m22 @ r.B_minus
        resid[r.node] -= amp
        rhs = np.zeros(16, dtype=complex)
        rhs[r.node] = amp
    assert g.norm(resid) <= 1e-10 * g.norm(rhs)


def test_side_specific_entry_points(tm16):
    m, g = builtin_model("gauss-gauss", 1.0), tm16.grid
    assert scatter_left(m, g, 0.2, transfer=tm16).case == 1
    assert scatter_right(m, g, 3.0, transfer=tm16).case == 2
    with pytest.raises(InvalidArgument):
        scatter_left(m, g, 3.0, transfer=tm16)
    with pytest.raises(InvalidArgument):
        scatter_right(m, g, 0.2, transfer=tm16)
    with pytest.raises(InvalidArgument):
        scatter(tm16, math.pi / 2)


def test_snap_reporting(tm16):
    g = tm16.grid
    between = 0.5 * (g.theta[9] + g.theta[10])
    r = scatter(tm16, between + 1e-3)
    assert r.node == 10
    assert r.theta0_snapped == g.theta[10]
    assert r.snap_distance == pytest.approx(abs(g.theta[10] - between - 1e-3), abs=1e-15)
    assert r.p0 == g.p[10]


def test_ill_posed_is_rejected(tm16):
    g = tm16.grid
    z = np.zeros((16, 16))
    bad = TransferMatrix(g, BlockOperator.from_blocks(g, z, z, z, -np.eye(16)), -1, 1, 0.0)
    with pytest.raises(IllPosedScattering):
        scatter(bad, 0.1)


def test_parity_of_even_real_potential(tm16):
    g = tm16.grid
    j0 = 11
    a, b = scatter(tm16, g.theta[j0]), scatter(tm16, g.theta[g.n - 1 - j0])
    assert np.max(np.abs(np.abs(a.f_forward) - np.abs(b.f_forward[::-1]))) <= 1e-8
    assert np.max(np.abs(np.abs(a.f_backward) - np.abs(b.f_backward[::-1]))) <= 1e-8


def test_born_limit():
    g = build_grid(1.0, 16)
    gaps, ratios = [], []
    for v0 in (1e-1, 1e-2, 1e-3):
        m = builtin_model("gauss-gauss", v0)
        full = scatter(transfer_between(m, g, -12, 12), 0.3)
        fb, bb = born_amplitudes(born_transfer(m, g, -12, 12), 0.3)
        f = np.concatenate([full.f_forward, full.f_backward])
        fborn = np.concatenate([fb, bb])
        gaps.append(np.linalg.norm(f - fborn) / np.linalg.norm(fborn))
        ratios.append(f / v0)
    assert gaps[-1] <= 1e-2
    # the gap is second order: it shrinks like v0
    assert gaps[1] / gaps[0] == pytest.approx(0.1, rel=0.2)
    assert gaps[2] / gaps[1] == pytest.approx(0.1, rel=0.2)
    # f / v0 is Cauchy
    assert np.linalg.norm(ratios[2] - ratios[1]) < np.linalg.norm(ratios[1] - ratios[0])


# -- tables ----------------------------------------------------------------------------


def _parse(text):
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def test_cross_section_table(tm16, tm_free):
    header, rows = _parse(emit_cross_section(scatter(tm16, 0.2), {"note": "x"}))
    assert header == ["theta", "re_f", "im_f", "dcs"]
    assert len(rows) == 2 * tm16.grid.n
    thetas = [r[0] for r in rows]
    assert thetas == sorted(thetas)
    for t, re, im, dcs in rows:
        assert dcs == pytest.approx(re * re + im * im, rel=1e-12)
    _, zero = _parse(emit_cross_section(scatter(tm_free, 0.2)))
    assert all(r[1] == r[2] == r[3] == 0.0 for r in zero)


def test_csv_floats_round_trip(tm16):
    r = scatter(tm16, 0.2)
    _, rows = _parse(emit_cross_section(r))
    fwd = np.array([complex(re, im) for _, re, im, _ in rows[: tm16.grid.n]])
    assert np.array_equal(fwd, r.f_forward)
