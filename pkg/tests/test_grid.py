import numpy as np
import pytest
from hypothesis import given, strategies as st

from nltransfer.grid import (
    BlockOperator,
    GridFunction,
    InvalidArgument,
    StateVector,
    apply_varpi,
    build_grid,
    inner_product,
    min_singular_value,
    operator_norm,
    phase_operator,
)


def test_degenerate_grid_rejected():
    with pytest.raises(InvalidArgument):
        build_grid(1.0, 1)
    with pytest.raises(InvalidArgument):
        build_grid(-1.0, 8)
    with pytest.raises(InvalidArgument):
        build_grid(1.0, 8, "trapezoid")


@pytest.mark.parametrize("rule", ["gauss-legendre-theta", "gauss-legendre-p"])
@given(n=st.integers(2, 80))
def test_varpi_identity(rule, n):
    g = build_grid(1.0, n, rule)
    assert np.max(np.abs(g.varpi**2 + g.p**2 - 1.0)) <= 1e-14
    assert np.all(np.abs(g.p) < g.k)


def test_p_rule_weights_integrate_constants():
    g = build_grid(1.0, 64, "gauss-legendre-p")
    assert abs(g.weights.sum() - 2.0) <= 1e-13


def test_theta_rule_weights_integrate_constants():
    g = build_grid(2.5, 40)
    assert abs(g.weights.sum() - 5.0) <= 1e-12


def test_inner_product_constants_and_parity(grid32):
    one = GridFunction(grid32, np.ones(grid32.n))
    p = GridFunction(grid32, grid32.p)
    assert abs(inner_product(one, one) - 2.0) <= 1e-13
    assert abs(inner_product(one, p)) <= 1e-14


def _legendre_theta(grid, coeffs):
    t = grid.theta * 2 / np.pi
    return np.polynomial.legendre.legval(t, coeffs)


@given(seed=st.integers(0, 2**32 - 1))
def test_inner_product_matches_refined_quadrature(seed):
    rng = np.random.default_rng(seed)
    n = 16
    coarse, fine = build_grid(1.0, n), build_grid(1.0, 4 * n)
    coeffs = rng.standard_normal(n // 2) + 1j * rng.standard_normal(n // 2)
    f = GridFunction(coarse, _legendre_theta(coarse, coeffs))
    ff = GridFunction(fine, _legendre_theta(fine, coeffs))
    a, b = inner_product(f, f), inner_product(ff, ff)
    assert abs(a - b) <= 1e-8 * abs(b)


def test_apply_varpi_examples():
    g = build_grid(1.0, 9, "gauss-legendre-p")  # odd: node at p = 0
    mid = g.n // 2
    assert g.p[mid] == 0.0
    f = GridFunction(g, np.ones(g.n))
    assert apply_varpi(f, 1).values[mid] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(InvalidArgument):
        apply_varpi(f, 3)


@given(seed=st.integers(0, 2**32 - 1))
def test_varpi_inverse_pair(seed):
    g = build_grid(1.0, 12)
    rng = np.random.default_rng(seed)
    f = GridFunction(g, rng.standard_normal(g.n) + 1j * rng.standard_normal(g.n))
    back = apply_varpi(apply_varpi(f, 1), -1)
    assert np.max(np.abs(back.values - f.values)) <= 1e-14 * np.max(np.abs(f.values))


@given(x=st.floats(-50, 50), seed=st.integers(0, 2**32 - 1))
def test_phase_unitary_and_group_law(x, seed):
    g = build_grid(1.0, 12)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(g.n) + 1j * rng.standard_normal(g.n)
    ph = phase_operator(g, x)
    assert abs(g.norm(ph * f) - g.norm(f)) <= 1e-14 * g.norm(f)
    assert np.max(np.abs(ph * phase_operator(g, -x) - 1)) <= 1e-14
    assert np.array_equal(phase_operator(g, 0.0), np.ones(g.n))


def test_phase_rejects_bad_input(grid16):
    with pytest.raises(InvalidArgument):
        phase_operator(grid16, np.inf)
    with pytest.raises(InvalidArgument):
        phase_operator(grid16, 1.0, sign=0)


def test_operator_norm_trivial(grid16):
    assert operator_norm(BlockOperator.zeros(grid16)) == 0.0
    d = np.diag(grid16.varpi.astype(complex))
    op = BlockOperator.from_blocks(grid16, d, 0 * d, 0 * d, d)
    assert operator_norm(op) == pytest.approx(grid16.varpi.max(), rel=1e-14)
    assert operator_norm(op) < grid16.k


def test_power_iteration_matches_svd():
    rng = np.random.default_rng(7)
    g = build_grid(1.0, 8)
    worst = 0.0
    for _ in range(100):
        a = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        op = BlockOperator(g, a)
        exact = operator_norm(op)
        approx = operator_norm(op, method="power-iteration")
        worst = max(worst, abs(approx - exact) / exact)
    assert worst <= 1e-8


def test_weighted_norm_is_basis_independent(grid16, rng):
    # ||A f|| / ||f|| never exceeds the operator norm
    a = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    op = BlockOperator(grid16, a)
    nrm = operator_norm(op)
    for _ in range(20):
        s = StateVector.from_stacked(grid16, rng.standard_normal(32) + 1j * rng.standard_normal(32))
        assert op.apply(s).norm() <= nrm * s.norm() * (1 + 1e-12)


def test_min_singular_value_identity(grid16):
    assert min_singular_value(np.eye(grid16.n), grid16) == pytest.approx(1.0)


def test_block_access_and_shapes(grid16):
    b = [np.full((16, 16), c, dtype=complex) for c in (1, 2, 3, 4)]
    op = BlockOperator.from_blocks(grid16, *b)
    for idx, (i, j) in enumerate(((1, 1), (1, 2), (2, 1), (2, 2))):
        assert np.all(op.block(i, j) == idx + 1)
    with pytest.raises(InvalidArgument):
        GridFunction(grid16, np.ones(3))
