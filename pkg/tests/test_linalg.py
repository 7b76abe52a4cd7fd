"""Tests for the dense linear-algebra kernels."""

import cmath
import math

import numpy as np
import pytest

from tansid.linalg import (
    DimensionError,
    EigenConvergenceError,
    NotSPDError,
    eigenvalues,
    mat_exp,
    solve_banded_spd,
)


def cubic_roots(a2, a1, a0):
    """Roots of x^3 + a2 x^2 + a1 x + a0 via Cardano's formula.

    Independent oracle for 3x3 eigenvalue checks; does not touch any QR code.
    """
    p = a1 - a2 * a2 / 3.0
    q = 2.0 * a2**3 / 27.0 - a2 * a1 / 3.0 + a0
    shift = -a2 / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    sq = cmath.sqrt(disc)
    u3 = -q / 2.0 + sq
    v3 = -q / 2.0 - sq
    # Pick the cube root of larger magnitude for stability.
    if abs(u3) >= abs(v3):
        u = _principal_cbrt(u3)
        v = -p / (3.0 * u) if u != 0 else _principal_cbrt(v3)
    else:
        v = _principal_cbrt(v3)
        u = -p / (3.0 * v) if v != 0 else _principal_cbrt(u3)
    w = complex(-0.5, math.sqrt(3.0) / 2.0)
    roots = [u + v, w * u + w.conjugate() * v, w.conjugate() * u + w * v]
    return [r + shift for r in roots]


def _principal_cbrt(z):
    if z == 0:
        return 0j
    r = abs(z)
    th = cmath.phase(z)
    return (r ** (1.0 / 3.0)) * cmath.exp(1j * th / 3.0)


def taylor_exp(M, terms=60):
    """Brute-force scaled Taylor series, independent of the Pade path."""
    n = M.shape[0]
    s = 0
    norm = np.linalg.norm(M, np.inf)
    while norm / 2**s > 0.25:
        s += 1
    A = M / 2**s
    out = np.eye(n)
    term = np.eye(n)
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def match_multisets(a, b, tol):
    """Greedy closest-pair matching of two complex multisets."""
    b = list(b)
    worst = 0.0
    for x in a:
        j = min(range(len(b)), key=lambda i: abs(b[i] - x))
        worst = max(worst, abs(b[j] - x))
        b.pop(j)
    return worst <= tol


class TestMatExp:
    def test_zero_matrix(self):
        assert np.allclose(mat_exp(np.zeros((3, 3))), np.eye(3), atol=1e-15)

    def test_diagonal(self):
        E = mat_exp(np.diag([1.0, -1.0]))
        assert np.allclose(E, np.diag([math.e, 1.0 / math.e]), atol=1e-12)

    def test_rotation_generator(self):
        th = 0.3
        M = th * np.array([[0.0, 1.0], [-1.0, 0.0]])
        expect = np.array(
            [[math.cos(th), math.sin(th)], [-math.sin(th), math.cos(th)]]
        )
        assert np.allclose(mat_exp(M), expect, atol=1e-12)

    def test_matches_taylor_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            M = rng.standard_normal((6, 6))
            E = mat_exp(M)
            assert np.allclose(E, taylor_exp(M), rtol=1e-11, atol=1e-11)

    def test_inverse_property(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            M = rng.standard_normal((5, 5))
            M *= 2.0 / max(np.linalg.norm(M, 2), 1e-12)
            P = mat_exp(M) @ mat_exp(-M)
            assert np.allclose(P, np.eye(5), atol=1e-9)

    def test_rejects_nonsquare(self):
        with pytest.raises(DimensionError):
            mat_exp(np.zeros((2, 3)))


class TestEigenvalues:
    def test_identity(self):
        lam = eigenvalues(np.eye(4))
        assert np.allclose(sorted(lam.real), np.ones(4), atol=1e-14)
        assert np.allclose(lam.imag, 0.0, atol=1e-14)

    def test_skew_2x2(self):
        lam = eigenvalues(np.array([[0.0, 1.0], [-1.0, 0.0]]))
        assert match_multisets(lam, [1j, -1j], 1e-12)

    def test_random_3x3_vs_cardano(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            M = rng.standard_normal((3, 3))
            # char poly: x^3 - tr x^2 + c1 x - det
            tr = np.trace(M)
            c1 = 0.5 * (tr**2 - np.trace(M @ M))
            det = np.linalg.det(M)
            expect = cubic_roots(-tr, c1, -det)
            lam = eigenvalues(M)
            assert match_multisets(lam, expect, 1e-9)

    def test_sum_trace_product_det(self):
        rng = np.random.default_rng(5)
        for n in (2, 3, 5, 8):
            M = rng.standard_normal((n, n))
            lam = eigenvalues(M)
            assert abs(lam.sum().real - np.trace(M)) < 1e-8
            assert abs(lam.sum().imag) < 1e-8
            assert abs(np.prod(lam) - np.linalg.det(M)) < 1e-8

    def test_skew_symmetric_purely_imaginary(self):
        rng = np.random.default_rng(9)
        for n in (4, 6, 10, 12):
            A0 = rng.standard_normal((n, n))
            S = A0 - A0.T
            lam = eigenvalues(S)
            assert np.max(np.abs(lam.real)) < 1e-9

    def test_defective_jordan_block(self):
        # Repeated eigenvalue with a single Jordan block; accuracy degrades
        # to eps**(1/2) for a 2-block, so require a loose match only.
        J = np.array([[2.0, 1.0], [0.0, 2.0]])
        lam = eigenvalues(J)
        assert match_multisets(lam, [2.0, 2.0], 1e-6)

    def test_against_lapack_on_random(self):
        rng = np.random.default_rng(13)
        for n in (5, 10, 20):
            M = rng.standard_normal((n, n))
            lam = eigenvalues(M)
            assert match_multisets(lam, np.linalg.eigvals(M), 1e-8)

    def test_convergence_error_carries_partial(self):
        rng = np.random.default_rng(21)
        M = rng.standard_normal((12, 12))
        with pytest.raises(EigenConvergenceError) as err:
            eigenvalues(M, max_iters=1)
        assert hasattr(err.value, "partial")
        assert len(err.value.partial) < 12

    def test_size_cap(self):
        with pytest.raises(DimensionError):
            eigenvalues(np.eye(65))

    def test_deterministic(self):
        rng = np.random.default_rng(17)
        M = rng.standard_normal((10, 10))
        a = eigenvalues(M)
        b = eigenvalues(M.copy())
        assert np.array_equal(a, b)


def random_spd_block_tridiag(rng, T, p):
    diag = np.empty((T, p, p))
    sub = np.empty((T - 1, p, p))
    for t in range(T):
        G = rng.standard_normal((p, p))
        diag[t] = G @ G.T + (p + 2) * np.eye(p)
    for t in range(T - 1):
        sub[t] = 0.3 * rng.standard_normal((p, p))
    return diag, sub


def dense_from_blocks(diag, sub):
    T, p, _ = diag.shape
    M = np.zeros((T * p, T * p))
    for t in range(T):
        M[t * p : (t + 1) * p, t * p : (t + 1) * p] = diag[t]
    for t in range(T - 1):
        M[(t + 1) * p : (t + 2) * p, t * p : (t + 1) * p] = sub[t]
        M[t * p : (t + 1) * p, (t + 1) * p : (t + 2) * p] = sub[t].T
    return M


class TestSolveBandedSPD:
    def test_identity_system(self):
        T, p = 4, 3
        diag = np.tile(np.eye(p), (T, 1, 1))
        sub = np.zeros((T - 1, p, p))
        r = np.arange(T * p, dtype=float)
        assert np.allclose(solve_banded_spd(diag, sub, r), r, atol=1e-14)

    def test_two_block_diagonal_vs_dense(self):
        rng = np.random.default_rng(2)
        diag, sub = random_spd_block_tridiag(rng, 2, 4)
        sub[:] = 0.0
        rhs = rng.standard_normal(8)
        x = solve_banded_spd(diag, sub, rhs)
        expect = np.linalg.solve(dense_from_blocks(diag, sub), rhs)
        assert np.allclose(x, expect, atol=1e-10)

    def test_random_spd_vs_dense(self):
        rng = np.random.default_rng(4)
        for T, p in ((3, 2), (6, 3), (10, 5)):
            diag, sub = random_spd_block_tridiag(rng, T, p)
            rhs = rng.standard_normal(T * p)
            x = solve_banded_spd(diag, sub, rhs)
            expect = np.linalg.solve(dense_from_blocks(diag, sub), rhs)
            denom = np.linalg.norm(expect)
            assert np.linalg.norm(x - expect) <= 1e-8 * max(denom, 1.0)

    def test_residual_bound(self):
        rng = np.random.default_rng(6)
        diag, sub = random_spd_block_tridiag(rng, 8, 4)
        rhs = rng.standard_normal(32)
        x = solve_banded_spd(diag, sub, rhs)
        M = dense_from_blocks(diag, sub)
        assert np.linalg.norm(M @ x - rhs) <= 1e-8 * np.linalg.norm(rhs)

    def test_multiple_rhs_shapes(self):
        rng = np.random.default_rng(8)
        diag, sub = random_spd_block_tridiag(rng, 5, 3)
        M = dense_from_blocks(diag, sub)
        rhs = rng.standard_normal((5, 3, 2))
        x = solve_banded_spd(diag, sub, rhs)
        assert x.shape == (5, 3, 2)
        for k in range(2):
            flat = rhs[:, :, k].reshape(-1)
            assert np.allclose(M @ x[:, :, k].reshape(-1), flat, atol=1e-9)

    def test_singular_block_raises(self):
        T, p = 3, 2
        diag = np.tile(np.eye(p), (T, 1, 1))
        diag[1] = 0.0
        sub = np.zeros((T - 1, p, p))
        with pytest.raises(NotSPDError):
            solve_banded_spd(diag, sub, np.ones(T * p))

    def test_rhs_shape_mismatch(self):
        diag = np.tile(np.eye(2), (3, 1, 1))
        sub = np.zeros((2, 2, 2))
        with pytest.raises(DimensionError):
            solve_banded_spd(diag, sub, np.ones(5))
