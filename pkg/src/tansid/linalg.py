"""Dense linear-algebra kernels shared by the rest of the package.

Three operations live here: a scaling-and-squaring matrix exponential,
an unsymmetric eigenvalue solver (balance + Hessenberg + double-shift QR)
and a block-tridiagonal Cholesky solve for SPD normal equations.  All
arithmetic is float64; inputs are plain numpy arrays.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "DimensionError",
    "NotSPDError",
    "EigenConvergenceError",
    "mat_exp",
    "eigenvalues",
    "solve_banded_spd",
]

# Largest square size accepted by the eigensolver; spectra here come from
# systems with at most a few dozen states.
MAX_EIG_SIZE = 64

# Subdiagonal entries below this fraction of the local diagonal magnitude
# are deflated to zero during QR iteration.
DEFLATION_TOL = 1e-12


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the operation."""


class NotSPDError(ValueError):
    """A Cholesky pivot was non-positive: the system is not SPD."""


class EigenConvergenceError(RuntimeError):
    """QR iteration ran out of its iteration budget.

    The eigenvalues found before the failure are attached as ``partial``.
    """

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = np.asarray(partial, dtype=np.complex128)


def _require_square(M, op):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{op} requires a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DimensionError(f"{op} requires finite entries")
    return M


# ---------------------------------------------------------------------------
# Matrix exponential
# ---------------------------------------------------------------------------

# Diagonal Pade coefficients of order 6: c[k] = (12-k)! 6! / (12! k! (6-k)!)
_PADE6 = np.array(
    [1.0, 1 / 2, 5 / 44, 1 / 66, 1 / 792, 1 / 15840, 1 / 665280]
)


def mat_exp(M: np.ndarray) -> np.ndarray:
    """Matrix exponential via scaling-and-squaring with an order-6 Pade core.

    The matrix is scaled by 2**-s until its infinity norm is at most 0.5,
    the [6/6] Pade approximant is evaluated, and the result is squared s
    times.  Accuracy on the sizes used here is near machine precision.
    """
    M = _require_square(M, "mat_exp")
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0))

    norm = np.linalg.norm(M, np.inf)
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    A = M / (2.0**s)

    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    c = _PADE6
    ident = np.eye(n)
    U = A @ (c[1] * ident + c[3] * A2 + c[5] * A4)
    V = c[0] * ident + c[2] * A2 + c[4] * A4 + c[6] * A6
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


# ---------------------------------------------------------------------------
# Unsymmetric eigenvalues
# ---------------------------------------------------------------------------


def _balance(A):
    """Parlett-Reinsch diagonal balancing (radix-2, eigenvalues preserved)."""
    A = A.copy()
    n = A.shape[0]
    radix = 2.0
    radix2 = radix * radix
    converged = False
    while not converged:
        converged = True
        for i in range(n):
            r = np.sum(np.abs(A[i, :])) - abs(A[i, i])
            c = np.sum(np.abs(A[:, i])) - abs(A[i, i])
            if r == 0.0 or c == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= radix2
            g = r * radix
            while c >= g:
                f /= radix
                c /= radix2
            if (c + r) / f < 0.95 * s:
                converged = False
                A[i, :] *= 1.0 / f
                A[:, i] *= f
    return A


def _hessenberg(A):
    """Reduce to upper Hessenberg form with Householder reflectors."""
    H = A.copy()
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1 :, k]
        normx = np.linalg.norm(x)
        if normx == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(normx, x[0] if x[0] != 0 else 1.0)
        vn = np.linalg.norm(v)
        if vn == 0.0:
            continue
        v /= vn
        H[k + 1 :, k:] -= 2.0 * np.outer(v, v @ H[k + 1 :, k:])
        H[:, k + 1 :] -= 2.0 * np.outer(H[:, k + 1 :] @ v, v)
        H[k + 2 :, k] = 0.0
    return H


def _eig2x2(a, b, c, d):
    """Eigenvalues of [[a, b], [c, d]] as a complex pair."""
    tr = a + d
    det = a * d - b * c
    half = 0.5 * tr
    disc = half * half - det
    if disc >= 0.0:
        sq = np.sqrt(disc)
        if half >= 0.0:
            l1 = half + sq
        else:
            l1 = half - sq
        l2 = det / l1 if l1 != 0.0 else half - np.copysign(sq, half)
        return complex(l1), complex(l2)
    sq = np.sqrt(-disc)
    return complex(half, sq), complex(half, -sq)


def _householder3(x, y, z):
    """Unit reflector vector annihilating the trailing entries of (x, y, z)."""
    alpha = np.sqrt(x * x + y * y + z * z)
    if alpha == 0.0:
        return None
    if x >= 0.0:
        alpha = -alpha
    v = np.array([x - alpha, y, z])
    vn = np.linalg.norm(v)
    if vn == 0.0:
        return None
    return v / vn


def _francis_step(Hb, exceptional):
    """One implicit double-shift QR sweep on the active Hessenberg block."""
    nb = Hb.shape[0]
    a = Hb[nb - 2, nb - 2]
    b = Hb[nb - 2, nb - 1]
    c = Hb[nb - 1, nb - 2]
    d = Hb[nb - 1, nb - 1]
    if exceptional:
        # Ad-hoc shifts to break symmetric cycles (aligned with classic hqr).
        delta = abs(c) + (abs(Hb[nb - 2, nb - 3]) if nb > 2 else 0.0)
        mu1 = d + 0.75 * delta
        mu2 = d - 0.4375 * delta
        s = mu1 + mu2
        t = mu1 * mu2
    else:
        s = a + d
        t = a * d - b * c

    x = Hb[0, 0] * Hb[0, 0] + Hb[0, 1] * Hb[1, 0] - s * Hb[0, 0] + t
    y = Hb[1, 0] * (Hb[0, 0] + Hb[1, 1] - s)
    z = Hb[2, 1] * Hb[1, 0]

    for k in range(nb - 2):
        v = _householder3(x, y, z)
        if v is not None:
            r0 = max(k - 1, 0)
            rows = slice(k, k + 3)
            Hb[rows, r0:] -= 2.0 * np.outer(v, v @ Hb[rows, r0:])
            r1 = min(k + 4, nb)
            Hb[:r1, rows] -= 2.0 * np.outer(Hb[:r1, rows] @ v, v)
        x = Hb[k + 1, k]
        y = Hb[k + 2, k]
        z = Hb[k + 3, k] if k + 3 < nb else 0.0

    # Final 2-vector reflector clears the residual bulge entry.
    alpha = np.hypot(x, y)
    if alpha != 0.0:
        if x >= 0.0:
            alpha = -alpha
        v = np.array([x - alpha, y])
        vn = np.linalg.norm(v)
        if vn != 0.0:
            v /= vn
            rows = slice(nb - 2, nb)
            r0 = nb - 3
            Hb[rows, r0:] -= 2.0 * np.outer(v, v @ Hb[rows, r0:])
            Hb[:, rows] -= 2.0 * np.outer(Hb[:, rows] @ v, v)


def eigenvalues(M: np.ndarray, max_iters: int | None = None) -> np.ndarray:
    """All eigenvalues of a real square matrix, with multiplicity.

    Balancing, Householder Hessenberg reduction and Francis double-shift QR
    with deflation.  The output order is unspecified but deterministic for a
    fixed input.

    Raises
    ------
    EigenConvergenceError
        If the total QR sweep count exceeds the budget (100*n by default);
        eigenvalues deflated before the failure ride along as ``partial``.
    """
    M = _require_square(M, "eigenvalues")
    n = M.shape[0]
    if n > MAX_EIG_SIZE:
        raise DimensionError(f"eigenvalues supports sizes up to {MAX_EIG_SIZE}, got {n}")
    if n == 0:
        return np.zeros(0, dtype=np.complex128)
    if n == 1:
        return np.array([M[0, 0]], dtype=np.complex128)
    if max_iters is None:
        max_iters = 100 * n

    H = _hessenberg(_balance(M))
    eigs = []
    hi = n - 1
    total_its = 0
    block_its = 0
    while hi >= 0:
        # Scan for a negligible subdiagonal entry from the bottom up.
        lo = hi
        while lo > 0:
            h = abs(H[lo, lo - 1])
            local = abs(H[lo - 1, lo - 1]) + abs(H[lo, lo])
            if local == 0.0:
                local = abs(H[lo, lo - 1])
            if h <= DEFLATION_TOL * local:
                H[lo, lo - 1] = 0.0
                break
            lo -= 1

        if lo == hi:
            eigs.append(complex(H[hi, hi]))
            hi -= 1
            block_its = 0
        elif lo == hi - 1:
            l1, l2 = _eig2x2(H[lo, lo], H[lo, hi], H[hi, lo], H[hi, hi])
            eigs.extend([l1, l2])
            hi -= 2
            block_its = 0
        else:
            if total_its >= max_iters:
                raise EigenConvergenceError(
                    f"QR iteration did not converge within {max_iters} sweeps "
                    f"({len(eigs)} of {n} eigenvalues found)",
                    eigs,
                )
            block_its += 1
            total_its += 1
            exceptional = block_its % 10 == 0
            _francis_step(H[lo : hi + 1, lo : hi + 1], exceptional)

    return np.array(eigs, dtype=np.complex128)


# ---------------------------------------------------------------------------
# Block-tridiagonal SPD solve
# ---------------------------------------------------------------------------


def solve_banded_spd(diag_blocks, sub_blocks, rhs):
    """Solve an SPD block-tridiagonal system by banded block Cholesky.

    Parameters
    ----------
    diag_blocks : (T, p, p) array
        Diagonal blocks of the coefficient matrix.
    sub_blocks : (T-1, p, p) array
        Subdiagonal blocks; ``sub_blocks[t]`` sits at block row t+1, column t.
        Superdiagonal blocks are their transposes (the matrix is symmetric).
    rhs : (T*p,), (T, p) or (T, p, k) array
        One or several right-hand sides.

    Returns
    -------
    Solution with the same shape as ``rhs``.

    Raises
    ------
    NotSPDError
        On a non-positive pivot (rank-deficient or indefinite system).
    """
    D = np.asarray(diag_blocks, dtype=np.float64)
    E = np.asarray(sub_blocks, dtype=np.float64)
    if D.ndim != 3 or D.shape[1] != D.shape[2]:
        raise DimensionError(f"diag_blocks must be (T, p, p), got {D.shape}")
    T, p, _ = D.shape
    if T == 0:
        raise DimensionError("empty system")
    if E.shape != (max(T - 1, 0), p, p) and not (T == 1 and E.size == 0):
        raise DimensionError(f"sub_blocks must be (T-1, p, p), got {E.shape}")

    b = np.asarray(rhs, dtype=np.float64)
    orig_shape = b.shape
    if b.ndim == 1:
        if b.size != T * p:
            raise DimensionError(f"rhs length {b.size} does not match T*p={T * p}")
        b = b.reshape(T, p, 1)
    elif b.ndim == 2:
        if b.shape != (T, p):
            raise DimensionError(f"rhs shape {orig_shape} does not match (T, p)=({T}, {p})")
        b = b[:, :, None]
    elif b.ndim == 3:
        if b.shape[:2] != (T, p):
            raise DimensionError(f"rhs shape {orig_shape} does not match (T, p, k)")
    else:
        raise DimensionError(f"rhs must have 1 to 3 dimensions, got {b.ndim}")

    def chol(block, t):
        if not np.all(np.isfinite(block)):
            raise NotSPDError(f"non-finite Schur complement at block {t}")
        try:
            return np.linalg.cholesky(block)
        except np.linalg.LinAlgError:
            raise NotSPDError(
                f"non-positive pivot in block {t}: system is not SPD"
            ) from None

    # Factor: M = L_blk L_blk^T with lower-triangular diagonal blocks L[t]
    # and dense subdiagonal blocks C[t] = E[t] L[t]^{-T}.
    L = np.empty_like(D)
    C = np.empty_like(E) if T > 1 else np.zeros((0, p, p))
    L[0] = chol(D[0], 0)
    for t in range(1, T):
        Ct = solve_triangular(L[t - 1], E[t - 1].T, lower=True).T
        C[t - 1] = Ct
        L[t] = chol(D[t] - Ct @ Ct.T, t)

    # Forward then backward substitution.
    y = np.empty_like(b)
    y[0] = solve_triangular(L[0], b[0], lower=True)
    for t in range(1, T):
        y[t] = solve_triangular(L[t], b[t] - C[t - 1] @ y[t - 1], lower=True)
    x = np.empty_like(b)
    x[T - 1] = solve_triangular(L[T - 1].T, y[T - 1], lower=False)
    for t in range(T - 2, -1, -1):
        x[t] = solve_triangular(L[t].T, y[t] - C[t].T @ x[t + 1], lower=False)

    return x.reshape(orig_shape)
