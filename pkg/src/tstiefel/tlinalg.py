"""Factorizations and matrix-function analogues in the t-product algebra.

Every routine here follows the same recipe: transform to the Fourier
domain, run a dense matrix factorization on each independent spectral
slice (the first ``l//2 + 1``), mirror the factors onto the remaining
slices by conjugation, and transform back.  The mirroring keeps all
outputs real; ``tcore.idft`` verifies that.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import tcore
from .tcore import (
    RCOND_TOL,
    half_range,
    idft,
    identity_tensor,
    irfft3,
    mirror_half_spectrum,
    rfft3,
    t_product,
    t_transpose,
)

__all__ = [
    "RankDeficientError",
    "NotPositiveError",
    "SingularPencilError",
    "InconsistentSystemError",
    "TSvd",
    "TQr",
    "TPolar",
    "t_svd",
    "t_qr",
    "spd_sqrt",
    "spd_inv_sqrt",
    "t_polar",
    "procrustes_max",
    "t_exp",
    "skew_upper_split",
    "t_sylvester_vec",
    "t_sylvester_spectral",
]

#: Unknown-count guard for the vectorized Sylvester oracle.
SYLVESTER_GUARD = 10**4


class RankDeficientError(np.linalg.LinAlgError):
    """A spectral slice lost full column rank."""

    def __init__(self, slice_index, detail=""):
        self.slice_index = slice_index
        msg = f"spectral slice {slice_index} is rank deficient"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NotPositiveError(np.linalg.LinAlgError):
    """A spectral slice eigenvalue violates a positivity requirement."""

    def __init__(self, slice_index, min_eig):
        self.slice_index = slice_index
        self.min_eig = min_eig
        super().__init__(
            f"spectral slice {slice_index} has eigenvalue {min_eig:.3e} "
            "below the positivity bound"
        )


class SingularPencilError(np.linalg.LinAlgError):
    """A slicewise Sylvester equation has a singular pencil."""

    def __init__(self, slice_index):
        self.slice_index = slice_index
        super().__init__(
            f"Sylvester pencil is singular on spectral slice {slice_index}"
        )


class InconsistentSystemError(np.linalg.LinAlgError):
    """A least-squares Sylvester solve left a residual above tolerance."""


class TSvd(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


class TQr(NamedTuple):
    q: np.ndarray
    r: np.ndarray


class TPolar(NamedTuple):
    p: np.ndarray
    h: np.ndarray


def _rank_guard(slice_mat, k, rel=RCOND_TOL):
    sv = np.linalg.svd(slice_mat, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= rel * sv[0]:
        detail = "all-zero slice" if sv[0] == 0.0 else f"sv ratio {sv[-1] / sv[0]:.3e}"
        raise RankDeficientError(k, detail)
    return sv


def t_svd(a, compact=False):
    """Tensor SVD ``a = u * s * v^T`` via slicewise SVDs.

    Full form: ``u`` is (n, n, l) orthogonal, ``s`` (n, p, l) f-diagonal with
    nonnegative descending spectral diagonals, ``v`` (p, p, l) orthogonal.
    With ``compact=True`` the factors shrink to (n, r, l), (r, r, l),
    (p, r, l) with ``r = min(n, p)``.
    """
    a = tcore._as_tensor(a)
    n, p, l = a.shape
    r = min(n, p)
    fa = rfft3(a)
    h = l // 2 + 1
    du = n if not compact else r
    dv = p if not compact else r
    uh = np.empty((n, du, h), dtype=np.complex128)
    vh = np.empty((p, dv, h), dtype=np.complex128)
    sh = np.zeros((du, dv, h), dtype=np.complex128)
    for k in half_range(l):
        uk, sk, vkh = np.linalg.svd(fa[:, :, k], full_matrices=not compact)
        uh[:, :, k] = uk
        vh[:, :, k] = vkh.conj().T
        sh[: len(sk), : len(sk), k] = np.diag(sk)
    u = idft(mirror_half_spectrum(uh, l))
    s = idft(mirror_half_spectrum(sh, l))
    v = idft(mirror_half_spectrum(vh, l))
    return TSvd(u, s, v)


def _phase_fix(q, r):
    """Rotate QR factor columns so the triangular diagonal is real positive."""
    d = np.diagonal(r)
    ph = d / np.abs(d)
    return q * ph[np.newaxis, :], r * np.conj(ph)[:, np.newaxis]


def _t_qr_slices(fa, l, guard):
    n, p = fa.shape[:2]
    qh = np.empty((n, p, l // 2 + 1), dtype=np.complex128)
    rh = np.empty((p, p, l // 2 + 1), dtype=np.complex128)
    for k in half_range(l):
        if guard:
            _rank_guard(fa[:, :, k], k)
        qk, rk = np.linalg.qr(fa[:, :, k])
        qh[:, :, k], rh[:, :, k] = _phase_fix(qk, rk)
    return qh, rh


def t_qr(a):
    """Tensor QR ``a = q * r`` with ``q^T * q = I``.

    The spectral slices of ``r`` are upper triangular with strictly
    positive real diagonals, which makes the factorization unique.  Raises
    :class:`RankDeficientError` when a spectral slice of ``a`` is not of
    full column rank.
    """
    a = tcore._as_tensor(a)
    n, p, l = a.shape
    if n < p:
        raise ValueError(f"t_qr requires n >= p, got shape {a.shape}")
    qh, rh = _t_qr_slices(rfft3(a), l, guard=True)
    q = idft(mirror_half_spectrum(qh, l))
    r = idft(mirror_half_spectrum(rh, l))
    return TQr(q, r)


def _t_qr_q_unguarded(a):
    """Q factor without the rank guard, for inputs known to be full rank."""
    n, p, l = a.shape
    qh, _ = _t_qr_slices(rfft3(a), l, guard=False)
    return irfft3(qh, l)


def _sym_eig_map(a, transform, op):
    """Apply ``transform`` to the eigenvalues of each Hermitian spectral slice."""
    a = tcore._as_tensor(a)
    tcore._require_f_square(a, op)
    n, _, l = a.shape
    fa = rfft3(a)
    out = np.empty_like(fa)
    for k in half_range(l):
        slice_k = 0.5 * (fa[:, :, k] + fa[:, :, k].conj().T)
        w, q = np.linalg.eigh(slice_k)
        w = transform(w, k)
        out[:, :, k] = (q * w[np.newaxis, :]) @ q.conj().T
    return idft(mirror_half_spectrum(out, l))


def spd_sqrt(a):
    """Square root of a symmetric t-positive-semidefinite tensor.

    Eigenvalues marginally below zero (floating-point noise) are clamped;
    genuinely negative ones raise :class:`NotPositiveError`.
    """

    def transform(w, k):
        bound = -RCOND_TOL * max(abs(w[0]), abs(w[-1]), 1.0)
        if w[0] < bound:
            raise NotPositiveError(k, float(w[0]))
        return np.sqrt(np.maximum(w, 0.0))

    return _sym_eig_map(a, transform, "spd_sqrt")


def spd_inv_sqrt(a):
    """Inverse square root of a symmetric t-positive-definite tensor."""

    def transform(w, k):
        bound = RCOND_TOL * max(abs(w[0]), abs(w[-1]))
        if w[0] <= bound:
            raise NotPositiveError(k, float(w[0]))
        return 1.0 / np.sqrt(w)

    return _sym_eig_map(a, transform, "spd_inv_sqrt")


def t_polar(a):
    """Tensor polar decomposition ``a = p * h``.

    ``p`` is partially orthogonal and ``h = v * s * v^T`` is the unique
    symmetric positive-semidefinite factor; both come from the compact
    tensor SVD slice by slice.  Raises :class:`RankDeficientError` when a
    spectral slice is rank deficient (then ``p`` would not be unique).
    """
    a = tcore._as_tensor(a)
    n, p, l = a.shape
    if n < p:
        raise ValueError(f"t_polar requires n >= p, got shape {a.shape}")
    fa = rfft3(a)
    h = l // 2 + 1
    ph = np.empty((n, p, h), dtype=np.complex128)
    hh = np.empty((p, p, h), dtype=np.complex128)
    for k in half_range(l):
        uk, sk, vkh = np.linalg.svd(fa[:, :, k], full_matrices=False)
        if sk[0] == 0.0 or sk[-1] <= RCOND_TOL * sk[0]:
            raise RankDeficientError(k, f"sv ratio {0.0 if sk[0] == 0 else sk[-1] / sk[0]:.3e}")
        vk = vkh.conj().T
        ph[:, :, k] = uk @ vkh
        hh[:, :, k] = (vk * sk[np.newaxis, :]) @ vkh
    pol = idft(mirror_half_spectrum(ph, l))
    herm = idft(mirror_half_spectrum(hh, l))
    return TPolar(pol, herm)


def procrustes_max(a):
    """Feasible maximizer of ``<a, x>`` over partially orthogonal ``x``."""
    return t_polar(a).p


def t_exp(a):
    """t-exponential: slicewise matrix exponential in the Fourier domain."""
    a = tcore._as_tensor(a)
    tcore._require_f_square(a, "t_exp")
    l = a.shape[2]
    fa = rfft3(a)
    out = np.empty_like(fa)
    for k in half_range(l):
        out[:, :, k] = scipy.linalg.expm(fa[:, :, k])
    return idft(mirror_half_spectrum(out, l))


def skew_upper_split(bhat):
    """Split each spectral slice into skew-Hermitian plus upper triangular.

    For every slice ``B`` this returns the unique pair ``S + T = B`` with
    ``S^H = -S`` and ``T`` upper triangular with real diagonal: ``S``
    copies the strict lower triangle of ``B``, mirrors it with negated
    conjugates above the diagonal, and keeps ``i * imag`` on the diagonal.
    """
    bhat = np.asarray(bhat, dtype=np.complex128)
    if bhat.ndim != 3 or bhat.shape[0] != bhat.shape[1]:
        raise ValueError(f"expected f-square spectral tensor, got {bhat.shape}")
    m = np.moveaxis(bhat, 2, 0)
    low = np.tril(m, -1)
    skew = low - np.conj(np.swapaxes(low, 1, 2))
    idx = np.arange(bhat.shape[0])
    skew[:, idx, idx] = 1j * np.imag(m[:, idx, idx])
    upper = m - skew
    return np.moveaxis(skew, 0, 2), np.moveaxis(upper, 0, 2)


def _vec(a):
    # column-major over (row, column, slice): slice-major block layout
    return np.asarray(a).reshape(-1, order="F")


def _unvec(v, shape):
    return np.asarray(v).reshape(shape, order="F")


def _identity_khatri_bcirc(a, p):
    """Blockwise Kronecker of an identity block grid with ``bcirc(a)``."""
    n, _, l = a.shape
    bc = tcore.bcirc(a)
    eye = np.eye(p)
    out = np.zeros((n * p * l, n * p * l))
    for i in range(l):
        for j in range(l):
            blk = np.kron(eye, bc[i * n : (i + 1) * n, j * n : (j + 1) * n])
            out[i * n * p : (i + 1) * n * p, j * n * p : (j + 1) * n * p] = blk
    return out


def t_sylvester_vec(a, b, c, residual_tol=1e-8):
    """Reference solver for ``a * x + x * b = c`` via one dense system.

    Builds the ``npl x npl`` matrix acting on the vectorization of ``x``
    and solves it in the least-squares sense.  Intended as a correctness
    oracle for tiny problems only; raises on more than
    ``SYLVESTER_GUARD`` unknowns, and raises
    :class:`InconsistentSystemError` when the residual exceeds
    ``residual_tol * fnorm(c)``.
    """
    a = tcore._as_tensor(a)
    b = tcore._as_tensor(b)
    c = tcore._as_tensor(c)
    n, _, l = a.shape
    p = b.shape[0]
    tcore._require_f_square(a, "t_sylvester_vec")
    tcore._require_f_square(b, "t_sylvester_vec")
    if c.shape != (n, p, l) or b.shape[2] != l:
        raise ValueError(
            f"t_sylvester_vec shape mismatch: a={a.shape} b={b.shape} c={c.shape}"
        )
    if n * p * l > SYLVESTER_GUARD:
        raise ValueError(f"vectorized Sylvester oracle refused: {n * p * l} unknowns")
    system = np.kron(tcore.bcirc_reversed(b).T, np.eye(n)) + _identity_khatri_bcirc(a, p)
    sol, *_ = np.linalg.lstsq(system, _vec(c), rcond=None)
    x = _unvec(sol, (n, p, l))
    residual = tcore.fnorm(t_product(a, x) + t_product(x, b) - c)
    if residual > residual_tol * max(tcore.fnorm(c), np.finfo(np.float64).tiny):
        raise InconsistentSystemError(
            f"Sylvester residual {residual:.3e} exceeds tolerance; system inconsistent"
        )
    return x


def t_sylvester_spectral(a, b, c):
    """Production solver for ``a * x + x * b = c``: decoupled slicewise solves.

    Each independent spectral slice yields an ordinary matrix Sylvester
    equation.  Raises :class:`SingularPencilError` when the spectra of a
    slice pair overlap (minimum eigenvalue-sum magnitude below 1e-12).
    """
    a = tcore._as_tensor(a)
    b = tcore._as_tensor(b)
    c = tcore._as_tensor(c)
    n, _, l = a.shape
    p = b.shape[0]
    tcore._require_f_square(a, "t_sylvester_spectral")
    tcore._require_f_square(b, "t_sylvester_spectral")
    if c.shape != (n, p, l) or b.shape[2] != l:
        raise ValueError(
            f"t_sylvester_spectral shape mismatch: a={a.shape} b={b.shape} c={c.shape}"
        )
    fa, fb, fc = rfft3(a), rfft3(b), rfft3(c)
    out = np.empty_like(fc)
    for k in half_range(l):
        ea = np.linalg.eigvals(fa[:, :, k])
        eb = np.linalg.eigvals(fb[:, :, k])
        if np.min(np.abs(ea[:, np.newaxis] + eb[np.newaxis, :])) <= 1e-12:
            raise SingularPencilError(k)
        out[:, :, k] = scipy.linalg.solve_sylvester(
            fa[:, :, k], fb[:, :, k], fc[:, :, k]
        )
    return idft(mirror_half_spectrum(out, l))
