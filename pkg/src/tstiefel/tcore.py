"""Dense third-order tensor algebra under the t-product.

A tensor is a real numpy array of shape ``(n, p, l)``; ``a[:, :, k]`` is
the k-th frontal slice (0-based).  Element ``(i, j, k)`` is row ``i`` of
column ``j`` of slice ``k``; the serialized layout is slice-major (slice
index outermost, rows within a slice contiguous).

The Fourier representation ``dft(a)`` is the unnormalized DFT of every
tube ``a[i, j, :]``, so spectral slice k is
``sum_j w**(k*j) * a[:, :, j]`` with ``w = exp(-2j*pi/l)``.  For a real
tensor the spectral slices satisfy the conjugate pairing
``ahat[:, :, k] == conj(ahat[:, :, l-k])`` for ``k = 1..l-1``, so only the
first ``l//2 + 1`` slices are independent; the multiplication kernels work
on that half-range (via ``rfft3``/``irfft3``) and mirror the rest by
conjugation.

All multiplication-like operations reduce to independent matrix products
between corresponding spectral slices, equivalent to multiplying by the
block-circulant matrix ``bcirc(a)``; ``bcirc`` itself is retained only as
a brute-force test oracle with a hard size guard.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "ConjugateSymmetryError",
    "SingularSliceError",
    "unfold",
    "fold",
    "bcirc",
    "bcirc_reversed",
    "dft",
    "idft",
    "rfft3",
    "irfft3",
    "half_range",
    "mirror_half_spectrum",
    "conjugate_pairing_defect",
    "check_conjugate_pairing",
    "t_product",
    "t_transpose",
    "identity_tensor",
    "trace",
    "inner",
    "fnorm",
    "sym_part",
    "skew_part",
    "off_part",
    "fdiag_part",
    "t_inverse",
    "t_solve",
    "save_tensor",
    "load_tensor",
    "load_tensor_text",
]

#: Relative imaginary residue above which idft refuses to return a real tensor.
IMAG_TOL = 1e-8

#: Reciprocal-condition threshold below which a spectral slice counts as singular.
RCOND_TOL = 1e-12

#: Hard element-count guard for the dense block-circulant oracle.
BCIRC_GUARD = 10**8


class ConjugateSymmetryError(ValueError):
    """A spectral tensor does not correspond to a real tensor."""


class SingularSliceError(np.linalg.LinAlgError):
    """A spectral slice is numerically singular.

    Attributes
    ----------
    slice_index : int
        0-based index of the offending spectral slice.
    """

    def __init__(self, slice_index, detail=""):
        self.slice_index = slice_index
        msg = f"spectral slice {slice_index} is numerically singular"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


def _as_tensor(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got ndim={a.ndim}")
    return a


def _require_f_square(a, op):
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{op} requires an f-square tensor, got shape {a.shape}")


# ---------------------------------------------------------------------------
# unfold / fold and the block-circulant oracle
# ---------------------------------------------------------------------------


def unfold(a):
    """Stack the frontal slices vertically into an (n*l, p) matrix."""
    a = _as_tensor(a)
    n, p, l = a.shape
    return a.transpose(2, 0, 1).reshape(n * l, p)


def fold(mat, shape):
    """Inverse of :func:`unfold`; ``shape`` is the target ``(n, p, l)``."""
    n, p, l = shape
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (n * l, p):
        raise ValueError(f"cannot fold shape {mat.shape} into tensor {shape}")
    return np.ascontiguousarray(mat.reshape(l, n, p).transpose(1, 2, 0))


def bcirc(a):
    """Dense block-circulant matrix of ``a`` (test oracle only).

    Block ``(i, j)`` is the frontal slice ``(i - j) mod l``, so the first
    block column equals ``unfold(a)``.  Refuses tensors whose circulant
    would exceed ``BCIRC_GUARD`` elements.
    """
    a = _as_tensor(a)
    n, p, l = a.shape
    if (n * l) * (p * l) > BCIRC_GUARD:
        raise ValueError("block-circulant oracle refused: result too large")
    out = np.empty((n * l, p * l))
    for i in range(l):
        for j in range(l):
            out[i * n : (i + 1) * n, j * p : (j + 1) * p] = a[:, :, (i - j) % l]
    return out


def bcirc_reversed(a):
    """Block-circulant matrix whose blocks circulate in the opposite order.

    Block ``(i, j)`` is the frontal slice ``(j - i) mod l``; used by the
    vectorized Sylvester oracle.  Same size guard as :func:`bcirc`.
    """
    a = _as_tensor(a)
    n, p, l = a.shape
    if (n * l) * (p * l) > BCIRC_GUARD:
        raise ValueError("block-circulant oracle refused: result too large")
    out = np.empty((n * l, p * l))
    for i in range(l):
        for j in range(l):
            out[i * n : (i + 1) * n, j * p : (j + 1) * p] = a[:, :, (j - i) % l]
    return out


# ---------------------------------------------------------------------------
# Fourier transforms along the tube dimension
# ---------------------------------------------------------------------------


def dft(a):
    """Unnormalized DFT along the third mode; returns a complex tensor."""
    return np.fft.fft(_as_tensor(a), axis=2)


def idft(ahat):
    """Inverse of :func:`dft`, returning a real tensor.

    Raises :class:`ConjugateSymmetryError` if the imaginary residue of the
    inverse transform exceeds ``IMAG_TOL`` relative to its norm, which
    means the input did not satisfy the conjugate-pairing invariant.
    """
    ahat = np.asarray(ahat, dtype=np.complex128)
    a = np.fft.ifft(ahat, axis=2)
    scale = max(float(np.linalg.norm(a)), np.finfo(np.float64).tiny)
    residue = float(np.linalg.norm(a.imag))
    if residue > IMAG_TOL * scale:
        raise ConjugateSymmetryError(
            f"imaginary residue {residue:.3e} exceeds {IMAG_TOL:.1e} * {scale:.3e}"
        )
    return np.ascontiguousarray(a.real)


def rfft3(a):
    """Half-range DFT: only the ``l//2 + 1`` independent spectral slices."""
    return np.fft.rfft(_as_tensor(a), axis=2)


def irfft3(fa, l):
    """Inverse of :func:`rfft3`; ``l`` is the original tube length."""
    return np.fft.irfft(fa, n=l, axis=2)


def half_range(l):
    """Indices of the independent spectral slices of a real tensor."""
    return range(l // 2 + 1)


def mirror_half_spectrum(half, l):
    """Extend half-range spectral slices to all ``l`` by conjugate pairing.

    ``half`` has the independent slices ``0 .. l//2`` stacked along the
    last axis; slice ``k > l//2`` of the result is ``conj(half[..., l-k])``.
    """
    half = np.asarray(half, dtype=np.complex128)
    h = l // 2 + 1
    if half.shape[-1] != h:
        raise ValueError(f"expected {h} half-range slices, got {half.shape[-1]}")
    out = np.empty(half.shape[:-1] + (l,), dtype=np.complex128)
    out[..., :h] = half
    if l > h:
        out[..., h:] = np.conj(half[..., l - h : 0 : -1])
    return out


def conjugate_pairing_defect(ahat):
    """Frobenius norm of ``ahat[..,k] - conj(ahat[..,l-k])`` over all pairs."""
    ahat = np.asarray(ahat, dtype=np.complex128)
    l = ahat.shape[2]
    defect = float(np.linalg.norm(ahat[:, :, 0].imag)) ** 2
    for k in range(1, l):
        defect += 0.5 * float(
            np.linalg.norm(ahat[:, :, k] - np.conj(ahat[:, :, l - k]))
        ) ** 2
    return np.sqrt(defect)


def check_conjugate_pairing(ahat, tol=1e-10):
    """Raise :class:`ConjugateSymmetryError` if pairing defect is too large."""
    scale = max(float(np.linalg.norm(ahat)), np.finfo(np.float64).tiny)
    defect = conjugate_pairing_defect(ahat)
    if defect > tol * scale:
        raise ConjugateSymmetryError(
            f"conjugate pairing defect {defect:.3e} exceeds {tol:.1e} * {scale:.3e}"
        )


# ---------------------------------------------------------------------------
# t-product and friends
# ---------------------------------------------------------------------------


def _slicewise_matmul(fa, fb):
    # matmul over stacked spectral slices; slice axis rotated first and back
    return (fa.transpose(2, 0, 1) @ fb.transpose(2, 0, 1)).transpose(1, 2, 0)


def _slicewise_conj_t(fa):
    # spectral slices of the tensor transpose are the conjugate transposes
    return np.conj(fa.transpose(1, 0, 2))


def t_product(a, b):
    """t-product of ``a`` (n, p, l) and ``b`` (p, m, l) -> (n, m, l).

    Computed as slicewise matrix products in the Fourier domain, equal to
    ``fold(bcirc(a) @ unfold(b))``.
    """
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ValueError(f"t_product shape mismatch: {a.shape} * {b.shape}")
    l = a.shape[2]
    return irfft3(_slicewise_matmul(rfft3(a), rfft3(b)), l)


def t_transpose(a):
    """Tensor transpose: slice 0 transposed, slices 1..l-1 transposed and reversed."""
    a = _as_tensor(a)
    at = a.transpose(1, 0, 2)
    return np.ascontiguousarray(np.concatenate([at[:, :, :1], at[:, :, :0:-1]], axis=2))


def identity_tensor(p, l):
    """Identity of the t-product algebra: eye on slice 0, zeros elsewhere."""
    out = np.zeros((p, p, l))
    out[:, :, 0] = np.eye(p)
    return out


def trace(a):
    """Trace of an f-square tensor: the sum of its spectral slice traces.

    The spectral traces telescope to ``l * trace(a[:, :, 0])`` for real
    input, which also equals the trace of ``bcirc(a)``.
    """
    a = _as_tensor(a)
    _require_f_square(a, "trace")
    return a.shape[2] * float(np.trace(a[:, :, 0]))


def inner(a, b):
    """Euclidean inner product: sum of entrywise products."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"inner shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.reshape(-1), b.reshape(-1)))


def fnorm(a):
    """Frobenius norm."""
    return float(np.linalg.norm(np.asarray(a)))


def sym_part(a):
    """Symmetric part ``(a + t_transpose(a)) / 2`` of an f-square tensor."""
    a = _as_tensor(a)
    _require_f_square(a, "sym_part")
    return 0.5 * (a + t_transpose(a))


def skew_part(a):
    """Skew-symmetric part ``(a - t_transpose(a)) / 2`` of an f-square tensor."""
    a = _as_tensor(a)
    _require_f_square(a, "skew_part")
    return 0.5 * (a - t_transpose(a))


def off_part(a):
    """Zero the diagonal of every frontal slice of an f-square tensor."""
    a = _as_tensor(a)
    _require_f_square(a, "off_part")
    out = a.copy()
    idx = np.arange(a.shape[0])
    out[idx, idx, :] = 0.0
    return out


def fdiag_part(a):
    """Keep only the diagonal of every frontal slice of an f-square tensor."""
    a = _as_tensor(a)
    _require_f_square(a, "fdiag_part")
    out = np.zeros_like(a)
    idx = np.arange(a.shape[0])
    out[idx, idx, :] = a[idx, idx, :]
    return out


def t_inverse(a):
    """t-product inverse of an f-square tensor.

    Inverts every independent spectral slice and mirrors by conjugation.
    Raises :class:`SingularSliceError` for slices with reciprocal condition
    below ``RCOND_TOL``.
    """
    a = _as_tensor(a)
    _require_f_square(a, "t_inverse")
    n, _, l = a.shape
    fa = rfft3(a)
    inv = np.empty_like(fa)
    for k in half_range(l):
        s = np.linalg.svd(fa[:, :, k], compute_uv=False)
        if s[0] == 0.0 or s[-1] < RCOND_TOL * s[0]:
            raise SingularSliceError(k, f"rcond={0.0 if s[0] == 0 else s[-1] / s[0]:.3e}")
        inv[:, :, k] = np.linalg.inv(fa[:, :, k])
    return irfft3(inv, l)


def t_solve(a, b):
    """Solve ``a * x = b`` for x with f-square ``a``; slicewise spectral solve."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    _require_f_square(a, "t_solve")
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ValueError(f"t_solve shape mismatch: {a.shape} \\ {b.shape}")
    l = a.shape[2]
    fa = rfft3(a)
    fb = rfft3(b)
    out = np.empty_like(fb)
    for k in half_range(l):
        s = np.linalg.svd(fa[:, :, k], compute_uv=False)
        if s[0] == 0.0 or s[-1] < RCOND_TOL * s[0]:
            raise SingularSliceError(k, f"rcond={0.0 if s[0] == 0 else s[-1] / s[0]:.3e}")
        out[:, :, k] = np.linalg.solve(fa[:, :, k], fb[:, :, k])
    return irfft3(out, l)


# ---------------------------------------------------------------------------
# Serialization: binary container and a small text loader for fixtures
# ---------------------------------------------------------------------------

_MAGIC = b"TT3D"


def save_tensor(path, a):
    """Write ``a`` to the binary container.

    Layout: magic ``TT3D``, three little-endian u64 dims (n, p, l), then
    ``n*p*l`` little-endian doubles in slice-major order (slice outermost,
    rows within a slice contiguous).
    """
    a = _as_tensor(a)
    n, p, l = a.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQQ", n, p, l))
        fh.write(np.ascontiguousarray(a.transpose(2, 0, 1), dtype="<f8").tobytes())


def load_tensor(path):
    """Read a tensor written by :func:`save_tensor`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        n, p, l = struct.unpack("<QQQ", fh.read(24))
        data = np.frombuffer(fh.read(8 * n * p * l), dtype="<f8")
    if data.size != n * p * l:
        raise ValueError(f"{path}: truncated payload")
    return np.ascontiguousarray(data.reshape(l, n, p).transpose(1, 2, 0))


def load_tensor_text(path):
    """Read a small text fixture.

    First non-comment line holds ``n p l``; then ``l`` blocks of ``n`` rows
    with ``p`` whitespace- or comma-separated values each.  Blank lines and
    ``#`` comments are ignored.
    """
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            rows.append([float(tok) for tok in line.replace(",", " ").split()])
    if not rows:
        raise ValueError(f"{path}: empty tensor file")
    n, p, l = (int(v) for v in rows[0])
    body = rows[1:]
    if len(body) != n * l or any(len(r) != p for r in body):
        raise ValueError(f"{path}: expected {n * l} rows of {p} values")
    return fold(np.asarray(body), (n, p, l))
