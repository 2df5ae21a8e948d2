"""The tensor Stiefel manifold: tensors ``x`` with ``x^T * x = I``.

Points and tangent vectors are plain ``(n, p, l)`` numpy arrays; a tangent
vector ``v`` at ``x`` satisfies ``x^T * v + v^T * x = 0``.  The
:class:`TensorStiefel` class bundles feasibility checks, the tangent
projector, Riemannian gradient/Hessian lifts, four retractions
("qr", "polar", "cayley", "exp") and five vector transports
("projection", "qr-diff", "polar-diff", "cayley-diff",
"cayley-isometric").
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from . import tcore, tlinalg
from .tcore import (
    fnorm,
    half_range,
    identity_tensor,
    idft,
    inner,
    mirror_half_spectrum,
    rfft3,
    sym_part,
    t_product,
    t_solve,
    t_transpose,
)

__all__ = [
    "FeasibilityError",
    "RETRACTIONS",
    "TRANSPORTS",
    "manifold_dim",
    "TensorStiefel",
    "curve_product_derivative",
]

RETRACTIONS = ("qr", "polar", "cayley", "exp")
TRANSPORTS = ("projection", "qr-diff", "polar-diff", "cayley-diff", "cayley-isometric")

FEASIBILITY_TOL = 1e-10
TANGENT_TOL = 1e-8


class FeasibilityError(ValueError):
    """A tensor violates the orthogonality or tangency constraint."""


def manifold_dim(n, p, l):
    """Dimension of the manifold of (n, p, l) partially orthogonal tensors.

    Equals ``n*p*l`` minus the dimension of the symmetric constraint space:
    ``p*(n*l - p*l/2 - 1)`` for even ``l`` and ``p*(n*l - p*l/2 - 1/2)``
    for odd ``l`` (always an integer).
    """
    if not (n >= p >= 1 and l >= 1):
        raise ValueError(f"invalid dimensions (n={n}, p={p}, l={l})")
    correction = 2 * p if l % 2 == 0 else p
    return n * p * l - (p * p * l + correction) // 2


class TensorStiefel:
    """Geometry toolbox for one fixed shape ``(n, p, l)`` with ``n >= p``."""

    def __init__(self, n, p, l):
        if not (n >= p >= 1 and l >= 1):
            raise ValueError(f"invalid dimensions (n={n}, p={p}, l={l})")
        self.n = int(n)
        self.p = int(p)
        self.l = int(l)

    def __repr__(self):
        return f"TensorStiefel(n={self.n}, p={self.p}, l={self.l})"

    @property
    def shape(self):
        return (self.n, self.p, self.l)

    @property
    def dim(self):
        return manifold_dim(self.n, self.p, self.l)

    # -- feasibility ----------------------------------------------------

    def feasibility_defect(self, x):
        """``fnorm(x^T * x - I)``."""
        gram = t_product(t_transpose(x), x)
        return fnorm(gram - identity_tensor(self.p, self.l))

    def tangency_defect(self, x, v):
        """``fnorm(x^T * v + v^T * x)``."""
        xv = t_product(t_transpose(x), v)
        return fnorm(xv + t_transpose(xv))

    def check_point(self, x, tol=FEASIBILITY_TOL):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.shape:
            raise FeasibilityError(f"point shape {x.shape} != {self.shape}")
        defect = self.feasibility_defect(x)
        if defect > tol:
            raise FeasibilityError(f"feasibility defect {defect:.3e} exceeds {tol:.1e}")
        return x

    def check_tangent(self, x, v, tol=TANGENT_TOL):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.shape:
            raise FeasibilityError(f"tangent shape {v.shape} != {self.shape}")
        defect = self.tangency_defect(x, v)
        if defect > tol * (1.0 + fnorm(v)):
            raise FeasibilityError(f"tangency defect {defect:.3e} exceeds {tol:.1e}")
        return v

    # -- random elements -------------------------------------------------

    def random_point(self, seed=None):
        """Feasible point from the QR factor of a Gaussian tensor."""
        rng = np.random.default_rng(seed)
        while True:
            g = rng.standard_normal(self.shape)
            try:
                return tlinalg.t_qr(g).q
            except tlinalg.RankDeficientError:  # pragma: no cover - measure zero
                continue

    def random_tangent(self, x, seed=None, unit=False):
        rng = np.random.default_rng(seed)
        v = self.project(x, rng.standard_normal(self.shape))
        if unit:
            v /= fnorm(v)
        return v

    # -- tangent projector, gradient, Hessian ----------------------------

    def project(self, x, u):
        """Orthogonal projection ``u - x * sym(x^T * u)`` onto the tangent space."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape != self.shape:
            raise ValueError(f"ambient shape {u.shape} != {self.shape}")
        return u - t_product(x, sym_part(t_product(t_transpose(x), u)))

    def gradient(self, x, egrad):
        """Riemannian gradient from the Euclidean gradient of an extension."""
        return self.project(x, egrad)

    def hessian(self, x, v, egrad, ehess):
        """Riemannian Hessian action on tangent ``v``.

        ``ehess`` is a callable returning the Euclidean Hessian-vector
        product of the ambient extension.
        """
        correction = t_product(v, sym_part(t_product(t_transpose(x), egrad)))
        return self.project(x, np.asarray(ehess(v), dtype=np.float64)) - correction

    # -- retractions ------------------------------------------------------

    def retract(self, x, v, method="qr"):
        if method == "qr":
            return self.retract_qr(x, v)
        if method == "polar":
            return self.retract_polar(x, v)
        if method == "cayley":
            return self.retract_cayley(x, v)
        if method == "exp":
            return self.retract_exp(x, v)
        raise ValueError(f"unknown retraction {method!r}; choose from {RETRACTIONS}")

    def retract_qr(self, x, v):
        """QR retraction: the orthogonal factor of ``x + v``.

        ``x + v`` is full rank by construction for tangent ``v``, so the
        rank guard of the public factorization is skipped.
        """
        return tlinalg._t_qr_q_unguarded(x + v)

    def retract_polar(self, x, v):
        """Polar retraction ``(x + v) * (I + v^T * v)^{-1/2}``.

        The Gram tensor is computed from the actual ``x + v`` (equal to
        ``I + v^T * v`` for tangent ``v``), which keeps the output
        orthonormal to machine precision even when ``v`` carries
        floating-point tangency drift.
        """
        a = x + v
        gram = t_product(t_transpose(a), a)
        return t_product(a, tlinalg.spd_inv_sqrt(gram))

    def _cayley_w(self, x, v):
        """Skew generator ``p*v*x^T - x*v^T*p`` with ``p = I - x*x^T/2``."""
        vxt = t_product(v, t_transpose(x))
        xxt = t_product(x, t_transpose(x))
        half = 0.5 * t_product(xxt, vxt)
        w = vxt - half
        return w - t_transpose(w)

    def retract_cayley(self, x, v):
        """Cayley retraction ``(I - w/2)^{-1} * (I + w/2) * x``."""
        w = self._cayley_w(x, v)
        eye = identity_tensor(self.n, self.l)
        rhs = t_product(eye + 0.5 * w, x)
        return t_solve(eye - 0.5 * w, rhs)

    def retract_exp(self, x, v, t=1.0):
        """Geodesic retraction: point at parameter ``t`` along the geodesic.

        For ``n <= 2p`` uses the closed form
        ``exp(t * (v*x^T + x*v^T*(x*x^T - I))) * x``; otherwise builds the
        smaller block generator from the QR factors of the normal component
        of ``v``, falling back to explicit orthonormal complements when
        that component is spectrally rank deficient.
        """
        n, p, l = self.shape
        if n <= 2 * p:
            xt = t_transpose(x)
            w = t_product(v, xt) + t_product(
                x, t_product(t_transpose(v), t_product(x, xt))
            ) - t_product(x, t_transpose(v))
            # exactly skew for tangent v; symmetrizing drops only fp noise
            # and keeps the exponential orthogonal
            w = 0.5 * (w - t_transpose(w))
            return t_product(tlinalg.t_exp(t * w), x)
        fx = rfft3(np.asarray(x, dtype=np.float64))
        fv = rfft3(np.asarray(v, dtype=np.float64))
        h = l // 2 + 1
        fc = np.empty_like(fv)
        degenerate = False
        for k in half_range(l):
            xk = fx[:, :, k]
            fc[:, :, k] = fv[:, :, k] - xk @ (xk.conj().T @ fv[:, :, k])
            sv = np.linalg.svd(fc[:, :, k], compute_uv=False)
            if sv[0] == 0.0 or sv[-1] < 1e-10 * sv[0]:
                degenerate = True
        width = (n - p) if degenerate else p
        out = np.empty((n, p, h), dtype=np.complex128)
        for k in half_range(l):
            xk = fx[:, :, k]
            if degenerate:
                proj = np.eye(n) - xk @ xk.conj().T
                qfull, _, _ = scipy.linalg.qr(proj, pivoting=True)
                qk = qfull[:, : n - p]
                rk = qk.conj().T @ fc[:, :, k]
            else:
                qk, rk = np.linalg.qr(fc[:, :, k])
            gen = np.zeros((p + width, p + width), dtype=np.complex128)
            m = xk.conj().T @ fv[:, :, k]
            gen[:p, :p] = 0.5 * (m - m.conj().T)
            gen[:p, p:] = -rk.conj().T
            gen[p:, :p] = rk
            ek = scipy.linalg.expm(t * gen)
            out[:, :, k] = np.hstack([xk, qk]) @ ek[:, :p]
        return idft(mirror_half_spectrum(out, l))

    # -- vector transports --------------------------------------------------

    def transport(self, x, u, v, method="projection", retraction="qr", y=None):
        """Carry tangent ``v`` at ``x`` to the tangent space at ``R_x(u)``."""
        if method == "projection":
            return self.transport_projection(x, u, v, retraction=retraction, y=y)
        if method == "qr-diff":
            return self.transport_qr_diff(x, u, v, y=y)
        if method == "polar-diff":
            return self.transport_polar_diff(x, u, v, y=y)
        if method == "cayley-diff":
            return self.transport_cayley_diff(x, u, v)
        if method == "cayley-isometric":
            return self.transport_cayley_isometric(x, u, v)
        raise ValueError(f"unknown transport {method!r}; choose from {TRANSPORTS}")

    def transport_projection(self, x, u, v, retraction="qr", y=None):
        """Project ``v`` onto the tangent space at ``y = R_x(u)``."""
        if y is None:
            y = self.retract(x, u, method=retraction)
        return self.project(y, v)

    def transport_qr_diff(self, x, u, v, y=None):
        """Differentiated QR retraction applied to ``v`` along step ``u``."""
        q = self.retract_qr(x, u) if y is None else y
        m = t_product(t_transpose(q), x + u)
        c = t_product(v, tcore.t_inverse(m))
        b = t_product(t_transpose(q), c)
        skew, _ = tlinalg.skew_upper_split(tcore.dft(b))
        qblock = t_product(q, idft(skew))
        return qblock + c - t_product(q, b)

    def transport_polar_diff(self, x, u, v, y=None):
        """Differentiated polar retraction applied to ``v`` along step ``u``."""
        yy = self.retract_polar(x, u) if y is None else y
        pfac = tlinalg.spd_sqrt(
            identity_tensor(self.p, self.l) + t_product(t_transpose(u), u)
        )
        ytv = t_product(t_transpose(yy), v)
        rhs = ytv - t_transpose(ytv)
        s = tlinalg.t_sylvester_spectral(pfac, pfac, rhs)
        tail = t_product(v, tcore.t_inverse(t_product(t_transpose(yy), x + u)))
        return t_product(yy, s) + tail - t_product(yy, t_product(t_transpose(yy), tail))

    def transport_cayley_diff(self, x, u, v):
        """Differentiated Cayley retraction applied to ``v`` along step ``u``."""
        wu = self._cayley_w(x, u)
        wv = self._cayley_w(x, v)
        eye = identity_tensor(self.n, self.l)
        m = eye - 0.5 * wu
        inner_term = t_solve(m, x)
        return t_solve(m, t_product(wv, inner_term))

    def transport_cayley_isometric(self, x, u, v):
        """Norm-preserving transport ``(I - w/2)^{-1} * (I + w/2) * v``."""
        wu = self._cayley_w(x, u)
        eye = identity_tensor(self.n, self.l)
        return t_solve(eye - 0.5 * wu, t_product(eye + 0.5 * wu, v))


def curve_product_derivative(a, da, b, db):
    """Derivative of a t-product curve: ``da * b + a * db``."""
    return t_product(da, b) + t_product(a, db)
