"""Benchmark objective families over the tensor Stiefel manifold.

Four instance types, each bundling data tensors, the objective, its
Euclidean (sub)gradient, and the quality metrics reported by the
experiment harness:

* best approximation: ``f(u) = -trace(u^T * a * u)``
* best approximation with missing entries (two blocks, solved by
  :func:`alternating_solve`): ``f(u, s) = fnorm(mask ∘ (a - u*s*u^T))**2``
* joint f-diagonalization: ``f(u) = sum_i offdiag(u^T * a_i * u)``
* sparse tensor PCA: ``f(u) = -trace(u^T * a * a^T * u) + rho * l1(u)``

Gradients were derived from the trace/inner-product calculus and are all
cross-checked against :func:`fd_gradient_oracle` in the test suite.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import solver as _solver
from .manifold import TensorStiefel
from .solver import RunRecord, SolverConfig, bb_steplength, nonmonotone_linesearch
from .tcore import (
    _slicewise_conj_t,
    _slicewise_matmul,
    fnorm,
    identity_tensor,
    inner,
    irfft3,
    off_part,
    rfft3,
    save_tensor,
    load_tensor,
    t_product,
    t_transpose,
)

__all__ = [
    "BestApproxInstance",
    "MissingEntriesInstance",
    "JointFDiagInstance",
    "SparsePcaInstance",
    "make_instance",
    "make_best_approx",
    "make_missing_entries",
    "make_joint_fdiag",
    "make_sparse_pca",
    "fd_gradient_oracle",
    "alternating_solve",
    "save_instance",
    "load_instance",
    "FAMILIES",
]

FAMILIES = ("best-approx", "missing-entries", "joint-fdiag", "sparse-pca")


def _tt(a):
    return t_transpose(a)


def _sandwich(u, a):
    """``u^T * a * u``."""
    return t_product(_tt(u), t_product(a, u))


def _cached_spectrum(obj, attr, tensor):
    """Half-range spectrum of a fixed data tensor, memoized on the instance."""
    cache = getattr(obj, attr, None)
    if cache is None:
        cache = rfft3(tensor)
        object.__setattr__(obj, attr, cache)
    return cache


def _random_symmetric_fdiag(rng, p, l):
    """f-diagonal tensor equal to its own transpose (real spectral diagonals)."""
    half = rng.standard_normal((p, l // 2 + 1))
    diag = np.fft.irfft(half, n=l, axis=1)
    out = np.zeros((p, p, l))
    idx = np.arange(p)
    out[idx, idx, :] = diag
    return out


# ---------------------------------------------------------------------------
# Best approximation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BestApproxInstance:
    """Symmetric data tensor ``a`` (n, n, l) approximated in a k-dim subspace."""

    a: np.ndarray
    k: int
    seed: int = 0
    family: str = "best-approx"

    @property
    def shape(self):
        n = self.a.shape[0]
        return (n, self.k, self.a.shape[2])

    def objective(self, u):
        # trace(u^T * a * u) = l * <u, a * u>
        l = self.a.shape[2]
        fa = _cached_spectrum(self, "_fa", self.a)
        au = irfft3(_slicewise_matmul(fa, rfft3(u)), l)
        return -l * inner(u, au)

    def euclidean_gradient(self, u):
        l = self.a.shape[2]
        fg = _cached_spectrum(self, "_fgrad", self.a + _tt(self.a))
        return -l * irfft3(_slicewise_matmul(fg, rfft3(u)), l)

    def metrics(self, u):
        mfd = TensorStiefel(*self.shape)
        return {
            "obj": self.objective(u),
            "re": math.nan,
            "feasi": mfd.feasibility_defect(u),
        }


def make_best_approx(n, k, l, seed):
    """Instance with ``a = v^T * v`` for a Gaussian ``v`` of shape (n, n, l)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, n, l))
    return BestApproxInstance(a=t_product(_tt(v), v), k=k, seed=seed)


# ---------------------------------------------------------------------------
# Best approximation with missing entries
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MissingEntriesInstance:
    """Symmetric data with a 0-1 observation mask and known ground truth."""

    a: np.ndarray
    mask: np.ndarray
    x_true: np.ndarray
    w_true: np.ndarray
    missing_ratio: float
    k: int
    seed: int = 0
    family: str = "missing-entries"

    @property
    def shape(self):
        n = self.a.shape[0]
        return (n, self.k, self.a.shape[2])

    def _masked_residual(self, fu, fs):
        """``mask * (u*s*u^T - a)`` from precomputed spectra of u and s."""
        l = self.a.shape[2]
        fit = irfft3(
            _slicewise_matmul(_slicewise_matmul(fu, fs), _slicewise_conj_t(fu)), l
        )
        return self.mask * (fit - self.a)

    def objective(self, u, s):
        r = self._masked_residual(rfft3(u), rfft3(s))
        return inner(r, r)

    def residual(self, u, s):
        return self._masked_residual(rfft3(u), rfft3(s))

    def euclidean_gradient_u(self, u, s):
        fu, fs = rfft3(u), rfft3(s)
        fr = rfft3(self._masked_residual(fu, fs))
        t1 = _slicewise_matmul(fr, _slicewise_matmul(fu, _slicewise_conj_t(fs)))
        t2 = _slicewise_matmul(_slicewise_conj_t(fr), _slicewise_matmul(fu, fs))
        return 2.0 * irfft3(t1 + t2, self.a.shape[2])

    def euclidean_gradient_s(self, u, s):
        fu, fs = rfft3(u), rfft3(s)
        fr = rfft3(self._masked_residual(fu, fs))
        fut = _slicewise_conj_t(fu)
        return 2.0 * irfft3(
            _slicewise_matmul(fut, _slicewise_matmul(fr, fu)), self.a.shape[2]
        )

    def metrics(self, u, s):
        mfd = TensorStiefel(*self.shape)
        truth = t_product(t_product(self.x_true, self.w_true), _tt(self.x_true))
        fit = t_product(t_product(u, s), _tt(u))
        return {
            "obj": self.objective(u, s),
            "re": fnorm(truth - fit) / fnorm(self.w_true),
            "feasi": mfd.feasibility_defect(u),
        }


def _symmetric_mask(rng, n, l, missing_ratio):
    """Per-slice symmetric 0-1 mask sampled on the upper wedge, then mirrored."""
    mask = np.empty((n, n, l))
    for k in range(l):
        upper = (rng.random((n, n)) >= missing_ratio).astype(float)
        up = np.triu(upper)
        mask[:, :, k] = up + np.triu(upper, 1).T
    return mask


def make_missing_entries(n, k, l, seed, missing_ratio=0.3):
    """Ground truth ``x * w * x^T`` observed through a symmetric random mask."""
    rng = np.random.default_rng(seed)
    mfd = TensorStiefel(n, k, l)
    x = mfd.random_point(seed=rng.integers(2**63))
    w = _random_symmetric_fdiag(rng, k, l)
    a = t_product(t_product(x, w), _tt(x))
    mask = _symmetric_mask(rng, n, l, missing_ratio)
    return MissingEntriesInstance(
        a=a, mask=mask, x_true=x, w_true=w,
        missing_ratio=missing_ratio, k=k, seed=seed,
    )


# ---------------------------------------------------------------------------
# Joint f-diagonalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JointFDiagInstance:
    """N symmetric samples sharing one approximate joint f-diagonalizer."""

    samples: tuple
    x_true: np.ndarray
    c_true: tuple
    noise: float
    k: int
    seed: int = 0
    family: str = "joint-fdiag"

    @property
    def shape(self):
        n = self.samples[0].shape[0]
        return (n, self.k, self.samples[0].shape[2])

    def _sample_spectra(self):
        cache = getattr(self, "_fsamples", None)
        if cache is None:
            cache = tuple(rfft3(a) for a in self.samples)
            object.__setattr__(self, "_fsamples", cache)
        return cache

    def objective(self, u):
        l = self.samples[0].shape[2]
        fu = rfft3(u)
        fut = _slicewise_conj_t(fu)
        total = 0.0
        for fa in self._sample_spectra():
            m = irfft3(_slicewise_matmul(fut, _slicewise_matmul(fa, fu)), l)
            e = off_part(m)
            total += inner(e, e)
        return total

    def euclidean_gradient(self, u):
        l = self.samples[0].shape[2]
        fu = rfft3(u)
        fut = _slicewise_conj_t(fu)
        acc = None
        for fa in self._sample_spectra():
            fau = _slicewise_matmul(fa, fu)
            m = irfft3(_slicewise_matmul(fut, fau), l)
            fe = rfft3(off_part(m))
            t1 = _slicewise_matmul(fau, _slicewise_conj_t(fe))
            t2 = _slicewise_matmul(
                _slicewise_conj_t(fa), _slicewise_matmul(fu, fe)
            )
            acc = t1 + t2 if acc is None else acc + t1 + t2
        return 2.0 * irfft3(acc, l)

    def metrics(self, u):
        mfd = TensorStiefel(*self.shape)
        uut = t_product(u, _tt(u))
        total = 0.0
        for a, c in zip(self.samples, self.c_true):
            truth = t_product(t_product(self.x_true, c), _tt(self.x_true))
            fit = t_product(uut, t_product(a, uut))
            total += fnorm(truth - fit) / fnorm(c)
        return {
            "obj": self.objective(u),
            "re": total / len(self.samples),
            "feasi": mfd.feasibility_defect(u),
        }


def make_joint_fdiag(n, k, l, seed, n_samples=3, noise=0.1):
    """Samples ``x * c_i * x^T`` plus normalized symmetric noise of size ``noise``."""
    rng = np.random.default_rng(seed)
    mfd = TensorStiefel(n, k, l)
    x = mfd.random_point(seed=rng.integers(2**63))
    cs, samples = [], []
    for _ in range(n_samples):
        c = _random_symmetric_fdiag(rng, k, l)
        e = rng.standard_normal((n, n, l))
        e = 0.5 * (e + _tt(e))
        a = t_product(t_product(x, c), _tt(x)) + noise * e / fnorm(e)
        cs.append(c)
        samples.append(a)
    return JointFDiagInstance(
        samples=tuple(samples), x_true=x, c_true=tuple(cs),
        noise=noise, k=k, seed=seed,
    )


# ---------------------------------------------------------------------------
# Sparse tensor PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SparsePcaInstance:
    """Gaussian data tensor with an l1 sparsity penalty on the loadings."""

    a: np.ndarray
    rho: float
    k: int
    seed: int = 0
    family: str = "sparse-pca"

    @property
    def shape(self):
        return (self.a.shape[0], self.k, self.a.shape[2])

    @property
    def gram(self):
        # a * a^T, cached lazily on first use
        if not hasattr(self, "_gram"):
            object.__setattr__(self, "_gram", t_product(self.a, _tt(self.a)))
        return self._gram

    def objective(self, u):
        l = self.a.shape[2]
        fg = _cached_spectrum(self, "_fgram", self.gram)
        gu = irfft3(_slicewise_matmul(fg, rfft3(u)), l)
        return -l * inner(u, gu) + self.rho * float(np.sum(np.abs(u)))

    def euclidean_gradient(self, u):
        """Subgradient: smooth part plus ``rho * sign(u)`` with sign(0) = 0."""
        l = self.a.shape[2]
        fg = _cached_spectrum(self, "_fgram", self.gram)
        gu = irfft3(_slicewise_matmul(fg, rfft3(u)), l)
        return -2.0 * l * gu + self.rho * np.sign(u)

    def metrics(self, u):
        mfd = TensorStiefel(*self.shape)
        return {
            "obj": self.objective(u),
            "re": math.nan,
            "feasi": mfd.feasibility_defect(u),
        }


def make_sparse_pca(n, p, l, seed, rho=0.1, k=None):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, p, l))
    return SparsePcaInstance(a=a, rho=rho, k=k or p, seed=seed)


def make_instance(family, n, p, l, seed, **kwargs):
    """Dispatch on family name; ``p`` doubles as the subspace size ``k``."""
    if family == "best-approx":
        return make_best_approx(n, p, l, seed)
    if family == "missing-entries":
        return make_missing_entries(n, p, l, seed, **kwargs)
    if family == "joint-fdiag":
        return make_joint_fdiag(n, p, l, seed, **kwargs)
    if family == "sparse-pca":
        return make_sparse_pca(n, p, l, seed, **kwargs)
    raise ValueError(f"unknown problem family {family!r}; choose from {FAMILIES}")


# ---------------------------------------------------------------------------
# Finite-difference gradient oracle
# ---------------------------------------------------------------------------


def fd_gradient_oracle(f, x, h=1e-5):
    """Central-difference estimate of the gradient of ``f`` at tensor ``x``.

    Differentiates through the vectorization entry by entry (2*n*p*l
    evaluations), so it is independent of any analytic gradient formula.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        step = np.zeros_like(x)
        step[idx] = h
        grad[idx] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Alternating driver for the missing-entries problem
# ---------------------------------------------------------------------------


def _bb_descent(value_aux, grad_from_aux, s0, config, max_steps=50, tol=1e-8):
    """Nonmonotone gradient descent with BB steps on a Euclidean block.

    ``value_aux(s)`` returns ``(f, aux)`` and ``grad_from_aux(s, aux)`` the
    gradient, so state shared between the two (here the masked residual)
    is computed once per point.
    """
    s = np.asarray(s0, dtype=np.float64)
    fs, aux = value_aux(s)
    f_prev = fs
    g = grad_from_aux(s, aux)
    alpha = config.alpha0
    for _ in range(max_steps):
        if fnorm(g) == 0.0:
            break
        slope = -inner(g, g)
        bound = max(fs, f_prev)
        while True:
            s_new = s - alpha * g
            f_new, aux_new = value_aux(s_new)
            if f_new <= bound + config.armijo * alpha * slope:
                break
            if alpha <= config.alpha_min:
                return s
            alpha = max(alpha * config.shrink, config.alpha_min)
        g_new = grad_from_aux(s_new, aux_new)
        step = -alpha * g
        v = g_new + step / alpha
        alpha = bb_steplength(step, v, config.alpha_min, config.alpha_max)
        f_prev, fs, s, g = fs, f_new, s_new, g_new
        if abs(fs - f_prev) <= tol * (1.0 + abs(f_prev)):
            break
    return s


def alternating_solve(instance, x0, config=None, s_max_steps=50, s_tol=1e-8):
    """Alternating minimization for :class:`MissingEntriesInstance`.

    Each outer iteration takes one conjugate-gradient step in the feasible
    block ``u`` (objective with ``s`` frozen) followed by a BB gradient
    descent pass in the unconstrained block ``s``, warm started at the
    previous value.  Stopping mirrors the main solver: scaled ``u`` step
    below ``tol_x``, relative objective change below ``tol_f``, or
    ``max_iter`` outer iterations.  Returns ``(u, s, RunRecord)``.
    """
    config = config or SolverConfig()
    mfd = TensorStiefel(*instance.shape)
    u = mfd.check_point(np.asarray(x0, dtype=np.float64))
    s = _sandwich(u, instance.a)
    sqrt_n = math.sqrt(mfd.n)

    def retract(xx, vv):
        return mfd.retract(xx, vv, method=config.retraction)

    record = RunRecord()
    start = time.perf_counter()

    fx = instance.objective(u, s)
    g = mfd.gradient(u, instance.euclidean_gradient_u(u, s))
    z = -g
    alpha = config.alpha0
    f_prev = fx
    record.append(fx, fnorm(g), 0.0, 0, 0.0, mfd.feasibility_defect(u),
                  time.perf_counter() - start)

    l = mfd.l
    for _ in range(config.max_iter):
        slope = inner(g, z)
        if slope >= 0.0:
            z = -g
            slope = inner(g, z)

        fs = rfft3(s)

        def f_u(uu):
            r = instance._masked_residual(rfft3(uu), fs)
            return inner(r, r)

        alpha_acc, u_new, f_mid, nbt, stalled = nonmonotone_linesearch(
            f_u, retract, u, z, slope, alpha, (fx, f_prev),
            config.shrink, config.armijo, config.alpha_min,
        )
        if stalled:
            z = -g
            slope = inner(g, z)
            alpha_acc, u_new, f_mid, nbt2, stalled = nonmonotone_linesearch(
                f_u, retract, u, z, slope, alpha, (fx, f_prev),
                config.shrink, config.armijo, config.alpha_min,
            )
            nbt += nbt2

        fu = rfft3(u_new)
        fut = _slicewise_conj_t(fu)

        def f_s(ss):
            r = instance._masked_residual(fu, rfft3(ss))
            return inner(r, r), r

        def g_s(ss, r):
            fr = rfft3(r)
            return 2.0 * irfft3(
                _slicewise_matmul(fut, _slicewise_matmul(fr, fu)), l
            )

        s_new = _bb_descent(f_s, g_s, s, config, max_steps=s_max_steps, tol=s_tol)
        f_new = instance.objective(u_new, s_new)
        g_new = mfd.gradient(u_new, instance.euclidean_gradient_u(u_new, s_new))
        record.append(f_new, fnorm(g_new), alpha_acc, nbt, slope,
                      mfd.feasibility_defect(u_new),
                      time.perf_counter() - start, stalled)

        step_norm = fnorm(u_new - u) / sqrt_n
        f_change = abs(f_new - fx) / (1.0 + abs(fx))
        if step_norm < config.tol_x:
            record.termination = "step_tol"
        elif f_change < config.tol_f:
            record.termination = "f_tol"
        if record.termination:
            u, s, fx = u_new, s_new, f_new
            break

        step = alpha_acc * z
        paired = {"projection": config.retraction, "qr-diff": "qr",
                  "polar-diff": "polar"}
        target = (u_new if paired.get(config.transport) == config.retraction
                  else None)
        t_z = mfd.transport(u, step, z, method=config.transport,
                            retraction=config.retraction, y=target)
        t_g = mfd.transport(u, step, g, method=config.transport,
                            retraction=config.retraction, y=target)
        beta = _solver.cg_beta(g_new, g, z, t_z)
        z = -g_new + beta * t_z
        sv = -alpha_acc * t_g
        v = g_new + sv / alpha_acc
        alpha = bb_steplength(sv, v, config.alpha_min, config.alpha_max)

        f_prev, fx, u, s, g = fx, f_new, u_new, s_new, g_new
    else:
        record.termination = "max_iter"

    return u, s, record


# ---------------------------------------------------------------------------
# Instance serialization
# ---------------------------------------------------------------------------


def save_instance(directory, instance):
    """Write an instance as tensor containers plus a JSON metadata file."""
    os.makedirs(directory, exist_ok=True)
    meta = {
        "family": instance.family,
        "seed": instance.seed,
        "k": instance.k,
        "tensors": {},
    }
    tensors = {}
    if instance.family == "best-approx":
        tensors["a"] = instance.a
    elif instance.family == "missing-entries":
        tensors.update(a=instance.a, mask=instance.mask,
                       x_true=instance.x_true, w_true=instance.w_true)
        meta["missing_ratio"] = instance.missing_ratio
    elif instance.family == "joint-fdiag":
        meta["noise"] = instance.noise
        meta["n_samples"] = len(instance.samples)
        tensors["x_true"] = instance.x_true
        for i, (a, c) in enumerate(zip(instance.samples, instance.c_true)):
            tensors[f"a{i}"] = a
            tensors[f"c{i}"] = c
    elif instance.family == "sparse-pca":
        tensors["a"] = instance.a
        meta["rho"] = instance.rho
    else:
        raise ValueError(f"unknown family {instance.family!r}")
    for name, tensor in tensors.items():
        fname = f"{name}.tt3d"
        save_tensor(os.path.join(directory, fname), tensor)
        meta["tensors"][name] = fname
    with open(os.path.join(directory, "instance.json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def load_instance(directory):
    with open(os.path.join(directory, "instance.json")) as fh:
        meta = json.load(fh)
    tensors = {
        name: load_tensor(os.path.join(directory, fname))
        for name, fname in meta["tensors"].items()
    }
    family = meta["family"]
    if family == "best-approx":
        return BestApproxInstance(a=tensors["a"], k=meta["k"], seed=meta["seed"])
    if family == "missing-entries":
        return MissingEntriesInstance(
            a=tensors["a"], mask=tensors["mask"], x_true=tensors["x_true"],
            w_true=tensors["w_true"], missing_ratio=meta["missing_ratio"],
            k=meta["k"], seed=meta["seed"],
        )
    if family == "joint-fdiag":
        n_samples = meta["n_samples"]
        return JointFDiagInstance(
            samples=tuple(tensors[f"a{i}"] for i in range(n_samples)),
            x_true=tensors["x_true"],
            c_true=tuple(tensors[f"c{i}"] for i in range(n_samples)),
            noise=meta["noise"], k=meta["k"], seed=meta["seed"],
        )
    if family == "sparse-pca":
        return SparsePcaInstance(
            a=tensors["a"], rho=meta["rho"], k=meta["k"], seed=meta["seed"]
        )
    raise ValueError(f"unknown family {family!r}")
