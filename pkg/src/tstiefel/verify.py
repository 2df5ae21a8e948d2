"""Self-contained property checks behind the ``verify`` CLI subcommand.

Each check runs at small shapes, returns ``(ok, detail)``, and exercises
one algebraic identity, factorization contract, or geometry axiom of the
library against an independent reference (dense block-circulant algebra,
brute-force series, finite differences, or random sampling).
"""

from __future__ import annotations

import numpy as np

from . import problems, tcore, tlinalg
from .manifold import RETRACTIONS, TRANSPORTS, TensorStiefel, manifold_dim
from .tcore import (
    bcirc,
    dft,
    fnorm,
    fold,
    identity_tensor,
    idft,
    inner,
    t_product,
    t_transpose,
    trace,
    unfold,
)

__all__ = ["CHECKS", "run_checks"]


def _rng(seed=0):
    return np.random.default_rng(seed)


def _rel(err, scale):
    return err / max(scale, np.finfo(float).tiny)


def check_tproduct_bcirc(seed=0):
    """Spectral t-product equals the dense block-circulant product."""
    rng = _rng(seed)
    worst = 0.0
    for _ in range(25):
        n, p, m, l = rng.integers(1, 5, size=4)
        a = rng.standard_normal((n, p, l))
        b = rng.standard_normal((p, m, l))
        ref = fold(bcirc(a) @ unfold(b), (n, m, l))
        worst = max(worst, _rel(fnorm(t_product(a, b) - ref), fnorm(ref)))
    return worst <= 1e-10, f"max relative deviation {worst:.2e}"


def check_dft_roundtrip(seed=1):
    rng = _rng(seed)
    a = rng.standard_normal((4, 3, 6))
    err = _rel(fnorm(idft(dft(a)) - a), fnorm(a))
    return err <= 1e-12, f"round-trip error {err:.2e}"


def check_conjugate_pairing(seed=2):
    rng = _rng(seed)
    a = rng.standard_normal((3, 4, 5))
    defect = tcore.conjugate_pairing_defect(dft(a))
    rel = _rel(defect, fnorm(dft(a)))
    return rel <= 1e-10, f"pairing defect {rel:.2e}"


def check_trace_inner(seed=3):
    rng = _rng(seed)
    worst = 0.0
    for _ in range(10):
        a = rng.standard_normal((4, 3, 4))
        b = rng.standard_normal((4, 3, 4))
        lhs = trace(t_product(t_transpose(a), b))
        rhs = 4 * inner(a, b)
        worst = max(worst, _rel(abs(lhs - rhs), abs(rhs)))
    return worst <= 1e-10, f"max relative deviation {worst:.2e}"


def check_transpose_spectral(seed=4):
    rng = _rng(seed)
    a = rng.standard_normal((3, 2, 4))
    ahat = dft(a)
    that = dft(t_transpose(a))
    worst = max(
        fnorm(that[:, :, k] - ahat[:, :, k].conj().T) for k in range(4)
    )
    return worst <= 1e-10 * fnorm(ahat), f"deviation {worst:.2e}"


def check_psd_shift(seed=5):
    """Every spectral slice of I + v^T * v has eigenvalues >= 1."""
    rng = _rng(seed)
    v = rng.standard_normal((5, 3, 4))
    g = identity_tensor(3, 4) + t_product(t_transpose(v), v)
    ghat = dft(g)
    wmin = min(np.linalg.eigvalsh(0.5 * (ghat[:, :, k] + ghat[:, :, k].conj().T))[0]
               for k in range(4))
    return wmin >= 1.0 - 1e-10, f"min spectral eigenvalue {wmin:.6f}"


def check_sym_skew_orthogonal(seed=6):
    rng = _rng(seed)
    s = tcore.sym_part(rng.standard_normal((4, 4, 3)))
    k = tcore.skew_part(rng.standard_normal((4, 4, 3)))
    val = abs(inner(s, k))
    return val <= 1e-10 * fnorm(s) * fnorm(k), f"inner product {val:.2e}"


def check_tsvd_residual(seed=7):
    rng = _rng(seed)
    a = rng.standard_normal((4, 3, 2))
    u, s, v = tlinalg.t_svd(a)
    rec = t_product(t_product(u, s), t_transpose(v))
    err = _rel(fnorm(rec - a), fnorm(a))
    feas = fnorm(t_product(t_transpose(u), u) - identity_tensor(4, 2))
    ok = err <= 1e-9 and feas <= 1e-10
    return ok, f"residual {err:.2e}, orthogonality defect {feas:.2e}"


def check_tqr_uniqueness(seed=8):
    """Positive spectral R-diagonals and repeat-run agreement."""
    rng = _rng(seed)
    a = rng.standard_normal((5, 3, 4))
    q1, r1 = tlinalg.t_qr(a)
    q2, r2 = tlinalg.t_qr(a.copy())
    rhat = dft(r1)
    diag_min = min(
        float(np.min(np.real(np.diagonal(rhat[:, :, k])))) for k in range(4)
    )
    imag_max = max(
        float(np.max(np.abs(np.imag(np.diagonal(rhat[:, :, k]))))) for k in range(4)
    )
    rec = _rel(fnorm(t_product(q1, r1) - a), fnorm(a))
    repeat = max(fnorm(q1 - q2), fnorm(r1 - r2))
    ok = diag_min > 0 and imag_max <= 1e-10 * fnorm(rhat) and rec <= 1e-9 and repeat <= 1e-12
    return ok, (
        f"min diag {diag_min:.3f}, residual {rec:.2e}, repeat deviation {repeat:.2e}"
    )


def check_tpolar(seed=9):
    rng = _rng(seed)
    a = rng.standard_normal((4, 2, 3))
    p, h = tlinalg.t_polar(a)
    rec = _rel(fnorm(t_product(p, h) - a), fnorm(a))
    sym = fnorm(h - t_transpose(h))
    mfd = TensorStiefel(4, 2, 3)
    opt = inner(a, p)
    sampled = max(
        inner(a, mfd.random_point(seed=1000 + i)) for i in range(100)
    )
    ok = rec <= 1e-9 and sym <= 1e-9 and opt >= sampled - 1e-9
    return ok, f"residual {rec:.2e}, best sampled gap {opt - sampled:.3e}"


def check_texp(seed=10):
    rng = _rng(seed)
    a = rng.standard_normal((3, 3, 2))
    a *= 1.5 / fnorm(a)
    series = identity_tensor(3, 2)
    term = identity_tensor(3, 2)
    for k in range(1, 30):
        term = t_product(term, a) / k
        series = series + term
    err = _rel(fnorm(tlinalg.t_exp(a) - series), fnorm(series))
    w = tcore.skew_part(rng.standard_normal((3, 3, 2)))
    e = tlinalg.t_exp(w)
    orth = fnorm(t_product(t_transpose(e), e) - identity_tensor(3, 2))
    ok = err <= 1e-9 and orth <= 1e-10
    return ok, f"series deviation {err:.2e}, orthogonality defect {orth:.2e}"


def check_sylvester(seed=11):
    rng = _rng(seed)
    worst = 0.0
    for trial in range(5):
        a = rng.standard_normal((2, 2, 2))
        b = rng.standard_normal((2, 2, 2))
        a = a + t_transpose(a) + 3.0 * identity_tensor(2, 2)
        b = b + t_transpose(b) + 3.0 * identity_tensor(2, 2)
        c = rng.standard_normal((2, 2, 2))
        x1 = tlinalg.t_sylvester_spectral(a, b, c)
        x2 = tlinalg.t_sylvester_vec(a, b, c)
        worst = max(worst, _rel(fnorm(x1 - x2), fnorm(x2)))
        res = fnorm(t_product(a, x1) + t_product(x1, b) - c)
        worst = max(worst, _rel(res, fnorm(c)))
    return worst <= 1e-8, f"max deviation {worst:.2e}"


def check_projector(seed=12):
    rng = _rng(seed)
    mfd = TensorStiefel(5, 3, 2)
    x = mfd.random_point(seed=seed)
    u = rng.standard_normal(mfd.shape)
    pu = mfd.project(x, u)
    idem = fnorm(mfd.project(x, pu) - pu)
    tang = mfd.tangency_defect(x, pu)
    u2 = rng.standard_normal(mfd.shape)
    adj = abs(inner(mfd.project(x, u), u2) - inner(u, mfd.project(x, u2)))
    ok = idem <= 1e-10 and tang <= 1e-10 and adj <= 1e-10 * fnorm(u) * fnorm(u2)
    return ok, f"idempotency {idem:.2e}, tangency {tang:.2e}, self-adjointness {adj:.2e}"


def check_gradient_fd(seed=13):
    rng = _rng(seed)
    mfd = TensorStiefel(6, 3, 2)
    x = mfd.random_point(seed=seed)
    inst = problems.make_best_approx(6, 3, 2, seed)
    g = mfd.gradient(x, inst.euclidean_gradient(x))
    v = mfd.random_tangent(x, seed=seed + 1, unit=True)
    h = 1e-5
    fd = (inst.objective(mfd.retract_exp(x, v, h))
          - inst.objective(mfd.retract_exp(x, v, -h))) / (2 * h)
    err = abs(inner(g, v) - fd)
    return err <= 1e-5 * (1 + abs(fd)), f"directional derivative error {err:.2e}"


def check_retractions(seed=14):
    mfd = TensorStiefel(6, 3, 2)
    x = mfd.random_point(seed=seed)
    v = mfd.random_tangent(x, seed=seed + 1, unit=True)
    msgs = []
    ok = True
    for method in RETRACTIONS:
        at_zero = fnorm(mfd.retract(x, np.zeros(mfd.shape), method=method) - x)
        t = 1e-5
        diff = (mfd.retract(x, t * v, method=method)
                - mfd.retract(x, -t * v, method=method)) / (2 * t)
        dr = fnorm(diff - v)
        feas = mfd.feasibility_defect(mfd.retract(x, v, method=method))
        ok = ok and at_zero <= 1e-12 and dr <= 1e-6 and feas <= 1e-10
        msgs.append(f"{method}: origin {at_zero:.1e}, differential {dr:.1e}, feas {feas:.1e}")
    return ok, "; ".join(msgs)


def check_transports(seed=15):
    mfd = TensorStiefel(6, 3, 2)
    x = mfd.random_point(seed=seed)
    u = mfd.random_tangent(x, seed=seed + 1, unit=True)
    v = mfd.random_tangent(x, seed=seed + 2, unit=True)
    pair = {"projection": "qr", "qr-diff": "qr", "polar-diff": "polar",
            "cayley-diff": "cayley", "cayley-isometric": "cayley"}
    msgs = []
    ok = True
    for method in TRANSPORTS:
        retraction = pair[method]
        y = mfd.retract(x, u, method=retraction)
        t = mfd.transport(x, u, v, method=method, retraction=retraction)
        tang = mfd.tangency_defect(y, t)
        at_zero = fnorm(
            mfd.transport(x, np.zeros(mfd.shape), v, method=method,
                          retraction=retraction) - v
        )
        ok = ok and tang <= 1e-8 and at_zero <= 1e-8
        msgs.append(f"{method}: tangency {tang:.1e}, origin {at_zero:.1e}")
    iso = mfd.transport_cayley_isometric(x, u, v)
    ratio = abs(fnorm(iso) / fnorm(v) - 1.0)
    ok = ok and ratio <= 1e-10
    msgs.append(f"isometry defect {ratio:.1e}")
    return ok, "; ".join(msgs)


def check_exp_retraction_paths(seed=16):
    """Block construction, closed form and the square case all agree."""
    mfd = TensorStiefel(9, 2, 3)
    x = mfd.random_point(seed=seed)
    v = mfd.random_tangent(x, seed=seed + 1, unit=True)
    xt = t_transpose(x)
    gen = (t_product(v, xt)
           + t_product(x, t_product(t_transpose(v), t_product(x, xt)))
           - t_product(x, t_transpose(v)))
    closed = t_product(tlinalg.t_exp(0.7 * gen), x)
    block = mfd.retract_exp(x, v, 0.7)
    err_block = fnorm(block - closed)
    sq = TensorStiefel(4, 4, 3)
    xs = sq.random_point(seed=seed + 2)
    vs = sq.random_tangent(xs, seed=seed + 3, unit=True)
    lhs = sq.retract_exp(xs, vs)
    rhs = t_product(xs, tlinalg.t_exp(t_product(t_transpose(xs), vs)))
    err_sq = fnorm(lhs - rhs)
    ok = err_block <= 1e-10 and err_sq <= 1e-10
    return ok, f"block vs closed form {err_block:.2e}, square case {err_sq:.2e}"


def check_dimension(seed=17):
    rng = _rng(seed)
    for _ in range(5):
        n = int(rng.integers(2, 7))
        p = int(rng.integers(1, n + 1))
        l = int(rng.integers(1, 5))
        dim = manifold_dim(n, p, l)
        mfd = TensorStiefel(n, p, l)
        x = mfd.random_point(seed=int(rng.integers(2**32)))
        cols = []
        for idx in range(n * p * l):
            e = np.zeros(n * p * l)
            e[idx] = 1.0
            v = e.reshape((n, p, l))
            xv = t_product(t_transpose(x), v)
            cols.append((xv + t_transpose(xv)).ravel())
        jac = np.column_stack(cols)
        corank = n * p * l - np.linalg.matrix_rank(jac)
        if corank != dim:
            return False, f"(n,p,l)=({n},{p},{l}): corank {corank} != formula {dim}"
    return True, "formula matches constraint corank"


def check_problem_gradients(seed=18):
    mfd = TensorStiefel(6, 3, 2)
    x = mfd.random_point(seed=seed)
    makers = {
        "best-approx": problems.make_best_approx(6, 3, 2, seed),
        "joint-fdiag": problems.make_joint_fdiag(6, 3, 2, seed),
        "sparse-pca": problems.make_sparse_pca(6, 3, 2, seed),
    }
    msgs = []
    ok = True
    for name, inst in makers.items():
        fd = problems.fd_gradient_oracle(inst.objective, x)
        err = fnorm(inst.euclidean_gradient(x) - fd) / max(fnorm(fd), 1e-30)
        ok = ok and err <= 1e-5
        msgs.append(f"{name}: {err:.1e}")
    inst = problems.make_missing_entries(6, 3, 2, seed)
    s = np.random.default_rng(seed).standard_normal((3, 3, 2))
    fd_u = problems.fd_gradient_oracle(lambda uu: inst.objective(uu, s), x)
    err_u = fnorm(inst.euclidean_gradient_u(x, s) - fd_u) / max(fnorm(fd_u), 1e-30)
    fd_s = problems.fd_gradient_oracle(lambda ss: inst.objective(x, ss), s)
    err_s = fnorm(inst.euclidean_gradient_s(x, s) - fd_s) / max(fnorm(fd_s), 1e-30)
    ok = ok and err_u <= 1e-5 and err_s <= 1e-5
    msgs.append(f"missing-entries: u {err_u:.1e}, s {err_s:.1e}")
    return ok, "; ".join(msgs)


def check_solver_smoke(seed=19):
    from .solver import SolverConfig, solve

    inst = problems.make_best_approx(8, 2, 2, seed)
    mfd = TensorStiefel(8, 2, 2)
    x0 = mfd.random_point(seed=seed)
    x, record = solve(inst, x0, SolverConfig(max_iter=200))
    feas = mfd.feasibility_defect(x)
    drop = record.objective[-1] - record.objective[0]
    ok = feas <= 1e-10 and drop < 0 and record.termination != ""
    return ok, f"objective drop {drop:.3e}, feasibility {feas:.1e}"


CHECKS = [
    ("tcore/t-product-bcirc", check_tproduct_bcirc),
    ("tcore/dft-roundtrip", check_dft_roundtrip),
    ("tcore/conjugate-pairing", check_conjugate_pairing),
    ("tcore/trace-inner", check_trace_inner),
    ("tcore/transpose-spectral", check_transpose_spectral),
    ("tcore/psd-shift", check_psd_shift),
    ("tcore/sym-skew-orthogonal", check_sym_skew_orthogonal),
    ("tlinalg/tsvd-residual", check_tsvd_residual),
    ("tlinalg/tqr-uniqueness", check_tqr_uniqueness),
    ("tlinalg/tpolar", check_tpolar),
    ("tlinalg/texp", check_texp),
    ("tlinalg/sylvester", check_sylvester),
    ("manifold/projector", check_projector),
    ("manifold/gradient-fd", check_gradient_fd),
    ("manifold/retractions", check_retractions),
    ("manifold/transports", check_transports),
    ("manifold/exp-retraction-paths", check_exp_retraction_paths),
    ("manifold/dimension", check_dimension),
    ("problems/gradient-fd", check_problem_gradients),
    ("solver/smoke", check_solver_smoke),
]


def run_checks(only=None, out=print):
    """Run the registered checks, print one line each, return failure count."""
    failures = 0
    selected = [(name, fn) for name, fn in CHECKS if only is None or only in name]
    if not selected:
        out(f"no checks match filter {only!r}")
        return 1
    for name, fn in selected:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failure
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1
    return failures
