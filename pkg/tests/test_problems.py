import numpy as np
import pytest

from tstiefel import problems
from tstiefel.manifold import TensorStiefel
from tstiefel.problems import (
    alternating_solve,
    fd_gradient_oracle,
    load_instance,
    make_best_approx,
    make_instance,
    make_joint_fdiag,
    make_missing_entries,
    make_sparse_pca,
    save_instance,
)
from tstiefel.solver import SolverConfig, solve
from tstiefel.tcore import (
    fnorm,
    identity_tensor,
    inner,
    off_part,
    t_product,
    t_transpose,
    trace,
)


def feasible(n, p, l, seed):
    return TensorStiefel(n, p, l).random_point(seed=seed)


# --------------------------------------------------------------- FD oracle


def test_fd_oracle_linear_functional(rng):
    a = rng.standard_normal((3, 2, 2))
    grad = fd_gradient_oracle(lambda x: inner(a, x), rng.standard_normal((3, 2, 2)))
    assert fnorm(grad - a) <= 1e-7 * fnorm(a)


def test_fd_oracle_quadratic(rng):
    x0 = rng.standard_normal((3, 2, 2))
    grad = fd_gradient_oracle(lambda x: 0.5 * fnorm(x) ** 2, x0)
    assert fnorm(grad - x0) <= 1e-7 * max(fnorm(x0), 1.0)


# ------------------------------------------------------------- best approx


def test_best_approx_data_is_symmetric():
    inst = make_best_approx(6, 3, 2, seed=0)
    assert fnorm(inst.a - t_transpose(inst.a)) <= 1e-12 * fnorm(inst.a)


def test_best_approx_identity_data_gives_constant_objective():
    inst = problems.BestApproxInstance(a=identity_tensor(6, 2), k=3)
    for seed in range(3):
        u = feasible(6, 3, 2, seed)
        assert inst.objective(u) == pytest.approx(-3 * 2, rel=1e-10)


def test_best_approx_single_slice_reduces_to_matrix_objective(rng):
    m = rng.standard_normal((5, 5))
    inst = problems.BestApproxInstance(a=(m + m.T)[:, :, np.newaxis], k=2)
    u = feasible(5, 2, 1, 1)
    um = u[:, :, 0]
    assert inst.objective(u) == pytest.approx(-np.trace(um.T @ (m + m.T) @ um))
    expected = -2 * (m + m.T) @ um
    assert np.allclose(inst.euclidean_gradient(u)[:, :, 0], expected)


def test_best_approx_objective_via_trace_identity():
    inst = make_best_approx(6, 3, 2, seed=2)
    u = feasible(6, 3, 2, 3)
    via_trace = -trace(t_product(t_transpose(u), t_product(inst.a, u)))
    assert inst.objective(u) == pytest.approx(via_trace, rel=1e-10)


# ------------------------------------------------------------------ missing


def test_missing_instance_invariants():
    inst = make_missing_entries(8, 3, 2, seed=4)
    assert set(np.unique(inst.mask)) <= {0.0, 1.0}
    for k in range(2):
        assert np.array_equal(inst.mask[:, :, k], inst.mask[:, :, k].T)
    assert fnorm(inst.a - t_transpose(inst.a)) <= 1e-12 * fnorm(inst.a)
    assert fnorm(inst.w_true - t_transpose(inst.w_true)) <= 1e-12


def test_missing_objective_zero_at_truth():
    inst = make_missing_entries(8, 3, 2, seed=5)
    assert inst.objective(inst.x_true, inst.w_true) <= 1e-20
    m = inst.metrics(inst.x_true, inst.w_true)
    assert m["re"] <= 1e-12


def test_missing_all_zero_mask_gives_flat_objective(rng):
    inst = make_missing_entries(8, 3, 2, seed=6)
    masked = problems.MissingEntriesInstance(
        a=inst.a, mask=np.zeros_like(inst.mask), x_true=inst.x_true,
        w_true=inst.w_true, missing_ratio=1.0, k=3,
    )
    u = feasible(8, 3, 2, 7)
    s = rng.standard_normal((3, 3, 2))
    assert masked.objective(u, s) == 0.0
    assert fnorm(masked.euclidean_gradient_u(u, s)) == 0.0
    assert fnorm(masked.euclidean_gradient_s(u, s)) == 0.0


def test_missing_s_subproblem_matches_least_squares_oracle():
    # with u fixed the objective is linear least squares in s; compare the
    # BB block against an explicit vectorized solve
    inst = make_missing_entries(8, 3, 2, seed=8)
    u = feasible(8, 3, 2, 9)
    design = []
    for idx in range(3 * 3 * 2):
        e = np.zeros(3 * 3 * 2)
        e[idx] = 1.0
        s = e.reshape(3, 3, 2)
        fit = inst.mask * t_product(t_product(u, s), t_transpose(u))
        design.append(fit.ravel())
    design = np.column_stack(design)
    target = (inst.mask * inst.a).ravel()
    s_ls, *_ = np.linalg.lstsq(design, target, rcond=None)
    f_ls = inst.objective(u, s_ls.reshape(3, 3, 2))

    from tstiefel.problems import _bb_descent
    from tstiefel.tcore import rfft3, irfft3, _slicewise_matmul, _slicewise_conj_t

    fu = rfft3(u)
    fut = _slicewise_conj_t(fu)

    def value_aux(s):
        r = inst._masked_residual(fu, rfft3(s))
        return inner(r, r), r

    def grad(s, r):
        return 2.0 * irfft3(_slicewise_matmul(fut, _slicewise_matmul(rfft3(r), fu)), 2)

    s_bb = _bb_descent(
        value_aux, grad, np.zeros((3, 3, 2)), SolverConfig(),
        max_steps=500, tol=1e-14,
    )
    assert inst.objective(u, s_bb) <= f_ls + 1e-8 * (1 + abs(f_ls))


def test_missing_s_recovery_at_truth_full_mask():
    # with the full mask and u at the truth, the optimal s block is the
    # compression of the data, which equals the ground-truth core exactly
    inst = make_missing_entries(8, 3, 2, seed=10, missing_ratio=0.0)
    s_star = t_product(
        t_product(t_transpose(inst.x_true), inst.a), inst.x_true
    )
    assert fnorm(s_star - inst.w_true) <= 1e-8 * fnorm(inst.w_true)


def test_missing_alternating_exact_recovery_small():
    # noiseless and fully observed: alternating descent drives the relative
    # error toward zero from a random start (linear rate; this seeded run
    # measures 2.8e-4 after 78 outer iterations)
    inst = make_missing_entries(10, 3, 2, seed=11, missing_ratio=0.0)
    x0 = feasible(10, 3, 2, 12)
    u, s, record = alternating_solve(inst, x0, SolverConfig(max_iter=200))
    assert inst.metrics(u, s)["re"] <= 1e-3
    assert record.objective[-1] <= 1e-6 * (1.0 + record.objective[0])


def test_missing_alternating_30pct_band():
    inst = make_missing_entries(20, 4, 3, seed=13)
    x0 = feasible(20, 4, 3, 14)
    u, s, record = alternating_solve(inst, x0, SolverConfig(max_iter=400))
    m = inst.metrics(u, s)
    assert m["re"] <= 0.3
    assert m["feasi"] <= 1e-10
    assert record.termination != ""


# --------------------------------------------------------------- joint fdiag


def test_joint_instance_invariants():
    inst = make_joint_fdiag(8, 3, 2, seed=15)
    assert len(inst.samples) == 3
    for a in inst.samples:
        assert fnorm(a - t_transpose(a)) <= 1e-10 * fnorm(a)
    from tstiefel.tcore import fdiag_part

    for c in inst.c_true:
        assert np.array_equal(c, fdiag_part(c))
        assert fnorm(c - t_transpose(c)) <= 1e-12 * fnorm(c)


def test_joint_objective_zero_at_noiseless_truth():
    inst = make_joint_fdiag(8, 3, 2, seed=16, noise=0.0)
    assert inst.objective(inst.x_true) <= 1e-18
    assert inst.metrics(inst.x_true)["re"] <= 1e-10


def test_joint_objective_nonnegative(rng):
    inst = make_joint_fdiag(8, 3, 2, seed=17)
    for seed in range(3):
        assert inst.objective(feasible(8, 3, 2, seed)) >= 0.0


def test_joint_single_sample_single_slice_is_jacobi_objective(rng):
    m = rng.standard_normal((5, 5))
    a = (m + m.T)[:, :, np.newaxis]
    inst = problems.JointFDiagInstance(
        samples=(a,), x_true=feasible(5, 2, 1, 0),
        c_true=(identity_tensor(2, 1),), noise=0.0, k=2,
    )
    u = feasible(5, 2, 1, 18)
    um = u[:, :, 0]
    compressed = um.T @ a[:, :, 0] @ um
    expected = np.sum(compressed**2) - np.sum(np.diag(compressed) ** 2)
    assert inst.objective(u) == pytest.approx(expected, rel=1e-10)


def test_joint_objective_is_squared_offdiagonal_norm():
    inst = make_joint_fdiag(8, 3, 2, seed=19)
    u = feasible(8, 3, 2, 20)
    total = 0.0
    for a in inst.samples:
        m = t_product(t_transpose(u), t_product(a, u))
        e = off_part(m)
        total += inner(e, e)
    assert inst.objective(u) == pytest.approx(total, rel=1e-12)


# --------------------------------------------------------------- sparse PCA


def test_sparse_pca_zero_rho_reduces_to_best_approx():
    inst = make_sparse_pca(8, 3, 2, seed=21, rho=0.0)
    gram = t_product(inst.a, t_transpose(inst.a))
    ref = problems.BestApproxInstance(a=gram, k=3)
    u = feasible(8, 3, 2, 22)
    assert inst.objective(u) == pytest.approx(ref.objective(u), rel=1e-10)


def test_sparse_pca_l1_subgradient_positive_entries():
    inst = make_sparse_pca(6, 2, 2, seed=23)
    u = np.abs(np.random.default_rng(0).standard_normal((6, 2, 2))) + 0.1
    sub = inst.euclidean_gradient(u)
    smooth = sub - inst.rho * np.sign(u)
    assert np.allclose(sub - smooth, inst.rho * np.ones_like(u))


def test_sparse_pca_subgradient_zero_at_zero_entries():
    inst = make_sparse_pca(6, 2, 2, seed=24)
    u = np.zeros((6, 2, 2))
    sub = inst.euclidean_gradient(u)
    assert np.allclose(sub, 0.0)  # smooth part vanishes at zero too


# ---------------------------------------------------- gradient master check


@pytest.mark.parametrize("shape", [(6, 3, 2), (8, 3, 4)])
def test_all_gradients_match_fd_oracle(shape):
    n, p, l = shape
    u = feasible(n, p, l, 25)
    checks = [
        make_best_approx(n, p, l, seed=26),
        make_joint_fdiag(n, p, l, seed=27),
        make_sparse_pca(n, p, l, seed=28),
    ]
    for inst in checks:
        fd = fd_gradient_oracle(inst.objective, u)
        err = fnorm(inst.euclidean_gradient(u) - fd) / max(fnorm(fd), 1e-30)
        assert err <= 1e-5
    inst = make_missing_entries(n, p, l, seed=29)
    s = np.random.default_rng(30).standard_normal((p, p, l))
    fd_u = fd_gradient_oracle(lambda uu: inst.objective(uu, s), u)
    err_u = fnorm(inst.euclidean_gradient_u(u, s) - fd_u) / max(fnorm(fd_u), 1e-30)
    fd_s = fd_gradient_oracle(lambda ss: inst.objective(u, ss), s)
    err_s = fnorm(inst.euclidean_gradient_s(u, s) - fd_s) / max(fnorm(fd_s), 1e-30)
    assert err_u <= 1e-5 and err_s <= 1e-5


@pytest.mark.parametrize("family", problems.FAMILIES)
def test_riemannian_gradient_directional_derivative(family):
    # <grad f, v> matches central differences of f along retraction curves
    mfd = TensorStiefel(6, 3, 2)
    x = mfd.random_point(seed=40)
    v = mfd.random_tangent(x, seed=41, unit=True)
    inst = make_instance(family, 6, 3, 2, seed=42)
    if family == "missing-entries":
        s = np.random.default_rng(43).standard_normal((3, 3, 2))
        f = lambda uu: inst.objective(uu, s)
        egrad = inst.euclidean_gradient_u(x, s)
    else:
        f = inst.objective
        egrad = inst.euclidean_gradient(x)
    grad = mfd.gradient(x, egrad)
    h = 1e-5
    fd = (f(mfd.retract_qr(x, h * v)) - f(mfd.retract_qr(x, -h * v))) / (2 * h)
    assert abs(inner(grad, v) - fd) <= 1e-5 * (1.0 + abs(fd))


def test_sparse_pca_objective_via_trace_identity():
    inst = make_sparse_pca(6, 3, 2, seed=36)
    u = feasible(6, 3, 2, 37)
    gram = t_product(inst.a, t_transpose(inst.a))
    via_trace = -trace(t_product(t_transpose(u), t_product(gram, u)))
    via_trace += inst.rho * float(np.sum(np.abs(u)))
    assert inst.objective(u) == pytest.approx(via_trace, rel=1e-10)


# -------------------------------------------------------------------- metrics


def test_metrics_report_infeasibility_honestly(rng):
    inst = make_best_approx(6, 3, 2, seed=31)
    bad = rng.standard_normal((6, 3, 2))
    m = inst.metrics(bad)
    assert m["feasi"] > 1e-2


def test_instance_generation_deterministic():
    a = make_joint_fdiag(6, 3, 2, seed=32)
    b = make_joint_fdiag(6, 3, 2, seed=32)
    assert np.array_equal(a.x_true, b.x_true)
    for s1, s2 in zip(a.samples, b.samples):
        assert np.array_equal(s1, s2)


def test_make_instance_dispatch():
    for family in problems.FAMILIES:
        inst = make_instance(family, 6, 3, 2, seed=33)
        assert inst.family == family
    with pytest.raises(ValueError):
        make_instance("nope", 6, 3, 2, seed=0)


# ------------------------------------------------------------- serialization


@pytest.mark.parametrize("family", problems.FAMILIES)
def test_instance_serialization_roundtrip(tmp_path, family):
    inst = make_instance(family, 6, 3, 2, seed=34)
    save_instance(tmp_path / family, inst)
    loaded = load_instance(tmp_path / family)
    assert loaded.family == family
    u = feasible(6, 3, 2, 35)
    if family == "missing-entries":
        s = np.random.default_rng(1).standard_normal((3, 3, 2))
        assert loaded.objective(u, s) == pytest.approx(inst.objective(u, s))
    else:
        assert loaded.objective(u) == pytest.approx(inst.objective(u))
