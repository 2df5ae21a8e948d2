import json

import numpy as np
import pytest

from tstiefel.manifold import TensorStiefel
from tstiefel.problems import make_best_approx
from tstiefel.solver import (
    RunRecord,
    SolverConfig,
    bb_steplength,
    cg_beta,
    nonmonotone_linesearch,
    solve,
)
from tstiefel.tcore import fnorm, identity_tensor, inner, t_product, t_transpose


class QuadraticDistance:
    """f(x) = |x - target|^2 / 2 with a feasible target."""

    def __init__(self, target):
        self.target = target

    def objective(self, x):
        return 0.5 * fnorm(x - self.target) ** 2

    def euclidean_gradient(self, x):
        return x - self.target


# --------------------------------------------------------------------- config


def test_config_defaults_match_documented_values():
    cfg = SolverConfig()
    assert cfg.alpha0 == 1e-3
    assert (cfg.alpha_min, cfg.alpha_max) == (1e-20, 1.0)
    assert cfg.shrink == 0.2
    assert cfg.armijo == 1e-4
    assert cfg.tol_x == 1e-6
    assert cfg.tol_f == 1e-12
    assert cfg.max_iter == 1000


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha0": 0.0},
        {"alpha0": 2.0},
        {"shrink": 1.5},
        {"armijo": 0.0},
        {"retraction": "nope"},
        {"transport": "nope"},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


# ---------------------------------------------------------------- line search


def test_linesearch_accepts_immediately_when_possible():
    f = lambda x: float(x[0] ** 2)
    retract = lambda x, v: x + v
    x = np.array([1.0])
    z = np.array([-1.0])
    alpha, x_new, f_new, nbt, stalled = nonmonotone_linesearch(
        f, retract, x, z, -2.0, 0.5, (1.0, 1.0), 0.2, 1e-4, 1e-20
    )
    assert alpha == 0.5 and nbt == 0 and not stalled


def test_linesearch_backtracks_on_ascent():
    f = lambda x: float(x[0] ** 2)
    retract = lambda x, v: x + v
    x = np.array([1.0])
    z = np.array([-1.0])
    # a big first step overshoots past the minimum and increases f
    alpha, _, f_new, nbt, stalled = nonmonotone_linesearch(
        f, retract, x, z, -2.0, 10.0, (1.0, 1.0), 0.2, 1e-4, 1e-20
    )
    assert nbt > 0 and not stalled
    assert f_new <= 1.0 + 1e-4 * alpha * -2.0


def test_linesearch_two_term_memory_accepts_mild_increase():
    # the reference value is the max of the last two objectives, so a step
    # that increases f above f_k but stays below f_{k-1} is accepted
    f = lambda x: float(x[0])
    retract = lambda x, v: x + v
    x = np.array([1.0])
    z = np.array([0.5])  # ascent direction with slope given below
    alpha, _, f_new, nbt, stalled = nonmonotone_linesearch(
        f, retract, x, z, -1e-9, 1.0, (1.0, 2.0), 0.2, 1e-4, 1e-20
    )
    assert not stalled and nbt == 0
    assert f_new > 1.0  # increased over f_k
    assert f_new <= 2.0  # but under f_{k-1}


def test_linesearch_stalls_at_alpha_min():
    f = lambda x: float(x[0])
    retract = lambda x, v: x + v
    x = np.array([0.0])
    z = np.array([1.0])  # pure ascent, pretend slope is negative
    alpha, _, _, nbt, stalled = nonmonotone_linesearch(
        f, retract, x, z, -1.0, 1.0, (0.0, 0.0), 0.5, 1e-4, 1e-3
    )
    assert stalled and alpha == pytest.approx(1e-3, rel=1e-6)


# ----------------------------------------------------------------------- beta


def test_cg_beta_is_min_of_fr_and_dai(rng):
    g_new = rng.standard_normal((3, 2, 2))
    g_old = rng.standard_normal((3, 2, 2))
    z_old = -g_old
    t_z = z_old.copy()
    beta = cg_beta(g_new, g_old, z_old, t_z)
    fr = inner(g_new, g_new) / inner(g_old, g_old)
    denom = max(inner(g_new, t_z) - inner(g_old, z_old), -inner(g_old, z_old))
    assert beta == pytest.approx(min(fr, inner(g_new, g_new) / denom))
    assert beta <= fr + 1e-15


def test_cg_beta_unchanged_gradient_gives_fr_one(rng):
    g = rng.standard_normal((3, 2, 2))
    z = -g
    beta = cg_beta(g, g, z, z)
    # FR ratio is exactly one; Dai's denominator equals <g,g> as well
    assert beta == pytest.approx(1.0)


def test_cg_beta_restarts_on_bad_denominator(rng):
    g_old = rng.standard_normal((3, 2, 2))
    z_old = -g_old
    # transported direction aligned so the Dai denominator is nonpositive
    g_new = np.zeros_like(g_old)
    assert cg_beta(g_new, g_old, z_old, np.zeros_like(z_old)) == 0.0


# ------------------------------------------------------------------------- BB


def test_bb_steplength_equal_vectors_clamped(rng):
    s = rng.standard_normal((3, 2, 2))
    assert bb_steplength(s, s, 1e-20, 1.0) == 1.0


def test_bb_steplength_homogeneity(rng):
    # scaling s alone scales the step by c; scaling both leaves it unchanged
    s = rng.standard_normal((3, 2, 2))
    v = rng.standard_normal((3, 2, 2))
    base = bb_steplength(s, v, 1e-20, 1e12)
    assert bb_steplength(3.0 * s, v, 1e-20, 1e12) == pytest.approx(3.0 * base)
    assert bb_steplength(3.0 * s, 3.0 * v, 1e-20, 1e12) == pytest.approx(base)


def test_bb_steplength_degenerate_returns_alpha_max(rng):
    s = rng.standard_normal((3, 2, 2))
    v = np.zeros_like(s)
    assert bb_steplength(s, v, 1e-20, 0.7) == 0.7
    assert bb_steplength(np.zeros_like(s), v, 1e-20, 0.7) == 0.7


# ----------------------------------------------------------------------- solve


def test_solve_terminates_immediately_at_minimizer():
    mfd = TensorStiefel(5, 2, 3)
    target = mfd.random_point(seed=0)
    problem = QuadraticDistance(target)
    x, record = solve(problem, target, SolverConfig())
    assert record.iterations <= 1
    assert fnorm(x - target) <= 1e-10


def test_solve_rayleigh_quotient_sphere():
    # (n,1,1) reduces to the sphere; the trace objective is the Rayleigh
    # quotient whose minimizer is the dominant eigenvector
    rng = np.random.default_rng(5)
    n = 20
    m = rng.standard_normal((n, n))
    a = (m + m.T)[:, :, np.newaxis]

    class Rayleigh:
        def objective(self, x):
            return -inner(x, t_product(a, x))

        def euclidean_gradient(self, x):
            return -2.0 * t_product(a, x)

    mfd = TensorStiefel(n, 1, 1)
    x0 = mfd.random_point(seed=3)
    x, record = solve(Rayleigh(), x0, SolverConfig(max_iter=2000))
    w, vecs = np.linalg.eigh(a[:, :, 0])
    top = vecs[:, -1]
    angle = np.arccos(min(1.0, abs(float(np.dot(x.ravel(), top)))))
    assert angle <= 1e-4
    assert record.termination in ("step_tol", "f_tol")


@pytest.mark.parametrize("retraction", ["qr", "polar", "cayley", "exp"])
def test_solve_best_approx_all_retractions(retraction):
    inst = make_best_approx(12, 3, 2, seed=7)
    mfd = TensorStiefel(12, 3, 2)
    x0 = mfd.random_point(seed=8)
    x, record = solve(inst, x0, SolverConfig(retraction=retraction))
    assert record.termination in ("step_tol", "f_tol")
    assert mfd.feasibility_defect(x) <= 1e-10
    assert record.objective[-1] < record.objective[0]


def test_solve_iterates_stay_feasible():
    inst = make_best_approx(10, 3, 2, seed=9)
    mfd = TensorStiefel(10, 3, 2)
    x0 = mfd.random_point(seed=10)
    _, record = solve(inst, x0, SolverConfig())
    assert max(record.feasibility) <= 1e-10


def test_solve_nonmonotone_bound_holds():
    inst = make_best_approx(10, 3, 2, seed=11)
    mfd = TensorStiefel(10, 3, 2)
    x0 = mfd.random_point(seed=12)
    _, record = solve(inst, x0, SolverConfig())
    f = record.objective
    for k in range(1, len(f)):
        if record.stalled[k]:
            continue
        bound = max(f[k - 1], f[k - 2] if k >= 2 else f[k - 1])
        slack = 1e-4 * record.steplength[k] * record.directional[k]
        assert f[k] <= bound + slack + 1e-12 * (1 + abs(bound))


def test_solve_deterministic_given_seed():
    inst = make_best_approx(10, 3, 2, seed=13)
    mfd = TensorStiefel(10, 3, 2)
    x0 = mfd.random_point(seed=14)
    x1, rec1 = solve(inst, x0, SolverConfig())
    x2, rec2 = solve(inst, x0, SolverConfig())
    assert np.array_equal(x1, x2)
    assert rec1.objective == rec2.objective
    assert rec1.steplength == rec2.steplength


def test_solve_transported_direction_tangent_at_new_point():
    # one manual CG step: the transported direction must be tangent at the
    # accepted iterate before the beta recombination touches it
    inst = make_best_approx(10, 3, 2, seed=15)
    mfd = TensorStiefel(10, 3, 2)
    x = mfd.random_point(seed=16)
    g = mfd.gradient(x, inst.euclidean_gradient(x))
    z = -g
    alpha, x_new, _, _, _ = nonmonotone_linesearch(
        inst.objective,
        lambda xx, vv: mfd.retract_qr(xx, vv),
        x, z, inner(g, z), 1e-3, (inst.objective(x),) * 2, 0.2, 1e-4, 1e-20,
    )
    for retraction in ("qr", "polar", "cayley"):
        y = mfd.retract(x, alpha * z, method=retraction)
        t_z = mfd.transport(x, alpha * z, z, retraction=retraction, y=y)
        assert mfd.tangency_defect(y, t_z) <= 1e-8


def test_gradient_norm_drops_two_orders_on_most_runs():
    drops = 0
    runs = 50
    for seed in range(runs):
        inst = make_best_approx(8, 2, 2, seed=seed)
        mfd = TensorStiefel(8, 2, 2)
        x0 = mfd.random_point(seed=1000 + seed)
        _, record = solve(inst, x0, SolverConfig())
        if record.grad_norm[-1] <= 1e-2 * record.grad_norm[0]:
            drops += 1
    assert drops >= 0.9 * runs


def test_bb_beats_fixed_steplength_on_quadratic():
    # paired runs: BB-accelerated CG vs crippled variant that never grows
    # its steplength beyond alpha0
    import tstiefel.solver as solver_mod

    wins = 0
    for seed in range(20):
        inst = make_best_approx(8, 2, 2, seed=seed)
        mfd = TensorStiefel(8, 2, 2)
        x0 = mfd.random_point(seed=500 + seed)
        _, rec_bb = solve(inst, x0, SolverConfig())
        orig = solver_mod.bb_steplength
        solver_mod.bb_steplength = lambda s, v, lo, hi: 1e-3
        try:
            _, rec_fixed = solve(inst, x0, SolverConfig())
        finally:
            solver_mod.bb_steplength = orig
        if rec_bb.iterations < rec_fixed.iterations:
            wins += 1
    assert wins >= 15


# ------------------------------------------------------------------ RunRecord


def test_runrecord_serialization_roundtrip(tmp_path):
    inst = make_best_approx(8, 2, 2, seed=17)
    mfd = TensorStiefel(8, 2, 2)
    x0 = mfd.random_point(seed=18)
    _, record = solve(inst, x0, SolverConfig(max_iter=20))
    path = tmp_path / "trace.jsonl"
    record.to_jsonl(path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == len(record.objective)
    assert rows[0]["iteration"] == 0
    assert rows[-1]["objective"] == record.objective[-1]
    summary = record.summary()
    assert summary["iter"] == record.iterations
    assert summary["feasi"] == record.feasibility[-1]


def test_runrecord_zero_wall_time():
    rec = RunRecord()
    rec.append(1.0, 1.0, 0.1, 0, -1.0, 0.0, 123.0)
    rec.zero_wall_time()
    assert rec.wall_time == [0.0]
