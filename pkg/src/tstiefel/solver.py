"""Riemannian nonmonotone conjugate gradient over the tensor Stiefel manifold.

One iteration: backtracking line search against the larger of the last two
objective values, a retraction step, a conjugate direction update with
``beta = min(Fletcher-Reeves, Dai)`` built from transported quantities,
and a Barzilai-Borwein steplength for the next search.  The problem object
only needs ``objective(x)`` and ``euclidean_gradient(x)``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .manifold import RETRACTIONS, TRANSPORTS, TensorStiefel
from .tcore import fnorm, inner

__all__ = [
    "SolverConfig",
    "RunRecord",
    "solve",
    "cg_beta",
    "bb_steplength",
    "nonmonotone_linesearch",
]


@dataclass
class SolverConfig:
    """Parameters of the conjugate gradient run."""

    alpha0: float = 1e-3
    alpha_min: float = 1e-20
    alpha_max: float = 1.0
    shrink: float = 0.2
    armijo: float = 1e-4
    tol_x: float = 1e-6
    tol_f: float = 1e-12
    max_iter: int = 1000
    retraction: str = "qr"
    transport: str = "projection"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha_min <= self.alpha0 <= self.alpha_max):
            raise ValueError("need 0 < alpha_min <= alpha0 <= alpha_max")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not 0.0 < self.armijo < 1.0:
            raise ValueError("armijo constant must lie in (0, 1)")
        if self.retraction not in RETRACTIONS:
            raise ValueError(f"unknown retraction {self.retraction!r}")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {self.transport!r}")


@dataclass
class RunRecord:
    """Per-iteration trace of one solver run.

    Row ``k`` describes the state after the k-th accepted step; row 0 is
    the initial point (steplength and directional slope are zero there).
    """

    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    steplength: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)
    directional: list = field(default_factory=list)
    feasibility: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    stalled: list = field(default_factory=list)
    termination: str = ""

    def append(self, obj, gnorm, alpha, nbt, slope, feasi, elapsed, stalled=False):
        self.objective.append(float(obj))
        self.grad_norm.append(float(gnorm))
        self.steplength.append(float(alpha))
        self.backtracks.append(int(nbt))
        self.directional.append(float(slope))
        self.feasibility.append(float(feasi))
        self.wall_time.append(float(elapsed))
        self.stalled.append(bool(stalled))

    @property
    def iterations(self):
        """Number of accepted steps (row 0 excluded)."""
        return max(len(self.objective) - 1, 0)

    def iteration_rows(self):
        for k in range(len(self.objective)):
            yield {
                "iteration": k,
                "objective": self.objective[k],
                "grad_norm": self.grad_norm[k],
                "steplength": self.steplength[k],
                "backtracks": self.backtracks[k],
                "directional": self.directional[k],
                "feasibility": self.feasibility[k],
                "wall_time": self.wall_time[k],
                "stalled": self.stalled[k],
            }

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for row in self.iteration_rows():
                fh.write(json.dumps(row) + "\n")

    def summary(self):
        return {
            "obj": self.objective[-1] if self.objective else math.nan,
            "iter": self.iterations,
            "time": self.wall_time[-1] if self.wall_time else 0.0,
            "feasi": self.feasibility[-1] if self.feasibility else math.nan,
            "termination": self.termination,
        }

    def zero_wall_time(self):
        """Blank timing fields for bitwise-reproducible output files."""
        self.wall_time = [0.0] * len(self.wall_time)


def nonmonotone_linesearch(
    f, retract, x, z, slope, alpha_init, f_refs, shrink, armijo, alpha_min
):
    """Backtrack until ``f(R_x(alpha*z)) <= max(f_refs) + armijo*alpha*slope``.

    Returns ``(alpha, x_new, f_new, backtracks, stalled)``.  ``stalled``
    flags that ``alpha`` hit ``alpha_min`` without satisfying the
    condition; the returned point is then the last trial.
    """
    bound = max(f_refs)
    alpha = alpha_init
    backtracks = 0
    while True:
        x_new = retract(x, alpha * z)
        f_new = f(x_new)
        if f_new <= bound + armijo * alpha * slope:
            return alpha, x_new, f_new, backtracks, False
        if alpha <= alpha_min:
            return alpha, x_new, f_new, backtracks, True
        alpha = max(alpha * shrink, alpha_min)
        backtracks += 1


def cg_beta(g_new, g_old, z_old, t_z):
    """Conjugate direction coefficient ``min(Fletcher-Reeves, Dai)``.

    ``t_z`` is the previous direction transported to the new point.  A
    nonpositive Dai denominator restarts the recursion (returns 0).
    """
    gg_new = inner(g_new, g_new)
    gg_old = inner(g_old, g_old)
    gz_old = inner(g_old, z_old)
    if gg_old <= 0.0:
        return 0.0
    beta_fr = gg_new / gg_old
    denom = max(inner(g_new, t_z) - gz_old, -gz_old)
    if denom <= 0.0:
        return 0.0
    return min(beta_fr, gg_new / denom)


def bb_steplength(s, v, alpha_min, alpha_max):
    """Barzilai-Borwein steplength ``<s,s> / |<s,v>|`` clamped to the bounds."""
    ss = inner(s, s)
    sv = abs(inner(s, v))
    if ss == 0.0 or sv == 0.0:
        return alpha_max
    return max(min(ss / sv, alpha_max), alpha_min)


def solve(problem, x0, config=None, manifold=None):
    """Run the conjugate gradient method from feasible ``x0``.

    Stops when the scaled step ``fnorm(x_new - x)/sqrt(n)`` drops below
    ``tol_x``, the relative objective change drops below ``tol_f``, or
    ``max_iter`` accepted steps have been taken.  Returns
    ``(x_final, RunRecord)``.
    """
    config = config or SolverConfig()
    x = np.asarray(x0, dtype=np.float64)
    mfd = manifold or TensorStiefel(*x.shape)
    mfd.check_point(x)
    sqrt_n = math.sqrt(mfd.n)

    def retract(xx, vv):
        return mfd.retract(xx, vv, method=config.retraction)

    # the new iterate doubles as the transport target only when the
    # transport differentiates (or projects onto) the configured retraction
    paired = {"projection": config.retraction, "qr-diff": "qr",
              "polar-diff": "polar"}
    reuse_target = paired.get(config.transport) == config.retraction

    record = RunRecord()
    start = time.perf_counter()

    fx = problem.objective(x)
    g = mfd.gradient(x, problem.euclidean_gradient(x))
    z = -g
    alpha = config.alpha0
    f_prev = fx

    record.append(
        fx, fnorm(g), 0.0, 0, 0.0, mfd.feasibility_defect(x),
        time.perf_counter() - start,
    )

    for _ in range(config.max_iter):
        slope = inner(g, z)
        if slope >= 0.0:
            z = -g
            slope = inner(g, z)

        alpha_acc, x_new, f_new, nbt, stalled = nonmonotone_linesearch(
            problem.objective, retract, x, z, slope, alpha, (fx, f_prev),
            config.shrink, config.armijo, config.alpha_min,
        )
        if stalled:
            # fall back to steepest descent once; keep the tiny step if that
            # stalls as well (the stopping rules fire on the next test)
            z = -g
            slope = inner(g, z)
            alpha_acc, x_new, f_new, nbt2, stalled = nonmonotone_linesearch(
                problem.objective, retract, x, z, slope, alpha, (fx, f_prev),
                config.shrink, config.armijo, config.alpha_min,
            )
            nbt += nbt2

        g_new = mfd.gradient(x_new, problem.euclidean_gradient(x_new))
        record.append(
            f_new, fnorm(g_new), alpha_acc, nbt, slope,
            mfd.feasibility_defect(x_new), time.perf_counter() - start, stalled,
        )

        step_norm = fnorm(x_new - x) / sqrt_n
        f_change = abs(f_new - fx) / (1.0 + abs(fx))
        if step_norm < config.tol_x:
            record.termination = "step_tol"
        elif f_change < config.tol_f:
            record.termination = "f_tol"
        if record.termination:
            x, fx = x_new, f_new
            break

        step = alpha_acc * z
        target = x_new if reuse_target else None
        t_z = mfd.transport(
            x, step, z, method=config.transport,
            retraction=config.retraction, y=target,
        )
        t_g = mfd.transport(
            x, step, g, method=config.transport,
            retraction=config.retraction, y=target,
        )
        beta = cg_beta(g_new, g, z, t_z)
        z = -g_new + beta * t_z
        s = -alpha_acc * t_g
        v = g_new + s / alpha_acc
        alpha = bb_steplength(s, v, config.alpha_min, config.alpha_max)

        f_prev, fx, x, g = fx, f_new, x_new, g_new
    else:
        record.termination = "max_iter"

    return x, record
