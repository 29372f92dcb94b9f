"""Statistical and pathwise verification of the model's exact identities.

Moment tests are z-tests at |z| <= 3 against closed-form targets; pathwise
tests (comparison inequalities, mass decomposition, reflection involution)
must hold on every realization with 1e-9 log-scale slack.  Continuum
identities are tested after two-resolution Richardson extrapolation
(statistics computed at m and 2m on the same Brownian path, combined as
2*val(2m) - val(m)) to remove the leading discretization bias.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from functools import partial

import numpy as np

from . import specfun
from ._parallel import CH_BOUNDARY, CH_ENV, replica_map, stream
from .environment import (
    BoundaryWeights,
    Environment,
    GridSpec,
    coarsen_environment,
    sample_boundary,
    sample_environment,
)
from .partition import (
    LogPartitionTable,
    forward_axis,
    forward_boundary,
    forward_boundary_parts,
    increments,
)
from .quenched import sigma0_stats
from . import partition

__all__ = [
    "TestReport",
    "ProcessBundle",
    "DualEnvironment",
    "test_dufresne",
    "test_burke_independence",
    "test_mean_identity",
    "test_variance_identity",
    "test_comparison",
    "run_comparison_suite",
    "build_dual",
    "bundle_from_tables",
    "reflect_bundle",
    "test_reversal",
    "ks_statistic",
    "ks_critical_value",
    "bootstrap_se",
]

PATHWISE_SLACK = 1e-9
Z_LIMIT = 3.0


@dataclass
class TestReport:
    name: str
    statistic: float
    target: float
    stderr: float
    z_score: float
    passed: bool
    replicas: int
    grid: GridSpec | None = None
    notes: str = ""
    checks: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.grid is not None:
            d["grid"] = {"n": self.grid.n, "t": self.grid.t, "m": self.grid.m}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _zcheck(name, value, target, se) -> dict:
    z = (value - target) / se if se > 0 else math.inf * np.sign(value - target)
    return {"name": name, "statistic": float(value), "target": float(target),
            "stderr": float(se), "z": float(z), "passed": bool(abs(z) <= Z_LIMIT)}


def _aggregate(name, checks, replicas, grid, notes="") -> TestReport:
    worst = max(checks, key=lambda c: abs(c.get("z", 0.0)))
    return TestReport(
        name=name,
        statistic=worst["statistic"],
        target=worst["target"],
        stderr=worst["stderr"],
        z_score=worst["z"],
        passed=all(c["passed"] for c in checks),
        replicas=replicas,
        grid=grid,
        notes=notes,
        checks=checks,
    )


# ---------------------------------------------------------------------------
# small statistics helpers
# ---------------------------------------------------------------------------

def ks_statistic(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov sup distance of a sample against a CDF callable."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    f = np.array([cdf(v) for v in x])
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    return float(max(np.max(grid_hi - f), np.max(f - grid_lo)))


def ks_critical_value(n: int, alpha: float = 0.01) -> float:
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c / (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n))


def bootstrap_se(values: np.ndarray, stat_fn, n_boot: int = 1000, seed: int = 0) -> float:
    """Bootstrap standard error of stat_fn over iid values; deterministic."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xB007], dtype=np.uint64)))
    values = np.asarray(values)
    n = values.size
    stats = np.empty(n_boot)
    for b in range(n_boot):
        stats[b] = stat_fn(values[rng.integers(n, size=n)])
    return float(np.std(stats, ddof=1))


def _mean_se(v: np.ndarray):
    v = np.asarray(v)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _corr_z(a, b) -> float:
    r = float(np.corrcoef(a, b)[0, 1])
    # Fisher transform; null corr = 0
    return math.atanh(min(max(r, -0.999999), 0.999999)) * math.sqrt(len(a) - 3)


# ---------------------------------------------------------------------------
# replica kernels (module level: picklable for process pools)
# ---------------------------------------------------------------------------

def _boundary_env(rep, theta, grid, seed, doubling):
    g = grid.doubled() if doubling else grid
    env_f = sample_environment(g, seed, stream(rep, CH_ENV))
    w = sample_boundary(theta, grid.n, seed, stream(rep, CH_BOUNDARY))
    env_c = coarsen_environment(env_f) if doubling else None
    return env_f, env_c, w


def _extrap(fine, coarse):
    return 2.0 * fine - coarse if coarse is not None else fine


def _dufresne_kernel(rep, theta, grid, seed, doubling, time_fracs):
    env_f, env_c, w = _boundary_env(rep, theta, grid, seed, doubling)
    fb_f = forward_boundary(env_f, w)
    r_f = fb_f.values[1] - fb_f.values[0]
    if doubling:
        fb_c = forward_boundary(env_c, w)
        r_c = fb_c.values[1] - fb_c.values[0]
    out = []
    for frac in time_fracs:
        i_c = int(round(frac * grid.m))
        i_f = 2 * i_c if doubling else i_c
        out.append(_extrap(r_f[i_f], r_c[i_c] if doubling else None))
    out.append(w.r0[0])  # exact t = 0 draw
    return out


def test_dufresne(theta: float, replicas: int, grid: GridSpec, seed: int = 0,
                  workers: int = 1, doubling: bool = True,
                  time_fracs=(0.5, 1.0)) -> TestReport:
    """r_1(t) has mean -psi0(theta), variance psi1(theta), and exp(-r_1(t))
    is Gamma(theta, 1) distributed, at every t."""
    if grid.n != 1:
        grid = GridSpec(1, grid.t, grid.m)
    fn = partial(_dufresne_kernel, theta=theta, grid=grid, seed=seed,
                 doubling=doubling, time_fracs=tuple(time_fracs))
    rows = np.array(replica_map(fn, replicas, workers))
    mean_t = -specfun.digamma(theta)
    var_t = specfun.trigamma(theta)
    checks = []
    for col, frac in enumerate(tuple(time_fracs) + ("exact-0",)):
        r = rows[:, col]
        mu, se = _mean_se(r)
        checks.append(_zcheck(f"mean r_1 at t-frac {frac}", mu, mean_t, se))
        v = float(np.var(r, ddof=1))
        se_v = bootstrap_se(r, lambda x: np.var(x, ddof=1), seed=seed + col)
        checks.append(_zcheck(f"var r_1 at t-frac {frac}", v, var_t, se_v))
        d = ks_statistic(np.exp(-r), lambda x: specfun.gamma_cdf(x, theta))
        crit = ks_critical_value(r.size, alpha=0.01)
        checks.append({"name": f"KS exp(-r_1) vs Gamma at t-frac {frac}",
                       "statistic": d, "target": 0.0, "stderr": crit,
                       "z": d / crit * Z_LIMIT, "passed": bool(d <= crit)})
    return _aggregate("dufresne", checks, replicas, grid)


def _burke_kernel(rep, theta, grid, seed, doubling, idx_coarse):
    env_f, env_c, w = _boundary_env(rep, theta, grid, seed, doubling)
    inc_f = increments(forward_boundary(env_f, w), env_f)
    inc_c = increments(forward_boundary(env_c, w), env_c) if doubling else None
    out = []
    for j, i_c in enumerate(idx_coarse):
        i_f = 2 * i_c if doubling else i_c
        r = _extrap(inc_f.r[j, i_f], inc_c.r[j, i_c] if doubling else None)
        xinc = _extrap(inc_f.x[j, i_f] - inc_f.x[j, 0],
                       inc_c.x[j, i_c] - inc_c.x[j, 0] if doubling else None)
        out.extend([r, xinc])
    return out


def test_burke_independence(theta: float, replicas: int, grid: GridSpec,
                            times=None, seed: int = 0, workers: int = 1,
                            doubling: bool = True) -> TestReport:
    """At any decreasing times s_1 >= ... >= s_n the variables r_j(s_j) and
    the earlier-window increments of X_j are mutually independent; tested as
    pairwise correlation screens plus one triple cumulant."""
    n = grid.n
    if times is None:
        times = [grid.t * (n - j) / n for j in range(n)]
    times = list(times)
    if any(times[i] < times[i + 1] for i in range(len(times) - 1)):
        raise ValueError("times must be non-increasing: s_1 >= ... >= s_n")
    if len(times) != n:
        raise ValueError(f"need {n} times for {n} levels")
    idx_coarse = [int(round(s / grid.delta)) for s in times]
    fn = partial(_burke_kernel, theta=theta, grid=grid, seed=seed,
                 doubling=doubling, idx_coarse=tuple(idx_coarse))
    rows = np.array(replica_map(fn, replicas, workers))
    r_cols = rows[:, 0::2]
    x_cols = rows[:, 1::2]
    checks = []
    for j in range(n):
        for k in range(j + 1, n):
            z = _corr_z(r_cols[:, j], r_cols[:, k])
            checks.append({"name": f"corr(r_{j+1}(s_{j+1}), r_{k+1}(s_{k+1}))",
                           "statistic": z / math.sqrt(replicas - 3), "target": 0.0,
                           "stderr": 1.0 / math.sqrt(replicas - 3), "z": z,
                           "passed": bool(abs(z) <= Z_LIMIT)})
        z = _corr_z(x_cols[:, j], r_cols[:, j])
        checks.append({"name": f"corr(X_{j+1} increment, r_{j+1}(s_{j+1}))",
                       "statistic": z / math.sqrt(replicas - 3), "target": 0.0,
                       "stderr": 1.0 / math.sqrt(replicas - 3), "z": z,
                       "passed": bool(abs(z) <= Z_LIMIT)})
    if n >= 2:
        a = r_cols[:, 0] - r_cols[:, 0].mean()
        b = r_cols[:, 1] - r_cols[:, 1].mean()
        c = x_cols[:, 0] - x_cols[:, 0].mean()
        triple = a * b * c
        mu, se = _mean_se(triple)
        checks.append(_zcheck("triple cumulant r_1 r_2 X_1-inc", mu, 0.0, se))
    notes = ("correlation screen only; full mutual independence is not "
             "exhaustively testable, one triple cumulant added")
    return _aggregate("burke_independence", checks, replicas, grid, notes)


def _logz_kernel(rep, theta, grid, seed, doubling, want_sigma):
    env_f, env_c, w = _boundary_env(rep, theta, grid, seed, doubling)
    n = grid.n
    logz_f = forward_boundary(env_f, w).values[n, -1]
    logz_c = forward_boundary(env_c, w).values[n, -1] if doubling else None
    out = [_extrap(logz_f, logz_c)]
    if want_sigma:
        s_f = sigma0_stats(env_f, w, partition.backward(env_f)).q_sigma0_plus
        s_c = (sigma0_stats(env_c, w, partition.backward(env_c)).q_sigma0_plus
               if doubling else None)
        out.append(_extrap(s_f, s_c))
    return out


def test_mean_identity(theta: float, n: int, t: float, replicas: int,
                       m: int | None = None, seed: int = 0, workers: int = 1,
                       doubling: bool = True) -> TestReport:
    """E log Z_n^theta(t) = -n psi0(theta) + theta t, exact for all (n, t)."""
    if m is None:
        m = default_steps(n, t)
    grid = GridSpec(n, t, m)
    fn = partial(_logz_kernel, theta=theta, grid=grid, seed=seed,
                 doubling=doubling, want_sigma=False)
    rows = np.array(replica_map(fn, replicas, workers))
    mu, se = _mean_se(rows[:, 0])
    target = -n * specfun.digamma(theta) + theta * t
    checks = [_zcheck("mean log Z", mu, target, se)]
    return _aggregate("mean_identity", checks, replicas, grid)


def test_variance_identity(theta: float, n: int, t: float, replicas: int,
                           m: int | None = None, seed: int = 0, workers: int = 1,
                           doubling: bool = True, rel_slack: float = 0.05) -> TestReport:
    """Var(log Z_n^theta(t)) = n psi1(theta) - t + 2 E(sigma_0^+): both sides
    estimated by Monte Carlo, compared within 3x combined bootstrap error
    plus a relative slack for residual grid bias."""
    if m is None:
        m = default_steps(n, t)
    grid = GridSpec(n, t, m)
    fn = partial(_logz_kernel, theta=theta, grid=grid, seed=seed,
                 doubling=doubling, want_sigma=True)
    rows = np.array(replica_map(fn, replicas, workers))
    logz, qplus = rows[:, 0], rows[:, 1]
    lhs = float(np.var(logz, ddof=1))
    se_lhs = bootstrap_se(logz, lambda x: np.var(x, ddof=1), seed=seed)
    mean_qplus, se_q = _mean_se(qplus)
    rhs = n * specfun.trigamma(theta) - t + 2.0 * mean_qplus
    se_rhs = 2.0 * se_q
    comb = math.sqrt(se_lhs ** 2 + se_rhs ** 2)
    tol = Z_LIMIT * comb + rel_slack * abs(rhs)
    checks = [{
        "name": "Var(log Z) vs n*psi1 - t + 2E(sigma_0+)",
        "statistic": lhs, "target": rhs, "stderr": comb,
        "z": (lhs - rhs) / comb if comb > 0 else 0.0,
        "passed": bool(abs(lhs - rhs) <= tol),
    }]
    # consistency of the difference form: E(sigma_0 proxy) = t - n psi1(theta)
    # via E sigma_0+ - E sigma_0- = (lhs - n psi1 + t)/2 ... reported as note only
    notes = f"tolerance = 3*combined bootstrap SE + {rel_slack:.0%} of target"
    return _aggregate("variance_identity", checks, replicas, grid, notes)


def default_steps(n: int, t: float) -> int:
    """Default identity-test resolution: delta <= min(0.01, t/(50 n))."""
    delta = min(0.01, t / (50.0 * n))
    return max(int(math.ceil(t / delta)), 2 * n)


# ---------------------------------------------------------------------------
# comparison inequalities (pathwise, zero tolerance beyond log-scale slack)
# ---------------------------------------------------------------------------

def test_comparison(env: Environment, w: BoundaryWeights, theta: float | None = None,
                    ) -> TestReport:
    """Ratio inequalities between the axis-augmented free family and the
    restricted boundary masses, checked pathwise on one realization.

    Level form, at the final time, for every level k:
      log C_{k+1} - log C_k <= log Zx_{k+1} - log Zx_k <= log D_{k+1} - log D_k
    where C_k, D_k are the {sigma_0 > 0} / {sigma_0 < 0} masses and Zx the
    axis family.  Time form, for every adjacent grid pair s < t:
      dC_n >= dZx_n >= dD_n.  Statistic = worst violation in log scale.
    """
    if theta is not None and abs(theta - w.theta) > 0:
        raise ValueError("theta disagrees with the boundary weights")
    n, m = env.grid.n, env.grid.m
    cont_t, atom_t = forward_boundary_parts(env, w)
    cont, atom = cont_t.values, atom_t.values
    ax = forward_axis(env).values
    worst = 0.0
    n_checked = 0
    # level form at the final column
    for k in range(n):
        lhs = cont[k + 1, m] - cont[k, m]
        mid = ax[k + 1, m] - ax[k, m]
        if np.isfinite(lhs) and np.isfinite(mid):
            worst = max(worst, lhs - mid)
            n_checked += 1
        rhs = atom[k + 1, m] - atom[k, m]
        if np.isfinite(mid) and np.isfinite(rhs):
            worst = max(worst, mid - rhs)
            n_checked += 1
    # time form for each level, adjacent grid pairs
    for k in range(1, n + 1):
        with np.errstate(invalid="ignore"):
            dc = np.diff(cont[k])
            dx = np.diff(ax[k])
            da = np.diff(atom[k])
        ok = np.isfinite(dc) & np.isfinite(dx)
        if ok.any():
            worst = max(worst, float(np.max(dx[ok] - dc[ok])))
            n_checked += int(ok.sum())
        ok = np.isfinite(dx) & np.isfinite(da)
        if ok.any():
            worst = max(worst, float(np.max(da[ok] - dx[ok])))
            n_checked += int(ok.sum())
    passed = worst <= PATHWISE_SLACK
    return TestReport(
        name="comparison", statistic=worst, target=0.0, stderr=0.0,
        z_score=0.0, passed=passed, replicas=1, grid=env.grid,
        notes=f"{n_checked} pathwise inequalities, slack {PATHWISE_SLACK:g}",
        checks=[{"name": "max violation", "statistic": worst, "target": 0.0,
                 "stderr": PATHWISE_SLACK, "z": 0.0, "passed": bool(passed)}],
    )


def _comparison_kernel(rep, theta, grid, seed):
    env = sample_environment(grid, seed, stream(rep, CH_ENV))
    w = sample_boundary(theta, grid.n, seed, stream(rep, CH_BOUNDARY))
    return test_comparison(env, w).statistic


def run_comparison_suite(theta: float, n: int, m: int, t: float, count: int,
                         seed: int = 0, workers: int = 1) -> TestReport:
    """Pathwise comparison check over many random environments."""
    grid = GridSpec(n, t, m)
    fn = partial(_comparison_kernel, theta=theta, grid=grid, seed=seed)
    worsts = np.array(replica_map(fn, count, workers))
    worst = float(np.max(worsts))
    violations = int(np.sum(worsts > PATHWISE_SLACK))
    return TestReport(
        name="comparison_suite", statistic=worst, target=0.0, stderr=0.0,
        z_score=0.0, passed=violations == 0, replicas=count, grid=grid,
        notes=f"{violations} environments with violations beyond {PATHWISE_SLACK:g}",
        checks=[{"name": "max violation over environments", "statistic": worst,
                 "target": 0.0, "stderr": PATHWISE_SLACK, "z": 0.0,
                 "passed": bool(violations == 0)}],
    )


# ---------------------------------------------------------------------------
# reversal / duality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProcessBundle:
    """The process quadruple (Y_0..Y_n, X_k, B_k, r_k) on the grid."""

    theta: float
    grid: GridSpec
    y: np.ndarray   # (n+1, m+1)
    x: np.ndarray   # (n, m+1)
    b: np.ndarray   # (n, m+1)
    r: np.ndarray   # (n, m+1)

    def __post_init__(self):
        for a in (self.y, self.x, self.b, self.r):
            a.setflags(write=False)


@dataclass(frozen=True)
class DualEnvironment:
    """The time-reversed environment: Y*_0 drives, B*_j are the lines."""

    env: Environment
    weights: BoundaryWeights
    T: float
    bundle: ProcessBundle


def bundle_from_tables(env: Environment, fb: LogPartitionTable) -> ProcessBundle:
    inc = increments(fb, env)
    return ProcessBundle(theta=inc.theta, grid=env.grid, y=inc.y, x=inc.x,
                         b=env.cum_lines(), r=inc.r)


def reflect_bundle(bundle: ProcessBundle) -> ProcessBundle:
    """Apply the reversal transform at horizon T = grid endpoint.

    Pure reflection on arrays; applying it twice returns the original
    bundle up to floating-point roundoff.
    """
    y, x, b, r = bundle.y, bundle.x, bundle.b, bundle.r
    y_star = y[::-1, -1:] - y[::-1, ::-1]
    b_star = x[::-1, -1:] - x[::-1, ::-1]
    x_star = b[::-1, -1:] - b[::-1, ::-1]
    r_star = r[::-1, ::-1]
    return ProcessBundle(theta=bundle.theta, grid=bundle.grid,
                         y=np.ascontiguousarray(y_star),
                         x=np.ascontiguousarray(x_star),
                         b=np.ascontiguousarray(b_star),
                         r=np.ascontiguousarray(r_star))


def build_dual(env: Environment, w: BoundaryWeights, fb: LogPartitionTable,
               T: float | None = None) -> DualEnvironment:
    """Construct the dual environment from the increment processes."""
    if T is None:
        T = env.grid.t
    if abs(T - env.grid.t) > 1e-12 * max(1.0, env.grid.t):
        raise ValueError("reversal horizon must be the grid endpoint")
    star = reflect_bundle(bundle_from_tables(env, fb))
    db0 = np.ascontiguousarray(np.diff(star.y[0]))
    db = np.ascontiguousarray(np.diff(star.b, axis=1))
    dual_env = Environment(grid=env.grid, db=db, db0=db0,
                           seed=env.seed, stream_id=env.stream_id)
    weights = BoundaryWeights(theta=w.theta, r0=star.r[:, 0].copy())
    return DualEnvironment(env=dual_env, weights=weights, T=T, bundle=star)


def _reversal_kernel(rep, theta, grid, seed, doubling):
    env_f, env_c, w = _boundary_env(rep, theta, grid, seed, doubling)
    n = grid.n

    def one(env):
        fb = forward_boundary(env, w)
        dual = build_dual(env, w, fb)
        fb_dual = forward_boundary(dual.env, dual.weights)
        orig = bundle_from_tables(env, fb)
        invol = reflect_bundle(reflect_bundle(orig))
        invol_err = max(
            float(np.max(np.abs(invol.y - orig.y))),
            float(np.max(np.abs(invol.x - orig.x))),
            float(np.max(np.abs(invol.b - orig.b))),
            float(np.max(np.abs(invol.r - orig.r))),
        )
        s_orig = sigma0_stats(env, w, partition.backward(env)).q_sigma0_plus
        s_dual = sigma0_stats(dual.env, dual.weights,
                              partition.backward(dual.env)).q_sigma0_plus
        return (fb.values[n, -1], fb_dual.values[n, -1], s_orig, s_dual, invol_err)

    f = one(env_f)
    if doubling:
        c = one(env_c)
        return [2 * f[i] - c[i] for i in range(4)] + [max(f[4], c[4])]
    return list(f)


def test_reversal(theta: float, n: int, t: float, replicas: int,
                  m: int | None = None, seed: int = 0, workers: int = 1,
                  doubling: bool = True) -> TestReport:
    """The reversed environment has the law of the original: log Z moments
    and quenched sigma_0+ match between the two; reflection is an exact
    involution on every realization."""
    if m is None:
        m = default_steps(n, t)
    grid = GridSpec(n, t, m)
    fn = partial(_reversal_kernel, theta=theta, grid=grid, seed=seed,
                 doubling=doubling)
    rows = np.array(replica_map(fn, replicas, workers))
    logz_o, logz_d, sig_o, sig_d, invol = rows.T
    target = -n * specfun.digamma(theta) + theta * t
    checks = []
    mu_d, se_d = _mean_se(logz_d)
    checks.append(_zcheck("mean dual log Z", mu_d, target, se_d))
    var_o = float(np.var(logz_o, ddof=1))
    var_d = float(np.var(logz_d, ddof=1))
    se_vo = bootstrap_se(logz_o, lambda x: np.var(x, ddof=1), seed=seed)
    se_vd = bootstrap_se(logz_d, lambda x: np.var(x, ddof=1), seed=seed + 1)
    comb = math.sqrt(se_vo ** 2 + se_vd ** 2)
    checks.append({"name": "var log Z original vs dual", "statistic": var_d,
                   "target": var_o, "stderr": comb,
                   "z": (var_d - var_o) / comb, "passed": bool(abs(var_d - var_o) <= Z_LIMIT * comb)})
    mu_so, se_so = _mean_se(sig_o)
    mu_sd, se_sd = _mean_se(sig_d)
    comb_s = math.sqrt(se_so ** 2 + se_sd ** 2)
    checks.append({"name": "E sigma_0+ original vs dual", "statistic": mu_sd,
                   "target": mu_so, "stderr": comb_s,
                   "z": (mu_sd - mu_so) / comb_s,
                   "passed": bool(abs(mu_sd - mu_so) <= Z_LIMIT * comb_s)})
    invol_worst = float(np.max(invol))
    scale = max(1.0, float(np.max(np.abs(logz_o))))
    checks.append({"name": "involution max abs error", "statistic": invol_worst,
                   "target": 0.0, "stderr": 1e-12 * scale, "z": 0.0,
                   "passed": bool(invol_worst <= 1e-12 * scale)})
    return _aggregate("reversal", checks, replicas, grid)
