"""Log-space dynamic programming for all partition-function tables.

Quadrature convention: left-endpoint Riemann sums with weight delta, and the
jump at grid index j uses the increment B_k(t_j, t_i).  With this convention
every zero-noise table is an exact binomial count of lattice simplices, which
is what the closed-form tests rely on.

Unrolling the forward-free recursion shows that it sums over strictly
increasing jump-index tuples 0 <= j_1 < ... < j_{n-1} <= m-1.  The backward
sweep is offered in two conventions:

* "matched"   -- jump indices in [i+1, m-1], exactly the index set of the
                 forward sweeps.  Path sampling and the boundary-mass
                 decomposition need this one; it is the default.
* "inclusive" -- jump indices in [i+1, m], the mirror-image (reversed-time
                 left-endpoint) scheme whose zero-noise values are the
                 binomials C(m-i, n-k) * delta^(n-k).

Empty-simplex cells are structurally -inf; logaddexp treats the sentinel
absorbingly so no special-casing is needed in the sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .environment import (
    Environment,
    BoundaryWeights,
    GridSpec,
    KIND_TABLE,
    _read_container,
    _write_container,
)

__all__ = [
    "LogPartitionTable",
    "IncrementSeries",
    "logsumexp_stream",
    "forward_free",
    "forward_boundary",
    "forward_boundary_parts",
    "backward",
    "forward_axis",
    "restricted_boundary_masses",
    "increments",
    "brute_force_free",
    "save_table",
    "load_table",
]

NEG_INF = -np.inf


@dataclass(frozen=True)
class LogPartitionTable:
    """A (levels+1) x (m+1) array of log partition values on the grid."""

    kind: str
    values: np.ndarray
    grid: GridSpec
    theta: float | None = None
    convention: str | None = None

    def __post_init__(self):
        self.values.setflags(write=False)


@dataclass(frozen=True)
class IncrementSeries:
    """Space/time increments of the boundary-model log partition function.

    r[k-1, i] = log Z_k(t_i) - log Z_{k-1}(t_i); the level-k axis weight
    process evaluated on the grid.  x[k-1, i] and y[k, i] are the transformed
    line values X_k(t_i) and Y_k(t_i); y_n holds the increments of Y_n.
    """

    theta: float
    grid: GridSpec
    r: np.ndarray      # (n, m+1)
    x: np.ndarray      # (n, m+1)
    y: np.ndarray      # (n+1, m+1)
    y_n: np.ndarray    # (m,)

    def __post_init__(self):
        for a in (self.r, self.x, self.y, self.y_n):
            a.setflags(write=False)


def logsumexp_stream(values) -> float:
    """log(sum(exp(v))) over an iterable, overflow-safe, -inf when empty."""
    running_max = NEG_INF
    acc = 0.0
    for v in values:
        v = float(v)
        if v == NEG_INF:
            continue
        if v <= running_max:
            acc += math.exp(v - running_max)
        else:
            acc = acc * math.exp(running_max - v) + 1.0
            running_max = v
    if running_max == NEG_INF:
        return NEG_INF
    return running_max + math.log(acc)


def _accumulate_prefix(prev_row: np.ndarray, line: np.ndarray) -> np.ndarray:
    # h[j] = logsumexp_{l <= j} (prev_row[l] - line[l]) for j = 0..m-1
    with np.errstate(invalid="ignore"):
        g = prev_row[:-1] - line[:-1]
    g[np.isnan(g)] = NEG_INF
    return np.logaddexp.accumulate(g)


def forward_free(env: Environment) -> LogPartitionTable:
    """values[k, i] = log Z_{1,k}(0, t_i); row 0 unused (-inf)."""
    n, m = env.grid.n, env.grid.m
    logd = math.log(env.grid.delta)
    lines = env.cum_lines()
    vals = np.full((n + 1, m + 1), NEG_INF)
    vals[1] = lines[0]
    for k in range(2, n + 1):
        h = _accumulate_prefix(vals[k - 1], lines[k - 1])
        vals[k, 1:] = h + lines[k - 1, 1:] + logd
    return LogPartitionTable(kind="forward_free", values=vals, grid=env.grid)


def _boundary_sweep(env, theta, r0, with_continuous, with_atoms):
    n, m = env.grid.n, env.grid.m
    if len(r0) < n:
        raise ValueError(f"boundary weights cover {len(r0)} levels, environment has {n}")
    logd = math.log(env.grid.delta)
    lines = env.cum_lines()
    driving = env.cum_driving()
    z0 = np.concatenate([[0.0], np.cumsum(r0[:n])])  # z0[k] = sum of r0 over levels <= k
    vals = np.full((n + 1, m + 1), NEG_INF)
    if with_continuous:
        vals[0] = -driving + theta * env.grid.times
    for k in range(1, n + 1):
        h = _accumulate_prefix(vals[k - 1], lines[k - 1]) + logd
        if with_atoms:
            atom = z0[k]
            vals[k, 0] = atom
            vals[k, 1:] = lines[k - 1, 1:] + np.logaddexp(atom, h)
        else:
            vals[k, 1:] = lines[k - 1, 1:] + h
    return vals


def forward_boundary(env: Environment, w: BoundaryWeights) -> LogPartitionTable:
    """values[k, i] = log Z_k^theta(t_i) for the model with boundary.

    Row 0 is exactly -B(t_i) + theta*t_i; column 0 is the cumulative sum of
    the axis weights r0.
    """
    vals = _boundary_sweep(env, w.theta, w.r0, with_continuous=True, with_atoms=True)
    return LogPartitionTable(
        kind="forward_boundary", values=vals, grid=env.grid, theta=w.theta
    )


def forward_boundary_parts(env: Environment, w: BoundaryWeights):
    """The boundary table split by where the path enters [0, t].

    Returns (cont, atom): cont[k, i] is the unnormalized quenched mass of
    {sigma_0 > 0} for the k-level model at time t_i, atom[k, i] that of
    {sigma_0 < 0} (entry from the vertical axis).  Their cellwise logaddexp
    is the full boundary table, exactly, because the recursion is linear.
    """
    cont = _boundary_sweep(env, w.theta, w.r0, with_continuous=True, with_atoms=False)
    atom = _boundary_sweep(env, w.theta, w.r0, with_continuous=False, with_atoms=True)
    grid = env.grid
    return (
        LogPartitionTable(kind="forward_boundary", values=cont, grid=grid, theta=w.theta,
                          convention="continuous"),
        LogPartitionTable(kind="forward_boundary", values=atom, grid=grid, theta=w.theta,
                          convention="atomic"),
    )


def forward_axis(env: Environment) -> LogPartitionTable:
    """The axis family: values[0, i] = -B(t_i), and for k >= 1 the same
    continuous-entry recursion as the boundary sweep but with drift-free
    driving weight and no axis atoms.

    This is the reference family sitting between the split boundary masses
    in the ratio comparison; it shares every index convention with the
    continuous sweep, so the inequalities are pathwise-exact here.
    """
    vals = _boundary_sweep(env, 0.0, np.zeros(env.grid.n),
                           with_continuous=True, with_atoms=False)
    return LogPartitionTable(kind="forward_axis", values=vals, grid=env.grid)


def backward(env: Environment, convention: str = "matched") -> LogPartitionTable:
    """values[k, i] = log Z_{k,n}(t_i, t) by the reversed-time recursion."""
    if convention not in ("matched", "inclusive"):
        raise ValueError(f"unknown backward convention {convention!r}")
    n, m = env.grid.n, env.grid.m
    logd = math.log(env.grid.delta)
    lines = env.cum_lines()
    vals = np.full((n + 1, m + 1), NEG_INF)
    vals[n] = lines[n - 1, m] - lines[n - 1]
    hi = m if convention == "inclusive" else m - 1  # largest admissible jump index
    for k in range(n - 1, 0, -1):
        with np.errstate(invalid="ignore"):
            g = vals[k + 1, : hi + 1] + lines[k - 1, : hi + 1]
        g[np.isnan(g)] = NEG_INF
        # suffix[i] = logsumexp_{i <= j <= hi} g[j]
        suffix = np.logaddexp.accumulate(g[::-1])[::-1]
        vals[k, :hi] = -lines[k - 1, :hi] + suffix[1:] + logd
        vals[k, hi:] = NEG_INF
    return LogPartitionTable(
        kind="backward", values=vals, grid=env.grid, convention=convention
    )


def axis_entry_log_masses(env: Environment, w: BoundaryWeights,
                          bw: LogPartitionTable) -> np.ndarray:
    """log of the atomic-part weights Z_j^theta(0) * Z_{j,n}(0, t), j = 1..n.

    Needs the matched backward table.  Entry j (0-based j-1) is the
    unnormalized quenched mass of paths entering from the axis at level j.
    """
    if bw.convention != "matched":
        raise ValueError("axis entry masses need the matched backward table")
    n, m = env.grid.n, env.grid.m
    logd = math.log(env.grid.delta)
    lines = env.cum_lines()
    z0 = np.cumsum(w.r0[:n])
    out = np.empty(n)
    for j in range(1, n):
        with np.errstate(invalid="ignore"):
            g = lines[j - 1, :m] + bw.values[j + 1, :m]
        g[np.isnan(g)] = NEG_INF
        out[j - 1] = z0[j - 1] + np.logaddexp.reduce(g) + logd
    out[n - 1] = z0[n - 1] + lines[n - 1, m]
    return out


def restricted_boundary_masses(env: Environment, w: BoundaryWeights):
    """(log mass of {sigma_0 > 0}, log mass of {sigma_0 < 0}) at (n, t).

    The pair's logaddexp reproduces forward_boundary values[n, m]: the
    split sweeps sum exactly the same weighted tuples, partitioned by entry
    type.
    """
    cont, atom = forward_boundary_parts(env, w)
    n, m = env.grid.n, env.grid.m
    return float(cont.values[n, m]), float(atom.values[n, m])


def increments(fb: LogPartitionTable, env: Environment) -> IncrementSeries:
    """Derive r_k, X_k, Y_k from a forward_boundary table."""
    if fb.kind != "forward_boundary" or fb.theta is None:
        raise ValueError("increments needs a forward_boundary table")
    n, m = env.grid.n, env.grid.m
    theta = fb.theta
    r = np.diff(fb.values, axis=0)                # r[k-1, i] = r_k(t_i)
    x = env.cum_lines() + r[:, :1] - r            # X_k(t_i)
    z0 = np.concatenate([[0.0], np.cumsum(r[:, 0])])
    y = z0[:, None] - fb.values + theta * env.grid.times[None, :]
    y_n = np.diff(y[n])
    return IncrementSeries(theta=theta, grid=env.grid, r=r, x=x, y=y, y_n=y_n)


_BRUTE_MAX_N = 4
_BRUTE_MAX_M = 12


def brute_force_free(env: Environment) -> float:
    """log Z_{1,n}(0, t) by explicit enumeration; the ground-truth oracle.

    Sums over all strictly increasing jump-index tuples
    0 <= j_1 < ... < j_{n-1} <= m-1 with the same endpoint convention as
    forward_free.  Guarded to small instances.
    """
    n, m = env.grid.n, env.grid.m
    if n > _BRUTE_MAX_N or m > _BRUTE_MAX_M:
        raise ValueError(f"brute force restricted to n <= {_BRUTE_MAX_N}, m <= {_BRUTE_MAX_M}")
    lines = env.cum_lines()
    logd = math.log(env.grid.delta)
    if n == 1:
        return float(lines[0, m])

    def weights():
        for jumps in combinations(range(m), n - 1):
            path = (0,) + jumps + (m,)
            w = 0.0
            for k in range(n):
                w += lines[k, path[k + 1]] - lines[k, path[k]]
            yield w + (n - 1) * logd

    return logsumexp_stream(weights())


def save_table(table: LogPartitionTable, path) -> None:
    """Dump a table in the shared binary container (kind tag in the header)."""
    levels = table.values.shape[0] - 1
    _write_container(
        path, KIND_TABLE[table.kind], levels, table.grid.m, table.grid.t,
        table.theta, 0, 0, [table.values],
    )


def load_table(path) -> LogPartitionTable:
    kind, levels, m, t, theta, _, _, payload = _read_container(path, None)
    names = {v: k for k, v in KIND_TABLE.items()}
    if kind not in names:
        raise ValueError(f"{path}: not a table dump")
    vals = payload.reshape(levels + 1, m + 1).copy()
    return LogPartitionTable(
        kind=names[kind], values=vals, grid=GridSpec(max(levels, 1), t, m), theta=theta
    )
