"""Sampling polymer paths from the quenched measures, and exact sigma_0 stats.

Paths are represented by their jump times on the grid.  For the boundary
model the Gamma axis weights integrate out everything before time 0, so a
path that enters from the vertical axis at level j has its jumps
sigma_0..sigma_{j-1} left-censored at 0 and carries entry_level = j.

Conditional slices are sampled with Walker alias tables, cached per slice,
so repeated draws from one environment cost O(1) per jump after an O(m)
setup.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment, BoundaryWeights, _generator
from .partition import LogPartitionTable, axis_entry_log_masses

__all__ = [
    "PathSample",
    "SigmaStats",
    "AliasTable",
    "sample_path_free",
    "sample_path_boundary",
    "sigma0_stats",
    "sigma_k_samples",
    "export_paths_csv",
]


@dataclass(frozen=True)
class PathSample:
    """Ordered jump times of one quenched path draw.

    free model:     jumps = (sigma_1, ..., sigma_{n-1}), entry_level None.
    boundary model: jumps = (sigma_0, ..., sigma_{n-1}); when entry_level = j
    is set the first j entries are left-censored placeholders (0.0).
    """

    model: str
    jumps: np.ndarray
    entry_level: int | None = None
    replica_id: int = 0

    def __post_init__(self):
        self.jumps.setflags(write=False)


@dataclass(frozen=True)
class SigmaStats:
    """Quenched distribution of sigma_0, exact given the environment."""

    q_sigma0_plus: float
    q_sigma0: float            # continuous part only; censored mass excluded
    q_cdf: np.ndarray          # CDF of sigma_0 on the grid times, ends at 1
    censored_mass: float       # quenched mass of {sigma_0 < 0}

    def __post_init__(self):
        self.q_cdf.setflags(write=False)


class AliasTable:
    """Walker alias sampler over a finite slice of probabilities."""

    def __init__(self, probs: np.ndarray):
        p = np.asarray(probs, dtype=float)
        k = p.size
        scaled = p * k / p.sum()
        self.accept = np.ones(k)
        self.alias = np.arange(k)
        small = [i for i in range(k) if scaled[i] < 1.0]
        large = [i for i in range(k) if scaled[i] >= 1.0]
        scaled = scaled.copy()
        while small and large:
            s = small.pop()
            l = large.pop()
            self.accept[s] = scaled[s]
            self.alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            (small if scaled[l] < 1.0 else large).append(l)

    def draw(self, rng: np.random.Generator) -> int:
        i = int(rng.integers(self.accept.size))
        if rng.random() < self.accept[i]:
            return i
        return int(self.alias[i])


def _normalized_probs(logw: np.ndarray) -> np.ndarray:
    top = np.max(logw)
    if top == -np.inf:
        raise ValueError("degenerate conditional slice: all weights are zero")
    p = np.exp(logw - top)
    return p / p.sum()


class _SliceSampler:
    """Draws from categorical slices, alias-cached when many draws are expected."""

    def __init__(self, rng, use_cache: bool):
        self.rng = rng
        self.use_cache = use_cache
        self.cache: dict = {}

    def draw(self, key, logw_fn) -> int:
        if self.use_cache:
            table = self.cache.get(key)
            if table is None:
                table = AliasTable(_normalized_probs(logw_fn()))
                self.cache[key] = table
            return table.draw(self.rng)
        p = _normalized_probs(logw_fn())
        u = self.rng.random()
        return int(np.searchsorted(np.cumsum(p), u, side="right").clip(0, p.size - 1))


def _require_matched(bw: LogPartitionTable):
    if bw.kind != "backward" or bw.convention != "matched":
        raise ValueError("path sampling needs the matched-convention backward table")


def _jump_logweights(lines, bw_vals, level, start, inclusive, m):
    lo = start if inclusive else start + 1
    if lo > m - 1:
        raise ValueError("degenerate conditional slice: no admissible jump index")
    j = np.arange(lo, m)
    return lo, lines[level - 1, j] - lines[level - 1, start] + bw_vals[level + 1, j]


def _walk_jumps(sampler, lines, bw_vals, n, m, level, start, inclusive, out):
    # fill out[level-?]: draws sigma_level, sigma_{level+1}, ... up to sigma_{n-1}
    for k in range(level, n):
        lo, lw = _jump_logweights(lines, bw_vals, k, start, inclusive, m)
        idx = lo + sampler.draw(("jump", k, start, inclusive),
                                lambda lw=lw: lw)
        out.append(idx)
        start, inclusive = idx, False


def sample_path_free(env: Environment, bw: LogPartitionTable, count: int,
                     seed: int, stream_id: int = 0) -> list[PathSample]:
    """Independent draws from the discretized point-to-point quenched measure."""
    _require_matched(bw)
    n, m = env.grid.n, env.grid.m
    rng = _generator(seed, stream_id)
    lines = env.cum_lines()
    delta = env.grid.delta
    sampler = _SliceSampler(rng, use_cache=count >= 16)
    out = []
    for rep in range(count):
        idxs: list[int] = []
        if n > 1:
            _walk_jumps(sampler, lines, bw.values, n, m,
                        level=1, start=0, inclusive=True, out=idxs)
        out.append(PathSample(model="free", jumps=np.array(idxs, dtype=float) * delta,
                              replica_id=rep))
    return out


def _boundary_selection_logweights(env, w, bw):
    n, m = env.grid.n, env.grid.m
    logd = math.log(env.grid.delta)
    driving = env.cum_driving()
    cont = (-driving[:m] + w.theta * env.grid.times[:m]
            + bw.values[1, :m] + logd)
    atoms = axis_entry_log_masses(env, w, bw)
    return cont, atoms


def sample_path_boundary(env: Environment, w: BoundaryWeights, bw: LogPartitionTable,
                         count: int, seed: int, stream_id: int = 0) -> list[PathSample]:
    """Independent draws from the discretized boundary-model quenched measure.

    First selects axis entry (atomic part) versus sigma_0 in [0, t)
    (continuous part) with the exact decomposition weights, then samples the
    remaining jumps as in the free sampler.
    """
    _require_matched(bw)
    n, m = env.grid.n, env.grid.m
    rng = _generator(seed, stream_id)
    lines = env.cum_lines()
    delta = env.grid.delta
    cont_lw, atom_lw = _boundary_selection_logweights(env, w, bw)
    select_lw = np.concatenate([cont_lw, atom_lw])
    sampler = _SliceSampler(rng, use_cache=count >= 16)
    out = []
    for rep in range(count):
        pick = sampler.draw(("select",), lambda: select_lw)
        idxs: list[int] = []
        if pick < m:
            # continuous: sigma_0 = t_pick, then strict jumps up the levels
            idxs.append(pick)
            entry = None
            if n > 1:
                _walk_jumps(sampler, lines, bw.values, n, m,
                            level=1, start=pick, inclusive=False, out=idxs)
            jumps = np.array(idxs, dtype=float) * delta
        else:
            entry = pick - m + 1  # axis entry at level j in 1..n
            idxs = [0] * entry    # censored sigma_0..sigma_{j-1}
            if entry < n:
                tail: list[int] = []
                _walk_jumps(sampler, lines, bw.values, n, m,
                            level=entry, start=0, inclusive=True, out=tail)
                idxs.extend(tail)
            jumps = np.array(idxs, dtype=float) * delta
        out.append(PathSample(model="boundary", jumps=jumps,
                              entry_level=entry, replica_id=rep))
    return out


def sigma0_stats(env: Environment, w: BoundaryWeights,
                 bw: LogPartitionTable) -> SigmaStats:
    """Exact quenched moments of sigma_0 from the decomposition weights."""
    _require_matched(bw)
    m = env.grid.m
    cont_lw, atom_lw = _boundary_selection_logweights(env, w, bw)
    all_lw = np.concatenate([cont_lw, atom_lw])
    top = np.max(all_lw)
    weights = np.exp(all_lw - top)
    total = weights.sum()
    p_cont = weights[:m] / total
    censored = float(weights[m:].sum() / total)
    times = env.grid.times
    mean_plus = float(np.dot(times[:m], p_cont))
    cdf = np.empty(m + 1)
    cdf[0] = censored + p_cont[0]
    np.cumsum(p_cont[1:], out=cdf[1:m])
    cdf[1:m] += cdf[0]
    cdf[m] = cdf[m - 1]
    cdf /= cdf[m]
    return SigmaStats(q_sigma0_plus=mean_plus, q_sigma0=mean_plus,
                      q_cdf=cdf, censored_mass=censored)


def sigma_k_samples(samples: list[PathSample], k: int | None = None,
                    gamma: float | None = None):
    """Extract sigma_{floor(gamma*n)} (or sigma_k) from each path sample.

    Censored entries are excluded; returns (values, censored_count).
    """
    if not samples:
        raise ValueError("no samples given")
    if (k is None) == (gamma is None):
        raise ValueError("specify exactly one of k and gamma")
    model = samples[0].model
    n_jumps = samples[0].jumps.size
    n = n_jumps + 1 if model == "free" else n_jumps
    if gamma is not None:
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {gamma}")
        k = int(math.floor(gamma * n))
    first = 1 if model == "free" else 0
    if not first <= k <= n - 1:
        raise ValueError(f"sigma_{k} does not exist in the {model} model with n={n}")
    pos = k - first
    vals = []
    censored = 0
    for s in samples:
        if s.entry_level is not None and k < s.entry_level:
            censored += 1
            continue
        vals.append(s.jumps[pos])
    return np.array(vals), censored


def export_paths_csv(samples: list[PathSample], path) -> None:
    """One row per sample: sigma columns, entry_level, replica_id."""
    if not samples:
        raise ValueError("no samples to export")
    model = samples[0].model
    first = 1 if model == "free" else 0
    n_jumps = samples[0].jumps.size
    header = [f"sigma_{first + i}" for i in range(n_jumps)]
    header += ["entry_level", "replica_id"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in samples:
            row = [f"{v:.17g}" for v in s.jumps]
            row.append("" if s.entry_level is None else str(s.entry_level))
            row.append(str(s.replica_id))
            writer.writerow(row)
