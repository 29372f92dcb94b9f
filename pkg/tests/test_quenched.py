"""Quenched path samplers checked against exact discrete laws."""

import csv
import itertools
import math
from collections import Counter

import numpy as np
import pytest

from oypolymer.environment import (
    Environment,
    GridSpec,
    sample_boundary,
    sample_environment,
)
from oypolymer.partition import backward, forward_boundary
from oypolymer.quenched import (
    AliasTable,
    PathSample,
    export_paths_csv,
    sample_path_boundary,
    sample_path_free,
    sigma0_stats,
    sigma_k_samples,
)


def zero_env(n, m, t=1.0):
    gs = GridSpec(n, t, m)
    return Environment(gs, np.zeros((n, m)), np.zeros(m), 0, 0)


# --- alias sampler ----------------------------------------------------------

def test_alias_table_matches_probabilities():
    probs = np.array([0.5, 0.1, 0.15, 0.25])
    table = AliasTable(probs)
    rng = np.random.default_rng(0)
    n = 200000
    counts = Counter(table.draw(rng) for _ in range(n))
    for i, p in enumerate(probs):
        se = math.sqrt(p * (1 - p) / n)
        assert abs(counts[i] / n - p) < 5 * se


def test_alias_table_degenerate():
    table = AliasTable(np.array([1.0]))
    rng = np.random.default_rng(0)
    assert table.draw(rng) == 0


# --- free-model sampler -----------------------------------------------------

def test_zero_noise_sigma1_uniform():
    # n=2, no noise: the single jump is uniform over the m grid indices
    m = 8
    env = zero_env(2, m)
    bw = backward(env)
    samples = sample_path_free(env, bw, count=20000, seed=1)
    idx = np.array([round(s.jumps[0] / env.grid.delta) for s in samples])
    counts = np.bincount(idx.astype(int), minlength=m)
    assert idx.max() == m - 1  # strictly before the endpoint
    # chi-square against uniform
    expect = len(samples) / m
    chi2 = float(np.sum((counts - expect) ** 2 / expect))
    assert chi2 < 30.0  # df = 7, p ~ 1e-4 cutoff


def test_zero_noise_pairs_uniform():
    # n=3, no noise: (j1 < j2) uniform over all C(m,2) strict pairs, so the
    # marginal of sigma_1 decays linearly (density proportional to t - s)
    m = 6
    env = zero_env(3, m)
    bw = backward(env)
    n_draws = 30000
    samples = sample_path_free(env, bw, count=n_draws, seed=2)
    cnt = Counter()
    for s in samples:
        j1 = round(s.jumps[0] / env.grid.delta)
        j2 = round(s.jumps[1] / env.grid.delta)
        cnt[(int(j1), int(j2))] += 1
    pairs = list(itertools.combinations(range(m), 2))
    assert set(cnt) <= set(pairs)
    p = 1.0 / len(pairs)
    tv = 0.5 * sum(abs(cnt.get(pair, 0) / n_draws - p) for pair in pairs)
    assert tv < 0.02
    marg = np.bincount([k[0] for k in cnt.elements()], minlength=m)
    expect = np.array([m - 1 - j for j in range(m)], dtype=float)
    expect *= n_draws / expect.sum()
    assert np.max(np.abs(marg - expect) / np.sqrt(expect + 1)) < 5.0


def test_free_sampler_matches_exact_law_random_env():
    env = sample_environment(GridSpec(3, 1.0, 6), seed=11)
    bw = backward(env)
    lines = env.cum_lines()
    wts = {}
    for j1, j2 in itertools.combinations(range(6), 2):
        wts[(j1, j2)] = (lines[0, j1] + lines[1, j2] - lines[1, j1]
                         + lines[2, 6] - lines[2, j2])
    top = max(wts.values())
    z = sum(math.exp(v - top) for v in wts.values())
    probs = {k: math.exp(v - top) / z for k, v in wts.items()}
    n_draws = 40000
    samples = sample_path_free(env, bw, count=n_draws, seed=5)
    cnt = Counter()
    for s in samples:
        cnt[tuple(int(round(j / env.grid.delta)) for j in s.jumps)] += 1
    assert set(cnt) <= set(probs)
    tv = 0.5 * sum(abs(cnt.get(k, 0) / n_draws - p) for k, p in probs.items())
    assert tv < 0.02


def test_free_sampler_requires_matched_backward():
    env = sample_environment(GridSpec(2, 1.0, 6), seed=0)
    with pytest.raises(ValueError):
        sample_path_free(env, backward(env, convention="inclusive"),
                         count=1, seed=0)


def test_free_sampler_deterministic():
    env = sample_environment(GridSpec(3, 1.0, 10), seed=4)
    bw = backward(env)
    a = sample_path_free(env, bw, count=5, seed=9, stream_id=2)
    b = sample_path_free(env, bw, count=5, seed=9, stream_id=2)
    for s, t in zip(a, b):
        assert np.array_equal(s.jumps, t.jumps)


# --- boundary-model sampler -------------------------------------------------

def test_boundary_sampler_consistent_with_exact_stats():
    env = sample_environment(GridSpec(3, 1.0, 8), seed=11)
    w = sample_boundary(1.2, 3, seed=11, stream_id=1)
    bw = backward(env)
    st = sigma0_stats(env, w, bw)
    n_draws = 30000
    samples = sample_path_boundary(env, w, bw, count=n_draws, seed=6)
    frac_cens = np.mean([s.entry_level is not None for s in samples])
    se = math.sqrt(st.censored_mass * (1 - st.censored_mass) / n_draws)
    assert abs(frac_cens - st.censored_mass) < 5 * se + 1e-6
    mean_plus = np.mean([0.0 if s.entry_level is not None else s.jumps[0]
                         for s in samples])
    assert abs(mean_plus - st.q_sigma0_plus) < 0.02 * max(0.05, st.q_sigma0_plus) + 0.01


def test_boundary_sampler_censoring_structure():
    env = sample_environment(GridSpec(4, 1.0, 10), seed=3)
    w = sample_boundary(0.8, 4, seed=3, stream_id=1)
    bw = backward(env)
    for s in sample_path_boundary(env, w, bw, count=200, seed=1):
        assert s.jumps.size == 4
        assert np.all(np.diff(s.jumps) >= 0.0)
        if s.entry_level is not None:
            assert 1 <= s.entry_level <= 4
            assert np.all(s.jumps[:s.entry_level] == 0.0)


def test_sigma0_stats_invariants():
    env = sample_environment(GridSpec(3, 2.0, 20), seed=8)
    w = sample_boundary(1.0, 3, seed=8, stream_id=1)
    st = sigma0_stats(env, w, backward(env))
    assert st.q_cdf[-1] == 1.0
    assert np.all(np.diff(st.q_cdf) >= -1e-15)
    assert 0.0 <= st.censored_mass <= 1.0
    assert 0.0 <= st.q_sigma0_plus <= env.grid.t


def test_sigma0_mean_matches_cdf():
    env = sample_environment(GridSpec(2, 1.5, 30), seed=12)
    w = sample_boundary(1.3, 2, seed=12, stream_id=1)
    st = sigma0_stats(env, w, backward(env))
    # E sigma_0+ from the CDF by summation by parts on the grid
    times = env.grid.times
    mean_from_cdf = float(np.sum((1.0 - st.q_cdf[:-1]) * np.diff(times)))
    # grid CDF is piecewise constant between times: identity is exact
    assert mean_from_cdf == pytest.approx(st.q_sigma0_plus, abs=1e-12)


# --- extraction helpers -----------------------------------------------------

def test_sigma_k_samples_selects_and_censors():
    samples = [
        PathSample(model="boundary", jumps=np.array([0.0, 0.0, 0.5]),
                   entry_level=2, replica_id=0),
        PathSample(model="boundary", jumps=np.array([0.1, 0.2, 0.6]),
                   replica_id=1),
    ]
    vals, censored = sigma_k_samples(samples, k=1)
    assert censored == 1
    assert np.allclose(vals, [0.2])
    vals, censored = sigma_k_samples(samples, k=2)
    assert censored == 0 and len(vals) == 2
    vals, censored = sigma_k_samples(samples, gamma=0.5)  # k = 1
    assert censored == 1 and np.allclose(vals, [0.2])


def test_sigma_k_samples_free_model_excludes_sigma0():
    samples = [PathSample(model="free", jumps=np.array([0.3, 0.7]))]
    with pytest.raises(ValueError):
        sigma_k_samples(samples, k=0)
    vals, censored = sigma_k_samples(samples, k=1)
    assert np.allclose(vals, [0.3]) and censored == 0


def test_sigma_k_samples_argument_validation():
    samples = [PathSample(model="free", jumps=np.array([0.3]))]
    with pytest.raises(ValueError):
        sigma_k_samples(samples)
    with pytest.raises(ValueError):
        sigma_k_samples(samples, k=1, gamma=0.5)
    with pytest.raises(ValueError):
        sigma_k_samples([], k=1)


def test_export_paths_csv(tmp_path):
    env = sample_environment(GridSpec(2, 1.0, 6), seed=0)
    w = sample_boundary(1.0, 2, seed=0, stream_id=1)
    bw = backward(env)
    samples = sample_path_boundary(env, w, bw, count=10, seed=0)
    out = tmp_path / "paths.csv"
    export_paths_csv(samples, out)
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sigma_0", "sigma_1", "entry_level", "replica_id"]
    assert len(rows) == 11
    for row in rows[1:]:
        float(row[0]), float(row[1])  # parsable jump times
        assert row[2] == "" or 1 <= int(row[2]) <= 2
