import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gtrace.evo import (D_NEAR, N_DPP, CmaState, Explored, ParetoArchive, cma_ask, cma_tell, decode,
                        dominates, dpp_sample, elementary_symmetric, encode, extract_prototypes, load_archive,
                        load_prototypes, near_optimal_set, pareto_update, rbf_kernel, save_archive,
                        save_prototypes, scalarize)
from gtrace.objectives import ObjectivePoint
from gtrace.planner import AgentParams

PARAMS = AgentParams(0.8, *[5.0] * 7)


# ---------------------------------------------------------------- genome

@settings(max_examples=300)
@given(st.lists(st.floats(-15, 15), min_size=8, max_size=8))
def test_decode_within_bounds_and_roundtrip(values):
    p = decode(values)
    lo, hi = AgentParams.bounds()
    a = p.as_array()
    assert np.all(a >= lo) and np.all(a <= hi)
    u = (a - lo) / (hi - lo)
    if np.all((u > 1e-6) & (u < 1 - 1e-6)):
        assert np.allclose(encode(p), values, atol=1e-6)


@settings(max_examples=300)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_encode_decode_interior(values):
    assert np.allclose(encode(decode(values)), values, atol=1e-9)


def test_encode_rejects_boundary():
    with pytest.raises(ValueError):
        encode(AgentParams(0.6, *[5.0] * 7))


# ---------------------------------------------------------------- CMA-ES

def sphere(x, target):
    return float(((x - target) ** 2).sum())


def run_sphere(seed, lam=10, max_evals=20_000, tol=1e-10):
    rng = np.random.default_rng(seed)
    target = rng.uniform(-3, 3, 8)
    state = CmaState.initial(rng.uniform(-3, 3, 8), 1.0, lam)
    evals = 0
    while evals < max_evals:
        if sphere(state.mean, target) < tol:
            return evals, sphere(state.mean, target)
        x = cma_ask(state, [seed, state.generation])
        f = np.array([sphere(xi, target) for xi in x])
        evals += lam
        state = cma_tell(state, x, f)
    return evals, sphere(state.mean, target)


def test_sphere_benchmark():
    t0 = time.perf_counter()
    for seed in range(5):
        evals, f = run_sphere(seed)
        assert f < 1e-10, (seed, evals, f)
        assert evals <= 2000  # 200 generations at lam=10
    assert time.perf_counter() - t0 < 30


def test_lambda_100_and_default():
    s = CmaState.initial(np.zeros(8), 1.0, 100)
    assert cma_ask(s, 0).shape == (100, 8)
    assert CmaState.initial(np.zeros(8), 1.0).lam == 4 + int(3 * math.log(8))


def test_tiny_sigma_samples_at_mean():
    mean = np.arange(8.0)
    s = CmaState.initial(mean, 1e-12, 20)
    assert np.all(np.abs(cma_ask(s, 3) - mean) < 1e-9)


def test_sample_mean_statistics():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 8))
    cov = a @ a.T / 8 + np.eye(8) * 0.1
    mean = rng.normal(size=8)
    s = CmaState(mean, 0.7, cov, np.zeros(8), np.zeros(8), 0, 100_000)
    x = cma_ask(s, 1)
    se = 0.7 * np.sqrt(np.diag(cov) / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - mean) < 3 * se)
    emp = np.cov(x.T)
    assert np.allclose(emp, 0.49 * cov, atol=0.05 * np.abs(0.49 * cov).max())


def test_ask_is_seeded():
    s = CmaState.initial(np.zeros(8), 1.0, 10)
    assert np.array_equal(cma_ask(s, 5), cma_ask(s, 5))
    assert not np.array_equal(cma_ask(s, 5), cma_ask(s, 6))


def assert_state_equal(a, b):
    assert np.array_equal(a.mean, b.mean) and a.sigma == b.sigma and np.array_equal(a.cov, b.cov)
    assert np.array_equal(a.path_sigma, b.path_sigma) and np.array_equal(a.path_c, b.path_c)
    assert a.generation == b.generation


def test_tell_rank_invariance():
    rng = np.random.default_rng(0)
    s = CmaState.initial(rng.normal(size=8), 0.5, 12)
    for g in range(5):
        x = cma_ask(s, g)
        f = np.abs(rng.normal(size=12)) + 0.1
        base = cma_tell(s, x, f)
        perm = rng.permutation(12)
        assert_state_equal(base, cma_tell(s, x[perm], f[perm]))
        assert_state_equal(base, cma_tell(s, x, f ** 3))
        assert_state_equal(base, cma_tell(s, x, np.log(f)))
        s = base


def test_tell_ties_are_permutation_proof():
    rng = np.random.default_rng(1)
    s = CmaState.initial(np.zeros(8), 1.0, 10)
    x = cma_ask(s, 0)
    f = np.repeat([1.0, 2.0], 5)
    base = cma_tell(s, x, f)
    for _ in range(5):
        perm = rng.permutation(10)
        assert_state_equal(base, cma_tell(s, x[perm], f[perm]))


def test_tell_flat_fitness_keeps_mean():
    s = CmaState.initial(np.ones(8), 1.0, 10)
    x = cma_ask(s, 0)
    n = cma_tell(s, x, np.full(10, 3.0))
    assert np.array_equal(n.mean, s.mean)
    assert np.array_equal(n.cov, s.cov)
    assert n.sigma != s.sigma or n.generation == 1


def test_tell_rejects_bad_input():
    s = CmaState.initial(np.zeros(8), 1.0, 10)
    x = cma_ask(s, 0)
    with pytest.raises(ValueError):
        cma_tell(s, x[:5], np.zeros(5))
    f = np.zeros(10)
    f[3] = np.nan
    with pytest.raises(ValueError):
        cma_tell(s, x, f)


def test_covariance_stays_spd():
    rng = np.random.default_rng(2)
    s = CmaState.initial(np.zeros(8), 1.0, 10)
    for g in range(100):
        x = cma_ask(s, g)
        f = np.array([float(np.sum(np.arange(1, 9) ** 3 * xi ** 2)) for xi in x])
        s = cma_tell(s, x, f + rng.normal(scale=1e-3, size=10))
        assert np.allclose(s.cov, s.cov.T)
        assert np.linalg.eigvalsh(s.cov).min() > 0


def test_cma_round_trip_determinism():
    def stream():
        s = CmaState.initial(np.zeros(8), 1.0, 10)
        for g in range(30):
            x = cma_ask(s, [7, g])
            s = cma_tell(s, x, (x ** 2).sum(axis=1))
        return s
    assert_state_equal(stream(), stream())


# ---------------------------------------------------------------- archive

def test_scalarize_examples():
    assert scalarize(ObjectivePoint(0.0, 0.0)) == 0.0
    assert scalarize(ObjectivePoint(-2.0, 40.0)) == 38.0


def test_equal_sums_break_ties_by_agg():
    s = CmaState.initial(np.zeros(8), 1.0, 4)
    x = np.eye(4, 8)
    f = np.array([1.0, 1.0, 2.0, 2.0])
    # the lower-agg genome of the tied pair must rank first
    a = cma_tell(s, x, f, tiebreak=[0.5, -0.5, 0.0, 0.0])
    b = cma_tell(s, x[[1, 0, 2, 3]], f, tiebreak=[-0.5, 0.5, 0.0, 0.0])
    assert_state_equal(a, b)
    w = s.weights
    assert np.allclose(a.mean, w[0] * x[1] + w[1] * x[0])
    c = cma_tell(s, x, f, tiebreak=[-0.5, 0.5, 0.0, 0.0])
    assert not np.array_equal(a.mean, c.mean)


def explored(a, r, i=0):
    return Explored(PARAMS, ObjectivePoint(a, r), 0, i)


def test_pareto_examples():
    ar = ParetoArchive()
    pareto_update(ar, explored(0, 0))
    pareto_update(ar, explored(1, 1))
    assert [(e.point.agg, e.point.res) for e in ar.entries] == [(0, 0)]
    assert len(ar.all_explored) == 2
    ar = ParetoArchive()
    pareto_update(ar, explored(0, 1))
    pareto_update(ar, explored(1, 0))
    assert len(ar.entries) == 2
    with pytest.raises(ValueError):
        pareto_update(ar, explored(math.nan, 0))


def brute_front(pts):
    keep = []
    for i, p in enumerate(pts):
        if not any(dominates(q, p) for j, q in enumerate(pts) if j != i):
            keep.append(i)
    return keep


@pytest.mark.parametrize("seed", range(3))
def test_pareto_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(1000, 2))
    if seed == 2:
        pts = np.round(pts, 1)  # many exact duplicates and ties
    ar = ParetoArchive()
    for i, p in enumerate(pts):
        pareto_update(ar, explored(*p, i))
        front = ar.front_points()
        for a, b in itertools.permutations(range(len(front)), 2):
            assert not dominates(front[a], front[b])
    # equal points do not dominate each other, so duplicates on the front are all kept
    assert sorted(e.genome_id for e in ar.entries) == brute_front([tuple(p) for p in pts])
    assert all(any(e is x for x in ar.all_explored) for e in ar.entries)


def test_near_optimal_examples():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(300, 2))
    ar = ParetoArchive()
    for i, p in enumerate(pts):
        pareto_update(ar, explored(*p, i))
    front_ids = sorted(e.genome_id for e in ar.entries)
    assert near_optimal_set(ar, 0.0) == front_ids
    no = near_optimal_set(ar, D_NEAR)
    front = pts[front_ids]
    truth = [i for i, p in enumerate(pts) if min(math.dist(p, f) for f in front) <= D_NEAR]
    assert no == truth
    assert set(front_ids) <= set(no)
    with pytest.raises(ValueError):
        near_optimal_set(ParetoArchive())


# ---------------------------------------------------------------- k-DPP

def test_elementary_symmetric():
    lam = np.array([1.0, 2.0, 3.0, 4.0])
    e = elementary_symmetric(lam, 3)
    assert e[1, 4] == 10.0 and e[2, 4] == 35.0 and e[3, 4] == 50.0
    assert e[2, 2] == 2.0


def test_dpp_full_and_errors():
    pts = np.random.default_rng(0).normal(size=(6, 2))
    assert dpp_sample(pts, 6) == list(range(6))
    assert dpp_sample(pts, 0) == []
    with pytest.raises(ValueError):
        dpp_sample(pts, 7)
    assert dpp_sample(pts, 3, seed=4) == dpp_sample(pts, 3, seed=4)
    s = dpp_sample(pts, 3, seed=4)
    assert len(set(s)) == 3 and s == sorted(s)


def test_dpp_identical_pair_is_fair():
    pts = np.zeros((2, 2))
    counts = np.bincount([dpp_sample(pts, 1, seed=s)[0] for s in range(10_000)], minlength=2)
    assert stats.chisquare(counts).pvalue > 0.001


def test_dpp_matches_exact_distribution():
    rng = np.random.default_rng(3)
    pts = rng.normal(scale=0.6, size=(5, 2))
    L = rbf_kernel(pts, 0.5)
    subsets = list(itertools.combinations(range(5), 2))
    p = np.array([np.linalg.det(L[np.ix_(s, s)]) for s in subsets])
    p /= p.sum()
    draws = 20_000
    index = {s: i for i, s in enumerate(subsets)}
    counts = np.zeros(len(subsets))
    for seed in range(draws):
        counts[index[tuple(dpp_sample(pts, 2, 0.5, seed))]] += 1
    assert stats.chisquare(counts, p * draws).pvalue > 0.001


def mean_pairwise(x):
    d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    n = len(x)
    return d.sum() / (n * (n - 1))


def clustered_set(rng):
    centers = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]])
    sizes = [40, 5, 5, 5]
    return np.concatenate([c + rng.normal(scale=0.2, size=(k, 2)) for c, k in zip(centers, sizes)])


def test_dpp_more_diverse_than_random():
    dpp, rnd = [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        pts = clustered_set(rng)
        dpp.append(mean_pairwise(pts[dpp_sample(pts, 8, 0.5, seed)]))
        rnd.append(mean_pairwise(pts[rng.choice(len(pts), 8, replace=False)]))
    assert np.mean(dpp) >= 1.05 * np.mean(rnd)


def synthetic_archive(n=200, seed=0):
    rng = np.random.default_rng(seed)
    ar = ParetoArchive()
    t = rng.uniform(0, 1, n)
    pts = np.column_stack([-10 * t, 10 * (1 - t) ** 2]) + np.abs(rng.normal(scale=0.15, size=(n, 2)))
    for i, p in enumerate(pts):
        pareto_update(ar, Explored(AgentParams.random(rng), ObjectivePoint(*p), i // 20, i))
    return ar


def test_extract_prototypes_invariants():
    ar = synthetic_archive()
    protos = extract_prototypes(ar, d_near=0.3, n_dpp=4, seed=1)
    assert set(protos.pf) <= set(protos.near_optimal)
    assert len(protos.dpp1) == len(protos.dpp2) == 4
    assert not set(protos.dpp1) & set(protos.dpp2)
    assert set(protos.dpp1) | set(protos.dpp2) <= set(protos.near_optimal)
    again = extract_prototypes(ar, d_near=0.3, n_dpp=4, seed=1)
    assert again.dpp1 == protos.dpp1 and again.dpp2 == protos.dpp2
    with pytest.raises(ValueError):
        extract_prototypes(ar, d_near=0.0, n_dpp=N_DPP)


def test_archive_and_prototype_files(tmp_path):
    ar = synthetic_archive()
    save_archive(tmp_path / "a.csv", ar)
    back = load_archive(tmp_path / "a.csv")
    assert back.all_explored == ar.all_explored
    assert back.entries == ar.entries
    protos = extract_prototypes(ar, d_near=0.3, n_dpp=4, seed=0)
    save_prototypes(tmp_path / "p.csv", protos)
    got = load_prototypes(tmp_path / "p.csv")
    for name in ("pf", "near_optimal", "dpp1", "dpp2"):
        a = [(got.explored[i].params, got.explored[i].point) for i in getattr(got, name)]
        b = [(protos.explored[i].params, protos.explored[i].point) for i in getattr(protos, name)]
        assert a == b
