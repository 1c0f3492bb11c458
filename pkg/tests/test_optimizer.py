import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_fronts

from dld_forge.optimizer import (
    EvaluationError,
    MooProblem,
    das_dennis,
    das_dennis_count,
    dominance_matrix,
    non_dominated_sort,
    nsga3_run,
    polynomial_mutation,
    reference_directions,
    sbx,
)


def test_das_dennis_examples():
    d = das_dennis(3, 2)
    assert len(d) == 6 == das_dennis_count(3, 2)
    assert {tuple(r) for r in d} == {(1, 0, 0), (0.5, 0.5, 0), (0.5, 0, 0.5), (0, 1, 0), (0, 0.5, 0.5), (0, 0, 1)}
    assert len(das_dennis(3, 12)) == 91
    assert np.allclose(das_dennis(4, 5).sum(axis=1), 1)


def test_reference_directions_subsample():
    d = reference_directions(3, 5)
    assert np.allclose(d, [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 1, 0], [0, 0, 1]])
    assert np.allclose(reference_directions(3, 6), das_dennis(3, 2))


def test_sort_matches_brute_force(rng):
    F = rng.random((200, 3))
    assert non_dominated_sort(F) == brute_fronts(F)
    Fi = rng.integers(0, 4, (200, 2)).astype(float)  # many ties and duplicates
    assert non_dominated_sort(Fi) == brute_fronts(Fi)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(1, 4), st.integers(0, 2**31))
def test_sort_properties(n, m, seed):
    F = np.random.default_rng(seed).integers(0, 5, (n, m)).astype(float)
    fronts = non_dominated_sort(F)
    assert sorted(i for fr in fronts for i in fr) == list(range(n))
    D = dominance_matrix(F)
    for fr in fronts:
        assert not D[np.ix_(fr, fr)].any()
    for a, b in zip(fronts, fronts[1:]):
        assert all(D[a, j].any() for j in b)


def test_variation_operators_stay_in_bounds(rng):
    lo, hi = np.zeros(4), np.array([1.0, 2.0, 3.0, 0.5])
    for _ in range(500):
        p1, p2 = lo + rng.random(4) * (hi - lo), lo + rng.random(4) * (hi - lo)
        c1, c2 = sbx(p1, p2, lo, hi, rng)
        m = polynomial_mutation(c1, lo, hi, rng)
        for c in (c1, c2, m):
            assert np.all(c >= lo) and np.all(c <= hi)


def _sphere(n=3, m=2):
    def ev(x):
        return np.array([np.sum(x**2), np.sum((x - 1) ** 2)])[:m]

    return MooProblem(n, (np.full(n, -1.0), np.full(n, 2.0)), m, ev)


def test_constant_problem_spreads_niches():
    prob = MooProblem(2, (np.zeros(2), np.ones(2)), 3, lambda x: np.ones(3))
    res = nsga3_run(prob, 12, 3, directions=6, seed=0)
    assert np.all(res.rank == 0)
    assert np.bincount(res.niche, minlength=6).tolist() == [2] * 6


def test_seed_determinism():
    a = nsga3_run(_sphere(), 24, 15, seed=3)
    b = nsga3_run(_sphere(), 24, 15, seed=3)
    c = nsga3_run(_sphere(), 24, 15, seed=4)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.archive_F, b.archive_F)
    assert not np.array_equal(a.X, c.X)


def test_elitism_and_archive():
    res = nsga3_run(_sphere(), 24, 30, seed=1, archive_cap=40)
    hist = np.array(res.history[1:])
    assert np.all(np.diff(hist, axis=0) <= 0)
    assert len(res.archive_F) <= 40
    assert not dominance_matrix(res.archive_F).any()
    assert np.all(res.front() >= res.archive_F.min(axis=0) - 1e-12)


def test_evaluation_error_carries_genes():
    def bad(x):
        if x[0] > 0.5:
            raise FloatingPointError("boom")
        return np.array([x[0], 1 - x[0]])

    prob = MooProblem(1, (np.zeros(1), np.ones(1)), 2, bad)
    with pytest.raises(EvaluationError) as info:
        nsga3_run(prob, 8, 2, seed=0)
    assert info.value.genes[0] > 0.5


def test_archive_csv(tmp_path):
    path = tmp_path / "arch.csv"
    nsga3_run(_sphere(), 12, 3, seed=0, archive_csv=path)
    head = path.read_text().splitlines()[0]
    assert head == "generation,x0,x1,x2,f0,f1"


def test_too_few_individuals():
    with pytest.raises(ValueError):
        nsga3_run(_sphere(), 4, 1, directions=das_dennis(2, 9))
