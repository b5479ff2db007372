import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgefedcache.workload import (
    ContentCatalog,
    ServerProfile,
    generate_requests,
    mzipf_pmf,
    permuted_ranks,
    sample_catalog,
)


def profile(q=0.0, k=1.0, users=10, capacity=10.0, ranks=None):
    return ServerProfile(1, q, k, users, capacity, ranks)


def test_single_content_pmf_is_one():
    assert mzipf_pmf(profile(q=37.0, k=0.3), 1).tolist() == [1.0]


def test_pmf_matches_hand_values():
    pmf = mzipf_pmf(profile(q=0.0, k=1.0), 3)
    np.testing.assert_allclose(pmf, [6 / 11, 3 / 11, 2 / 11], rtol=0, atol=1e-12)


def test_pmf_head_tail_ratio():
    pmf = mzipf_pmf(profile(q=100.0, k=0.6), 40)
    # independent evaluation of the ratio (kappa_40 + q) / (kappa_1 + q) to the power k
    assert pmf[0] / pmf[-1] == pytest.approx((140 / 101) ** 0.6, rel=1e-12)
    assert pmf[0] / pmf[-1] == pytest.approx(1.216, abs=5e-4)


def test_pmf_follows_permuted_ranks():
    ranks = (3, 1, 2)
    pmf = mzipf_pmf(profile(ranks=ranks), 3)
    base = mzipf_pmf(profile(), 3)
    np.testing.assert_allclose(pmf, base[np.array(ranks) - 1])


@settings(max_examples=60, deadline=None)
@given(
    c=st.integers(1, 60),
    q=st.floats(0, 500),
    k=st.floats(0.05, 3.0),
)
def test_pmf_is_a_nonincreasing_distribution(c, q, k):
    pmf = mzipf_pmf(profile(q=q, k=k), c)
    assert abs(pmf.sum() - 1.0) < 1e-12
    assert np.all(pmf > 0)
    assert np.all(np.diff(pmf) <= 1e-15)


@settings(max_examples=30, deadline=None)
@given(q1=st.floats(0, 100), dq=st.floats(0.5, 100), k=st.floats(0.2, 2.0))
def test_larger_plateau_flattens(q1, dq, k):
    flat = mzipf_pmf(profile(q=q1 + dq, k=k), 20)
    steep = mzipf_pmf(profile(q=q1, k=k), 20)
    assert flat[0] / flat[-1] < steep[0] / steep[-1]


def test_zero_users_gives_zero_requests():
    rng = np.random.default_rng(0)
    counts = generate_requests(profile(), mzipf_pmf(profile(), 3), rng, num_users=0)
    assert counts.tolist() == [0, 0, 0]


def test_degenerate_pmf_puts_all_requests_on_one_item():
    counts = generate_requests(profile(users=5), np.array([1.0, 0.0, 0.0]), np.random.default_rng(1))
    assert counts.tolist() == [5, 0, 0]


def test_empirical_frequencies_concentrate():
    p = profile(users=10_000)
    pmf = mzipf_pmf(p, 3)
    counts = generate_requests(p, pmf, np.random.default_rng(2))
    freq = counts / 10_000
    stderr = np.sqrt(pmf * (1 - pmf) / 10_000)
    assert np.all(np.abs(freq - pmf) < 3 * stderr)


@settings(max_examples=40, deadline=None)
@given(users=st.integers(1, 200), seed=st.integers(0, 2**31))
def test_requests_sum_to_users(users, seed):
    p = profile(users=users)
    counts = generate_requests(p, mzipf_pmf(p, 7), np.random.default_rng(seed))
    assert counts.sum() == users and np.all(counts >= 0)


def test_bad_pmf_rejected():
    with pytest.raises(ValueError):
        generate_requests(profile(), np.array([0.5, 0.4]), np.random.default_rng(0))


def test_degenerate_catalog_ranges():
    cat = sample_catalog(1, (4, 4), (0.1, 0.1), np.random.default_rng(0))
    assert cat.items == [(1, 4.0, 0.1)]


def test_catalog_deterministic_per_seed():
    a = sample_catalog(40, rng=np.random.default_rng(9))
    b = sample_catalog(40, rng=np.random.default_rng(9))
    np.testing.assert_array_equal(a.sizes, b.sizes)
    np.testing.assert_array_equal(a.payments, b.payments)


def test_default_catalog_ranges():
    cat = sample_catalog(40, rng=np.random.default_rng(3))
    assert cat.num_contents == 40
    assert np.all((cat.sizes >= 1) & (cat.sizes <= 8))
    assert np.all((cat.payments >= 0.05) & (cat.payments <= 0.5))
    assert [it.content_id for it in cat.items] == list(range(1, 41))


@pytest.mark.parametrize("size_range", [(8, 1), (0, 3), (-1, 2)])
def test_invalid_ranges_rejected(size_range):
    with pytest.raises(ValueError):
        sample_catalog(5, size_range, rng=np.random.default_rng(0))


def test_catalog_arrays_are_read_only_and_validated():
    cat = ContentCatalog(np.array([1.0, 2.0]), np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        cat.sizes[0] = 5.0
    with pytest.raises(ValueError):
        ContentCatalog(np.array([1.0, -2.0]), np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        ContentCatalog(np.array([1.0]), np.array([0.1, 0.2]))
    assert ContentCatalog.from_dict(cat.to_dict()).to_dict() == cat.to_dict()


@pytest.mark.parametrize(
    "kwargs",
    [dict(q=-1.0), dict(k=0.0), dict(users=0), dict(capacity=0.0), dict(ranks=(1, 1, 2))],
)
def test_invalid_profiles_rejected(kwargs):
    with pytest.raises(ValueError):
        profile(**kwargs)


def test_permuted_ranks_is_a_permutation():
    ranks = permuted_ranks(12, np.random.default_rng(4))
    assert sorted(ranks) == list(range(1, 13))
    assert profile(ranks=ranks).ranks(12).tolist() == list(ranks)
