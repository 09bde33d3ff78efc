import itertools
import math
import random
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from gransel.errors import DimensionMismatchError, InputError
from gransel.services.distribution import BucketCounts, BucketDistribution, kl_divergence
from gransel.services.features import FeatureConfig, FeatureVector, featurize, stack_features
from gransel.services.sampler import (
    TopK,
    WeightedDoc,
    gumbel_topk,
    gumbel_topk_arrays,
    log_importance_weight,
    log_importance_weights,
    merge_selections,
    random_select,
    uniform_noise,
)
from gransel.services.tokenizer import word_tokenize

from .conftest import two_domain_corpus


def _dist(probs) -> BucketDistribution:
    return BucketDistribution(probs=np.asarray(probs, dtype=np.float64), smoothing_alpha=1.0, support_total=0)


# =====================================================================
# WEIGHTS
# =====================================================================


def test_log_weight_example():
    fv = FeatureVector("d", {0: 3, 1: 1}, num_buckets=2)
    w = log_importance_weight(fv, _dist([0.8, 0.2]), _dist([0.5, 0.5]))
    assert w == pytest.approx(3 * math.log(1.6) + math.log(0.4), abs=1e-12)
    assert w == pytest.approx(0.493721, abs=1e-6)


def test_identical_distributions_and_empty_documents_weigh_zero():
    p = _dist([0.3, 0.7])
    assert log_importance_weight(FeatureVector("d", {0: 5, 1: 2}, num_buckets=2), p, p) == 0.0
    assert log_importance_weight(FeatureVector("e", {}, num_buckets=2), _dist([0.8, 0.2]), p) == 0.0
    with pytest.raises(DimensionMismatchError):
        log_importance_weight(FeatureVector("d", {0: 1}, num_buckets=3), p, p)


def test_matrix_weights_match_per_document_weights():
    rng = np.random.default_rng(4)
    p = _dist(rng.dirichlet(np.ones(16)))
    q = _dist(rng.dirichlet(np.ones(16)))
    vectors = [
        FeatureVector(f"d{i}", {int(b): int(c) for b, c in zip(rng.choice(16, 4, replace=False), rng.integers(1, 5, 4))}, 16)
        for i in range(30)
    ] + [FeatureVector("empty", {}, 16)]
    _, matrix = stack_features(vectors, 16)
    expected = [log_importance_weight(fv, p, q) for fv in vectors]
    np.testing.assert_allclose(log_importance_weights(matrix, p, q), expected, atol=1e-9)


# =====================================================================
# SAMPLING
# =====================================================================


def test_k_equals_n_selects_everything():
    docs = [WeightedDoc(f"d{i}", 0.0) for i in range(5)]
    result = gumbel_topk(docs, 5, seed=1)
    assert sorted(result.selected) == [f"d{i}" for i in range(5)]
    assert not result.truncated
    assert result.scores == sorted(result.scores, reverse=True)


def test_k_above_n_is_truncated():
    result = gumbel_topk([WeightedDoc("a", 0.0), WeightedDoc("b", 1.0)], 5, seed=1)
    assert sorted(result.selected) == ["a", "b"]
    assert result.truncated
    assert result.k == 5 and result.N == 2


def test_dominant_weight_wins():
    docs = [WeightedDoc("d0", 1000.0), WeightedDoc("d1", 0.0), WeightedDoc("d2", 0.0)]
    wins = sum(gumbel_topk(docs, 1, seed).selected == ["d0"] for seed in range(10_000))
    assert wins >= 9_990


def _pair_probabilities(log_weights):
    p = np.exp(np.asarray(log_weights) - np.max(log_weights))
    p /= p.sum()
    out = {}
    for i, j in itertools.combinations(range(len(p)), 2):
        out[(i, j)] = p[i] * p[j] / (1 - p[i]) + p[j] * p[i] / (1 - p[j])
    return out


def _empirical_pairs(log_weights, seeds):
    ids = [f"d{i}" for i in range(len(log_weights))]
    weights = np.asarray(log_weights)
    counts = Counter()
    for seed in seeds:
        chosen = sorted(int(d[1:]) for d in gumbel_topk_arrays(ids, weights, 2, seed).selected)
        counts[tuple(chosen)] += 1
    return counts


def test_selection_matches_sequential_sampling_without_replacement():
    log_weights = [0.0, 0.5, 1.0, -0.5, 2.0, 0.3]
    trials = 100_000
    exact = _pair_probabilities(log_weights)
    counts = _empirical_pairs(log_weights, range(trials))
    tv = 0.5 * sum(abs(counts[pair] / trials - prob) for pair, prob in exact.items())
    assert tv < 0.01


def test_shifting_log_weights_keeps_selection():
    ids = [f"d{i}" for i in range(6)]
    weights = np.asarray([0.0, 0.5, 1.0, -0.5, 2.0, 0.3])
    for seed in range(200):
        a = gumbel_topk_arrays(ids, weights, 2, seed).selected
        b = gumbel_topk_arrays(ids, weights + 1.0, 2, seed).selected
        assert a == b


def test_random_select_is_uniform():
    ids = [f"doc-{i}" for i in range(10)]
    counts = Counter()
    for seed in range(100_000):
        counts.update(random_select(ids, 3, seed).selected)
    observed = [counts[d] for d in ids]
    assert sum(observed) == 300_000
    assert stats.chisquare(observed).pvalue > 0.001


def test_random_stream_differs_from_selection_stream():
    ids = [f"doc-{i}" for i in range(50)]
    a = random_select(ids, 10, seed=3).selected
    b = gumbel_topk_arrays(ids, np.zeros(50), 10, seed=3).selected
    assert a != b


def test_input_order_does_not_matter():
    rng = random.Random(9)
    docs = [WeightedDoc(f"doc-{i}", rng.uniform(-2, 2)) for i in range(200)]
    shuffled = docs[:]
    rng.shuffle(shuffled)
    for seed in (0, 1, 2**64 - 1):
        assert gumbel_topk(docs, 20, seed).selected == gumbel_topk(shuffled, 20, seed).selected


def test_seed_range_and_input_errors():
    docs = [WeightedDoc("a", 0.0)]
    with pytest.raises(InputError):
        gumbel_topk(docs, 1, seed=-1)
    with pytest.raises(InputError):
        gumbel_topk(docs, 1, seed=2**64)
    with pytest.raises(InputError):
        gumbel_topk(docs, 0, seed=0)
    with pytest.raises(InputError):
        gumbel_topk([], 1, seed=0)
    with pytest.raises(InputError):
        gumbel_topk([WeightedDoc("a", 0.0), WeightedDoc("a", 1.0)], 1, seed=0)
    with pytest.raises(InputError):
        WeightedDoc("a", float("inf"))


def test_noise_is_open_unit_interval():
    u = uniform_noise(12345, [f"x{i}" for i in range(10_000)])
    assert np.all(u > 0) and np.all(u < 1)
    np.testing.assert_array_equal(u, uniform_noise(12345, [f"x{i}" for i in range(10_000)]))


# =====================================================================
# MERGING PARTIAL SELECTIONS
# =====================================================================


def test_topk_merge_is_associative_and_commutative():
    rng = random.Random(1)
    items = [(rng.choice([0.0, 0.5, 1.0, rng.random()]), f"d{i}") for i in range(60)]
    a, b, c = TopK(7, items[:20]), TopK(7, items[20:40]), TopK(7, items[40:])
    left = a.merge(b).merge(c).items()
    right = a.merge(b.merge(c)).items()
    swapped = c.merge(a).merge(b).items()
    assert left == right == swapped == TopK(7, items).items()


def test_sharded_selection_equals_global_selection():
    rng = np.random.default_rng(8)
    ids = [f"doc-{i}" for i in range(500)]
    weights = rng.normal(size=500)
    overall = gumbel_topk_arrays(ids, weights, 25, seed=77)
    parts = [gumbel_topk_arrays(ids[s::4], weights[s::4], 25, seed=77) for s in range(4)]
    merged = merge_selections(parts, 25)
    assert merged.selected == overall.selected
    assert merged.N == 500
    with pytest.raises(InputError):
        merge_selections([])


# =====================================================================
# SELECTION ON A TWO-DOMAIN CORPUS
# =====================================================================


def test_importance_selection_beats_random_on_two_domains():
    raw, target = two_domain_corpus(num_docs=20_000, share_a=0.1, num_target=200, seed=7)
    cfg = FeatureConfig(num_buckets=1000, ngram_orders=(1,))
    alpha = 0.01

    ids, matrix = stack_features([featurize(word_tokenize(t, doc_id=d), cfg) for d, t in raw], 1000)
    row = {d: i for i, d in enumerate(ids)}
    raw_counts = BucketCounts(1000)
    raw_counts.add_array(np.asarray(matrix.sum(axis=0)).ravel(), len(ids))
    p = BucketDistribution.from_counts(
        BucketCounts(1000).add_all(featurize(word_tokenize(t), cfg) for t in target), alpha
    )
    q = BucketDistribution.from_counts(raw_counts, alpha)
    log_weights = log_importance_weights(matrix, p, q)

    def dist_of(selected):
        counts = BucketCounts(1000)
        rows = [row[d] for d in selected]
        counts.add_array(np.asarray(matrix[rows].sum(axis=0)).ravel(), len(rows))
        return BucketDistribution.from_counts(counts, alpha)

    reductions = []
    for seed in range(100):
        chosen = gumbel_topk_arrays(ids, log_weights, 1000, seed).selected
        baseline = random_select(ids, 1000, seed).selected
        reductions.append(kl_divergence(p, dist_of(baseline)) - kl_divergence(p, dist_of(chosen)))

    assert sum(r > 0 for r in reductions) >= 95
    assert np.mean(reductions) > 0.05
