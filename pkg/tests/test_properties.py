import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_min_cost, canonical_partition
from uda_vireid.alignment import hungarian, k_reciprocal_sets
from uda_vireid.clustering import crmr_refine_detailed, dbscan
from uda_vireid.config import PipelineConfig, format_config, parse_config_text
from uda_vireid.core import CenterMemory, l2_normalize, memory_update
from uda_vireid.fileio import decode_matrix, encode_matrix
from uda_vireid.losses import holistic_distribution, reference_memory
from uda_vireid.synthbench import pairwise_label_metrics

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=64)


def matrices(rows, cols, elements=finite):
    return st.tuples(rows, cols).flatmap(lambda s: arrays(np.float64, s, elements=elements))


def nonzero_rows(m):
    return m[np.linalg.norm(m, axis=1) > 1e-3]


@settings(max_examples=60, deadline=None)
@given(matrices(st.integers(1, 5), st.integers(1, 5), st.floats(0, 100, allow_nan=False, width=64)))
def test_hungarian_is_optimal(cost):
    a = hungarian(cost)
    assert len(a) == min(cost.shape)
    assert a.total_cost <= brute_force_min_cost(cost.tolist()) + 1e-9 * max(1.0, cost.max())
    assert abs(a.total_cost - brute_force_min_cost(cost.tolist())) <= 1e-9 * max(1.0, cost.max())


@settings(max_examples=60, deadline=None)
@given(matrices(st.integers(0, 25), st.integers(2, 4)), st.floats(0.01, 1.0), st.integers(1, 5), st.floats(0.1, 50))
def test_dbscan_partition_and_scale_invariance(x, eps, min_pts, scale):
    x = nonzero_rows(x)
    cs = dbscan(x, eps, min_pts)
    covered = np.concatenate([*cs.clusters, cs.noise]) if len(x) else np.empty(0)
    assert sorted(covered.tolist()) == list(range(len(x)))
    assert all(c.size >= 1 for c in cs.clusters)
    assert canonical_partition(dbscan(x * scale, eps, min_pts).labels()) == canonical_partition(cs.labels())


@settings(max_examples=40, deadline=None)
@given(matrices(st.integers(0, 25), st.integers(2, 4)), st.floats(0.05, 1.0), st.floats(0.1, 0.9))
def test_crmr_refines_both_partitions(x, eps1, ratio):
    x = nonzero_rows(x)
    r = crmr_refine_detailed(x, eps1, eps1 * ratio, 3)
    coarse, fine = r.coarse.labels(), r.fine.labels()
    for members in r.clusters.clusters:
        assert len(set(coarse[members])) == 1 and coarse[members[0]] >= 0
        assert len(set(fine[members])) == 1 and fine[members[0]] >= 0


@settings(max_examples=60, deadline=None)
@given(matrices(st.integers(1, 12), st.integers(2, 4)), st.data())
def test_k_reciprocal_symmetric_with_self(x, data):
    x = nonzero_rows(x)
    if len(x) == 0:
        return
    k = data.draw(st.integers(1, len(x)))
    r = k_reciprocal_sets(x, k)
    assert np.array_equal(r, r.T)
    assert np.all(np.diag(r))


@settings(max_examples=60, deadline=None)
@given(matrices(st.integers(1, 6), st.integers(1, 4)), st.floats(0, 1))
def test_memory_update_stays_between(old, alpha):
    fresh = old[::-1] * 2.0 + 1.0
    new = memory_update(CenterMemory(old), fresh, alpha).centers
    lo, hi = np.minimum(old, fresh), np.maximum(old, fresh)
    tol = 1e-12 * (1 + np.abs(hi))
    assert np.all(new >= lo - tol) and np.all(new <= hi + tol)


@settings(max_examples=60, deadline=None)
@given(matrices(st.integers(1, 6), st.integers(1, 5)))
def test_normalize_idempotent(x):
    x = nonzero_rows(x)
    if len(x) == 0:
        return
    once = l2_normalize(x)
    np.testing.assert_allclose(l2_normalize(once), once, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    st.tuples(st.integers(0, 6), st.integers(1, 5)).flatmap(
        lambda s: arrays(np.float32, s, elements=st.floats(allow_nan=False, allow_infinity=False, width=32))
    )
)
def test_embedding_payload_round_trip(m):
    raw = encode_matrix(m)
    assert decode_matrix(raw).tobytes() == m.astype("<f4").tobytes()
    assert encode_matrix(decode_matrix(raw)) == raw


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=2, max_size=30))
def test_pair_metrics_swap_symmetry(pairs):
    a = np.array([p for p, _ in pairs])
    b = np.array([t for _, t in pairs])
    ab, ba = pairwise_label_metrics(a, b), pairwise_label_metrics(b, a)
    assert ab.pairwise_precision == ba.pairwise_recall
    assert ab.pairwise_f1 == ba.pairwise_f1


@settings(max_examples=40, deadline=None)
@given(matrices(st.integers(1, 5), st.just(3)), st.floats(0.01, 2.0))
def test_holistic_rows_are_distributions(x, tau):
    rng = np.random.default_rng(0)
    ref = reference_memory(*(CenterMemory(l2_normalize(rng.standard_normal((2, 3)))) for _ in range(4)))
    h = holistic_distribution(x, ref, tau)
    np.testing.assert_allclose(h.sum(axis=1), 1.0)
    assert np.all(h >= 0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.01, 0.99), st.floats(1e-6, 10), st.booleans(), st.integers(0, 2**32))
def test_config_text_round_trip(eps1, ratio, tau, active, seed):
    cfg = PipelineConfig(eps1_v=eps1, eps2_v=eps1 * ratio, tau=tau, cmcc_active=active, seed=seed)
    assert PipelineConfig(**parse_config_text(format_config(cfg))) == cfg
