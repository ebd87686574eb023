import numpy as np
import pytest

from oracles import naive_retrieval
from uda_vireid.core import EmbeddingSet
from uda_vireid.errors import ParameterError, ShapeError
from uda_vireid.evaluation import evaluate_ranking, evaluate_retrieval


def test_single_query_hand_example():
    # true matches at ranks 1 and 3 of a 4-item gallery
    sim = np.array([[0.9, 0.8, 0.7, 0.6]])
    m = evaluate_ranking(sim, [5], [0], [5, 1, 5, 2], [1, 1, 1, 1], ranks=(1, 2, 3))
    assert m.mAP == 5 / 6
    assert m.mINP == 2 / 3
    assert m.cmc == {1: 1.0, 2: 1.0, 3: 1.0}


def test_perfect_ranking():
    sim = np.array([[0.9, 0.8, 0.1], [0.1, 0.2, 0.9]])
    m = evaluate_ranking(sim, [0, 1], [0, 0], [0, 0, 1], [1, 1, 1], ranks=(1,))
    assert m.cmc[1] == m.mAP == m.mINP == 1.0


def test_reversed_ranking_single_match():
    sim = -np.arange(10.0)[None, :]
    g_ids = [1] * 9 + [0]
    m = evaluate_ranking(sim, [0], [0], g_ids, [1] * 10, ranks=(1, 10))
    assert m.mAP == m.mINP == 1 / 10
    assert m.cmc == {1: 0.0, 10: 1.0}


def test_same_camera_same_identity_excluded():
    sim = np.array([[0.9, 0.8, 0.7]])
    # the best match shares the query camera and is removed; next true match is at rank 2
    m = evaluate_ranking(sim, [3], [7], [3, 1, 3], [7, 7, 2], ranks=(1, 2))
    assert m.cmc == {1: 0.0, 2: 1.0}
    assert m.mAP == 0.5


def test_query_without_match_is_skipped():
    m = evaluate_ranking(np.array([[0.5, 0.4], [0.3, 0.2]]), [0, 9], [0, 0], [0, 1], [1, 1], ranks=(1,))
    assert m.n_queries == 2 and m.n_valid == 1 and m.n_skipped == 1
    assert m.mAP == 1.0


def test_ties_keep_gallery_order():
    m = evaluate_ranking(np.zeros((1, 3)), [0], [0], [1, 0, 1], [1, 1, 1], ranks=(1, 2))
    assert m.cmc == {1: 0.0, 2: 1.0}


def test_errors():
    with pytest.raises(ShapeError):
        evaluate_ranking(np.zeros((2, 2)), [0], [0], [0, 1], [0, 1])
    with pytest.raises(ParameterError):
        evaluate_ranking(np.zeros((1, 1)), [0], [0], [0], [1], ranks=(0,))


@pytest.mark.parametrize("seed", range(10))
def test_matches_naive_ranker(seed):
    rng = np.random.default_rng(seed)
    q, g = int(rng.integers(1, 12)), int(rng.integers(1, 30))
    # rounded similarities produce ties on purpose
    sim = np.round(rng.uniform(-1, 1, (q, g)), 1)
    q_ids, g_ids = rng.integers(0, 5, q), rng.integers(0, 5, g)
    q_cams, g_cams = rng.integers(0, 3, q), rng.integers(0, 3, g)
    ranks = (1, 3, 5)
    m = evaluate_ranking(sim, q_ids, q_cams, g_ids, g_cams, ranks)
    cmc, mAP, mINP, n_valid = naive_retrieval(sim.tolist(), q_ids, q_cams, g_ids, g_cams, ranks)
    assert m.n_valid == n_valid
    assert m.cmc == cmc
    assert m.mAP == mAP
    assert m.mINP == mINP


def test_evaluate_retrieval_uses_cosine():
    query = EmbeddingSet.from_features([[1.0, 0.0]], [0], modality="infrared", camera=[0])
    gallery = EmbeddingSet.from_features([[0.0, 5.0], [10.0, 0.1]], [1, 0], camera=[1, 1])
    m = evaluate_retrieval(query, gallery, ranks=(1,))
    assert m.cmc[1] == 1.0
    rows = dict(m.as_rows())
    assert list(rows)[:1] == ["rank1"] and rows["n_skipped"] == 0
