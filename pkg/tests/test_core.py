import numpy as np
import pytest

from uda_vireid.core import (
    CenterMemory,
    EmbeddingSet,
    cosine_similarity_matrix,
    identity_center,
    l2_normalize,
    memory_init,
    memory_update,
)
from uda_vireid.errors import EmptyIdentityError, ParameterError, ShapeError, ZeroVectorError


def test_l2_normalize_unit_rows():
    x = np.array([[3.0, 4.0], [0.0, -2.0]])
    np.testing.assert_allclose(l2_normalize(x), [[0.6, 0.8], [0.0, -1.0]])


def test_l2_normalize_names_first_zero_row():
    with pytest.raises(ZeroVectorError) as info:
        l2_normalize([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    assert info.value.row == 1


def test_cosine_matrix_is_clipped():
    x = np.array([[1.0, 1e-9], [1.0, 0.0]])
    sim = cosine_similarity_matrix(x, x)
    assert sim.max() <= 1.0
    assert sim.min() >= -1.0


def test_embedding_set_validates_columns():
    with pytest.raises(ShapeError):
        EmbeddingSet(np.ones((3, 2)), ["target"] * 3, ["visible"] * 2, [-1] * 3)
    with pytest.raises(ParameterError):
        EmbeddingSet(np.ones((1, 2)), ["elsewhere"], ["visible"], [0])
    with pytest.raises(ParameterError):
        EmbeddingSet(np.ones((1, 2)), ["target"], ["visible"], [-2])


def test_embedding_set_is_read_only():
    emb = EmbeddingSet.from_features(np.ones((2, 3)))
    with pytest.raises(ValueError):
        emb.data[0, 0] = 5.0


def test_select_by_domain_and_modality():
    emb = EmbeddingSet(
        np.arange(8.0).reshape(4, 2) + 1,
        ["source", "source", "target", "target"],
        ["visible", "infrared", "visible", "infrared"],
        [0, 0, -1, -1],
    )
    part = emb.select(domain="target", modality="infrared")
    assert len(part) == 1
    np.testing.assert_array_equal(part.data, [[7.0, 8.0]])


def test_identity_center_is_arithmetic_mean():
    emb = EmbeddingSet.from_features([[1.0, 0.0], [3.0, 2.0], [9.0, 9.0]], [0, 0, 1])
    np.testing.assert_array_equal(identity_center(emb, 0), [2.0, 1.0])
    with pytest.raises(EmptyIdentityError):
        identity_center(emb, 4)


def test_memory_init_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 5))
    y = rng.integers(-1, 4, size=30)
    y[:4] = np.arange(4)
    mem = memory_init(EmbeddingSet.from_features(x, y), 4)
    for c in range(4):
        rows = [x[n] for n in range(30) if y[n] == c]
        np.testing.assert_allclose(mem.centers[c], sum(rows) / len(rows), rtol=1e-13)


def test_memory_init_empty_identity():
    emb = EmbeddingSet.from_features(np.ones((2, 2)), [0, 2])
    with pytest.raises(EmptyIdentityError) as info:
        memory_init(emb, 3)
    assert info.value.identity == 1


def test_memory_update_formula_and_edges():
    old = CenterMemory(np.array([[1.0, 2.0], [3.0, 4.0]]))
    fresh = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(memory_update(old, fresh, 0.5).centers, 0.5 * old.centers + 0.5 * fresh)
    np.testing.assert_array_equal(memory_update(old, fresh, 0.0).centers, fresh)
    np.testing.assert_array_equal(memory_update(old, fresh, 1.0).centers, old.centers)
    with pytest.raises(ParameterError):
        memory_update(old, fresh, 1.5)
    with pytest.raises(ShapeError):
        memory_update(old, fresh[:1])
