import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from surfkit.errors import InvalidLabel, NonFiniteInput, ShapeError
from surfkit.volume import (
    FieldStack,
    Grid3,
    LabelVolume,
    ProbVolume,
    argmax_labels,
    one_hot,
    softmax_array,
    softmax_field,
)


def line(values, dtype=np.int64):
    return np.asarray(values, dtype=dtype).reshape(1, 1, -1)


def test_grid_validation():
    assert Grid3((2, 3, 4)).size == 24
    with pytest.raises(ShapeError):
        Grid3((0, 3, 4))
    with pytest.raises(ShapeError):
        Grid3((1, 1, 1), (1.0, 0.0, 1.0))
    with pytest.raises(ShapeError):
        Grid3((1, 1, 1), (1.0, float("inf"), 1.0))


def test_one_hot_examples():
    vol = LabelVolume(Grid3((1, 1, 3)), line([0, 1, 0]), 2)
    out = one_hot(vol).values.reshape(2, -1)
    assert out.tolist() == [[1, 0, 1], [0, 1, 0]]

    vol = LabelVolume(Grid3((1, 1, 4)), line([0, 0, 0, 0]), 1)
    assert one_hot(vol).values.reshape(1, -1).tolist() == [[1, 1, 1, 1]]

    vol = LabelVolume(Grid3((1, 1, 3)), line([2, 0, 1]), 3)
    out = one_hot(vol).values.reshape(3, -1)
    assert out.tolist() == [[0, 1, 0], [0, 0, 1], [1, 0, 0]]


def test_label_out_of_range():
    with pytest.raises(InvalidLabel):
        LabelVolume(Grid3((1, 1, 2)), line([0, 2]), 2)


def test_volumes_are_immutable():
    vol = LabelVolume(Grid3((1, 1, 2)), line([0, 1]), 2)
    with pytest.raises(ValueError):
        vol.labels[0, 0, 0] = 1


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.int64, st.tuples(*[st.integers(1, 5)] * 3), elements=st.integers(0, 4)),
)
def test_one_hot_then_argmax_recovers_labels(labels):
    vol = LabelVolume(Grid3(labels.shape), labels, 5)
    encoded = one_hot(vol)
    assert np.all(encoded.values.sum(axis=0) == 1.0)
    np.testing.assert_array_equal(argmax_labels(encoded).labels, labels)


def test_softmax_examples():
    grid = Grid3((1, 1, 1))
    p = softmax_field(FieldStack(grid, np.zeros((2, 1, 1, 1)))).values.ravel()
    assert p.tolist() == [0.5, 0.5]
    p = softmax_field(FieldStack(grid, np.full((1, 1, 1, 1), 123.4))).values.ravel()
    assert p.tolist() == [1.0]
    p = softmax_field(FieldStack(grid, np.array([np.log(3.0), 0.0]).reshape(2, 1, 1, 1)))
    np.testing.assert_allclose(p.values.ravel(), [0.75, 0.25], rtol=0, atol=1e-15)


def test_softmax_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        softmax_array(np.array([[0.0], [np.nan]]))


def test_softmax_stability_many_vectors():
    rng = np.random.default_rng(42)
    scale = 10.0 ** rng.uniform(-2, 4, size=(1, 10_000))
    logits = rng.uniform(-1, 1, size=(5, 10_000)) * scale
    logits[:, :10] = [[1e4], [-1e4], [1e4], [0.0], [-1e4]]
    p = softmax_array(logits)
    assert np.all(np.isfinite(p))
    assert np.max(np.abs(p.sum(axis=0) - 1.0)) <= 1e-9


def test_prob_volume_flags():
    grid = Grid3((1, 1, 2))
    ProbVolume(grid, np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(2, 1, 1, 2), binary=True)
    with pytest.raises(ValueError):
        ProbVolume(grid, np.full((2, 1, 1, 2), 0.5), binary=True)
    with pytest.raises(ValueError):
        ProbVolume(grid, np.full((2, 1, 1, 2), 0.6), simplex=True)
    with pytest.raises(ValueError):
        ProbVolume(grid, np.full((1, 1, 1, 2), 1.5))
