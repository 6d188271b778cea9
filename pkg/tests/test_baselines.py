import numpy as np
import pytest

from cavrec.baselines import (PitfModel, pitf_predict_accuracy,
                              pitf_tag_scores, train_pitf)
from cavrec.cavlearn import LabeledExamples


def test_predict_arithmetic():
    model = PitfModel(user_vecs=np.array([[1.0, 0.0]]),
                      item_vecs=np.array([[0.0, 2.0]]),
                      tag_user_vecs=np.array([[3.0, 1.0]]),
                      tag_item_vecs=np.array([[1.0, 0.5]]), d=2)
    # u.TU = 3, i.TI = 1 -> 4
    assert model.predict(0, 0, 0) == pytest.approx(4.0)


def test_json_roundtrip():
    rng = np.random.default_rng(0)
    model = PitfModel(rng.normal(size=(3, 2)), rng.normal(size=(4, 2)),
                      rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), d=2)
    back = PitfModel.from_json(model.to_json())
    np.testing.assert_allclose(back.tag_item_vecs, model.tag_item_vecs)
    with pytest.raises(ValueError):
        PitfModel.from_json({"kind": "wals"})


def separable_examples(rng, n_users=20, n_items=30):
    """Tag 0 applies to the first half of the items, for every user."""
    users, items, labels = [], [], []
    for u in range(n_users):
        sample = rng.choice(n_items, size=12, replace=False)
        for i in sample:
            users.append(u)
            items.append(int(i))
            labels.append(1 if i < n_items // 2 else -1)
    ex = LabeledExamples(np.asarray(users), np.asarray(items), np.asarray(labels))
    return {0: ex}


def test_pitf_learns_separable_tag():
    rng = np.random.default_rng(1)
    train = separable_examples(rng)
    model = train_pitf(train, num_users=20, num_items=30, num_tags=1, d=4,
                       lr=0.05, reg=1e-5, epochs=40, rng=np.random.default_rng(2))
    test = separable_examples(rng)
    acc = pitf_predict_accuracy(model, test)
    assert acc >= 0.95
    scores = pitf_tag_scores(model, 0, 30)
    assert scores[:15].mean() > scores[15:].mean()


def test_pitf_never_touches_ratings():
    import inspect

    from cavrec import baselines
    src = inspect.getsource(baselines)
    assert "rating_values" not in src   # tag prediction is ratings-blind


def test_empty_training_rejected():
    with pytest.raises(ValueError):
        train_pitf({}, num_users=1, num_items=1, num_tags=1, d=2)


def test_empty_test_rejected():
    model = PitfModel(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)),
                      np.zeros((1, 2)), d=2)
    empty = LabeledExamples(np.empty(0, dtype=np.int64),
                            np.empty(0, dtype=np.int64),
                            np.empty(0, dtype=np.int64))
    with pytest.raises(ValueError):
        pitf_predict_accuracy(model, {0: empty})
