import itertools
import math
import pathlib
import random

import pytest

import posdep

DATA = pathlib.Path(__file__).resolve().parents[2] / "data" / "toy"


def brute_force(scores):
    n = len(scores)
    best = -math.inf
    for heads in itertools.product(range(n + 1), repeat=n):
        heads = list(heads)
        if posdep.is_arborescence(heads):
            best = max(best, sum(scores[d][h] for d, h in enumerate(heads)))
    return best


def test_mst_matches_brute_force():
    rng = random.Random(3)
    for n in range(1, 5):
        for _ in range(20):
            scores = [[rng.uniform(-3, 3) for _ in range(n + 1)] for _ in range(n)]
            heads = posdep.decode_tree_mst(scores)
            assert posdep.is_arborescence(heads)
            assert posdep.tree_score(scores, heads) == pytest.approx(brute_force(scores))


def test_tree_validator():
    assert posdep.is_arborescence([2, 0, 2])
    assert not posdep.is_arborescence([0, 0])
    assert posdep.tree_defect([2, 1]) is not None


def test_read_and_evaluate():
    gold = posdep.read_conll(str(DATA / "dev.conllx"))
    assert len(gold) == 10
    report = posdep.evaluate(gold, gold)
    assert report["UAS"] == 100.0 and report["LAS"] == 100.0 and report["TA"] == 100.0


def test_parse_errors_are_value_errors():
    with pytest.raises(ValueError):
        posdep.parse_conll("1\ta\t_\tN\tN\t_\t1\tdep\n")


def test_train_predict_roundtrip(tmp_path):
    train = posdep.read_conll(str(DATA / "train.conllx"))
    dev = posdep.read_conll(str(DATA / "dev.conllx"))
    spec = posdep.ModelSpec(framework="stack", word_dim=8, tag_dim=4, char_dim=4, char_out=8,
                            lstm_hidden=8, lstm_layers=1, tag_mlp=8, arc_mlp=8, label_mlp=4)
    model = posdep.Model(spec, train, min_freq=1)
    epochs = []
    result = model.train(train, dev, max_epochs=2, batch_tokens=60,
                         on_epoch=lambda r: epochs.append(r["epoch"]))
    assert result["epochs"] == 2 and epochs == [1, 2]
    pred = model.predict(dev)
    assert all(t.pred_head is not None for s in pred for t in s.tokens)
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    again = posdep.Model.load(path)
    assert again.spec == model.spec
    pred2 = again.predict(dev)
    assert [t.pred_head for s in pred for t in s.tokens] == [t.pred_head for s in pred2 for t in s.tokens]
    report = posdep.evaluate(dev, pred)
    assert 0.0 <= report["LAS"] <= report["UAS"] <= 100.0


def test_significance_identical_systems():
    gold = posdep.read_conll(str(DATA / "dev.conllx"))
    r = posdep.significance(gold, gold, gold, metric="uas", trials=100)
    assert r["p"] == 1.0


def test_unknown_framework():
    with pytest.raises(ValueError):
        posdep.ModelSpec(framework="joint")
