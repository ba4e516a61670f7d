"""Smoke test for the arglink_py extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import json
import os
import tempfile

import arglink_py as al


def check_tree():
    t = al.ArgTree([0, 1, 1, 2, 2, 1])
    assert t.heads == [0, 1, 1, 2, 2, 1]
    assert t.qact() == ["non_ac", "major_claim", "ac_non_leaf", "ac_leaf", "ac_leaf", "ac_leaf"]
    assert t.depths() == [0, 0, 1, 2, 2, 1]
    assert t.descendant_set(2) == [2, 3, 4]
    assert t.distances() == [0, 0, -1, -1, -2, -4]
    assert al.ArgTree.from_distances(t.distances()) == t
    try:
        al.ArgTree([1, 0])
    except ValueError:
        pass
    else:
        raise AssertionError("cycle accepted")


def check_decoding_and_metrics():
    scores = [[0.1, 2.0, 0.0], [3.0, 0.5, 0.2], [0.0, 1.5, 0.3]]
    fast = al.decode(scores)
    slow = al.brute_force_decode(scores)
    assert fast == slow
    assert al.tree_score(scores, fast) == al.tree_score(scores, slow)

    a = al.ArgTree([0, 0, 1, 1, 1])
    b = al.ArgTree([0, 0, 1, 1, 4])
    assert al.mar_dset_vector(b, a) == [0, 0, 1, 1, 0]
    assert al.mar_dset(b, a) == 0.4

    report = al.evaluate([b], [a])
    assert 0.0 <= report["accuracy"] <= 1.0
    assert report["mar_dset"] == 0.4

    p, significant = al.permutation_test([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert p == 0.25 and not significant
    assert al.permutation_test([0.5, 0.6], [0.5, 0.6])[0] == 1.0
    assert al.spos(4) == [0.25, 0.5, 0.75, 1.0]


def check_corpus_and_model(tmp):
    essays = [
        al.Essay("e1", ["Claim here.", "Because of this.", "Also that."], [0, 0, 0]),
        al.Essay("e2", ["Intro.", "Main claim.", "Support it."], [0, 1, 1]),
        al.Essay("e3", ["A.", "B.", "C.", "D."], [1, 1, 1, 2], corpus="out"),
    ]
    path = os.path.join(tmp, "corpus.jsonl")
    al.save_corpus(path, essays)
    loaded = al.load_corpus(path)
    assert [e.essay_id for e in loaded] == ["e1", "e2", "e3"]
    assert loaded[1].gold.qact()[0] == "non_ac"
    assert len(al.selective_sample(loaded, max_sentences=3)) == 2

    emb = al.pseudo_embed(loaded[0], 8, seed=1)
    assert len(emb) == 3 and len(emb[0]) == 8
    assert emb == al.pseudo_embed(loaded[0], 8, seed=1)

    config = {"input_dim": 8, "dense1_units": 8, "lstm_units": 4, "lstm_stacks": 1,
              "proj_units": 4, "use_qact_head": True, "use_nd_head": True}
    model = al.Model.train(loaded, config, {"epochs": 3})
    tree = model.predict(loaded[2])
    assert len(tree) == 4
    assert len(model.scores(loaded[2])) == 4
    ckpt = os.path.join(tmp, "model.json")
    model.save(ckpt)
    again = al.Model.load(ckpt)
    assert again.predict(loaded[2]) == tree
    assert again.parameter_count == model.parameter_count

    cfg = {"in_domain": path, "model": config, "train": {"epochs": 1}, "runs": 2,
           "train_fraction": 0.67, "output_dir": os.path.join(tmp, "exp")}
    cfg_path = os.path.join(tmp, "exp.json")
    with open(cfg_path, "w") as f:
        json.dump(cfg, f)
    summary = al.run_experiment(cfg_path)
    assert len(summary["runs"]) == 2
    assert summary == al.run_experiment(cfg_path)


def main():
    check_tree()
    check_decoding_and_metrics()
    with tempfile.TemporaryDirectory() as tmp:
        check_corpus_and_model(tmp)
    print("arglink_py smoke test passed")


if __name__ == "__main__":
    main()
