"""Smoke tests for the Python bindings: import, oracles, and error mapping."""

import pytest

import seqbench


def test_model_names_and_display_names():
    names = seqbench.model_names()
    assert names == ["char-cnn", "glove-bilstm", "res-cnn-bilstm", "transformer"]
    assert seqbench.display_name("char-cnn") == "1-D Char"
    assert seqbench.display_name("transformer") == "Transformer"


def test_parameter_count_oracles():
    char = seqbench.parameter_counts("char-cnn")
    assert char["total"] == 11_371_683
    assert char["trainable"] == 11_371_683

    glove = seqbench.parameter_counts("glove-bilstm")
    assert glove["total"] == 5_430_813
    assert glove["trainable"] == 2_543_813
    assert glove["frozen"] == 2_887_000

    res = seqbench.parameter_counts("res-cnn-bilstm")
    assert res["total"] == 48_819_707
    assert res["branch_a"]["total"] == 23_969_246
    assert res["branch_b"]["total"] == 24_842_072

    transformer = seqbench.parameter_counts("transformer")
    assert transformer["total"] == 655_041
    assert "branch_a" not in transformer


def test_describe_renders_both_formats():
    text = seqbench.describe("char-cnn")
    assert "11,371,683" in text
    assert "flatten" in text
    as_json = seqbench.describe("char-cnn", as_json=True)
    assert '"total_params"' in as_json


def test_verify_passes_on_stock_sizes():
    passed, report = seqbench.verify()
    assert passed
    assert report

    mutated, _ = seqbench.verify(overrides=["char_cnn.filters=100"])
    assert not mutated


def test_encode_chars_oracle():
    assert seqbench.encode_chars("abz!", length=8) == [1, 2, 26, 41, 0, 0, 0, 0]
    # uppercase folds, unknown bytes map to the shared pad/unknown id
    assert seqbench.encode_chars("A\t", length=3) == [1, 0, 0]


def test_tokenize_oracle():
    assert seqbench.tokenize("Hello, WORLD 42nd") == ["hello", "world", "42nd"]
    assert seqbench.tokenize("") == []


def test_synthetic_corpus_is_deterministic_and_balanced():
    corpus = seqbench.synthetic_corpus(10, seed=4)
    assert len(corpus) == 10
    classes = [name for _, name in corpus]
    assert classes == ["alpha", "bravo", "charlie", "delta", "echo"] * 2
    assert corpus == seqbench.synthetic_corpus(10, seed=4)
    assert corpus != seqbench.synthetic_corpus(10, seed=5)


def test_train_synthetic_returns_a_history():
    result = seqbench.train_synthetic(
        "transformer", n=40, epochs=2, scale=0.05, seed=2, batch=8
    )
    assert result["model"] == "transformer"
    epochs = result["epochs"]
    assert len(epochs) == 2
    assert epochs[0]["epoch"] == 1
    assert epochs[1]["epoch"] == 2
    for row in epochs:
        assert row["train_loss"] > 0.0
        assert 0.0 <= row["train_accuracy"] <= 1.0
        assert row["wall_ms"] > 0.0
    assert result["mean_epoch_ms"] > 0.0


def test_bad_inputs_raise_value_error():
    with pytest.raises(ValueError):
        seqbench.parameter_counts("vgg")
    with pytest.raises(ValueError):
        seqbench.describe("char-cnn", overrides=["char_cnn.bogus=1"])
    with pytest.raises(ValueError):
        seqbench.train_synthetic("char-cnn", n=0)


def test_curve_header_constant():
    assert seqbench.CURVE_HEADER == "Epochs,1-D Char,Glove,Res-CNN-BiLSTM,Transformer"
