import json

import pytest

from oovtag.config import Config, ConfigError, coerce, flag_name, parse_config


def test_defaults():
    c = Config()
    assert (c.word_dim, c.char_dim, c.char_filters, c.char_widths) == (50, 16, 25, [3, 5])
    assert (c.lstm_hidden, c.lr, c.k_ngram, c.K_iter, c.oov_threshold) == (50, 1e-3, 3, 2, 5)
    assert (c.batch_size, c.replace_mode, c.student_update_mode) == (16, "all-below-threshold", "accumulate")
    assert c.embed_dim == 100


def test_precedence(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"lr": 0.01, "seed": 3}))
    c = parse_config(f, {"seed": "7"}, base={"lr": 0.5, "task": "ner"})
    assert (c.lr, c.seed, c.task) == (0.01, 7, "ner")


def test_unknown_key(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"learning_rate": 0.1}))
    with pytest.raises(ConfigError, match="unknown key: learning_rate"):
        parse_config(f)


@pytest.mark.parametrize("key,value", [("K_iter", "two"), ("lr", True), ("lowercase", "maybe"),
                                       ("char_widths", "3,x"), ("task", 5)])
def test_type_mismatch(key, value):
    with pytest.raises(ConfigError, match=f"type mismatch for {key}"):
        coerce({key: value})


@pytest.mark.parametrize("key,value", [("encoder", "gru"), ("K_iter", -1), ("oov_threshold", 0)])
def test_invalid_values(key, value):
    with pytest.raises(ConfigError):
        coerce({key: value})


def test_echo_round_trip():
    c = Config(seed=4, char_widths=[2, 4], task="ner")
    assert coerce(json.loads(json.dumps(c.to_dict()))) == c


def test_flag_names():
    assert flag_name("K_iter") == "--K-iter"
    assert flag_name("oov_threshold") == "--oov-threshold"
