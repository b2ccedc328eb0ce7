"""
Tests for the flat config reader and value coercion.
"""

from typing import Optional

import pytest

from thermask.config import (canonical_text, coerce_value, format_value, parse_canonical_text, parse_config_text,
                             read_config_file)
from thermask.errors import ConfigError
from thermask.model import ModelConfig
from thermask.training import toy_model_config


def test_parse_skips_comments_and_blank_lines():
    text = "# run\n\ncorpus = data  # inline\nbatch_size=4\n"
    assert parse_config_text(text) == {"corpus": ("data", 3), "batch_size": ("4", 4)}


def test_duplicate_key_reports_second_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text("epochs = 2\nepochs = 3\n")
    assert info.value.line == 2 and info.value.key == "epochs"
    assert str(info.value).startswith("line 2:")


def test_missing_key_raises():
    with pytest.raises(ConfigError):
        parse_config_text(" = 4\n")


@pytest.mark.parametrize("raw,annotation,expected", [
    ("3", int, 3),
    ("2.5e-3", float, 2.5e-3),
    ("yes", bool, True),
    ("off", bool, False),
    ("none", Optional[int], None),
    ("7", Optional[int], 7),
    ("1, 2 ,3", tuple[int, int, int], (1, 2, 3)),
    ("0.9,0.95", tuple[float, ...], (0.9, 0.95)),
    ("notch", str, "notch"),
])
def test_coerce_value(raw, annotation, expected):
    assert coerce_value(raw, annotation, "key") == expected


@pytest.mark.parametrize("raw,annotation", [("maybe", bool), ("1.5", int), ("1,2", tuple[int, int, int])])
def test_coerce_value_rejects(raw, annotation):
    with pytest.raises(ConfigError, match="key"):
        coerce_value(raw, annotation, "key", line=9)


def test_format_value_reads_back():
    for value, annotation in [(0.1, float), ((4, 8, 16), tuple[int, int, int]), (None, Optional[int]), (True, bool)]:
        assert coerce_value(format_value(value), annotation, "k") == value


def test_canonical_text_round_trip():
    config = toy_model_config(32)
    text = canonical_text(config)
    assert "\n" not in text and text.startswith("afdm_enabled=True;")
    assert parse_canonical_text(ModelConfig, text) == config


def test_canonical_text_unknown_key_raises():
    with pytest.raises(ConfigError):
        parse_canonical_text(ModelConfig, "speed=3")


def test_read_missing_file_raises(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(str(tmp_path / "absent.conf"))
