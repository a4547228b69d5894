from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from obslearn.config import (SCHEMA, ConfigSyntaxError, InvalidValue, UnknownKey, bundled_configs,
                             load_config, parse_config, serialize_config)


def test_empty_document_is_defaults():
    cfg = parse_config("")
    assert cfg["env.variant"] == "LAGT" and cfg["net.lstm"] == 0
    assert all(cfg.provenance(k) == "default" for k in SCHEMA)
    assert cfg.train_config().rmsprop_epsilon == 0.1


def test_comments_and_provenance():
    cfg = parse_config("# header\nnet.lstm = 32  # recurrent\n\n")
    assert cfg["net.lstm"] == 32
    assert cfg.provenance("net.lstm") == "explicit"
    assert cfg.provenance("net.dense_units") == "default"


def test_lstm_restriction():
    with pytest.raises(InvalidValue):
        parse_config("net.lstm = 33")
    assert parse_config("net.lstm = 33\nnet.lstm_unrestricted = true")["net.lstm"] == 33


def test_unknown_key():
    with pytest.raises(UnknownKey):
        parse_config("train.learnig_rate = 0.1")
    with pytest.raises(UnknownKey):
        parse_config("curriculum.phases = a\nphase.a.bogus = 1")


def test_syntax_error_line():
    with pytest.raises(ConfigSyntaxError) as info:
        parse_config("net.lstm = 0\nthis is not a pair\n")
    assert info.value.line == 2


@pytest.mark.parametrize("doc", ["env.variant = LX", "train.gamma = 2", "env.teacher = maybe",
                                 "train.workers = 0", "net.lstm = abc"])
def test_invalid_values(doc):
    with pytest.raises(InvalidValue):
        parse_config(doc)


def test_bundled_lat_config():
    cfg = load_config("level1_lat.cfg")
    assert cfg["env.variant"] == "LAT" and "G" not in cfg.observation_spec().channels
    assert cfg.grid().name == "level1"


def test_all_bundled_configs_parse_and_round_trip():
    names = bundled_configs()
    assert {"level1.cfg", "level1_lat.cfg", "masking.cfg"} <= set(names)
    for name in names:
        cfg = load_config(name)
        again = parse_config(serialize_config(cfg))
        assert again.values == cfg.values and again.explicit == cfg.explicit


def test_phases():
    cfg = load_config("levels.cfg")
    phases = cfg.phases()
    assert [p.name for p in phases] == ["l1", "l2", "l3"]
    assert phases[1].warm_start == "l1" and phases[0].warm_start is None
    masking = load_config("masking.cfg").phases()[0]
    assert masking.mask_schedule == ((0, 0.25), (100_000, 0.5), (200_000, 0.75), (300_000, 1.0))


def test_phase_key_requires_listing():
    with pytest.raises(InvalidValue):
        parse_config("phase.x.level = level1")
    with pytest.raises(InvalidValue):
        parse_config("curriculum.phases = a, b\nphase.a.warm_start = b")


values = st.fixed_dictionaries({}, optional={
    "net.lstm": st.sampled_from([0, 32, 64, 128]),
    "train.learning_rate": st.floats(0, 1, allow_nan=False),
    "train.seed": st.integers(-5, 10**6),
    "env.variant": st.sampled_from(["LA", "LAG", "LAT", "LAGT"]),
    "env.teacher": st.booleans(),
    "output.dir": st.from_regex(r"[a-z0-9_/]{1,12}", fullmatch=True),
})


def as_text(v):
    if isinstance(v, bool):
        return str(v).lower()
    return repr(v) if isinstance(v, float) else str(v)


@given(values)
def test_round_trip_fixed_point(vals):
    doc = "".join(f"{k} = {as_text(v)}\n" for k, v in vals.items())
    cfg = parse_config(doc)
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again.values == cfg.values and serialize_config(again) == text
    full = parse_config(serialize_config(cfg, include_defaults=True))
    assert all(full[k] == cfg[k] for k in SCHEMA)
