import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busyldp.config import ConfigError, ExperimentConfig, format_config, load_config, parse_config, parse_grid

GOOD = """\
[model]
family = gaussian
params = -1, 1

[run]
p = 2
seed = 42
start = both   ; compare both start modes
oracle = off

[w1]
cycles = 2e5
levels = geom 1 100 5

[vbar]
b = 0.25 1
warmup = auto
"""


def test_parse_good_config():
    cfg = parse_config(GOOD)
    assert cfg.family == "gaussian" and cfg.params == (-1.0, 1.0)
    assert cfg.p == 2.0 and cfg.seed == 42 and cfg.start == "both" and cfg.oracle is False
    assert cfg.w1_cycles == 200_000
    np.testing.assert_allclose(cfg.w1_levels, [1, 10**0.5, 10, 10**1.5, 100])
    assert cfg.vbar_warmup is None
    assert cfg.model.mu == -1.0


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(format_config(cfg)) == cfg
    assert parse_config(cfg.to_text()).digest() == cfg.digest()


def test_load_config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(GOOD)
    assert load_config(path) == parse_config(GOOD)


def test_grids():
    assert parse_grid("lin 0 1 3") == (0.0, 0.5, 1.0)
    assert parse_grid("1, 2 3") == (1.0, 2.0, 3.0)
    assert parse_grid("") == ()
    with pytest.raises(ValueError):
        parse_grid("geom 0 1 3")
    with pytest.raises(ValueError):
        parse_grid("lin 0 1")


@pytest.mark.parametrize(
    "text,line,field",
    [
        ("[run]\nseed = 1\nbogus = 2\n", 3, "run.bogus"),
        ("[run]\nseed = 1\n[nowhere]\nx = 1\n", 3, None),
        ("[run]\n\nseed = minus one\n", 3, "run.seed"),
        ("[run]\nformat = xml\n", 2, "run.format"),
        ("[w1]\ncycles = 0\n", 2, "w1.cycles"),
        ("[model]\nfamily = two-point\nparams = 1.5\n", 3, "model"),
        ("[run]\noracle = maybe\n", 2, "run.oracle"),
        ("seed = 1\n", 1, None),
        ("[run]\nthis line is broken\n", 2, None),
        ("[findim]\ntimes = 0.5 1\nthresholds = 0.6\n", None, "findim"),
    ],
)
def test_errors_carry_line_and_field(text, line, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    if line is not None:
        assert info.value.line == line
        assert f"line {line}" in str(info.value)
    if field is not None:
        assert info.value.field == field


def test_with_overrides_keeps_unset():
    cfg = ExperimentConfig().with_overrides(seed=9, out=None)
    assert cfg.seed == 9 and cfg.out == ExperimentConfig().out
    assert cfg.stream_name("w1") == "9/w1"
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(start="sideways")


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**64 - 1),
    p=st.floats(0.1, 5.0),
    q=st.floats(0.01, 0.49),
    b=st.lists(st.floats(0.01, 10.0), min_size=1, max_size=4),
    reps=st.integers(1, 10**7),
    start=st.sampled_from(["zero", "warmed", "both"]),
    warm=st.one_of(st.none(), st.integers(1, 10**6)),
)
def test_round_trip_property(seed, p, q, b, reps, start, warm):
    cfg = ExperimentConfig(family="two-point", params=(q,), p=p, seed=seed, vbar_b=tuple(b),
                           vbar_replications=reps, start=start, vbar_warmup=warm)
    assert parse_config(format_config(cfg)) == cfg
