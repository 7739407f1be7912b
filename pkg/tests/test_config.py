import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubeflow.config import DEFAULTS, SUITES, ConfigError, parse_config, suite_names

MINIMAL = "geometry.kind = flat\n"


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    for (sec, key), (_, default) in DEFAULTS.items():
        if key != "kind" or sec != "geometry":
            assert cfg[f"{sec}.{key}"] == default
    assert suite_names(cfg, "all") == SUITES
    assert suite_names(cfg, "modulus") == ("modulus",)


def test_comments_lists_and_bools():
    cfg = parse_config("# header\ngeometry.kind = ellipse  # trailing\n\nrun.eps_list = 0.3, 0.1\nrun.svg = false\nrun.suites = spectrum,sample\n")
    assert cfg["run.eps_list"] == [0.3, 0.1]
    assert cfg["run.svg"] is False
    assert suite_names(cfg, "all") == ("spectrum", "sample")


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("geometrie.kind = flat\n", "line 1"),
        ("geometry.kind = flat\ngrid.N_s = 32\ngrid.N_s = 64\n", "duplicate"),
        ("geometry.kind = flat\nrun.eps_list = 0.1, 0.2\n", "decreasing"),
        ("geometry.kind = flat\nrun.eps_list = 0.2, 0.2\n", "decreasing"),
        ("geometry.kind = torus\n", "geometry.kind"),
        ("grid.N_s = 32\n", "required"),
        ("geometry.kind = flat\ngrid.N_v = 9\n", "even"),
        ("geometry.kind = flat\ngrid.N_s = 3.5\n", "line 2"),
        ("geometry.kind = flat\nrun.svg = maybe\n", "line 2"),
        ("geometry.kind = flat\nrun.suites = spectrum,nonsense\n", "nonsense"),
        ("geometry.kind = flat\nsampler.observe_t = 0.95\n", "observe_t"),
        ("geometry.kind = flat\nmodulus.M = 0\n", "modulus.M"),
        ("geometry.kind flat\n", "line 1"),
    ],
)
def test_errors_name_the_problem(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_hash_equality():
    a = parse_config("geometry.kind = circle\nrun.seed = 3\n")
    b = parse_config("# same experiment\nrun.seed = 3.0\ngeometry.kind = circle\ngeometry.radius = 1\nrun.out = elsewhere\n")
    assert a.hash() == b.hash()
    assert a.hash() != a.updated({"run.seed": 4}).hash()
    with pytest.raises(ConfigError):
        a.updated({"run.eps_list": [0.1, 0.2]})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=5, unique=True))
def test_decreasing_eps_accepted(eps):
    eps = sorted(eps, reverse=True)
    cfg = parse_config("geometry.kind = flat\nrun.eps_list = " + ", ".join(repr(e) for e in eps) + "\n")
    assert cfg["run.eps_list"] == eps
