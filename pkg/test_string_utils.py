import pytest

from string_utils import are_strings_similar, closest_match, normalize_name


@pytest.mark.parametrize("raw, expected", [
    ("Hybrid_FLSQR G1", "hybrid-flsqr-g1"),
    ("  hybrid--sd-G ", "hybrid-sd-g"),
    ("IRW FLSQR", "irw-flsqr"),
])
def test_normalize_name(raw, expected):
    assert normalize_name(raw) == expected


def test_identical_names_after_normalization_score_one():
    assert are_strings_similar("Hybrid_FLSQR_G", "hybrid-flsqr-g") == (True, 1.0)


def test_unrelated_names_are_not_similar():
    is_similar, score = are_strings_similar("hybrid-flsqr-g", "anomaly", threshold=0.85)
    assert not is_similar
    assert score < 0.85


def test_closest_match_suggests_a_solver():
    candidates = ["hybrid-flsqr-g", "hybrid-fgmres-g", "hybrid-sd-g"]
    assert closest_match("hybrid-flsqr-gg", candidates) == "hybrid-flsqr-g"


def test_closest_match_returns_none_below_threshold():
    assert closest_match("xyz", ["hybrid-flsqr-g"], threshold=0.95) is None
