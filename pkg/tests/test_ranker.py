import pytest
from hypothesis import given, strategies as st

from wga.protocol import JudgeVerdict
from wga.ranker import RankerConfig, RankerContractError, Weights, make_scored, score_candidate, select_top2, unfetched
from wga.records import DimensionScores, ImageCandidate, ScoredCandidate


def sc(i, agg, rejected=False):
    return ScoredCandidate(ImageCandidate(i, f"u{i}"), agg, rejected=rejected)


def test_single_mode_threshold_and_wrong_ip():
    assert score_candidate("single", JudgeVerdict(6)) == (6.0, False, None)
    agg, rej, why = score_candidate("single", JudgeVerdict(5, has_watermark=True))
    assert rej and "watermark" in why
    assert score_candidate("single", JudgeVerdict(0))[1:] == (True, "wrong IP")


def test_dimensional_mode():
    d = DimensionScores(8, 6, 10, 4)
    assert score_candidate("dimensional", dims=d) == (7.0, False, None)
    w = Weights(0.7, 0.1, 0.1, 0.1)
    assert score_candidate("dimensional", dims=d, weights=w)[0] == pytest.approx(7.6)
    assert score_candidate("dimensional", dims=DimensionScores(0, 10, 10, 10))[2] == "wrong IP"


def test_contract_errors():
    with pytest.raises(RankerContractError):
        score_candidate("single")
    with pytest.raises(RankerContractError):
        score_candidate("single", dims=DimensionScores(1, 1, 1, 1))
    with pytest.raises(RankerContractError):
        score_candidate("dimensional", verdict=JudgeVerdict(3))


def test_weights_validation():
    with pytest.raises(ValueError):
        Weights(0.5, 0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        Weights(-0.25, 0.5, 0.5, 0.25)
    assert Weights.from_values([1, 1, 1, 1], normalize=True) == Weights()
    with pytest.raises(ValueError):
        RankerConfig(mode="vote")


def test_tie_example():
    assert select_top2([sc(0, 8.0), sc(1, 9.0), sc(2, 8.0)]) == [1, 0]


def test_rejected_excluded_and_short_lists():
    assert select_top2([sc(0, 9.0, True), sc(1, 7.0)]) == [1]
    assert select_top2([sc(0, 9.0, True)]) == []
    assert select_top2([]) == []


def test_unfetched_is_rejected():
    s = unfetched(ImageCandidate(3, "u"))
    assert s.rejected and s.reject_reason == "image not fetched"


def test_make_scored_keeps_verdict():
    s = make_scored(ImageCandidate(0, "u"), "single", verdict=JudgeVerdict(9, "ok"))
    assert s.aggregate == 9.0 and s.single_score.reason == "ok"


@given(st.lists(st.tuples(st.integers(0, 10), st.booleans()), max_size=12))
def test_select_matches_stable_sort(rows):
    cands = [sc(i, float(a), r) for i, (a, r) in enumerate(rows)]
    expect = sorted((c for c in cands if not c.rejected), key=lambda c: -c.aggregate)[:2]
    assert select_top2(cands) == [c.id for c in expect]
    assert select_top2(list(reversed(cands))) == select_top2(cands)
