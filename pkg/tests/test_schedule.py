import pytest
from hypothesis import given, strategies as st

from scaleaudio.exceptions import ValidationError
from scaleaudio.schedule import make_schedule


class TestLinear:
    def test_paper_16_scale_lengths(self):
        s = make_schedule("linear", K=16, top_length=75)
        assert s.lengths == (1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75)
        assert s.total == 601

    def test_single_scale(self):
        for kind in ("linear", "quadratic", "logarithmic"):
            assert make_schedule(kind, K=1, top_length=75).lengths == (75,)


class TestLogarithmic:
    def test_total_close_to_paper(self):
        s = make_schedule("logarithmic", K=16, top_length=75)
        assert 296 <= s.total <= 306

    def test_round_half_up(self):
        # 75**(6/15) = 5.623..., rounds up to 6 under half-up
        s = make_schedule("logarithmic", K=16, top_length=75)
        assert s.lengths[6] == 6


class TestQuadratic:
    def test_floor_rule_total(self):
        assert make_schedule("quadratic", K=16, top_length=75).total == 417


class TestExplicit:
    def test_valid_list_passes_through(self):
        lengths = [1, 2, 3, 5, 8, 12, 16, 21, 26, 32, 38, 44, 51, 58, 63, 75]
        s = make_schedule("explicit", lengths=lengths)
        assert s.total == 455
        assert s.lengths == tuple(lengths)

    def test_non_monotone_rejected(self):
        with pytest.raises(ValidationError):
            make_schedule("explicit", lengths=[1, 3, 2, 75])

    def test_top_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            make_schedule("explicit", lengths=[1, 2, 75], top_length=80)

    def test_missing_lengths_rejected(self):
        with pytest.raises(ValidationError):
            make_schedule("explicit")


class TestUnknown:
    def test_bad_kind(self):
        with pytest.raises(ValidationError):
            make_schedule("cubic", K=4, top_length=8)


@given(
    kind=st.sampled_from(["linear", "quadratic", "logarithmic"]),
    K=st.integers(min_value=1, max_value=40),
    top=st.integers(min_value=1, max_value=200),
)
def test_generated_schedules_are_valid(kind, K, top):
    s = make_schedule(kind, K=K, top_length=top)
    assert len(s.lengths) == K
    assert all(l >= 1 for l in s.lengths)
    assert all(a <= b for a, b in zip(s.lengths, s.lengths[1:]))
    assert s.lengths[-1] == top
