import pytest
from hypothesis import given, strategies as st

from mlo_delay.backoff import mean_contention_window, stage_window


def stage_sum(p, cw_min, m, terms=4000):
    """Expected window of the stage a packet finally succeeds in.

    Success happens at attempt k with probability p^k (1 - p), and attempt
    k uses the window of stage min(k, m).
    """
    total = 0.0
    for k in range(terms):
        total += p**k * (1 - p) * (stage_window(min(k, m), cw_min) + 1)
    return total - 1


def test_no_collisions_gives_cw_min():
    assert mean_contention_window(0.0, 15, 6) == 15


def test_half_collision_probability_limit():
    assert mean_contention_window(0.5, 15, 6) == pytest.approx(63, rel=1e-12)
    for eps in (1e-6, -1e-6):
        assert mean_contention_window(0.5 + eps, 15, 6) == pytest.approx(63, rel=1e-4)


@pytest.mark.parametrize("p", [0.05, 0.25, 0.4, 0.6, 0.8])
def test_matches_stage_sum(p):
    assert mean_contention_window(p, 15, 6) == pytest.approx(stage_sum(p, 15, 6), rel=1e-9)


def test_stage_windows():
    assert [stage_window(k, 15) for k in range(4)] == [15, 31, 63, 127]


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_out_of_range(p):
    with pytest.raises(ValueError):
        mean_contention_window(p, 15, 6)


@given(p=st.floats(0, 0.98), dp=st.floats(1e-6, 0.01), m=st.integers(0, 8),
       cw=st.integers(1, 1023))
def test_increasing_in_p(p, dp, m, cw):
    lo = mean_contention_window(p, cw, m)
    hi = mean_contention_window(min(p + dp, 0.99), cw, m)
    assert cw <= lo <= hi * (1 + 1e-12)
    assert hi <= stage_window(m, cw)
