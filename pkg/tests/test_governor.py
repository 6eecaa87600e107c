import math

import pytest
from hypothesis import given, strategies as st

from h3pubsub.governor import StreamBudget, frames_saved


def replay_adverts(m, fraction, closes):
    """Reference replay of the stated state machine, kept deliberately dumb."""
    advertised = m
    since = 0
    out = []
    for _ in range(closes):
        since += 1
        if since >= math.ceil(fraction * m):
            advertised += since
            since = 0
            out.append(advertised)
    return out


def test_m20_half_watermark_advertises_at_10_and_20():
    b = StreamBudget(negotiated_max=20, watermark_fraction=0.5)
    results = [b.on_stream_closed() for _ in range(20)]
    assert results[:9] == [None] * 9
    assert results[9] == 30
    assert results[10:19] == [None] * 9
    assert results[19] == 40


def test_m100_hundred_closes_two_adverts():
    b = StreamBudget(negotiated_max=100)
    adverts = [r for r in (b.on_stream_closed() for _ in range(100)) if r]
    assert adverts == [150, 200]
    assert b.adverts_sent == 2


def test_m1_degenerates_to_advert_per_close():
    b = StreamBudget(negotiated_max=1)
    assert [b.on_stream_closed() for _ in range(5)] == [2, 3, 4, 5, 6]


def test_peer_available_streams():
    fresh = StreamBudget(negotiated_max=20)
    assert fresh.peer_available_streams() == 20

    b = StreamBudget(negotiated_max=20)
    for _ in range(10):
        b.on_stream_opened()
        b.on_stream_closed()
    assert b.advertised_limit == 30
    assert b.peer_available_streams() == 20

    c = StreamBudget(negotiated_max=20)
    for _ in range(9):
        c.on_stream_opened()
        c.on_stream_closed()
    assert c.peer_available_streams() == 11


def test_frames_saved_examples():
    assert frames_saved(100, 100, 0.5) == 98
    assert all(frames_saved(n, 1, 0.5) == 0 for n in range(200))
    assert frames_saved(49, 100, 0.5) == 49


def test_constructor_rejects_bad_parameters():
    with pytest.raises(ValueError):
        StreamBudget(negotiated_max=0)
    with pytest.raises(ValueError):
        StreamBudget(negotiated_max=5, watermark_fraction=0.0)
    with pytest.raises(ValueError):
        StreamBudget(negotiated_max=5, watermark_fraction=1.5)


@given(m=st.integers(1, 200), fraction=st.floats(0.01, 1.0),
       closes=st.integers(0, 600))
def test_advert_count_is_exactly_floor_of_closes_over_watermark(m, fraction, closes):
    b = StreamBudget(negotiated_max=m, watermark_fraction=fraction)
    emitted = [r for r in (b.on_stream_closed() for _ in range(closes)) if r]
    assert len(emitted) == closes // math.ceil(fraction * m)
    assert emitted == replay_adverts(m, fraction, closes)


@given(m=st.integers(1, 200), fraction=st.floats(0.01, 1.0),
       closes=st.integers(0, 600))
def test_limit_monotone_and_never_below_negotiated(m, fraction, closes):
    b = StreamBudget(negotiated_max=m, watermark_fraction=fraction)
    limits = [m]
    for _ in range(closes):
        r = b.on_stream_closed()
        if r is not None:
            limits.append(r)
        assert b.advertised_limit >= m
        assert b.closed_since_advert < math.ceil(fraction * m)
    assert limits == sorted(limits)
    assert len(set(limits)) == len(limits)


@given(m=st.integers(1, 200), fraction=st.floats(0.01, 1.0),
       closes=st.integers(0, 600))
def test_window_restored_exactly_at_each_advert(m, fraction, closes):
    """Every advertisement returns availability to the negotiated window."""
    b = StreamBudget(negotiated_max=m, watermark_fraction=fraction)
    for _ in range(closes):
        if b.on_stream_closed() is not None:
            assert b.advertised_limit - b.closed_total == m


@given(m=st.integers(1, 100), fraction=st.floats(0.01, 1.0),
       data=st.data())
def test_liveness_peer_never_starved_permanently(m, fraction, data):
    """A peer that respects the limit regains credit within one watermark."""
    b = StreamBudget(negotiated_max=m, watermark_fraction=fraction)
    open_now = 0
    steps = data.draw(st.lists(st.booleans(), max_size=300))
    for want_open in steps:
        if want_open and b.peer_available_streams() > 0:
            b.on_stream_opened()
            open_now += 1
        elif open_now > 0:
            b.on_stream_closed()
            open_now -= 1
        assert b.peer_available_streams() >= 0
    # Closing everything still open always unlocks at least one credit.
    for _ in range(open_now):
        b.on_stream_closed()
    assert b.peer_available_streams() >= 1


@given(closes=st.integers(0, 500), m=st.integers(1, 120),
       fraction=st.floats(0.01, 1.0))
def test_frames_saved_matches_replay(closes, m, fraction):
    baseline = closes
    emitted = len(replay_adverts(m, fraction, closes))
    assert frames_saved(closes, m, fraction) == baseline - emitted
