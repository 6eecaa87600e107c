import pytest
from hypothesis import given, strategies as st

from h3pubsub.tuning import (
    CipherSuite,
    InvalidProfile,
    NetworkProfile,
    TuningProfile,
    derive_tuning,
    initial_retransmit_deadline,
    load_tuning_overrides,
    loopback_profile,
    nbiot_profile,
    network_profile,
    stock_tuning,
)


def test_nbiot_constants():
    net = nbiot_profile()
    assert net.uplink_rate_kbps == 159
    assert net.downlink_rate_kbps == 127
    assert net.rtt_ms == 2000
    assert net.mtu == 1500


def test_derive_tuning_at_nbiot_rtt():
    t = derive_tuning(nbiot_profile())
    assert t.max_ack_delay_ms == 1000
    assert t.initial_rtt_guess_ms == 1500
    assert t.handshake_idle_timeout_ms == 10000
    assert t.handshake_timeout_ms == 20000
    assert t.min_remote_idle_timeout_ms == 30000
    assert t.cipher_suite is CipherSuite.CHACHA20_POLY1305_SHA256
    assert t.zero_rtt_enabled is False
    assert t.qpack_dynamic_table is False


def test_derive_tuning_clamps_rtt_guess_at_loopback():
    assert derive_tuning(loopback_profile()).initial_rtt_guess_ms == 100


def test_derive_tuning_clamps_rtt_guess_ceiling():
    huge = NetworkProfile("sat", 100, 100, rtt_ms=60000)
    assert derive_tuning(huge).initial_rtt_guess_ms == 10000


def test_initial_retransmit_deadline_is_twice_the_guess():
    assert initial_retransmit_deadline(derive_tuning(nbiot_profile())) == 3000
    assert initial_retransmit_deadline(stock_tuning()) == 200
    ten_s = TuningProfile(
        expected_rtt_ms=10000, initial_rtt_guess_ms=10000,
        max_ack_delay_ms=5000, handshake_timeout_ms=100000,
        handshake_idle_timeout_ms=40000,
        min_remote_idle_timeout_ms=150000)
    assert initial_retransmit_deadline(ten_s) == 20000


@given(rtt=st.integers(0, 100000))
def test_derived_profiles_satisfy_timer_orderings(rtt):
    t = derive_tuning(NetworkProfile("x", 10, 10, rtt_ms=rtt))
    assert 100 <= t.initial_rtt_guess_ms <= 10000
    assert t.max_ack_delay_ms == round(0.5 * rtt)
    assert t.handshake_idle_timeout_ms >= 2 * rtt
    assert t.handshake_timeout_ms >= t.handshake_idle_timeout_ms
    assert t.min_remote_idle_timeout_ms >= 30000
    assert derive_tuning(NetworkProfile("x", 10, 10, rtt_ms=rtt)) == t


def test_network_profile_validation():
    with pytest.raises(InvalidProfile):
        NetworkProfile("bad", 0, 10, rtt_ms=100)
    with pytest.raises(InvalidProfile):
        NetworkProfile("bad", 10, 10, rtt_ms=-1)
    with pytest.raises(InvalidProfile):
        NetworkProfile("bad", 10, 10, rtt_ms=100, mtu=10)


def test_tuning_profile_validation():
    with pytest.raises(InvalidProfile):
        stock = stock_tuning()
        TuningProfile(**{**stock.__dict__, "initial_rtt_guess_ms": 50})
    with pytest.raises(InvalidProfile):
        stock = stock_tuning()
        TuningProfile(**{**stock.__dict__, "handshake_idle_timeout_ms": 100})


def test_builtin_profile_lookup():
    assert network_profile("nbiot2").rtt_ms == 2000
    assert network_profile("loopback").rtt_ms == 0
    with pytest.raises(InvalidProfile):
        network_profile("marsnet")


def test_config_file_overrides(tmp_path):
    cfg = tmp_path / "tuning.conf"
    cfg.write_text(
        "# big link\n"
        "max_ack_delay_ms = 40\n"
        "watermark_fraction = 0.25\n"
        "pmtud_enabled = false\n"
    )
    t = load_tuning_overrides(cfg, stock_tuning())
    assert t.max_ack_delay_ms == 40
    assert t.watermark_fraction == 0.25
    assert t.pmtud_enabled is False
    # Untouched fields keep their base values.
    assert t.initial_rtt_guess_ms == stock_tuning().initial_rtt_guess_ms


def test_config_file_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "tuning.conf"
    cfg.write_text("max_ack_dely_ms = 40\n")
    with pytest.raises(InvalidProfile):
        load_tuning_overrides(cfg, stock_tuning())
