import pytest
from hypothesis import given, strategies as st

from h3pubsub.mq.packets import (
    Connack,
    Connect,
    ConnectReturnCode,
    Disconnect,
    MalformedPacket,
    Puback,
    Publish,
    StreamDecoder,
    UnsupportedType,
    decode_packet,
    decode_remaining_length,
    encode_packet,
    encode_remaining_length,
)


def varint_oracle(n):
    """Spec-text transcription of the remaining-length algorithm."""
    out = []
    while True:
        digit = n % 128
        n //= 128
        out.append(digit | 0x80 if n > 0 else digit)
        if n == 0:
            return bytes(out)


def test_remaining_length_known_vectors():
    assert encode_remaining_length(0) == b"\x00"
    assert encode_remaining_length(127) == b"\x7f"
    assert encode_remaining_length(128) == b"\x80\x01"
    assert encode_remaining_length(321) == b"\xc1\x02"
    assert encode_remaining_length(16383) == b"\xff\x7f"
    assert encode_remaining_length(268_435_455) == b"\xff\xff\xff\x7f"


@given(st.integers(0, 268_435_455))
def test_remaining_length_matches_oracle_and_round_trips(n):
    enc = encode_remaining_length(n)
    assert enc == varint_oracle(n)
    assert decode_remaining_length(enc) == (n, len(enc))
    assert len(enc) <= 4


def test_remaining_length_rejects_non_minimal():
    with pytest.raises(MalformedPacket):
        decode_remaining_length(b"\x80\x00")
    with pytest.raises(MalformedPacket):
        decode_remaining_length(b"\xc1\x80\x00")


def test_remaining_length_incomplete_returns_none():
    assert decode_remaining_length(b"") is None
    assert decode_remaining_length(b"\x80") is None
    assert decode_remaining_length(b"\x80\x80\x80") is None
    with pytest.raises(MalformedPacket):
        decode_remaining_length(b"\x80\x80\x80\x80")


PACKETS = [
    Connect(client_id="pub-1"),
    Connect(client_id="pub-1", username="alice", password="s3cret",
            keep_alive=30, clean_session=False),
    Connect(client_id="", username="u", password=""),
    Connack(return_code=ConnectReturnCode.ACCEPTED),
    Connack(return_code=ConnectReturnCode.BAD_CREDENTIALS, session_present=False),
    Publish(topic="t", payload=b"\x00" * 32),
    Publish(topic="t", payload=b"x" * 32, qos=1, packet_id=7),
    Publish(topic="sensors-1", payload=b"", qos=1, packet_id=65535, dup=True,
            retain=True),
    Puback(packet_id=7),
    Disconnect(),
]


@pytest.mark.parametrize("packet", PACKETS, ids=lambda p: type(p).__name__)
def test_round_trip_identity(packet):
    encoded = encode_packet(packet)
    decoded, consumed = decode_packet(encoded)
    assert decoded == packet
    assert consumed == len(encoded)


def test_publish_qos1_round_trip_example():
    p = Publish(topic="t", payload=bytes(range(32)), qos=1, packet_id=7)
    assert decode_packet(encode_packet(p))[0] == p


def test_publish_validation():
    with pytest.raises(MalformedPacket):
        Publish(topic="t", payload=b"", qos=1, packet_id=None)
    with pytest.raises(MalformedPacket):
        Publish(topic="t", payload=b"", qos=1, packet_id=0)
    with pytest.raises(MalformedPacket):
        Publish(topic="t", payload=b"", qos=0, packet_id=3)
    with pytest.raises(MalformedPacket):
        Publish(topic="t", payload=b"", qos=2, packet_id=3)


def test_decode_rejects_qos2_and_unknown_types():
    qos2 = bytes([0x30 | 0x04]) + b"\x04" + b"\x00\x01t" + b"\x00"
    with pytest.raises(UnsupportedType):
        decode_packet(qos2)
    subscribe = bytes([0x82]) + b"\x00"
    with pytest.raises(UnsupportedType):
        decode_packet(subscribe)
    reserved = bytes([0x00]) + b"\x00"
    with pytest.raises(MalformedPacket):
        decode_packet(reserved)


def test_decode_rejects_trailing_garbage_in_body():
    ack = encode_packet(Connack(return_code=ConnectReturnCode.ACCEPTED))
    padded = ack[:1] + encode_remaining_length(3) + ack[2:] + b"\x99"
    with pytest.raises(MalformedPacket):
        decode_packet(padded)


@given(st.binary(max_size=64))
def test_decoder_totality_on_fuzz(data):
    """Arbitrary bytes produce a packet or a typed error, never a crash."""
    try:
        decode_packet(data)
    except MalformedPacket:
        pass


@given(st.binary(max_size=200), st.integers(1, 7))
def test_stream_decoder_totality_on_fuzz(data, chunk):
    dec = StreamDecoder()
    try:
        for i in range(0, len(data), chunk):
            dec.feed(data[i:i + chunk])
    except MalformedPacket:
        pass


@given(st.lists(st.sampled_from(PACKETS), max_size=8), st.integers(1, 9))
def test_stream_decoder_reassembles_any_chunking(packets, chunk):
    wire = b"".join(encode_packet(p) for p in packets)
    dec = StreamDecoder()
    got = []
    for i in range(0, len(wire), chunk):
        got.extend(dec.feed(wire[i:i + chunk]))
    assert got == packets
    assert dec.buffered == 0


def test_connect_password_requires_username():
    with pytest.raises(MalformedPacket):
        encode_packet(Connect(client_id="c", password="p"))
