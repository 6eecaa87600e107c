import base64

import pytest
from hypothesis import given, strategies as st

from h3pubsub.auth import (
    BadCredentialFile,
    ConnectionAuthCache,
    CredentialStore,
    MalformedHeader,
    decode_basic_header,
    encode_basic_header,
)

FIELD_CHARS = st.text(
    st.characters(codec="utf-8", exclude_characters=":",
                  exclude_categories=("Cc", "Cs")),
    min_size=1, max_size=40)


@pytest.fixture
def store():
    return CredentialStore({"alice": "s3cret", "bob": "hunter2"})


def test_check_credentials(store):
    assert store.check("alice", "s3cret") is True
    assert store.check("alice", "wrong") is False
    assert store.check("", "") is False
    assert store.check("mallory", "s3cret") is False


def test_encode_known_vector():
    header = encode_basic_header("alice", "s3cret")
    scheme, token = header.split(" ")
    assert scheme == "Basic"
    assert token == "YWxpY2U6czNjcmV0"
    # Independent check against the stdlib encoder.
    assert token == base64.b64encode(b"alice:s3cret").decode()


def test_decode_rejects_malformed():
    for bad in ("Basic !!!", "Bearer abc", "Basic", "",
                "Basic " + base64.b64encode(b"no-colon").decode(),
                "Basic " + base64.b64encode(b"\xff\xfe:x").decode()):
        with pytest.raises(MalformedHeader):
            decode_basic_header(bad)


@given(user=FIELD_CHARS, password=FIELD_CHARS)
def test_header_round_trip(user, password):
    assert decode_basic_header(encode_basic_header(user, password)) == (user, password)


def test_password_may_contain_colon_on_decode():
    # First ':' splits; the rest belongs to the password.
    header = "Basic " + base64.b64encode(b"u:p:q").decode()
    assert decode_basic_header(header) == ("u", "p:q")


def test_first_request_authenticates_connection_then_header_optional(store):
    cache = ConnectionAuthCache()
    conn = b"\x01\x02"
    header = encode_basic_header("alice", "s3cret")
    assert cache.authorize_request(store, conn, header) == "alice"
    assert cache.authorize_request(store, conn, None) == "alice"
    assert cache.authorize_request(store, conn, "Basic !!!") == "alice"
    assert cache.checks_performed == 1


def test_fresh_connection_rejections(store):
    cache = ConnectionAuthCache()
    assert cache.authorize_request(store, b"c1", None) is None
    assert cache.authorize_request(store, b"c2", encode_basic_header("alice", "no")) is None
    assert cache.authorize_request(store, b"c3", "Basic !!!") is None
    assert cache.rejected_count == 3
    assert len(cache) == 0


def test_cache_soundness_no_entry_without_successful_check(store):
    cache = ConnectionAuthCache()
    conn = b"cc"
    for _ in range(5):
        assert cache.authorize_request(store, conn, encode_basic_header("alice", "bad")) is None
    assert cache.authenticated_user(conn) is None
    assert len(cache) == 0


def test_eviction_forces_reauthentication(store):
    cache = ConnectionAuthCache()
    conn = b"cc"
    header = encode_basic_header("bob", "hunter2")
    assert cache.authorize_request(store, conn, header) == "bob"
    cache.evict_connection(conn)
    assert cache.authorize_request(store, conn, None) is None
    assert cache.authorize_request(store, conn, header) == "bob"
    cache.evict_connection(b"never-seen")


def test_at_most_one_check_across_many_valid_requests(store):
    cache = ConnectionAuthCache()
    conn = b"cc"
    header = encode_basic_header("alice", "s3cret")
    for _ in range(50):
        assert cache.authorize_request(store, conn, header) == "alice"
    assert cache.checks_performed == 1


def test_connections_are_independent(store):
    cache = ConnectionAuthCache()
    assert cache.authorize_request(store, b"a", encode_basic_header("alice", "s3cret")) == "alice"
    assert cache.authorize_request(store, b"b", None) is None


def test_credential_file_loading(tmp_path):
    creds = tmp_path / "creds"
    creds.write_text("# broker users\nalice:s3cret\nbob:hunter2\n\n")
    store = CredentialStore.from_file(creds)
    assert len(store) == 2
    assert store.check("bob", "hunter2")

    creds.write_text("alice:s3cret\nalice:other\n")
    with pytest.raises(BadCredentialFile):
        CredentialStore.from_file(creds)

    creds.write_text("nocolonhere\n")
    with pytest.raises(BadCredentialFile):
        CredentialStore.from_file(creds)

    creds.write_text("user:pa:ss\n")
    with pytest.raises(BadCredentialFile):
        CredentialStore.from_file(creds)


def test_store_rejects_control_characters():
    with pytest.raises(BadCredentialFile):
        CredentialStore({"evil\x00": "p"})
    with pytest.raises(BadCredentialFile):
        CredentialStore({"user": "p\x1fw"})
