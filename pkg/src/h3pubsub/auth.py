"""Connection-scoped basic authentication.

The broker verifies a credential pair at most once per connection: the
first stream that presents a valid Authorization header marks the whole
connection authenticated, and every later stream on it rides that mark.
The cache must be evicted when the connection dies, and the transport
never enables 0-RTT, so an early-data replay can never reach a cached
entry.
"""

from __future__ import annotations

import base64
import binascii
import logging
import re
import time
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

# No ':' (it delimits the pair on the wire) and no control characters.
_FIELD_RE = re.compile(r"^[^\x00-\x1f\x7f:]+$")


class MalformedHeader(ValueError):
    """Authorization header that does not parse as the Basic scheme."""


class BadCredentialFile(ValueError):
    pass


def _validate_field(kind: str, value: str) -> str:
    if not _FIELD_RE.match(value):
        raise BadCredentialFile(f"{kind} contains ':' or control characters")
    return value


class CredentialStore:
    """Username to password map, read-only after load."""

    def __init__(self, pairs: dict[str, str] | None = None) -> None:
        self._entries: dict[str, str] = {}
        for user, password in (pairs or {}).items():
            self._entries[_validate_field("username", user)] = \
                _validate_field("password", password)

    @classmethod
    def from_file(cls, path: str | Path) -> CredentialStore:
        """Load "user:password" lines; '#' starts a comment."""
        pairs: dict[str, str] = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            user, sep, password = line.partition(":")
            if not sep or not user:
                raise BadCredentialFile(f"{path}:{lineno}: expected user:password")
            if user in pairs:
                raise BadCredentialFile(f"{path}:{lineno}: duplicate user {user!r}")
            pairs[user] = password
        return cls(pairs)

    def check(self, user: str, password: str) -> bool:
        return self._entries.get(user) == password

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class _CacheEntry:
    user: str
    since_ms: float


class ConnectionAuthCache:
    """Connections that have passed a credential check, by identifier."""

    def __init__(self) -> None:
        self._entries: dict[bytes, _CacheEntry] = {}
        self.rejected_count = 0
        self.checks_performed = 0

    def authenticated_user(self, conn_id: bytes) -> str | None:
        entry = self._entries.get(conn_id)
        return entry.user if entry else None

    def evict_connection(self, conn_id: bytes) -> None:
        self._entries.pop(conn_id, None)

    def __len__(self) -> int:
        return len(self._entries)

    def authorize_request(self, store: CredentialStore, conn_id: bytes,
                          header: str | None,
                          now_ms: float | None = None) -> str | None:
        """Authenticated username for this request, or None for a 401.

        A cached connection is authorized without looking at the header;
        otherwise a present, well-formed, valid header authenticates the
        connection and seeds the cache.  Malformed headers reject like
        wrong credentials.
        """
        cached = self._entries.get(conn_id)
        if cached is not None:
            return cached.user
        if header is not None:
            try:
                user, password = decode_basic_header(header)
            except MalformedHeader:
                log.info("conn %s: malformed authorization header",
                         conn_id.hex())
            else:
                self.checks_performed += 1
                if store.check(user, password):
                    stamp = time.monotonic() * 1000.0 if now_ms is None else now_ms
                    self._entries[conn_id] = _CacheEntry(user, stamp)
                    return user
        self.rejected_count += 1
        return None


def encode_basic_header(user: str, password: str) -> str:
    if ":" in user:
        raise MalformedHeader("username may not contain ':'")
    token = base64.b64encode(f"{user}:{password}".encode()).decode("ascii")
    return f"Basic {token}"


def decode_basic_header(header: str) -> tuple[str, str]:
    scheme, _, token = header.strip().partition(" ")
    if scheme.lower() != "basic" or not token:
        raise MalformedHeader("not a Basic scheme header")
    try:
        raw = base64.b64decode(token.strip().encode("ascii"), validate=True)
        decoded = raw.decode("utf-8")
    except (binascii.Error, UnicodeDecodeError, ValueError) as exc:
        raise MalformedHeader("undecodable credential token") from exc
    user, sep, password = decoded.partition(":")
    if not sep:
        raise MalformedHeader("credential token missing ':'")
    return user, password
