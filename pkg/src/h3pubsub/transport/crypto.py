"""Key agreement, packet protection, and server identity.

Handshake: X25519 ephemeral exchange on both sides; the shared secret
and a hash of the two hello messages feed HKDF-SHA256 to derive one
ChaCha20-Poly1305 key+IV pair per direction.  The server proves
possession of its identity key by signing the handshake transcript with
Ed25519.  Nonces are the per-direction IV XORed with the packet number,
so a (key, packet number) pair is never reused.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

NONCE_LEN = 12
KEY_LEN = 32
SIGNATURE_LEN = 64
PUBKEY_LEN = 32


class DecryptError(ValueError):
    pass


class BadServerSignature(ValueError):
    pass


def _hkdf(secret: bytes, salt: bytes, info: bytes, length: int) -> bytes:
    return HKDF(algorithm=SHA256(), length=length, salt=salt,
                info=info).derive(secret)


@dataclass(frozen=True)
class DirectionalKeys:
    send_key: bytes
    send_iv: bytes
    recv_key: bytes
    recv_iv: bytes


def exchange_keypair() -> tuple[X25519PrivateKey, bytes]:
    private = X25519PrivateKey.generate()
    public = private.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return private, public


def derive_keys(private: X25519PrivateKey, peer_public: bytes,
                transcript_hash: bytes, is_client: bool) -> DirectionalKeys:
    shared = private.exchange(X25519PublicKey.from_public_bytes(peer_public))
    c2s_key = _hkdf(shared, transcript_hash, b"c2s key", KEY_LEN)
    c2s_iv = _hkdf(shared, transcript_hash, b"c2s iv", NONCE_LEN)
    s2c_key = _hkdf(shared, transcript_hash, b"s2c key", KEY_LEN)
    s2c_iv = _hkdf(shared, transcript_hash, b"s2c iv", NONCE_LEN)
    if is_client:
        return DirectionalKeys(c2s_key, c2s_iv, s2c_key, s2c_iv)
    return DirectionalKeys(s2c_key, s2c_iv, c2s_key, c2s_iv)


def transcript_hash(*messages: bytes) -> bytes:
    h = hashlib.sha256()
    for m in messages:
        h.update(len(m).to_bytes(4, "big"))
        h.update(m)
    return h.digest()


def _nonce(iv: bytes, packet_number: int) -> bytes:
    pn = packet_number.to_bytes(NONCE_LEN, "big")
    return bytes(a ^ b for a, b in zip(iv, pn))


class PacketProtector:
    """Seals and opens packet payloads under the direction keys."""

    def __init__(self, keys: DirectionalKeys) -> None:
        self._seal = ChaCha20Poly1305(keys.send_key)
        self._send_iv = keys.send_iv
        self._open = ChaCha20Poly1305(keys.recv_key)
        self._recv_iv = keys.recv_iv

    def seal(self, packet_number: int, header: bytes, payload: bytes) -> bytes:
        return self._seal.encrypt(_nonce(self._send_iv, packet_number),
                                  payload, header)

    def open(self, packet_number: int, header: bytes, ciphertext: bytes) -> bytes:
        try:
            return self._open.decrypt(_nonce(self._recv_iv, packet_number),
                                      ciphertext, header)
        except InvalidTag as exc:
            raise DecryptError("packet failed authentication") from exc


class ServerIdentity:
    """Ed25519 identity key the server signs handshakes with."""

    def __init__(self, private: Ed25519PrivateKey) -> None:
        self._private = private
        self.public_bytes = private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw)

    @classmethod
    def generate(cls) -> ServerIdentity:
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_pem_file(cls, path: str | Path) -> ServerIdentity:
        key = serialization.load_pem_private_key(Path(path).read_bytes(),
                                                 password=None)
        if not isinstance(key, Ed25519PrivateKey):
            raise ValueError("identity key must be Ed25519")
        return cls(key)

    def save_pem(self, key_path: str | Path, pub_path: str | Path | None = None) -> None:
        pem = self._private.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption())
        Path(key_path).write_bytes(pem)
        if pub_path is not None:
            self.save_public_pem(pub_path)

    def save_public_pem(self, path: str | Path) -> None:
        pub = self._private.public_key().public_bytes(
            serialization.Encoding.PEM,
            serialization.PublicFormat.SubjectPublicKeyInfo)
        Path(path).write_bytes(pub)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def load_public_pem(path: str | Path) -> bytes:
    key = serialization.load_pem_public_key(Path(path).read_bytes())
    if not isinstance(key, Ed25519PublicKey):
        raise ValueError("pinned key must be Ed25519")
    return key.public_bytes(serialization.Encoding.Raw,
                            serialization.PublicFormat.Raw)


def verify_server_signature(public: bytes, signature: bytes, message: bytes) -> None:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError) as exc:
        raise BadServerSignature("handshake signature invalid") from exc
