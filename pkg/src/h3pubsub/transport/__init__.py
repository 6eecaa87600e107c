"""Minimal secure datagram transport with streams, acks, and recovery.

Provides the properties the stack above depends on: an encrypted
1-RTT handshake with retransmittable Initials, ordered reliable
bidirectional streams opened by the client, delayed batched ACKs,
packet-threshold and timer-based loss recovery, a stream-limit
governor hook, and graceful connection close.  The wire format is
QUIC-shaped (varints, frame types, AEAD packet protection) but is not
interoperable with RFC 9000.
"""
