"""IoT-oriented publish-subscribe over a QUIC-style datagram transport.

Subpackages:
  core      topic registry, retention, subscriber fan-out
  auth      credential store and per-connection basic-auth cache
  governor  high-watermark MAX_STREAMS advertisement policy
  tuning    transport tuning profiles and network presets
  transport minimal secure datagram transport (streams, acks, recovery)
  h3        HTTP/3-flavored broker and publisher/subscriber client
  mq        MQTT 3.1.1 subset over a single transport stream
  netlab    UDP datagram impairment proxy (delay/loss/rate)
  bench     experiment matrix runner, statistics, qlog analysis, reports
"""

__version__ = "0.1.0"
