"""Datagram impairment: delay, uniform loss, and rate throttling."""
