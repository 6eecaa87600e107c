"""MQTT 3.1.1 subset over a single transport stream (comparison baseline)."""
