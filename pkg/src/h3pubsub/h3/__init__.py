"""Request/response layer: publish-subscribe REST mapping over streams."""
