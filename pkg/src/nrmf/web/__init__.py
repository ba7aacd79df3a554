"""Read-only results server."""
