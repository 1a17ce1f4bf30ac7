"""Integration tests for stablegrad."""
