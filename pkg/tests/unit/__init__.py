"""Unit tests for stablegrad."""
