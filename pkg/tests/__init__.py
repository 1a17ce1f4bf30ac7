"""Tests for stablegrad package."""
