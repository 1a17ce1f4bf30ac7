"""CLI command modules for stablegrad."""
