"""Unit tests for the ddic_ot package."""
