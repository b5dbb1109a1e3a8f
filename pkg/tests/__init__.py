"""Tests for tnml."""
