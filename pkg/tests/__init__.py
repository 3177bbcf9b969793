"""Tests for eer-cli."""
