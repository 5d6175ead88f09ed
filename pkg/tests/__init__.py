"""Tests for wrflow."""
